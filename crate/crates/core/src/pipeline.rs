//! End-to-end orchestration: sample, build features, reduce, initialize,
//! evolve or solve, measure and write artifacts under `<out>/<config hash>/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::config::{AblationKind, CollocationKind, Mode, ReferenceKind, RunConfig, WeightSampling};
use crate::dynamics::{
    evolve, initial_coefficients, reconstruct, Discretization, DiscretizationOptions, GpeProblem,
    SubsetPolicy, Trajectory, DEFAULT_FIT_CAP,
};
use crate::error::{Error, Result};
use crate::features::EnvelopeSpec;
use crate::metrics::{
    coefficient_traces, compute_errors, emit_run_summary, mean_std, write_conservation_csv,
    write_metrics_csv, write_table_csv, write_timings_csv, write_traces_csv, ErrorReport,
    LedgerSummary, RunSummary,
};
use crate::reference::{
    analytic_ground_state, fourier_interpolate_1d, runtime_scaling_bench, tssp_evolve, BenchMethod,
    TimingRow,
};
use crate::rng::{streams, RngHandle};
use crate::sampling::{
    default_s1, default_s2, gauss_hermite_collocation, sample_collocation, sample_weights_agnostic,
    sample_weights_driven, CollocationSet, SubsetScheme,
};
use crate::static_solver::{solve_static, MmsSpec, StaticProblem, StaticSolution};

/// Cap on analytic tensor evaluation grids before falling back to samples.
const MAX_EVAL_GRID: usize = 1 << 16;
const EVAL_SAMPLES: usize = 4096;

/// Reference field at every snapshot time, on a fixed evaluation set.
#[derive(Debug, Clone)]
pub struct ReferenceData {
    pub kind: ReferenceKind,
    pub points: DMatrix<f64>,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<Complex64>>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct EvolveCase {
    pub label: String,
    pub beta: f64,
    pub beta_d: f64,
    pub seed: u64,
    pub rank: usize,
    pub trajectory: Trajectory,
    /// `(t, errors)` per snapshot; empty without a reference.
    pub snapshot_errors: Vec<(f64, ErrorReport)>,
    pub timings: Vec<(String, f64)>,
}

impl EvolveCase {
    pub fn final_errors(&self) -> Option<&ErrorReport> {
        self.snapshot_errors.last().map(|(_, e)| e)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Sorted snapshot times with `0` and `t_final` included.
pub fn snapshot_times(config: &RunConfig) -> Vec<f64> {
    let t_final = config.problem.t_final;
    let mut times = config.output.times(t_final);
    times.push(0.0);
    times.push(t_final);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

pub fn build_problem(config: &RunConfig, beta: f64, beta_d: f64) -> Result<GpeProblem> {
    let p = &config.problem;
    let gammas: Vec<f64> = p.gammas_orig()[..p.d].to_vec();
    let g = gammas.clone();
    let mut problem = GpeProblem::new(
        gammas,
        beta_d,
        Arc::new(move |x: &[f64]| analytic_ground_state(&g, x, 0.0)),
    )?;
    problem.beta = beta;
    problem.n_orig = p.n_orig();
    Ok(problem)
}

pub fn build_collocation(config: &RunConfig, seed: u64) -> Result<CollocationSet> {
    let d = config.problem.d;
    let dc = &config.discretization;
    match dc.collocation {
        CollocationKind::GaussHermite => {
            let n = dc
                .nodes_per_axis(d)
                .ok_or_else(|| Error::Config(format!("n_c = {} is not a perfect power of d = {d}", dc.n_c)))?;
            gauss_hermite_collocation(d, n, dc.alpha, dc.q)
        }
        CollocationKind::Random => sample_collocation(
            d,
            dc.n_c,
            dc.alpha,
            dc.q,
            dc.box_extent,
            RngHandle::new(seed, streams::COLLOCATION),
        ),
    }
}

pub fn build_discretization(config: &RunConfig, problem: &GpeProblem, seed: u64) -> Result<Discretization> {
    let dc = &config.discretization;
    let points = build_collocation(config, seed).map_err(|e| e.in_stage("sampling"))?;
    let rng = RngHandle::new(seed, streams::WEIGHTS);
    let (s1, s2) = (dc.weight_scale * default_s1(), dc.weight_scale * default_s2());
    let bank = match dc.sampling {
        WeightSampling::Agnostic => sample_weights_agnostic(&points, dc.neurons, s1, s2, rng),
        WeightSampling::DataDriven => {
            let psi0 = problem.initial_psi0.clone();
            let probe = move |x: &[f64]| psi0(x).norm();
            sample_weights_driven(&points, dc.neurons, &probe, s1, s2, rng)
        }
    }
    .map_err(|e| e.in_stage("sampling"))?;
    let envelope = if dc.envelope {
        EnvelopeSpec::gaussian(dc.alpha)
    } else {
        EnvelopeSpec::disabled()
    };
    let options = DiscretizationOptions {
        svd_threshold: dc.svd_threshold,
        weighted_projection: true,
        operator: dc.operator,
    };
    Discretization::new(problem, bank, points, envelope, options).map_err(|e| e.in_stage("reduction"))
}

fn resolve_kind(config: &RunConfig, beta_d: f64) -> ReferenceKind {
    match config.reference.kind {
        ReferenceKind::Auto if beta_d == 0.0 => ReferenceKind::Analytic,
        ReferenceKind::Auto if config.problem.d <= 3 => ReferenceKind::Tssp,
        ReferenceKind::Auto => ReferenceKind::None,
        k => k,
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn tensor_grid(axis: &[f64], d: usize) -> DMatrix<f64> {
    let n = axis.len();
    let total = n.pow(d as u32);
    DMatrix::from_fn(total, d, |row, j| axis[(row / n.pow(j as u32)) % n])
}

/// Reference fields at the snapshot times for the given interaction.
pub fn reference_data(config: &RunConfig, problem: &GpeProblem) -> Result<Option<ReferenceData>> {
    let kind = resolve_kind(config, problem.beta_d);
    let d = problem.dim();
    let r = &config.reference;
    let times = snapshot_times(config);
    let axis = linspace(-r.eval_extent, r.eval_extent, r.eval_points);
    match kind {
        ReferenceKind::None | ReferenceKind::Auto => Ok(None),
        ReferenceKind::Analytic => {
            if problem.beta_d != 0.0 {
                return Err(Error::Config(
                    "reference.kind: the analytic oracle requires beta_d = 0".into(),
                ));
            }
            let (points, label) = match r.eval_points.checked_pow(d as u32) {
                Some(t) if t <= MAX_EVAL_GRID => (
                    tensor_grid(&axis, d),
                    format!("{}^{d} uniform on [-{e}, {e}]^{d}", r.eval_points, e = r.eval_extent),
                ),
                _ => {
                    let set = sample_collocation(
                        d,
                        EVAL_SAMPLES,
                        config.discretization.alpha,
                        2.0,
                        None,
                        RngHandle::new(config.seed, streams::TEST_POINTS),
                    )?;
                    (set.points, format!("{EVAL_SAMPLES} envelope samples"))
                }
            };
            let fields = times
                .iter()
                .map(|&t| {
                    (0..points.nrows())
                        .map(|n| {
                            let x: Vec<f64> = points.row(n).iter().copied().collect();
                            analytic_ground_state(&problem.gammas, &x, t)
                        })
                        .collect()
                })
                .collect();
            Ok(Some(ReferenceData {
                kind,
                points,
                times,
                fields,
                label: format!("analytic, {label}"),
            }))
        }
        ReferenceKind::Tssp => {
            let grid = r.grid(d);
            let g = problem.gammas.clone();
            let psi0 = grid.sample(&|x| analytic_ground_state(&g, x, 0.0));
            let snaps = tssp_evolve(&grid, problem, &psi0, config.problem.t_final, &times)
                .map_err(|e| e.in_stage("reference"))?;
            let label = format!(
                "TSSP L={} N_g={} dt={}",
                grid.extent, grid.n_g, grid.dt
            );
            if d == 1 {
                let points = DMatrix::from_column_slice(axis.len(), 1, &axis);
                let fields = snaps
                    .iter()
                    .map(|s| fourier_interpolate_1d(&grid, &s.psi, &axis))
                    .collect();
                return Ok(Some(ReferenceData {
                    kind,
                    points,
                    times,
                    fields,
                    label: format!("{label}, {} points on [-{e}, {e}] (Fourier interpolation)", axis.len(), e = r.eval_extent),
                }));
            }
            let idx: Vec<usize> = (0..grid.total_points())
                .filter(|&i| grid.point(i).iter().all(|x| x.abs() <= r.eval_extent))
                .collect();
            if idx.is_empty() {
                return Err(Error::Config("reference.eval_extent contains no grid node".into()));
            }
            let points = DMatrix::from_fn(idx.len(), d, |row, j| grid.point(idx[row])[j]);
            let fields = snaps
                .iter()
                .map(|s| idx.iter().map(|&i| s.psi[i]).collect())
                .collect();
            Ok(Some(ReferenceData {
                kind,
                points,
                times,
                fields,
                label: format!("{label}, {} grid nodes in [-{e}, {e}]^{d}", idx.len(), e = r.eval_extent),
            }))
        }
    }
}

/// One dynamic run for a fixed interaction and seed.
pub fn evolve_case(
    config: &RunConfig,
    beta: f64,
    beta_d: f64,
    seed: u64,
    reference: Option<&ReferenceData>,
    fit_cap: f64,
) -> Result<EvolveCase> {
    let mut timings = Vec::new();
    let start = Instant::now();
    let problem = build_problem(config, beta, beta_d)?;
    let disc = build_discretization(config, &problem, seed)?;
    let c0 = initial_coefficients(&problem, &disc, fit_cap).map_err(|e| e.in_stage("initialize"))?;
    timings.push(("setup".to_string(), start.elapsed().as_secs_f64()));

    let times = snapshot_times(config);
    let start = Instant::now();
    let trajectory = evolve(
        &problem,
        &disc,
        &c0,
        &config.integrator,
        config.problem.t_final,
        &times,
        RngHandle::new(seed, 0),
    )
    .map_err(|e| e.in_stage("dynamics"))?;
    timings.push(("evolve".to_string(), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let mut snapshot_errors = Vec::new();
    if let Some(r) = reference {
        for (state, (t, truth)) in trajectory.snapshots.iter().zip(r.times.iter().zip(&r.fields)) {
            let pred = reconstruct(state, &disc, &r.points)?;
            let report = compute_errors(&pred, truth)
                .map_err(|e| e.in_stage("metrics"))?
                .with_grid(r.label.clone());
            snapshot_errors.push((*t, report));
        }
    }
    timings.push(("metrics".to_string(), start.elapsed().as_secs_f64()));
    Ok(EvolveCase {
        label: format!("beta={beta}/seed={seed}"),
        beta,
        beta_d,
        seed,
        rank: disc.rank(),
        trajectory,
        snapshot_errors,
        timings,
    })
}

fn seeds(config: &RunConfig) -> Vec<u64> {
    if config.seeds.is_empty() {
        vec![config.seed]
    } else {
        config.seeds.clone()
    }
}

fn case_metrics(prefix: &str, case: &EvolveCase, out: &mut Vec<(String, f64)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}/{k}")
        }
    };
    if let Some(e) = case.final_errors() {
        out.push((key("rmae"), e.rmae));
        out.push((key("rrmse"), e.rrmse));
        out.push((key("rel_l2"), e.rel_l2));
        out.push((key("rel_l1"), e.rel_l1));
        for (t, e) in &case.snapshot_errors {
            out.push((key(&format!("rel_l2@t={t}")), e.rel_l2));
        }
    }
    let s = &case.trajectory.stats;
    out.push((key("max_mass_error"), s.max_mass_error));
    out.push((key("relative_energy_drift"), case.trajectory.ledger.relative_energy_drift()));
    out.push((key("max_coefficient_norm"), s.max_norm));
    out.push((key("coefficient_bound"), s.bound));
    out.push((key("rank"), case.rank as f64));
}

fn case_extras(case: &EvolveCase, config: &RunConfig) -> serde_json::Value {
    let s = &case.trajectory.stats;
    serde_json::json!({
        "label": case.label,
        "project_mass": config.integrator.project_mass,
        "beta": case.beta,
        "beta_d": case.beta_d,
        "seed": case.seed,
        "rank": case.rank,
        "accepted_steps": s.accepted,
        "rejected_steps": s.rejected,
        "max_inner_iterations": s.max_inner_iterations,
        "max_coefficient_norm": s.max_norm,
        "coefficient_bound": s.bound,
        "max_mass_error": s.max_mass_error,
    })
}

fn prepare_dir(config: &RunConfig) -> Result<(PathBuf, String, RunSummary)> {
    let hash = config.hash()?;
    let dir = config.out.join(&hash[..16]);
    std::fs::create_dir_all(&dir)?;
    let value = serde_json::to_value(config)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&value)? + "\n")?;
    let summary = RunSummary::new(value, hash.clone(), config.seed);
    Ok((dir, hash, summary))
}

fn case_dir(root: &Path, label: &str, multiple: bool) -> Result<PathBuf> {
    if !multiple {
        return Ok(root.to_path_buf());
    }
    let dir = root.join(label.replace(['/', '='], "_"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Execute the configured mode and write all artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let (dir, _hash, mut summary) = prepare_dir(config)?;
    log::info!("writing artifacts to {}", dir.display());
    match config.mode {
        Mode::Evolve => run_evolve(config, &dir, &mut summary)?,
        Mode::Static => run_static(config, &dir, &mut summary)?,
        Mode::Reference => run_reference(config, &dir, &mut summary)?,
        Mode::Bench => run_bench(config, &dir, &mut summary)?,
        Mode::Ablation => run_ablation(config, &dir, &mut summary)?,
    }
    write_timings_csv(&dir.join("timings.csv"), &summary.timings)?;
    emit_run_summary(&summary, &dir.join("summary.json"))?;
    Ok(RunOutcome { dir, summary })
}

fn run_evolve(config: &RunConfig, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let seeds = seeds(config);
    let interactions = config.problem.interactions();
    let multiple = seeds.len() * interactions.len() > 1;
    let mut metrics = Vec::new();
    let mut cases_json = Vec::new();
    for &(beta, beta_d) in &interactions {
        let start = Instant::now();
        let problem = build_problem(config, beta, beta_d)?;
        let reference = reference_data(config, &problem)?;
        summary
            .timings
            .push((format!("beta={beta}/reference"), start.elapsed().as_secs_f64()));
        let mut finals: Vec<(f64, f64)> = Vec::new();
        for &seed in &seeds {
            let case = evolve_case(config, beta, beta_d, seed, reference.as_ref(), DEFAULT_FIT_CAP)?;
            log::info!(
                "{}: rank {} final {:?}",
                case.label,
                case.rank,
                case.final_errors().map(|e| e.rel_l2)
            );
            let prefix = if multiple { case.label.clone() } else { String::new() };
            case_metrics(&prefix, &case, &mut metrics);
            let cdir = case_dir(dir, &case.label, multiple)?;
            write_conservation_csv(&cdir.join("conservation.csv"), &case.trajectory.ledger)?;
            if !config.output.trace_indices.is_empty() {
                let traces = coefficient_traces(&case.trajectory.snapshots, &config.output.trace_indices)
                    .map_err(|e| e.in_stage("metrics"))?;
                write_traces_csv(&cdir.join("traces.csv"), &traces)?;
            }
            if let Some(e) = case.final_errors() {
                summary.errors.push((case.label.clone(), e.clone()));
                finals.push((e.rmae, e.rrmse));
            }
            if summary.ledger.is_none() {
                summary.ledger = Some(LedgerSummary::from(&case.trajectory.ledger));
            }
            for (phase, secs) in &case.timings {
                summary.timings.push((format!("{}/{phase}", case.label), *secs));
            }
            cases_json.push(case_extras(&case, config));
        }
        if seeds.len() > 1 && !finals.is_empty() {
            let rmae: Vec<f64> = finals.iter().map(|f| f.0).collect();
            let rrmse: Vec<f64> = finals.iter().map(|f| f.1).collect();
            for (name, vals) in [("rmae", rmae), ("rrmse", rrmse)] {
                if let Some((m, s)) = mean_std(&vals) {
                    metrics.push((format!("beta={beta}/{name}_mean"), m));
                    metrics.push((format!("beta={beta}/{name}_std"), s));
                }
            }
        }
    }
    summary.extras.insert("cases".into(), serde_json::Value::Array(cases_json));
    write_metrics_csv(&dir.join("errors.csv"), &metrics)
}

/// Solve the manufactured static problem in dimension `d`.
pub fn static_case(config: &RunConfig, d: usize, seed: u64) -> Result<(usize, StaticSolution)> {
    let s = &config.static_run;
    let n_c = s
        .collocation_for(d)
        .ok_or_else(|| Error::Config(format!("static.n_c: no table value for d = {d}")))?;
    let n_b = s.n_b.unwrap_or(n_c);
    let mms = MmsSpec::isotropic(d, s.beta_d, s.epsilon, seed)?;
    let problem = StaticProblem::sample(mms, n_c, n_b, seed).map_err(|e| e.in_stage("sampling"))?;
    let solution = solve_static(&problem, &s.settings, seed).map_err(|e| e.in_stage("static"))?;
    Ok((n_c, solution))
}

fn run_static(config: &RunConfig, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut extras = Vec::new();
    for &d in &config.static_run.dims {
        let (n_c, sol) = static_case(config, d, config.seed)?;
        log::info!("static d={d}: rel L2 {:.3e} in {:.2} s", sol.errors.rel_l2, sol.solve_seconds);
        rows.push(vec![
            d.to_string(),
            n_c.to_string(),
            format!("{:.6e}", sol.errors.rel_l2),
            format!("{:.6e}", sol.errors.rel_l1),
            format!("{:.3}", sol.solve_seconds),
        ]);
        metrics.push((format!("d={d}/rel_l2"), sol.errors.rel_l2));
        metrics.push((format!("d={d}/rel_l1"), sol.errors.rel_l1));
        metrics.push((format!("d={d}/rank"), sol.rank as f64));
        metrics.push((format!("d={d}/picard_iterations"), sol.iterations as f64));
        summary.errors.push((format!("d={d}"), sol.errors.clone()));
        summary.timings.push((format!("d={d}/solve"), sol.solve_seconds));
        summary.timings.push((format!("d={d}/total"), sol.total_seconds));
        extras.push(serde_json::json!({
            "d": d,
            "n_c": n_c,
            "rank": sol.rank,
            "iterations": sol.iterations,
            "relative_residual": sol.relative_residual,
        }));
    }
    summary.extras.insert("static".into(), serde_json::Value::Array(extras));
    write_table_csv(&dir.join("static.csv"), &["Dim", "N_c", "L2", "L1", "time"], &rows)?;
    write_metrics_csv(&dir.join("errors.csv"), &metrics)
}

fn run_reference(config: &RunConfig, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let d = config.problem.d;
    let grid = config.reference.grid(d);
    let times = snapshot_times(config);
    let mut rows = Vec::new();
    let mut field_rows = Vec::new();
    let mut metrics = Vec::new();
    let axis = linspace(
        -config.reference.eval_extent,
        config.reference.eval_extent,
        config.reference.eval_points,
    );
    for (beta, beta_d) in config.problem.interactions() {
        let problem = build_problem(config, beta, beta_d)?;
        let g = problem.gammas.clone();
        let psi0 = grid.sample(&|x| analytic_ground_state(&g, x, 0.0));
        let start = Instant::now();
        let snaps = tssp_evolve(&grid, &problem, &psi0, config.problem.t_final, &times)
            .map_err(|e| e.in_stage("reference"))?;
        summary.timings.push((format!("beta={beta}/tssp"), start.elapsed().as_secs_f64()));
        for s in &snaps {
            rows.push(vec![
                beta.to_string(),
                s.t.to_string(),
                grid.mass(&s.psi).to_string(),
                grid.edge_amplitude(&s.psi).to_string(),
            ]);
            if d == 1 {
                let vals = fourier_interpolate_1d(&grid, &s.psi, &axis);
                for (x, v) in axis.iter().zip(vals) {
                    field_rows.push(vec![
                        beta.to_string(),
                        s.t.to_string(),
                        x.to_string(),
                        v.re.to_string(),
                        v.im.to_string(),
                    ]);
                }
            }
        }
        if beta_d == 0.0 {
            let last = snaps.last().expect("t = 0 is always stored");
            let truth: Vec<Complex64> = (0..grid.total_points())
                .map(|i| analytic_ground_state(&problem.gammas, &grid.point(i), last.t))
                .collect();
            let e = compute_errors(&last.psi, &truth)?.with_grid("TSSP grid nodes");
            metrics.push((format!("beta={beta}/rel_l2_vs_analytic"), e.rel_l2));
            summary.errors.push((format!("beta={beta}"), e));
        }
        let m0 = grid.mass(&snaps[0].psi);
        let drift = snaps.iter().map(|s| (grid.mass(&s.psi) - m0).abs()).fold(0.0, f64::max);
        metrics.push((format!("beta={beta}/max_mass_drift"), drift));
    }
    write_table_csv(&dir.join("reference.csv"), &["beta", "t", "N", "edge"], &rows)?;
    if d == 1 {
        write_table_csv(&dir.join("reference_field.csv"), &["beta", "t", "x", "re", "im"], &field_rows)?;
    }
    write_metrics_csv(&dir.join("errors.csv"), &metrics)
}

/// Smallest and largest ratio of consecutive timings in `rows`.
pub fn growth_ratios(rows: &[TimingRow], method: BenchMethod) -> Option<(f64, f64)> {
    let t: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.seconds)
        .collect();
    if t.len() < 2 {
        return None;
    }
    let ratios: Vec<f64> = t.windows(2).map(|w| w[1] / w[0]).collect();
    Some((
        ratios.iter().copied().fold(f64::INFINITY, f64::min),
        ratios.iter().copied().fold(0.0, f64::max),
    ))
}

fn run_bench(config: &RunConfig, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let b = &config.bench;
    let mut settings = b.settings.clone();
    settings.seed = config.seed;
    let mut rows = runtime_scaling_bench(&b.tssp_dims, &[BenchMethod::Tssp], &settings)?;
    rows.extend(runtime_scaling_bench(&b.sdfsnn_dims, &[BenchMethod::Sdfsnn], &settings)?);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.d.to_string(),
                r.seconds.map_or_else(String::new, |s| s.to_string()),
                r.note.clone(),
            ]
        })
        .collect();
    write_table_csv(&dir.join("bench.csv"), &["method", "d", "seconds", "note"], &table)?;
    for method in [BenchMethod::Tssp, BenchMethod::Sdfsnn] {
        if let Some((lo, hi)) = growth_ratios(&rows, method) {
            summary.extras.insert(format!("{method}_min_ratio"), lo.into());
            summary.extras.insert(format!("{method}_max_ratio"), hi.into());
        }
    }
    for r in &rows {
        if let Some(s) = r.seconds {
            summary.timings.push((format!("{}/d={}", r.method, r.d), s));
        }
    }
    write_metrics_csv(&dir.join("errors.csv"), &[])
}

fn run_ablation(config: &RunConfig, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let Some(kind) = config.ablation.which else {
        return Err(Error::Config("ablation.which: required in ablation mode".into()));
    };
    let (beta, beta_d) = config.problem.interactions()[0];
    let problem = build_problem(config, beta, beta_d)?;
    let reference = reference_data(config, &problem)?;
    let seed = config.seed;
    let mut metrics = Vec::new();
    let mut cases_json = Vec::new();
    match kind {
        AblationKind::Decay => {
            let mut rows = Vec::new();
            let variants: Vec<Option<f64>> = std::iter::once(None)
                .chain(config.ablation.decay_alphas.iter().map(|&a| Some(a)))
                .collect();
            for &alpha in &variants {
                let name = alpha.map_or("none".to_string(), |a| format!("alpha={a}"));
                for &m in &config.ablation.decay_neurons {
                    let mut c = config.clone();
                    c.discretization.neurons = m;
                    c.discretization.envelope = alpha.is_some();
                    if let Some(a) = alpha {
                        c.discretization.alpha = a;
                    }
                    let (rank, err, note) = match evolve_case(&c, beta, beta_d, seed, reference.as_ref(), 1.0) {
                        Ok(mut case) => {
                            case.label = format!("{name}/M={m}");
                            cases_json.push(case_extras(&case, &c));
                            (
                                case.rank.to_string(),
                                case.final_errors().map_or(f64::NAN, |e| e.rel_l2),
                                String::new(),
                            )
                        }
                        Err(e) => (String::new(), f64::NAN, e.to_string()),
                    };
                    metrics.push((format!("{name}/M={m}/rel_l2"), err));
                    rows.push(vec![name.clone(), m.to_string(), rank, err.to_string(), note]);
                }
            }
            write_table_csv(
                &dir.join("decay.csv"),
                &["variant", "neurons", "rank", "rel_l2", "note"],
                &rows,
            )?;
            let mut series = Vec::new();
            for envelope in [false, true] {
                let mut c = config.clone();
                c.discretization.envelope = envelope;
                let name = if envelope { "decay" } else { "plain" };
                match evolve_case(&c, beta, beta_d, seed, reference.as_ref(), 1.0) {
                    Ok(mut case) => {
                        case.label = format!("{name}/series");
                        cases_json.push(case_extras(&case, &c));
                        for (t, e) in &case.snapshot_errors {
                            series.push(vec![name.to_string(), t.to_string(), e.rel_l2.to_string(), String::new()]);
                        }
                    }
                    Err(e) => series.push(vec![name.to_string(), String::new(), f64::NAN.to_string(), e.to_string()]),
                }
            }
            write_table_csv(&dir.join("decay_time.csv"), &["variant", "t", "rel_l2", "note"], &series)?;
        }
        AblationKind::Subset => {
            let d = config.problem.d;
            let sizes: Vec<usize> = if config.ablation.subset_sizes.is_empty() {
                (1..=d).collect()
            } else {
                config.ablation.subset_sizes.clone()
            };
            let mut rows = Vec::new();
            for &m in &sizes {
                let mut c = config.clone();
                c.integrator.subset_size = Some(m);
                c.integrator.subset_scheme = SubsetScheme::Uniform;
                c.integrator.subset_policy = SubsetPolicy::ResamplePerStep;
                let mut case = evolve_case(&c, beta, beta_d, seed, reference.as_ref(), DEFAULT_FIT_CAP)?;
                case.label = format!("m={m}");
                cases_json.push(case_extras(&case, &c));
                let err = case.final_errors().map_or(f64::NAN, |e| e.rel_l2);
                metrics.push((format!("m={m}/rel_l2"), err));
                metrics.push((format!("m={m}/max_mass_error"), case.trajectory.stats.max_mass_error));
                rows.push(vec![
                    m.to_string(),
                    err.to_string(),
                    case.trajectory.stats.max_mass_error.to_string(),
                    case.trajectory.ledger.relative_energy_drift().to_string(),
                ]);
                for (phase, secs) in &case.timings {
                    summary.timings.push((format!("m={m}/{phase}"), *secs));
                }
                summary.ledger = Some(LedgerSummary::from(&case.trajectory.ledger));
            }
            write_table_csv(
                &dir.join("subset.csv"),
                &["m", "rel_l2", "max_mass_error", "relative_energy_drift"],
                &rows,
            )?;
        }
        AblationKind::Conservation => {
            for project in [true, false] {
                let mut c = config.clone();
                c.integrator.project_mass = project;
                let name = if project { "projected" } else { "unprojected" };
                let mut case = evolve_case(&c, beta, beta_d, seed, reference.as_ref(), DEFAULT_FIT_CAP)?;
                case.label = name.to_string();
                cases_json.push(case_extras(&case, &c));
                write_conservation_csv(&dir.join(format!("conservation_{name}.csv")), &case.trajectory.ledger)?;
                let l = &case.trajectory.ledger;
                metrics.push((format!("{name}/max_mass_error"), case.trajectory.stats.max_mass_error));
                metrics.push((format!("{name}/drift_max_energy"), l.drift_max_energy));
                metrics.push((format!("{name}/relative_energy_drift"), l.relative_energy_drift()));
                if project {
                    summary.ledger = Some(LedgerSummary::from(l));
                }
                for (phase, secs) in &case.timings {
                    summary.timings.push((format!("{name}/{phase}"), *secs));
                }
            }
        }
    }
    summary.extras.insert("cases".into(), serde_json::Value::Array(cases_json));
    write_metrics_csv(&dir.join("errors.csv"), &metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn small(overrides: serde_json::Value, out: &Path) -> RunConfig {
        let mut c = RunConfig::assemble(Some("gpe1d-beta0"), None, overrides).unwrap();
        c.out = out.to_path_buf();
        c
    }

    #[test]
    fn linear_run_matches_analytic_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(json!({}), dir.path());
        let outcome = run(&c).unwrap();
        let (_, e) = outcome.summary.errors.last().unwrap();
        assert!(e.rel_l2 < 1e-6, "rel L2 {}", e.rel_l2);
        for f in ["errors.csv", "conservation.csv", "timings.csv", "summary.json", "config.json"] {
            assert!(outcome.dir.join(f).exists(), "{f} missing");
        }
        assert!(outcome.dir.ends_with(c.short_hash().unwrap()));
    }

    #[test]
    fn reruns_reproduce_metric_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let overrides = json!({"problem": {"t_final": 0.2}, "output": {"trace_indices": [0, 1]}});
        let ra = run(&small(overrides.clone(), a.path())).unwrap();
        let rb = run(&small(overrides, b.path())).unwrap();
        for f in ["errors.csv", "conservation.csv", "traces.csv"] {
            let x = std::fs::read(ra.dir.join(f)).unwrap();
            let y = std::fs::read(rb.dir.join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
    }

    #[test]
    fn seeds_give_mean_and_std() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(
            json!({"seeds": [0, 1, 2], "problem": {"t_final": 0.1}, "discretization": {"collocation": "random", "n_c": 300}}),
            dir.path(),
        );
        let outcome = run(&c).unwrap();
        let text = std::fs::read_to_string(outcome.dir.join("errors.csv")).unwrap();
        assert!(text.contains("rmae_mean") && text.contains("rrmse_std"), "{text}");
    }

    #[test]
    fn static_row_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::assemble(
            Some("table-row"),
            None,
            json!({"static": {"dims": [3], "n_c": 60, "settings": {"neurons": 150}}}),
        )
        .unwrap();
        c.out = dir.path().to_path_buf();
        let outcome = run(&c).unwrap();
        let text = std::fs::read_to_string(outcome.dir.join("static.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("Dim,N_c,L2,L1,time"));
        assert!(lines.next().unwrap().starts_with("3,60,"));
    }

    #[test]
    fn tssp_reference_converges_to_analytic_at_second_order() {
        let err = |dt: f64| {
            let dir = tempfile::tempdir().unwrap();
            let mut c = RunConfig::assemble(
                None,
                None,
                json!({"mode": "reference", "reference": {"n_g": 128, "dt": dt}}),
            )
            .unwrap();
            c.out = dir.path().to_path_buf();
            run(&c).unwrap().summary.errors[0].1.rel_l2
        };
        let (coarse, fine) = (err(4e-3), err(2e-3));
        let order = (coarse / fine).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order} ({coarse:e}, {fine:e})");
    }

    #[test]
    fn growth_ratios_of_a_table() {
        let row = |d, s| TimingRow {
            method: BenchMethod::Tssp,
            d,
            seconds: Some(s),
            note: String::new(),
        };
        let rows = [row(1, 1.0), row(2, 10.0), row(3, 50.0)];
        assert_eq!(growth_ratios(&rows, BenchMethod::Tssp), Some((5.0, 10.0)));
        assert_eq!(growth_ratios(&rows, BenchMethod::Sdfsnn), None);
    }
}
