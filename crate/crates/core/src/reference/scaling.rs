use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{analytic_ground_state, tssp_evolve, TsspGrid, MAX_GRID_POINTS};
use crate::dynamics::{
    evolve, initial_coefficients, Discretization, DiscretizationOptions, GpeProblem,
    IntegratorConfig, Scheme, SubsetPolicy, DEFAULT_FIT_CAP,
};
use crate::error::{Error, Result};
use crate::features::EnvelopeSpec;
use crate::rng::{streams, RngHandle};
use crate::sampling::{default_s1, default_s2, sample_collocation, sample_weights_agnostic, SubsetScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Tssp,
    Sdfsnn,
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMethod::Tssp => "tssp",
            BenchMethod::Sdfsnn => "sdfsnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSettings {
    pub t_final: f64,
    pub tssp_n_g: usize,
    pub tssp_extent: f64,
    pub tssp_dt: f64,
    pub neurons: usize,
    pub n_c: usize,
    pub alpha: f64,
    pub svd_threshold: f64,
    /// Laplacian subset size of the SD-FSNN march.
    pub subset_size: usize,
    pub dt: f64,
    pub beta_d: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingSettings {
    fn default() -> Self {
        Self {
            t_final: 0.5,
            tssp_n_g: 64,
            tssp_extent: 8.0,
            tssp_dt: 0.01,
            // Small enough that the reduced rank is M + 1 in every
            // dimension, so timings compare equal-size coefficient systems.
            neurons: 30,
            n_c: 400,
            alpha: 0.5,
            svd_threshold: 1e-8,
            subset_size: 1,
            dt: 0.01,
            beta_d: 1.0,
            repeats: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: BenchMethod,
    pub d: usize,
    /// Fastest of the repeats; `None` when the run was skipped.
    pub seconds: Option<f64>,
    pub note: String,
}

/// Wall time of the time-marching phase only; setup (grids, sampling, SVD)
/// is excluded for both methods.
pub fn runtime_scaling_bench(
    dims: &[usize],
    methods: &[BenchMethod],
    settings: &ScalingSettings,
) -> Result<Vec<TimingRow>> {
    if settings.repeats == 0 || !(settings.t_final > 0.0) {
        return Err(Error::Config("repeats must be >= 1 and t_final > 0".into()));
    }
    let mut rows = Vec::new();
    for &method in methods {
        for &d in dims {
            if d == 0 {
                return Err(Error::InvalidArgument("dimension must be >= 1".into()));
            }
            let row = match method {
                BenchMethod::Tssp => time_tssp(d, settings)?,
                BenchMethod::Sdfsnn => time_sdfsnn(d, settings)?,
            };
            log::info!("bench {method} d={d}: {:?} s {}", row.seconds, row.note);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn best_of(repeats: usize, mut run: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        run()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn time_tssp(d: usize, s: &ScalingSettings) -> Result<TimingRow> {
    let skip = |note: String| TimingRow {
        method: BenchMethod::Tssp,
        d,
        seconds: None,
        note,
    };
    if d > 3 {
        return Ok(skip("skipped: reference grids support d <= 3".into()));
    }
    if s.tssp_n_g.checked_pow(d as u32).is_none_or(|n| n > MAX_GRID_POINTS) {
        return Ok(skip(format!("skipped: {}^{d} exceeds the grid memory cap", s.tssp_n_g)));
    }
    let grid = TsspGrid {
        extent: s.tssp_extent,
        n_g: s.tssp_n_g,
        dt: s.tssp_dt,
        d_ref: d,
    };
    let gammas = vec![1.0; d];
    let problem = GpeProblem::ground_state_start(gammas.clone(), s.beta_d)?;
    let psi0 = grid.sample(&|x| analytic_ground_state(&gammas, x, 0.0));
    let secs = best_of(s.repeats, || {
        tssp_evolve(&grid, &problem, &psi0, s.t_final, &[s.t_final]).map(|_| ())
    })?;
    Ok(TimingRow {
        method: BenchMethod::Tssp,
        d,
        seconds: Some(secs),
        note: format!("N_g={} dt={}", s.tssp_n_g, s.tssp_dt),
    })
}

fn time_sdfsnn(d: usize, s: &ScalingSettings) -> Result<TimingRow> {
    let root = RngHandle::new(s.seed, 0);
    let gammas = vec![1.0; d];
    let problem = GpeProblem::ground_state_start(gammas, s.beta_d)?;
    let points = sample_collocation(
        d,
        s.n_c,
        s.alpha,
        2.0,
        None,
        root.with_stream(streams::COLLOCATION),
    )?;
    let bank = sample_weights_agnostic(
        &points,
        s.neurons,
        default_s1(),
        default_s2(),
        root.with_stream(streams::WEIGHTS),
    )?;
    let disc = Discretization::new(
        &problem,
        bank,
        points,
        EnvelopeSpec::gaussian(s.alpha),
        DiscretizationOptions {
            svd_threshold: s.svd_threshold,
            ..DiscretizationOptions::default()
        },
    )?;
    let c0 = initial_coefficients(&problem, &disc, DEFAULT_FIT_CAP)?;
    // A Horvitz–Thompson draw keeps every dimension, d = 1 included, on the
    // same per-step resample-and-assemble path.
    let m = s.subset_size.min(d);
    let config = IntegratorConfig {
        scheme: Scheme::ImplicitMidpoint,
        dt: s.dt,
        subset_policy: SubsetPolicy::ResamplePerStep,
        subset_size: Some(m),
        subset_scheme: SubsetScheme::HorvitzThompson {
            probs: vec![1.0 / d as f64; d],
        },
        ..IntegratorConfig::default()
    };
    let secs = best_of(s.repeats, || {
        evolve(&problem, &disc, &c0, &config, s.t_final, &[], root).map(|_| ())
    })?;
    Ok(TimingRow {
        method: BenchMethod::Sdfsnn,
        d,
        seconds: Some(secs),
        note: format!("M={} N_c={} m={m} r={}", s.neurons, s.n_c, disc.rank()),
    })
}
