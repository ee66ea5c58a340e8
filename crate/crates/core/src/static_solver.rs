//! Manufactured-solution benchmark for the stationary GPE on the unit ball.
//!
//! The exact solution is a Gaussian times `F(x) = 1 + ε Σ_i c_i sin θ_i(x)`
//! with `θ_i = x_i + cos x_{i+1} + x_{i+1} cos x_i`, and the source `g` is
//! chosen so that `½∇²ψ − V_d ψ − β_d |ψ|² ψ = g` holds exactly.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{drift_table, eval_envelope_corrections, eval_features, laplacian_weights, EnvelopeSpec};
use crate::metrics::{compute_errors, ErrorReport};
use crate::reduction::build_reduced_basis;
use crate::rng::{streams, RngHandle};
use crate::sampling::{
    default_s1, default_s2, sample_dimension_subset, sample_weights_agnostic, CollocationRule,
    CollocationSet, SubsetScheme,
};

pub const DEFAULT_EPSILON: f64 = 0.01;
const MIN_RELAXATION: f64 = 1.0 / 64.0;
/// Relative residual rise that counts as growth; smaller rises are round-off
/// at the least-squares floor.
const GROWTH_MARGIN: f64 = 1e-8;
/// Relative residual change below which an iteration counts as stalled.
const STALL_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsSpec {
    pub d: usize,
    pub gammas: Vec<f64>,
    pub beta_d: f64,
    pub epsilon: f64,
    /// `d − 1` standard-normal draws.
    pub c_coeffs: Vec<f64>,
    pub seed: u64,
}

impl MmsSpec {
    /// Isotropic or anisotropic spec with `c_i` drawn from `seed`.
    pub fn new(gammas: Vec<f64>, beta_d: f64, epsilon: f64, seed: u64) -> Result<Self> {
        let d = gammas.len();
        if d == 0 || gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument("trap frequencies must be positive".into()));
        }
        if !(epsilon.is_finite() && beta_d.is_finite()) {
            return Err(Error::InvalidArgument("epsilon and beta_d must be finite".into()));
        }
        let mut g = RngHandle::new(seed, streams::MMS_COEFFS).generator();
        let c_coeffs = (0..d - 1).map(|_| g.sample(StandardNormal)).collect();
        Ok(Self {
            d,
            gammas,
            beta_d,
            epsilon,
            c_coeffs,
            seed,
        })
    }

    pub fn isotropic(d: usize, beta_d: f64, epsilon: f64, seed: u64) -> Result<Self> {
        Self::new(vec![1.0; d], beta_d, epsilon, seed)
    }

    /// `Π_j (γ_j/π)^{1/4}`, kept in log form because it underflows for large `d`.
    pub fn log_normalizer(&self) -> f64 {
        0.25 * self
            .gammas
            .iter()
            .map(|g| (g / std::f64::consts::PI).ln())
            .sum::<f64>()
    }
}

/// `ψ_exact / C` and `g / C` with `C` the Gaussian normalizer; all solver
/// arithmetic happens in these units so nothing underflows at `d = 1000`.
struct Scaled {
    psi: f64,
    source: f64,
}

fn theta_terms(x: &[f64], i: usize) -> (f64, f64, f64, f64, f64) {
    let (a, b) = (x[i], x[i + 1]);
    let theta = a + b.cos() + b * a.cos();
    let d_a = 1.0 - b * a.sin();
    let d_b = -b.sin() + a.cos();
    let dd_a = -b * a.cos();
    let dd_b = -b.cos();
    (theta, d_a, d_b, dd_a, dd_b)
}

fn eval_scaled(spec: &MmsSpec, x: &[f64], beta_scaled: f64) -> Scaled {
    let d = spec.d;
    let eps = spec.epsilon;
    let mut f = 1.0;
    let mut lap_f = 0.0;
    // Σ_j γ_j x_j ∂_j F
    let mut radial_f = 0.0;
    for i in 0..d.saturating_sub(1) {
        let c = spec.c_coeffs[i];
        let (theta, d_a, d_b, dd_a, dd_b) = theta_terms(x, i);
        let (s, co) = theta.sin_cos();
        f += eps * c * s;
        lap_f += eps * c * (-s * (d_a * d_a + d_b * d_b) + co * (dd_a + dd_b));
        radial_f += eps * c * co * (spec.gammas[i] * x[i] * d_a + spec.gammas[i + 1] * x[i + 1] * d_b);
    }
    let mut q = 0.0;
    let mut g2x2 = 0.0;
    let mut gsum = 0.0;
    let mut pot = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let g = spec.gammas[j];
        q += g * xj * xj;
        g2x2 += g * g * xj * xj;
        gsum += g;
        pot += 0.5 * g * g * xj * xj;
    }
    let gauss = (-0.5 * q).exp();
    let psi = gauss * f;
    // ∇²(G F) = G (ΔF − 2 Σ γ_j x_j ∂_j F + (Σ γ_j² x_j² − Σ γ_j) F)
    let lap = gauss * (lap_f - 2.0 * radial_f + (g2x2 - gsum) * f);
    Scaled {
        psi,
        source: 0.5 * lap - pot * psi - beta_scaled * psi * psi * psi,
    }
}

/// `ψ_exact(x)`; real-valued.
pub fn mms_exact(spec: &MmsSpec, x: &[f64]) -> f64 {
    eval_scaled(spec, x, 0.0).psi * spec.log_normalizer().exp()
}

/// `g(x) = ½∇²ψ_exact − V_d ψ_exact − β_d |ψ_exact|² ψ_exact`.
pub fn mms_source(spec: &MmsSpec, x: &[f64]) -> f64 {
    let c = spec.log_normalizer().exp();
    let beta_scaled = spec.beta_d * c * c;
    eval_scaled(spec, x, beta_scaled).source * c
}

/// Interior points uniform in the open unit ball and boundary points on the
/// unit sphere.
#[derive(Debug, Clone)]
pub struct StaticProblem {
    pub interior: DMatrix<f64>,
    pub boundary: DMatrix<f64>,
    pub mms: MmsSpec,
}

fn gaussian_directions(n: usize, d: usize, rng: RngHandle) -> DMatrix<f64> {
    let mut g = rng.generator();
    let mut out = DMatrix::from_fn(n, d, |_, _| g.sample::<f64, _>(StandardNormal));
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    out
}

/// `n` points uniform in the unit ball via `r = U^{1/d}`.
pub fn sample_unit_ball(n: usize, d: usize, rng: RngHandle) -> DMatrix<f64> {
    let mut pts = gaussian_directions(n, d, rng);
    let mut g = rng.with_stream(rng.stream ^ 0x5eed).generator();
    for mut row in pts.row_iter_mut() {
        // Keep strictly inside: U ∈ [0, 1) so r < 1.
        let u: f64 = g.random();
        row *= u.powf(1.0 / d as f64);
    }
    pts
}

pub fn sample_unit_sphere(n: usize, d: usize, rng: RngHandle) -> DMatrix<f64> {
    gaussian_directions(n, d, rng)
}

impl StaticProblem {
    pub fn sample(mms: MmsSpec, n_c: usize, n_b: usize, seed: u64) -> Result<Self> {
        if n_c < 2 || n_b == 0 {
            return Err(Error::InvalidArgument("need N_c >= 2 and N_b >= 1".into()));
        }
        let root = RngHandle::new(seed, 0);
        let d = mms.d;
        Ok(Self {
            interior: sample_unit_ball(n_c, d, root.with_stream(streams::COLLOCATION)),
            boundary: sample_unit_sphere(n_b, d, root.with_stream(streams::BOUNDARY)),
            mms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticSettings {
    pub neurons: usize,
    pub alpha: f64,
    /// Multiplies both anchor constants of the pair sampler.
    pub weight_scale: f64,
    pub svd_threshold: f64,
    /// Relative singular-value cutoff of the least-squares solve.
    pub lstsq_threshold: f64,
    pub boundary_weight: f64,
    /// Laplacian subset size; `None` uses the full Laplacian.
    pub subset_size: Option<usize>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub damping: f64,
    /// Test points per interior collocation point.
    pub test_factor: usize,
}

impl Default for StaticSettings {
    fn default() -> Self {
        Self {
            neurons: 2048,
            alpha: 0.5,
            weight_scale: 0.1,
            svd_threshold: 1e-10,
            lstsq_threshold: 1e-12,
            boundary_weight: 10.0,
            subset_size: None,
            picard_tol: 1e-12,
            picard_max_iter: 100,
            damping: 0.5,
            test_factor: 10,
        }
    }
}

impl StaticSettings {
    pub fn validate(&self, d: usize) -> Result<()> {
        let mut bad = Vec::new();
        if self.neurons == 0 {
            bad.push("neurons must be >= 1".to_string());
        }
        if !(self.alpha > 0.0) {
            bad.push("alpha must be > 0".into());
        }
        if !(self.weight_scale > 0.0) {
            bad.push("weight_scale must be > 0".into());
        }
        if !(self.svd_threshold > 0.0 && self.svd_threshold < 1.0) {
            bad.push("svd_threshold must lie in (0, 1)".into());
        }
        if !(self.lstsq_threshold > 0.0 && self.lstsq_threshold < 1.0) {
            bad.push("lstsq_threshold must lie in (0, 1)".into());
        }
        if !(self.boundary_weight > 0.0) {
            bad.push("boundary_weight must be > 0".into());
        }
        if let Some(m) = self.subset_size {
            if m == 0 || m > d {
                bad.push(format!("subset_size must lie in 1..={d}"));
            }
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            bad.push("picard_tol must be > 0 and picard_max_iter >= 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            bad.push("damping must lie in (0, 1]".into());
        }
        if self.test_factor == 0 {
            bad.push("test_factor must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticSolution {
    /// Reduced coefficients.
    pub coefficients: DVector<f64>,
    pub rank: usize,
    pub iterations: usize,
    /// Scaled least-squares residual after each accepted iteration.
    pub residual_history: Vec<f64>,
    /// Interior residual of the final iterate relative to the source norm.
    pub relative_residual: f64,
    pub errors: ErrorReport,
    /// Features through the Picard loop, excluding point sampling and test evaluation.
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

/// Linear rows for the frozen nonlinearity `ν`: interior
/// `ρ(½Δu + drift + (½b − V − β ν) u)` and boundary `λ ρ u`, with the
/// blocks normalized by their right-hand-side RMS.
struct RowBlocks {
    /// `N_c × r` operator without the cubic term.
    interior: DMatrix<f64>,
    /// `N_c × r`, `ρ u` basis values at interior points.
    interior_values: DMatrix<f64>,
    boundary: DMatrix<f64>,
    rhs_interior: DVector<f64>,
    rhs_boundary: DVector<f64>,
    scale_interior: f64,
    scale_boundary: f64,
}

fn rms(v: &DVector<f64>) -> f64 {
    (v.norm_squared() / v.len() as f64).sqrt()
}

/// Least squares by SVD with a relative singular-value cutoff.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel: f64) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.max();
    svd.solve(b, rel * top)
        .map_err(|e| Error::DegenerateInput(format!("least-squares solve failed: {e}")))
}

/// Picard iteration on the stacked least-squares system, then errors on
/// `test_factor · N_c` fresh points uniform in the ball.
pub fn solve_static(problem: &StaticProblem, settings: &StaticSettings, seed: u64) -> Result<StaticSolution> {
    let t_total = Instant::now();
    let mms = &problem.mms;
    let d = mms.d;
    settings.validate(d)?;
    if problem.interior.ncols() != d || problem.boundary.ncols() != d {
        return Err(Error::InvalidArgument("point dimension does not match the spec".into()));
    }
    let n_c = problem.interior.nrows();
    let n_b = problem.boundary.nrows();
    let root = RngHandle::new(seed, 0);
    let log_c = mms.log_normalizer();
    let beta_scaled = mms.beta_d * (2.0 * log_c).exp();

    let t_solve = Instant::now();
    let mut all = DMatrix::zeros(n_c + n_b, d);
    all.rows_mut(0, n_c).copy_from(&problem.interior);
    all.rows_mut(n_c, n_b).copy_from(&problem.boundary);
    let pool = CollocationSet::from_parts(
        all.clone(),
        vec![1.0 / (n_c + n_b) as f64; n_c + n_b],
        settings.alpha,
        0.0,
        CollocationRule::Custom,
    )?;
    let bank = sample_weights_agnostic(
        &pool,
        settings.neurons,
        settings.weight_scale * default_s1(),
        settings.weight_scale * default_s2(),
        root.with_stream(streams::WEIGHTS),
    )?;
    let envelope = EnvelopeSpec::gaussian(settings.alpha);

    let tables = eval_features(&bank, &all)?;
    let basis = build_reduced_basis(&tables.psi, settings.svd_threshold, None)?;
    let r = basis.rank();

    let interior_cols = 0..n_c;
    let env = eval_envelope_corrections(&envelope, &problem.interior)?;
    let sub = |m: &DMatrix<f64>| m.columns(0, n_c).into_owned();
    let psi_int = sub(&tables.psi);
    let z_int = sub(&tables.z);
    let int_tables = crate::features::FeatureTables { psi: psi_int, z: z_int };
    let subset = match settings.subset_size {
        Some(m) if m < d => Some(sample_dimension_subset(
            d,
            m,
            &SubsetScheme::Uniform,
            root.with_stream(streams::SUBSETS),
        )?),
        _ => None,
    };
    let lam = laplacian_weights(&bank, subset.as_ref());
    let mut lap = int_tables.sigma2();
    for k in 0..lam.len() {
        lap.row_mut(k).scale_mut(lam[k]);
    }
    let drift = drift_table(&bank, &int_tables, &envelope);
    let psi_r_int = basis.reduce(&int_tables.psi);
    let op_r = basis.reduce(&(lap * 0.5 + drift));

    let mut src = DVector::zeros(n_c);
    let mut interior = DMatrix::zeros(n_c, r);
    let mut interior_values = DMatrix::zeros(n_c, r);
    for n in interior_cols {
        let x: Vec<f64> = problem.interior.row(n).iter().copied().collect();
        src[n] = eval_scaled(mms, &x, beta_scaled).source;
        let pot: f64 = x.iter().zip(&mms.gammas).map(|(v, g)| 0.5 * g * g * v * v).sum();
        let diag = 0.5 * env.b_corr[n] - pot;
        let rho = env.rho[n];
        for k in 0..r {
            interior[(n, k)] = rho * (op_r[(k, n)] + diag * psi_r_int[(k, n)]);
            interior_values[(n, k)] = rho * psi_r_int[(k, n)];
        }
    }
    let psi_r_bnd = basis.reduce(&tables.psi.columns(n_c, n_b).into_owned());
    let mut boundary = DMatrix::zeros(n_b, r);
    let mut rhs_boundary = DVector::zeros(n_b);
    for n in 0..n_b {
        let x: Vec<f64> = problem.boundary.row(n).iter().copied().collect();
        let rho = envelope.rho(&x);
        rhs_boundary[n] = eval_scaled(mms, &x, 0.0).psi;
        for k in 0..r {
            boundary[(n, k)] = rho * psi_r_bnd[(k, n)];
        }
    }
    let scale_interior = 1.0 / rms(&src).max(f64::MIN_POSITIVE);
    let scale_boundary = settings.boundary_weight / rms(&rhs_boundary).max(f64::MIN_POSITIVE);
    let blocks = RowBlocks {
        interior,
        interior_values,
        boundary,
        rhs_interior: src,
        rhs_boundary,
        scale_interior,
        scale_boundary,
    };

    let (coefficients, iterations, residual_history) = picard(&blocks, beta_scaled, settings)?;
    let solve_seconds = t_solve.elapsed().as_secs_f64();

    let u_int = &blocks.interior_values * &coefficients;
    let resid = interior_residual(&blocks, beta_scaled, &coefficients, &u_int);
    let relative_residual = resid.norm() / blocks.rhs_interior.norm().max(f64::MIN_POSITIVE);

    let n_test = settings.test_factor * n_c;
    let test = sample_unit_ball(n_test, d, root.with_stream(streams::TEST_POINTS));
    let test_tables = eval_features(&bank, &test)?;
    let u_test = basis.reduce(&test_tables.psi).tr_mul(&coefficients);
    let mut pred = Vec::with_capacity(n_test);
    let mut truth = Vec::with_capacity(n_test);
    for n in 0..n_test {
        let x: Vec<f64> = test.row(n).iter().copied().collect();
        pred.push(num_complex::Complex64::new(envelope.rho(&x) * u_test[n], 0.0));
        truth.push(num_complex::Complex64::new(eval_scaled(mms, &x, 0.0).psi, 0.0));
    }
    let errors = compute_errors(&pred, &truth)?;
    Ok(StaticSolution {
        coefficients,
        rank: r,
        iterations,
        residual_history,
        relative_residual,
        errors,
        solve_seconds,
        total_seconds: t_total.elapsed().as_secs_f64(),
    })
}

fn interior_residual(
    blocks: &RowBlocks,
    beta_scaled: f64,
    c: &DVector<f64>,
    values: &DVector<f64>,
) -> DVector<f64> {
    let mut res = &blocks.interior * c - &blocks.rhs_interior;
    if beta_scaled != 0.0 {
        for n in 0..res.len() {
            res[n] -= beta_scaled * values[n].powi(3);
        }
    }
    res
}

fn stacked_residual(blocks: &RowBlocks, beta_scaled: f64, c: &DVector<f64>) -> f64 {
    let values = &blocks.interior_values * c;
    let ri = interior_residual(blocks, beta_scaled, c, &values) * blocks.scale_interior;
    let rb = (&blocks.boundary * c - &blocks.rhs_boundary) * blocks.scale_boundary;
    (ri.norm_squared() + rb.norm_squared()).sqrt()
}

fn picard(
    blocks: &RowBlocks,
    beta_scaled: f64,
    settings: &StaticSettings,
) -> Result<(DVector<f64>, usize, Vec<f64>)> {
    let n_c = blocks.interior.nrows();
    let n_b = blocks.boundary.nrows();
    let r = blocks.interior.ncols();
    let mut rhs = DVector::zeros(n_c + n_b);
    rhs.rows_mut(0, n_c).copy_from(&(&blocks.rhs_interior * blocks.scale_interior));
    rhs.rows_mut(n_c, n_b).copy_from(&(&blocks.rhs_boundary * blocks.scale_boundary));
    let assemble = |nu: Option<&DVector<f64>>| {
        let mut a = DMatrix::zeros(n_c + n_b, r);
        let mut top = blocks.interior.clone();
        if let Some(nu) = nu {
            for n in 0..n_c {
                let f = beta_scaled * nu[n];
                let vals = blocks.interior_values.row(n) * f;
                let mut row = top.row_mut(n);
                row -= vals;
            }
        }
        a.rows_mut(0, n_c).copy_from(&(top * blocks.scale_interior));
        a.rows_mut(n_c, n_b).copy_from(&(&blocks.boundary * blocks.scale_boundary));
        a
    };

    let mut c = lstsq(&assemble(None), &rhs, settings.lstsq_threshold)?;
    let mut history = vec![stacked_residual(blocks, beta_scaled, &c)];
    if beta_scaled == 0.0 {
        return Ok((c, 1, history));
    }
    let mut growth = 0;
    let mut stalled = 0;
    // Under-relaxation factor; it only shrinks, so a 2-cycle of the plain
    // fixed-point map is damped out instead of revisited.
    let mut omega = 1.0;
    for it in 2..=settings.picard_max_iter {
        let vals = &blocks.interior_values * &c;
        let nu = vals.map(|v| v * v);
        let proposal = lstsq(&assemble(Some(&nu)), &rhs, settings.lstsq_threshold)?;
        let prev = *history.last().expect("history is non-empty");
        let mut next = &c + (&proposal - &c) * omega;
        let mut res = stacked_residual(blocks, beta_scaled, &next);
        let grew = |res: f64| res > prev * (1.0 + GROWTH_MARGIN);
        while grew(res) && omega > MIN_RELAXATION {
            omega *= settings.damping;
            next = &c + (&proposal - &c) * omega;
            res = stacked_residual(blocks, beta_scaled, &next);
        }
        if grew(res) {
            growth += 1;
            if growth >= 3 {
                return Err(Error::PicardDivergence {
                    iteration: it,
                    residual: res,
                });
            }
        } else {
            growth = 0;
        }
        if (res - prev).abs() <= STALL_MARGIN * prev {
            stalled += 1;
        } else {
            stalled = 0;
        }
        let change = (&next - &c).norm();
        c = next;
        history.push(res);
        if change < settings.picard_tol * c.norm().max(1.0) || stalled >= 3 {
            return Ok((c, it, history));
        }
    }
    Ok((c, settings.picard_max_iter, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_point(d: usize, radius: f64, seed: u64) -> Vec<f64> {
        let p = sample_unit_ball(1, d, RngHandle::new(seed, 77));
        p.row(0).iter().map(|v| v * radius).collect()
    }

    #[test]
    fn gaussian_limit_at_origin() {
        let spec = MmsSpec::isotropic(1, 0.0, 0.0, 1).unwrap();
        let v = mms_exact(&spec, &[0.0]);
        assert!((v - std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn unperturbed_factor_is_one() {
        let spec = MmsSpec::isotropic(4, 1.0, 0.0, 2).unwrap();
        let x = random_point(4, 0.8, 3);
        let gauss: f64 = x.iter().map(|v| v * v).sum::<f64>();
        let expected = std::f64::consts::PI.powf(-1.0) * (-0.5 * gauss).exp();
        assert!((mms_exact(&spec, &x) - expected).abs() < 1e-15);
    }

    #[test]
    fn perturbation_breaks_parity() {
        let spec = MmsSpec::isotropic(5, 1.0, 0.1, 4).unwrap();
        for s in 0..5 {
            let x = random_point(5, 0.9, 10 + s);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            assert!((mms_exact(&spec, &x) - mms_exact(&spec, &neg)).abs() > 1e-8);
        }
    }

    #[test]
    fn coefficients_reproducible_from_seed() {
        let a = MmsSpec::isotropic(6, 1.0, 0.01, 9).unwrap();
        let b = MmsSpec::isotropic(6, 1.0, 0.01, 9).unwrap();
        assert_eq!(a.c_coeffs, b.c_coeffs);
        assert_eq!(a.c_coeffs.len(), 5);
        assert_ne!(a.c_coeffs, MmsSpec::isotropic(6, 1.0, 0.01, 10).unwrap().c_coeffs);
    }

    #[test]
    fn harmonic_eigenrelation() {
        let spec = MmsSpec::isotropic(1, 0.0, 0.0, 0).unwrap();
        for x in [-0.7, 0.0, 0.3, 0.95] {
            let g = mms_source(&spec, &[x]);
            assert!((g + 0.5 * mms_exact(&spec, &[x])).abs() < 1e-15);
        }
    }

    /// Central-difference assembly of `½∇²ψ − Vψ − β|ψ|²ψ`.
    fn fd_source(spec: &MmsSpec, x: &[f64]) -> f64 {
        let h = 1e-4;
        let p0 = mms_exact(spec, x);
        let mut lap = 0.0;
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            lap += (mms_exact(spec, &xp) - 2.0 * p0 + mms_exact(spec, &xm)) / (h * h);
        }
        let pot: f64 = x.iter().zip(&spec.gammas).map(|(v, g)| 0.5 * g * g * v * v).sum();
        0.5 * lap - pot * p0 - spec.beta_d * p0 * p0 * p0
    }

    #[test]
    fn source_matches_finite_differences() {
        for d in 1..=5 {
            let gammas: Vec<f64> = (0..d).map(|j| 0.5 + 0.4 * j as f64).collect();
            let spec = MmsSpec::new(gammas, 2.0, 0.3, 20 + d as u64).unwrap();
            for s in 0..10 {
                let x = random_point(d, 1.0, 100 * d as u64 + s);
                let exact = mms_source(&spec, &x);
                let fd = fd_source(&spec, &x);
                assert!((exact - fd).abs() <= 1e-5 * exact.abs().max(1e-3), "d={d} {exact} vs {fd}");
            }
        }
    }

    #[test]
    fn manufactured_residual_vanishes() {
        // Independent assembly through the product rule on ψ = G F in d = 3
        // with one-dimensional finite differences of F only.
        let spec = MmsSpec::isotropic(3, 1.5, 0.2, 5).unwrap();
        let f = |x: &[f64]| -> f64 {
            1.0 + (0..2)
                .map(|i| spec.epsilon * spec.c_coeffs[i] * (x[i] + x[i + 1].cos() + x[i + 1] * x[i].cos()).sin())
                .sum::<f64>()
        };
        for s in 0..10 {
            let x = random_point(3, 0.95, 300 + s);
            let h = 1e-3;
            let mut lap_f = 0.0;
            let mut radial = 0.0;
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                // Fourth-order stencils keep this well below 1e-8.
                let mut xpp = x.clone();
                let mut xmm = x.clone();
                xpp[j] += 2.0 * h;
                xmm[j] -= 2.0 * h;
                lap_f += (-f(&xpp) + 16.0 * f(&xp) - 30.0 * f(&x) + 16.0 * f(&xm) - f(&xmm)) / (12.0 * h * h);
                radial += x[j] * (-f(&xpp) + 8.0 * f(&xp) - 8.0 * f(&xm) + f(&xmm)) / (12.0 * h);
            }
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let c = std::f64::consts::PI.powf(-0.75);
            let gauss = c * (-0.5 * r2).exp();
            let psi = gauss * f(&x);
            let lap = gauss * (lap_f - 2.0 * radial + (r2 - 3.0) * f(&x));
            let residual = 0.5 * lap - 0.5 * r2 * psi - spec.beta_d * psi.powi(3) - mms_source(&spec, &x);
            assert!(residual.abs() < 1e-8, "{residual}");
        }
    }

    #[test]
    fn source_decays_like_the_gaussian() {
        let spec = MmsSpec::isotropic(3, 1.0, 0.01, 6).unwrap();
        let dir = [0.6, 0.0, 0.8];
        let at = |r: f64| mms_source(&spec, &dir.map(|v| v * r)).abs();
        let ratio = at(3.0) / at(1.0);
        // poly(r) e^{−r²/2}: the factor e^{−4} dominates a degree-2 polynomial.
        assert!(ratio < 9.0 * (-4.0f64).exp() * 2.0, "{ratio}");
    }

    #[test]
    fn ball_and_sphere_samplers() {
        let x = sample_unit_ball(500, 7, RngHandle::new(1, 2));
        assert!(x.row_iter().all(|r| r.norm() < 1.0));
        let s = sample_unit_sphere(500, 7, RngHandle::new(1, 3));
        assert!(s.row_iter().all(|r| (r.norm() - 1.0).abs() < 1e-14));
        // Radius law: P(r < 0.5) = 0.5^7.
        let frac = x.row_iter().filter(|r| r.norm() < 0.9).count() as f64 / 500.0;
        assert!((frac - 0.9f64.powi(7)).abs() < 0.07, "{frac}");
    }

    fn small_settings() -> StaticSettings {
        StaticSettings {
            neurons: 200,
            ..Default::default()
        }
    }

    #[test]
    fn linear_problem_solves_in_one_iteration() {
        let spec = MmsSpec::isotropic(3, 0.0, 0.01, 7).unwrap();
        let p = StaticProblem::sample(spec, 100, 100, 7).unwrap();
        let sol = solve_static(&p, &small_settings(), 7).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.errors.rel_l2 < 1e-2, "{:?}", sol.errors);
    }

    #[test]
    fn picard_residual_is_monotone() {
        let spec = MmsSpec::isotropic(2, 5.0, 0.05, 8).unwrap();
        let p = StaticProblem::sample(spec, 120, 120, 8).unwrap();
        let sol = solve_static(&p, &small_settings(), 8).unwrap();
        assert!(sol.iterations > 1 && sol.iterations < 100, "{:?}", sol.residual_history);
        for w in sol.residual_history[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8), "{:?}", sol.residual_history);
        }
        assert!(sol.errors.rel_l2 < 1e-2, "{:?}", sol.errors);
    }

    #[test]
    fn rejects_bad_settings() {
        let s = StaticSettings {
            neurons: 0,
            subset_size: Some(5),
            damping: 0.0,
            ..Default::default()
        };
        let msg = s.validate(3).unwrap_err().to_string();
        assert!(msg.contains("neurons") && msg.contains("subset_size") && msg.contains("damping"));
    }
}
