use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    discrete_energy, discrete_mass, mass_project, CoefficientField, CoefficientState,
    Discretization, EnergyParts, GpeProblem,
};
use crate::error::{Error, Result};
use crate::rng::{streams, RngHandle};
use crate::sampling::{sample_dimension_subset_with, DimensionSubset, SubsetScheme};

/// Fixed-point changes below this (relative) are accepted once the
/// iteration stops contracting. An ill-conditioned step matrix puts the
/// roundoff floor of the linear solve near `eps · cond`.
const STALL_FLOOR: f64 = 1e-5;
/// Iterations without halving the best change that count as a stall.
const STALL_PATIENCE: usize = 3;

/// Smallest step the adaptive controller may take.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Dormand–Prince 5(4) with PI step-size control.
    #[serde(alias = "adaptive-rk45", alias = "dopri5-style")]
    Dopri5,
    /// Implicit midpoint at fixed step, followed by mass projection.
    ImplicitMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetPolicy {
    ResamplePerStep,
    ResamplePerStage,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    /// Fixed step of the implicit midpoint scheme.
    pub dt: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub subset_policy: SubsetPolicy,
    /// Laplacian subset size; `None` uses every dimension.
    pub subset_size: Option<usize>,
    pub subset_scheme: SubsetScheme,
    pub project_mass: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Dopri5,
            rtol: 1e-10,
            atol: 1e-10,
            dt_init: 1e-3,
            dt_max: 0.1,
            dt: 1e-2,
            inner_tol: 1e-12,
            inner_max_iter: 50,
            subset_policy: SubsetPolicy::ResamplePerStep,
            subset_size: None,
            subset_scheme: SubsetScheme::Uniform,
            project_mass: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.rtol > 0.0) {
            bad.push("rtol must be > 0");
        }
        if !(self.atol > 0.0) {
            bad.push("atol must be > 0");
        }
        if !(self.dt_init > 0.0) {
            bad.push("dt_init must be > 0");
        }
        if !(self.dt_max >= self.dt_init) {
            bad.push("dt_max must be >= dt_init");
        }
        if !(self.dt > 0.0) {
            bad.push("dt must be > 0");
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            bad.push("inner_tol must be > 0 and inner_max_iter >= 1");
        }
        if let Some(m) = self.subset_size {
            if m == 0 || (m > d && self.subset_scheme == SubsetScheme::Uniform) {
                bad.push("subset_size must lie in 1..=d");
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Result of one accepted adaptive step.
#[derive(Debug, Clone)]
pub struct AdaptiveStep {
    pub z: DVector<f64>,
    pub t: f64,
    pub h_used: f64,
    pub h_next: f64,
    pub rejected: usize,
}

/// PI controller memory carried between adaptive steps.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5Controller {
    facold: f64,
}

impl Default for Dopri5Controller {
    fn default() -> Self {
        Self { facold: 1e-4 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One accepted Dormand–Prince step, retrying with smaller `h` on rejection.
///
/// `h` is clamped to `h_cap` (distance to the next output time), and the
/// returned `h_next` to `dt_max`.
pub fn step_adaptive(
    z: &DVector<f64>,
    t: f64,
    h: f64,
    h_cap: f64,
    config: &IntegratorConfig,
    ctrl: &mut Dopri5Controller,
    f: &mut dyn FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<AdaptiveStep> {
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;
    const SAFE: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;

    let mut h = h.min(h_cap).min(config.dt_max);
    let mut rejected = 0;
    loop {
        if h < MIN_STEP {
            return Err(Error::Stiffness { t, dt: h });
        }
        let k1 = f(t, z)?;
        let k2 = f(t + C2 * h, &(z + &k1 * (h * A21)))?;
        let k3 = f(t + C3 * h, &(z + (&k1 * A31 + &k2 * A32) * h))?;
        let k4 = f(t + C4 * h, &(z + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
        let k5 = f(
            t + C5 * h,
            &(z + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        )?;
        let k6 = f(
            t + h,
            &(z + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        )?;
        let z_new = z + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &z_new)?;
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;

        let n = z.len().max(1) as f64;
        let err = (err_vec
            .iter()
            .zip(z.iter().zip(z_new.iter()))
            .map(|(e, (a, b))| {
                let sc = config.atol + config.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n)
            .sqrt();
        if !err.is_finite() {
            return Err(Error::Instability { t });
        }

        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let fac = (fac11 / ctrl.facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            ctrl.facold = err.max(1e-4);
            let h_next = (h / fac).min(config.dt_max);
            return Ok(AdaptiveStep {
                z: z_new,
                t: t + h,
                h_used: h,
                h_next,
                rejected,
            });
        }
        rejected += 1;
        h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
    }
}

/// Implicit midpoint with the linear part solved exactly by a cached LU
/// factorization and the cubic term handled by fixed-point iteration.
pub struct MidpointStepper {
    h: f64,
    lu: LU<f64, Dyn, Dyn>,
    explicit: DMatrix<f64>,
}

impl MidpointStepper {
    pub fn new(field: &CoefficientField<'_>, h: f64) -> Self {
        let l = field.linear_matrix();
        let n = l.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        let implicit = &eye - &l * (0.5 * h);
        let explicit = &eye + &l * (0.5 * h);
        Self {
            h,
            lu: implicit.lu(),
            explicit,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Advance `z` by one step; returns the new point and the number of
    /// fixed-point iterations used.
    pub fn step(
        &self,
        field: &CoefficientField<'_>,
        z: &DVector<f64>,
        t: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(DVector<f64>, usize)> {
        let base = &self.explicit * z;
        let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
            self.lu
                .solve(rhs)
                .ok_or(Error::Convergence { iterations: 0, residual: f64::INFINITY })
        };
        if field.is_linear() {
            return Ok((solve(&base)?, 0));
        }
        let mut z1 = solve(&(&base + field.nonlinear(z) * self.h))?;
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for it in 1..=max_iter {
            let mid = (z + &z1) * 0.5;
            let next = solve(&(&base + field.nonlinear(&mid) * self.h))?;
            let change = (&next - &z1).amax();
            z1 = next;
            if !change.is_finite() {
                return Err(Error::Instability { t });
            }
            let scale = z1.amax().max(1.0);
            if change <= tol * scale {
                return Ok((z1, it));
            }
            if change < 0.5 * best {
                best = change;
                since_best = 0;
            } else {
                since_best += 1;
            }
            // A contracting iteration keeps setting new minima; once it
            // stops, the iterates only wander at the roundoff floor.
            if since_best >= STALL_PATIENCE && change <= STALL_FLOOR * scale {
                return Ok((z1, it));
            }
            if it == max_iter {
                return Err(Error::Convergence {
                    iterations: it,
                    residual: change,
                });
            }
        }
        unreachable!("loop returns on the last iteration")
    }
}

/// One implicit-midpoint step followed by mass projection.
pub fn step_projected_symplectic(
    state: &CoefficientState,
    stepper: &MidpointStepper,
    field: &CoefficientField<'_>,
    config: &IntegratorConfig,
    gram: &crate::reduction::GramMatrix,
) -> Result<CoefficientState> {
    let (z, _) = stepper.step(field, &state.stacked(), state.t, config.inner_tol, config.inner_max_iter)?;
    let next = CoefficientState::from_stacked(&z, state.t + stepper.step_size());
    if config.project_mass {
        mass_project(&next, gram)
    } else {
        Ok(next)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationLedger {
    pub mass_history: Vec<(f64, f64)>,
    pub energy_history: Vec<(f64, EnergyParts)>,
    /// Running max of `|N(t) − N(0)|` over every accepted step.
    pub drift_max_mass: f64,
    /// Running max of `|E(t) − E(0)|` over the recorded times.
    pub drift_max_energy: f64,
}

impl ConservationLedger {
    fn record(&mut self, t: f64, mass: f64, energy: EnergyParts) {
        let m0 = self.mass_history.first().map_or(mass, |m| m.1);
        let e0 = self.energy_history.first().map_or(energy.total, |e| e.1.total);
        self.drift_max_mass = self.drift_max_mass.max((mass - m0).abs());
        self.drift_max_energy = self.drift_max_energy.max((energy.total - e0).abs());
        self.mass_history.push((t, mass));
        self.energy_history.push((t, energy));
    }

    fn observe_mass(&mut self, mass: f64) {
        if let Some(&(_, m0)) = self.mass_history.first() {
            self.drift_max_mass = self.drift_max_mass.max((mass - m0).abs());
        }
    }

    pub fn relative_energy_drift(&self) -> f64 {
        match self.energy_history.first() {
            Some((_, e0)) if e0.total != 0.0 => self.drift_max_energy / e0.total.abs(),
            _ => self.drift_max_energy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub max_inner_iterations: usize,
    /// Largest `|c|₂` seen after any accepted step.
    pub max_norm: f64,
    /// A-priori bound `(1/λ_min(G))^{1/2}`.
    pub bound: f64,
    /// Largest `|N − 1|` after any accepted step.
    pub max_mass_error: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<CoefficientState>,
    pub ledger: ConservationLedger,
    pub stats: StepStats,
}

enum SubsetSource {
    Full,
    Fixed(DimensionSubset),
    Random {
        rng: ChaCha8Rng,
        m: usize,
        scheme: SubsetScheme,
        d: usize,
    },
}

impl SubsetSource {
    fn draw(&mut self) -> Result<Option<DimensionSubset>> {
        match self {
            SubsetSource::Full => Ok(None),
            SubsetSource::Fixed(s) => Ok(Some(s.clone())),
            SubsetSource::Random { rng, m, scheme, d } => {
                sample_dimension_subset_with(*d, *m, scheme, rng).map(Some)
            }
        }
    }
}

fn subset_source(config: &IntegratorConfig, d: usize, rng: RngHandle) -> Result<SubsetSource> {
    let Some(m) = config.subset_size else {
        return Ok(SubsetSource::Full);
    };
    if m == d && config.subset_scheme == SubsetScheme::Uniform {
        return Ok(SubsetSource::Full);
    }
    let mut g = rng.with_stream(streams::SUBSETS).generator();
    if config.subset_policy == SubsetPolicy::Fixed {
        let s = sample_dimension_subset_with(d, m, &config.subset_scheme, &mut g)?;
        return Ok(SubsetSource::Fixed(s));
    }
    Ok(SubsetSource::Random {
        rng: g,
        m,
        scheme: config.subset_scheme.clone(),
        d,
    })
}

fn output_times(t_final: f64, snapshot_times: &[f64]) -> Result<Vec<f64>> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_final must be >= 0, got {t_final}")));
    }
    let mut times: Vec<f64> = if snapshot_times.is_empty() {
        vec![0.0, t_final]
    } else {
        snapshot_times.to_vec()
    };
    if times.iter().any(|t| !(*t >= 0.0 && *t <= t_final)) {
        return Err(Error::InvalidArgument("snapshot times must lie in [0, t_final]".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times[0] != 0.0 {
        times.insert(0, 0.0);
    }
    Ok(times)
}

/// March the coefficients from `initial.t = 0` to `t_final`, storing the
/// state at every snapshot time (always including `t = 0`).
pub fn evolve(
    problem: &GpeProblem,
    disc: &Discretization,
    initial: &CoefficientState,
    config: &IntegratorConfig,
    t_final: f64,
    snapshot_times: &[f64],
    rng: RngHandle,
) -> Result<Trajectory> {
    config.validate(disc.dim())?;
    let times = output_times(t_final, snapshot_times)?;
    let gram = &disc.gram;
    let bound = gram.coefficient_bound();
    let mut source = subset_source(config, disc.dim(), rng)?;
    let mut ledger = ConservationLedger::default();
    let mut stats = StepStats {
        bound,
        ..Default::default()
    };

    let mut state = CoefficientState {
        t: 0.0,
        ..initial.clone()
    };
    let check = |state: &CoefficientState, stats: &mut StepStats| -> Result<f64> {
        if !state.is_finite() {
            return Err(Error::Instability { t: state.t });
        }
        let norm = state.norm();
        let mass = discrete_mass(state, gram);
        stats.max_norm = stats.max_norm.max(norm);
        stats.max_mass_error = stats.max_mass_error.max((mass - 1.0).abs());
        if config.project_mass && norm > bound + 1e-9 {
            return Err(Error::BoundViolation {
                t: state.t,
                norm,
                bound,
            });
        }
        Ok(mass)
    };

    let mass0 = check(&state, &mut stats)?;
    ledger.record(0.0, mass0, discrete_energy(&state, problem, disc));
    let mut snapshots = vec![state.clone()];

    let full_field = CoefficientField::new(disc, problem, None);
    let mut midpoint_cache: HashMap<u64, MidpointStepper> = HashMap::new();
    let mut ctrl = Dopri5Controller::default();
    let mut h = config.dt_init;

    for &target in &times[1..] {
        match config.scheme {
            Scheme::Dopri5 => {
                while state.t < target {
                    let remaining = target - state.t;
                    let z = state.stacked();
                    let per_stage = config.subset_policy == SubsetPolicy::ResamplePerStage
                        && matches!(source, SubsetSource::Random { .. });
                    let step = if per_stage {
                        let src = &mut source;
                        let mut f = |t: f64, z: &DVector<f64>| -> Result<DVector<f64>> {
                            let s = src.draw()?;
                            CoefficientField::new(disc, problem, s.as_ref()).eval(t, z)
                        };
                        step_adaptive(&z, state.t, h, remaining, config, &mut ctrl, &mut f)?
                    } else {
                        let subset = source.draw()?;
                        let step_field = subset
                            .as_ref()
                            .map(|s| CoefficientField::new(disc, problem, Some(s)));
                        let field = step_field.as_ref().unwrap_or(&full_field);
                        let mut f = |t: f64, z: &DVector<f64>| field.eval(t, z);
                        step_adaptive(&z, state.t, h, remaining, config, &mut ctrl, &mut f)?
                    };
                    stats.accepted += 1;
                    stats.rejected += step.rejected;
                    // Snap onto the output time to avoid a sliver step.
                    let t_new = if (target - step.t).abs() <= 1e-12 * target.max(1.0) {
                        target
                    } else {
                        step.t
                    };
                    if step.h_used < remaining {
                        h = step.h_next;
                    }
                    let next = CoefficientState::from_stacked(&step.z, t_new);
                    state = if config.project_mass {
                        mass_project(&next, gram)?
                    } else {
                        next
                    };
                    let mass = check(&state, &mut stats)?;
                    ledger.observe_mass(mass);
                }
            }
            Scheme::ImplicitMidpoint => {
                let t0 = state.t;
                let span = target - t0;
                let n_steps = ((span / config.dt) - 1e-9).ceil().max(1.0) as usize;
                let h_eff = span / n_steps as f64;
                for k in 1..=n_steps {
                    let subset = source.draw()?;
                    let z = state.stacked();
                    let (z_new, iters) = match subset {
                        None => {
                            let stepper = midpoint_cache
                                .entry(h_eff.to_bits())
                                .or_insert_with(|| MidpointStepper::new(&full_field, h_eff));
                            stepper.step(&full_field, &z, state.t, config.inner_tol, config.inner_max_iter)?
                        }
                        Some(s) => {
                            let field = CoefficientField::new(disc, problem, Some(&s));
                            let stepper = MidpointStepper::new(&field, h_eff);
                            stepper.step(&field, &z, state.t, config.inner_tol, config.inner_max_iter)?
                        }
                    };
                    stats.accepted += 1;
                    stats.max_inner_iterations = stats.max_inner_iterations.max(iters);
                    let t_new = if k == n_steps { target } else { t0 + k as f64 * h_eff };
                    let next = CoefficientState::from_stacked(&z_new, t_new);
                    state = if config.project_mass {
                        mass_project(&next, gram)?
                    } else {
                        next
                    };
                    let mass = check(&state, &mut stats)?;
                    ledger.observe_mass(mass);
                }
            }
        }
        let mass = discrete_mass(&state, gram);
        ledger.record(state.t, mass, discrete_energy(&state, problem, disc));
        snapshots.push(state.clone());
    }

    Ok(Trajectory {
        snapshots,
        ledger,
        stats,
    })
}
