//! Coefficient dynamics for the Gross–Pitaevskii equation on a frozen basis.
//!
//! The wave function is `ψ = ρ u` with `u(x, t) = Σ_i c_i(t) Ψ_r,i(x)`; only
//! the reduced coefficients `c` evolve.

mod discretization;
mod integrate;
mod rhs;

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use discretization::{
    discrete_energy, discrete_mass, initial_coefficients, mass_project, reconstruct,
    Discretization, DiscretizationOptions, EnergyParts, OperatorForm, DEFAULT_FIT_CAP,
};
pub use integrate::{
    evolve, step_adaptive, step_projected_symplectic, AdaptiveStep, ConservationLedger, Dopri5Controller,
    IntegratorConfig, MidpointStepper, Scheme, StepStats, SubsetPolicy, Trajectory,
};
pub use rhs::{rhs_full, rhs_stochastic, CoefficientField};

pub type InitialData = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Trapped GPE `i ψ_t = −½∇²ψ + V_d ψ + β_d |ψ|² ψ` with `V_d = ½ Σ γ_j² x_j²`.
#[derive(Clone)]
pub struct GpeProblem {
    pub gammas: Vec<f64>,
    pub beta_d: f64,
    /// Interaction in the original dimension, when `beta_d` was derived.
    pub beta: f64,
    pub n_orig: usize,
    pub initial_psi0: InitialData,
}

impl std::fmt::Debug for GpeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpeProblem")
            .field("gammas", &self.gammas)
            .field("beta_d", &self.beta_d)
            .field("beta", &self.beta)
            .field("n_orig", &self.n_orig)
            .finish_non_exhaustive()
    }
}

impl GpeProblem {
    /// Problem posed directly in `d = gammas.len()` dimensions.
    pub fn new(gammas: Vec<f64>, beta_d: f64, initial_psi0: InitialData) -> Result<Self> {
        validate_gammas(&gammas)?;
        if !beta_d.is_finite() {
            return Err(Error::InvalidArgument("beta_d must be finite".into()));
        }
        let n = gammas.len();
        Ok(Self {
            gammas,
            beta_d,
            beta: beta_d,
            n_orig: n,
            initial_psi0,
        })
    }

    /// Reduce an `n`-dimensional problem to its first `d` axes with
    /// `β_d = β Π_{j>d} (γ_j / 2π)^{1/2}`.
    pub fn reduced(
        beta: f64,
        gammas_orig: &[f64],
        d: usize,
        initial_psi0: InitialData,
    ) -> Result<Self> {
        validate_gammas(gammas_orig)?;
        if d == 0 || d > gammas_orig.len() {
            return Err(Error::InvalidArgument(format!(
                "reduced dimension {d} must lie in 1..={}",
                gammas_orig.len()
            )));
        }
        Ok(Self {
            gammas: gammas_orig[..d].to_vec(),
            beta_d: reduced_interaction(beta, gammas_orig, d),
            beta,
            n_orig: gammas_orig.len(),
            initial_psi0,
        })
    }

    /// Harmonic-trap problem starting from the trap ground state.
    pub fn ground_state_start(gammas: Vec<f64>, beta_d: f64) -> Result<Self> {
        let g = gammas.clone();
        Self::new(
            gammas,
            beta_d,
            Arc::new(move |x: &[f64]| {
                crate::reference::analytic_ground_state(&g, x, 0.0)
            }),
        )
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        0.5 * self
            .gammas
            .iter()
            .zip(x)
            .map(|(g, v)| g * g * v * v)
            .sum::<f64>()
    }
}

pub fn reduced_interaction(beta: f64, gammas_orig: &[f64], d: usize) -> f64 {
    gammas_orig[d..]
        .iter()
        .map(|g| (g / (2.0 * std::f64::consts::PI)).sqrt())
        .product::<f64>()
        * beta
}

fn validate_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() || gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidArgument(
            "trap frequencies must be non-empty and positive".into(),
        ));
    }
    Ok(())
}

/// Reduced coefficients split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientState {
    pub c_re: DVector<f64>,
    pub c_im: DVector<f64>,
    pub t: f64,
}

impl CoefficientState {
    pub fn from_complex(c: &DVector<Complex64>, t: f64) -> Self {
        Self {
            c_re: c.map(|v| v.re),
            c_im: c.map(|v| v.im),
            t,
        }
    }

    pub fn zeros(r: usize) -> Self {
        Self {
            c_re: DVector::zeros(r),
            c_im: DVector::zeros(r),
            t: 0.0,
        }
    }

    pub fn rank(&self) -> usize {
        self.c_re.len()
    }

    pub fn complex(&self) -> DVector<Complex64> {
        DVector::from_fn(self.rank(), |i, _| Complex64::new(self.c_re[i], self.c_im[i]))
    }

    /// Stacked real vector `(c_re, c_im)` used by the integrators.
    pub fn stacked(&self) -> DVector<f64> {
        let r = self.rank();
        DVector::from_fn(2 * r, |i, _| if i < r { self.c_re[i] } else { self.c_im[i - r] })
    }

    pub fn from_stacked(z: &DVector<f64>, t: f64) -> Self {
        let r = z.len() / 2;
        Self {
            c_re: z.rows(0, r).into_owned(),
            c_im: z.rows(r, r).into_owned(),
            t,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.c_re.norm_squared() + self.c_im.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.c_re.iter().chain(self.c_im.iter()).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests;
