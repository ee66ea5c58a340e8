//! Frozen tanh features, their spatial derivatives and the Gaussian envelope
//! corrections.
//!
//! Tables are laid out with one row per feature (the `M` neurons followed by
//! the constant bias channel) and one column per point. Per-dimension tables
//! are built on demand so memory stays independent of `d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{DimensionSubset, FeatureBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeMode {
    /// `psi = rho * u` with plain tanh features for `u`.
    DeEnveloped,
    /// No envelope: `rho ≡ 1`, used by the "without decay" ablation.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    pub alpha: f64,
    pub mode: EnvelopeMode,
}

impl EnvelopeSpec {
    pub fn gaussian(alpha: f64) -> Self {
        Self {
            alpha,
            mode: EnvelopeMode::DeEnveloped,
        }
    }

    pub fn disabled() -> Self {
        Self {
            alpha: 0.0,
            mode: EnvelopeMode::Disabled,
        }
    }

    /// Decay rate actually applied (`0` when disabled).
    pub fn effective_alpha(&self) -> f64 {
        match self.mode {
            EnvelopeMode::DeEnveloped => self.alpha,
            EnvelopeMode::Disabled => 0.0,
        }
    }

    pub fn rho(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (-self.effective_alpha() * r2).exp()
    }

    fn validate(&self) -> Result<()> {
        if self.mode == EnvelopeMode::DeEnveloped && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "envelope alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Feature values on a batch of points, with the pre-activations cached for
/// derivative evaluation.
#[derive(Debug, Clone)]
pub struct FeatureTables {
    /// `(M+1) × N`: tanh features followed by a row of ones.
    pub psi: DMatrix<f64>,
    /// `M × N` pre-activations `w_m · x_n + b_m`.
    pub z: DMatrix<f64>,
}

impl FeatureTables {
    pub fn neurons(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.z.ncols()
    }

    /// `σ'(z) = 1 − tanh²(z)` per neuron, with a zero bias row.
    pub fn sigma1(&self) -> DMatrix<f64> {
        let m = self.neurons();
        DMatrix::from_fn(m + 1, self.n_points(), |k, n| {
            if k == m {
                0.0
            } else {
                let t = self.psi[(k, n)];
                1.0 - t * t
            }
        })
    }

    /// `σ''(z) = −2 tanh(z)(1 − tanh²(z))` per neuron, with a zero bias row.
    pub fn sigma2(&self) -> DMatrix<f64> {
        let m = self.neurons();
        DMatrix::from_fn(m + 1, self.n_points(), |k, n| {
            if k == m {
                0.0
            } else {
                let t = self.psi[(k, n)];
                -2.0 * t * (1.0 - t * t)
            }
        })
    }
}

fn check_dims(bank: &FeatureBank, points: &DMatrix<f64>) -> Result<()> {
    if bank.dim() != points.ncols() {
        return Err(Error::InvalidArgument(format!(
            "feature bank has d = {} but points have {} columns",
            bank.dim(),
            points.ncols()
        )));
    }
    Ok(())
}

/// Evaluate `tanh(W x + b)` on the rows of `points` (`N × d`).
pub fn eval_features(bank: &FeatureBank, points: &DMatrix<f64>) -> Result<FeatureTables> {
    check_dims(bank, points)?;
    let mut z = bank.weights() * points.transpose();
    for (k, mut row) in z.row_iter_mut().enumerate() {
        row.add_scalar_mut(bank.biases()[k]);
    }
    let m = bank.neurons();
    let psi = DMatrix::from_fn(m + 1, points.nrows(), |k, n| {
        if k == m {
            1.0
        } else {
            z[(k, n)].tanh()
        }
    });
    Ok(FeatureTables { psi, z })
}

/// `∂_j` of every feature: `w_{m,j} σ'(z)`.
pub fn first_partial(bank: &FeatureBank, tables: &FeatureTables, j: usize) -> DMatrix<f64> {
    let mut out = tables.sigma1();
    for k in 0..bank.neurons() {
        out.row_mut(k).scale_mut(bank.weights()[(k, j)]);
    }
    out
}

/// `∂²_j` of every feature: `w_{m,j}² σ''(z)`.
pub fn second_partial(bank: &FeatureBank, tables: &FeatureTables, j: usize) -> DMatrix<f64> {
    let mut out = tables.sigma2();
    for k in 0..bank.neurons() {
        let w = bank.weights()[(k, j)];
        out.row_mut(k).scale_mut(w * w);
    }
    out
}

/// All `d` first-derivative tables. Memory is `d (M+1) N`; intended for low `d`.
pub fn eval_first_derivatives(bank: &FeatureBank, tables: &FeatureTables) -> Vec<DMatrix<f64>> {
    (0..bank.dim()).map(|j| first_partial(bank, tables, j)).collect()
}

/// Per-neuron weights `λ_m` such that the Laplacian estimate of feature `m`
/// is `λ_m σ''(z_m)`. The full Laplacian uses `λ_m = |w_m|²`.
pub fn laplacian_weights(bank: &FeatureBank, subset: Option<&DimensionSubset>) -> DVector<f64> {
    let w = bank.weights();
    match subset {
        None => DVector::from_iterator(bank.neurons(), w.row_iter().map(|r| r.norm_squared())),
        Some(s) => {
            let pairs = s.weighted_indices();
            DVector::from_fn(bank.neurons(), |k, _| {
                pairs.iter().map(|&(j, f)| f * w[(k, j)] * w[(k, j)]).sum()
            })
        }
    }
}

fn scale_sigma2(tables: &FeatureTables, lam: &DVector<f64>) -> DMatrix<f64> {
    let mut out = tables.sigma2();
    for k in 0..lam.len() {
        out.row_mut(k).scale_mut(lam[k]);
    }
    out
}

pub fn eval_laplacian_full(bank: &FeatureBank, tables: &FeatureTables) -> DMatrix<f64> {
    scale_sigma2(tables, &laplacian_weights(bank, None))
}

/// Unbiased Laplacian estimate touching only the sampled columns of `W`.
pub fn eval_laplacian_stochastic(
    bank: &FeatureBank,
    tables: &FeatureTables,
    subset: &DimensionSubset,
) -> Result<DMatrix<f64>> {
    if subset.size() == 0 {
        return Err(Error::InvalidArgument("empty dimension subset".into()));
    }
    if subset.dim() != bank.dim() {
        return Err(Error::InvalidArgument(format!(
            "subset is over {} dimensions, bank has {}",
            subset.dim(),
            bank.dim()
        )));
    }
    Ok(scale_sigma2(tables, &laplacian_weights(bank, Some(subset))))
}

/// `Σ_j a_j ∂_j` applied to every feature, where `a_j = −2α x_j`.
///
/// Since `Σ_j x_j w_{m,j} = z_m − b_m`, this is `−2α σ'(z_m)(z_m − b_m)` and
/// costs nothing per dimension.
pub fn drift_table(bank: &FeatureBank, tables: &FeatureTables, env: &EnvelopeSpec) -> DMatrix<f64> {
    let alpha = env.effective_alpha();
    let m = bank.neurons();
    DMatrix::from_fn(m + 1, tables.n_points(), |k, n| {
        if k == m {
            0.0
        } else {
            let z = tables.z[(k, n)];
            let t = tables.psi[(k, n)];
            -2.0 * alpha * (1.0 - t * t) * (z - bank.biases()[k])
        }
    })
}

/// Envelope values and the correction fields `∇ρ/ρ` and `∇²ρ/ρ`.
#[derive(Debug, Clone)]
pub struct EnvelopeCorrections {
    /// `d × N`, `a_j(x) = −2α x_j`.
    pub a: DMatrix<f64>,
    /// `4α²|x|² − 2αd`.
    pub b_corr: DVector<f64>,
    pub rho: DVector<f64>,
    pub rho_sq: DVector<f64>,
    /// Squared norms of the points, kept for dimension-free energy assembly.
    pub r2: DVector<f64>,
    pub alpha: f64,
}

pub fn eval_envelope_corrections(
    spec: &EnvelopeSpec,
    points: &DMatrix<f64>,
) -> Result<EnvelopeCorrections> {
    spec.validate()?;
    let alpha = spec.effective_alpha();
    let (n, d) = points.shape();
    let r2 = DVector::from_iterator(n, points.row_iter().map(|r| r.norm_squared()));
    let a = DMatrix::from_fn(d, n, |j, i| -2.0 * alpha * points[(i, j)]);
    let b_corr = r2.map(|s| 4.0 * alpha * alpha * s - 2.0 * alpha * d as f64);
    let rho = r2.map(|s| (-alpha * s).exp());
    let rho_sq = rho.map(|v| v * v);
    Ok(EnvelopeCorrections {
        a,
        b_corr,
        rho,
        rho_sq,
        r2,
        alpha,
    })
}
