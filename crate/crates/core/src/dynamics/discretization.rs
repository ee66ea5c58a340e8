use serde::{Deserialize, Serialize};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::{CoefficientState, GpeProblem};
use crate::error::{Error, Result};
use crate::features::{
    drift_table, eval_envelope_corrections, eval_features, eval_laplacian_full, laplacian_weights,
    EnvelopeCorrections, EnvelopeSpec, FeatureTables,
};
use crate::reduction::{build_gram, build_reduced_basis, GramMatrix, ReducedBasis};
use crate::sampling::{CollocationSet, DimensionSubset, FeatureBank};

/// Relative residual allowed when fitting the initial data.
pub const DEFAULT_FIT_CAP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationOptions {
    pub svd_threshold: f64,
    /// Decompose `Ψ diag(√w ρ)` so the coefficient projection is a
    /// least-squares fit in the quadrature norm of `ψ = ρ u`.
    pub weighted_projection: bool,
    pub operator: OperatorForm,
}

/// How the linear part of the coefficient ODE is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorForm {
    /// Strong-form residual at the collocation points mapped through the
    /// pseudo-inverse.
    #[default]
    Collocation,
    /// Weak form `−G⁻¹(½⟨∇(ρΨ_i), ∇(ρΨ_l)⟩ + ⟨V ρΨ_i, ρΨ_l⟩)` with the same
    /// quadrature. Self-adjoint in the Gram inner product by construction,
    /// so the linear flow is exactly unitary and has no spurious growing
    /// modes. Requires the weighted projection.
    Galerkin,
}

impl Default for DiscretizationOptions {
    fn default() -> Self {
        Self {
            svd_threshold: crate::reduction::DEFAULT_SVD_THRESHOLD,
            weighted_projection: true,
            operator: OperatorForm::Collocation,
        }
    }
}

/// Everything the coefficient ODE needs on a fixed collocation set.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub bank: FeatureBank,
    pub points: CollocationSet,
    pub envelope: EnvelopeSpec,
    pub env: EnvelopeCorrections,
    pub tables: FeatureTables,
    pub basis: ReducedBasis,
    pub gram: GramMatrix,
    /// `V_d` at the collocation points.
    pub potential: DVector<f64>,
    /// `r × N` reduced full Laplacian.
    pub lap_r: DMatrix<f64>,
    /// `r × N` reduced envelope drift `Σ_j a_j ∂_j`.
    pub drift_r: DMatrix<f64>,
    /// `(M+1) × r`, `σ''(Z) · P`.
    pub sigma2_p: DMatrix<f64>,
    /// `r × r`, everything in the linear operator except the Laplacian.
    pub base_op: DMatrix<f64>,
    /// `r × r`, linear operator with the full Laplacian.
    pub full_op: DMatrix<f64>,
    /// `M × M`, `W Wᵀ` for dimension-free gradient energies.
    pub w_gram: DMatrix<f64>,
    pub operator: OperatorForm,
    /// Galerkin form only: `G⁻¹`.
    pub gram_inv: Option<DMatrix<f64>>,
    /// Galerkin form only: `⟨V ρΨ_i, ρΨ_l⟩`.
    pub potential_mass: Option<DMatrix<f64>>,
}

impl Discretization {
    pub fn new(
        problem: &GpeProblem,
        bank: FeatureBank,
        points: CollocationSet,
        envelope: EnvelopeSpec,
        options: DiscretizationOptions,
    ) -> Result<Self> {
        if problem.dim() != bank.dim() || points.dim() != bank.dim() {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: problem {}, bank {}, points {}",
                problem.dim(),
                bank.dim(),
                points.dim()
            )));
        }
        let env = eval_envelope_corrections(&envelope, &points.points)?;
        let tables = eval_features(&bank, &points.points)?;
        let scaling = options.weighted_projection.then(|| {
            DVector::from_fn(points.len(), |n, _| points.quad_weights[n].sqrt() * env.rho[n])
        });
        if let Some(s) = &scaling {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::DegenerateInput(
                    "envelope underflows at a collocation point; shrink the domain or alpha".into(),
                ));
            }
        }
        let basis = build_reduced_basis(&tables.psi, options.svd_threshold, scaling.as_ref())?;
        let gram = build_gram(&basis, &points.quad_weights, Some(&env.rho_sq))?;

        let potential = DVector::from_fn(points.len(), |n, _| {
            problem.potential(&points.point(n))
        });
        let lap_r = basis.reduce(&eval_laplacian_full(&bank, &tables));
        let drift_r = basis.reduce(&drift_table(&bank, &tables, &envelope));
        let p = &basis.pinv_psi_r;
        let sigma2_p = tables.sigma2() * p;

        let mut diag_part = basis.psi_r.clone();
        for (n, mut col) in diag_part.column_iter_mut().enumerate() {
            col.scale_mut(0.5 * env.b_corr[n] - potential[n]);
        }
        let base_op = (&drift_r + diag_part) * p;
        let (gram_inv, potential_mass) = match options.operator {
            OperatorForm::Collocation => (None, None),
            OperatorForm::Galerkin => {
                if !options.weighted_projection {
                    return Err(Error::Config(
                        "the Galerkin operator requires the weighted projection".into(),
                    ));
                }
                let inv = gram
                    .g
                    .clone()
                    .cholesky()
                    .ok_or(Error::NonSpdGram { min_eig: gram.min_eig })?
                    .inverse();
                let mut weighted = basis.psi_r.clone();
                for (n, mut col) in weighted.column_iter_mut().enumerate() {
                    col.scale_mut(points.quad_weights[n] * env.rho_sq[n] * potential[n]);
                }
                (Some(inv), Some(&weighted * basis.psi_r.transpose()))
            }
        };
        let mut disc = Self {
            operator: options.operator,
            gram_inv,
            potential_mass,
            w_gram: bank.weights() * bank.weights().transpose(),
            bank,
            points,
            envelope,
            env,
            tables,
            basis,
            gram,
            potential,
            lap_r,
            drift_r,
            sigma2_p,
            full_op: base_op.clone(),
            base_op,
        };
        disc.full_op = disc.linear_operator(None);
        Ok(disc)
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn dim(&self) -> usize {
        self.bank.dim()
    }

    /// `A(J) = ½ V_rᵀ diag(λ_J) σ''(Z) P + B`, so the linear flow is
    /// `ċ = i c A`. Cost is `O(M m + r² M)`, independent of `d` and `N_c`
    /// once `λ_J` is known.
    pub fn linear_operator(&self, subset: Option<&DimensionSubset>) -> DMatrix<f64> {
        if let (Some(g_inv), Some(pot)) = (&self.gram_inv, &self.potential_mass) {
            let dims: Vec<(usize, f64)> = match subset {
                Some(s) => s.weighted_indices(),
                None => (0..self.dim()).map(|j| (j, 1.0)).collect(),
            };
            return -(self.galerkin_kinetic(&dims) + pot) * g_inv;
        }
        let lam = laplacian_weights(&self.bank, subset);
        let mut scaled = self.sigma2_p.clone();
        for k in 0..lam.len() {
            scaled.row_mut(k).scale_mut(0.5 * lam[k]);
        }
        self.basis.v_r.tr_mul(&scaled) + &self.base_op
    }

    /// `½ Σ_j λ_j Σ_n w_n ρ_n² ∂_j u_i ∂_j u_l` with `∂_j u = ∂_j Ψ_r + a_j Ψ_r`,
    /// the kinetic form of `ψ = ρ u`. Cost `O(|J| N M r)`.
    fn galerkin_kinetic(&self, dims: &[(usize, f64)]) -> DMatrix<f64> {
        let r = self.rank();
        let n_pts = self.points.len();
        let sigma1 = self.tables.sigma1();
        let w = self.bank.weights();
        let m = self.bank.neurons();
        let mut s = DMatrix::zeros(r, r);
        for &(j, lam) in dims {
            let mut t = sigma1.clone();
            for k in 0..m {
                t.row_mut(k).scale_mut(w[(k, j)]);
            }
            let mut dt = self.basis.v_r.tr_mul(&t);
            for n in 0..n_pts {
                let a = self.env.a[(j, n)];
                if a != 0.0 {
                    let col = self.basis.psi_r.column(n) * a;
                    let mut target = dt.column_mut(n);
                    target += col;
                }
            }
            let mut dw = dt.clone();
            for n in 0..n_pts {
                dw.column_mut(n)
                    .scale_mut(self.points.quad_weights[n] * self.env.rho_sq[n]);
            }
            s += (&dw * dt.transpose()) * (0.5 * lam);
        }
        (&s + s.transpose()) * 0.5
    }

    /// Reduced-basis field `u = Ψ_rᵀ c` at the collocation points.
    pub fn field(&self, c: &DVector<Complex64>) -> DVector<Complex64> {
        let re = self.basis.psi_r.tr_mul(&c.map(|v| v.re));
        let im = self.basis.psi_r.tr_mul(&c.map(|v| v.im));
        DVector::from_fn(re.len(), |n, _| Complex64::new(re[n], im[n]))
    }
}

pub fn discrete_mass(state: &CoefficientState, gram: &GramMatrix) -> f64 {
    // For real symmetric G the quadratic form of a complex vector is real.
    let gr = &gram.g * &state.c_re;
    let gi = &gram.g * &state.c_im;
    state.c_re.dot(&gr) + state.c_im.dot(&gi)
}

pub fn mass_project(state: &CoefficientState, gram: &GramMatrix) -> Result<CoefficientState> {
    let mass = discrete_mass(state, gram);
    if !(mass > 1e-300) {
        return Err(Error::ZeroState { mass });
    }
    let s = 1.0 / mass.sqrt();
    Ok(CoefficientState {
        c_re: &state.c_re * s,
        c_im: &state.c_im * s,
        t: state.t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyParts {
    pub total: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub interaction: f64,
}

/// Quadrature energy of `ψ = ρ u` with `∇(ρu) = ρ(∇u + u ∇ρ/ρ)`.
///
/// Gradient terms are assembled through `W Wᵀ` and the identity
/// `Σ_j x_j w_{m,j} = z_m − b_m`, so the cost does not depend on `d`.
pub fn discrete_energy(
    state: &CoefficientState,
    problem: &GpeProblem,
    disc: &Discretization,
) -> EnergyParts {
    let c = state.complex();
    let u = disc.field(&c);
    let cr = &disc.basis.v_r * &state.c_re;
    let ci = &disc.basis.v_r * &state.c_im;
    let m = disc.bank.neurons();
    let n_pts = disc.points.len();
    let alpha = disc.env.alpha;
    let w = &disc.points.quad_weights;
    // y_{kn} = c̃_k σ'(z_{kn}); ∇u = Σ_k y_k w_k.
    let mut y_re = DMatrix::zeros(m, n_pts);
    let mut y_im = DMatrix::zeros(m, n_pts);
    for n in 0..n_pts {
        for k in 0..m {
            let t = disc.tables.psi[(k, n)];
            let s1 = 1.0 - t * t;
            y_re[(k, n)] = cr[k] * s1;
            y_im[(k, n)] = ci[k] * s1;
        }
    }
    let ky_re = &disc.w_gram * &y_re;
    let ky_im = &disc.w_gram * &y_im;
    let (mut kin, mut pot, mut int) = (0.0, 0.0, 0.0);
    for n in 0..n_pts {
        let mut grad_sq = 0.0;
        let mut cross = Complex64::new(0.0, 0.0);
        for k in 0..m {
            grad_sq += y_re[(k, n)] * ky_re[(k, n)] + y_im[(k, n)] * ky_im[(k, n)];
            let proj = disc.tables.z[(k, n)] - disc.bank.biases()[k];
            cross += Complex64::new(y_re[(k, n)], y_im[(k, n)]) * proj;
        }
        cross *= -2.0 * alpha;
        let un = u[n];
        let u2 = un.norm_sqr();
        let full = grad_sq + 2.0 * (un.conj() * cross).re + 4.0 * alpha * alpha * disc.env.r2[n] * u2;
        let rho2 = disc.env.rho_sq[n];
        kin += w[n] * 0.5 * rho2 * full;
        pot += w[n] * disc.potential[n] * rho2 * u2;
        int += w[n] * 0.5 * problem.beta_d * rho2 * rho2 * u2 * u2;
    }
    EnergyParts {
        total: kin + pot + int,
        kinetic: kin,
        potential: pot,
        interaction: int,
    }
}

/// Least-squares fit of `ψ₀/ρ` followed by mass projection.
pub fn initial_coefficients(
    problem: &GpeProblem,
    disc: &Discretization,
    fit_cap: f64,
) -> Result<CoefficientState> {
    let n = disc.points.len();
    let target = DVector::from_fn(n, |i, _| {
        (problem.initial_psi0)(&disc.points.point(i)) / disc.env.rho[i]
    });
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial data divided by the envelope is not finite at a collocation point".into(),
        ));
    }
    let p = &disc.basis.pinv_psi_r;
    let c_re = p.tr_mul(&target.map(|v| v.re));
    let c_im = p.tr_mul(&target.map(|v| v.im));
    let state = CoefficientState {
        c_re,
        c_im,
        t: 0.0,
    };
    let fitted = disc.field(&state.complex());
    // Residual in the norm the projection minimizes.
    let scale = |i: usize| {
        disc.basis
            .column_scaling
            .as_ref()
            .map_or(1.0, |s| s[i] * s[i])
    };
    let num: f64 = (0..n).map(|i| scale(i) * (target[i] - fitted[i]).norm_sqr()).sum();
    let den: f64 = (0..n).map(|i| scale(i) * target[i].norm_sqr()).sum();
    if den > 0.0 {
        let residual = (num / den).sqrt();
        if residual > fit_cap {
            return Err(Error::RepresentationFailure {
                residual,
                cap: fit_cap,
            });
        }
    }
    mass_project(&state, &disc.gram)
}

/// `ψ̂(x) = ρ(x) Σ_i c_i Ψ_r,i(x)` at arbitrary query points (`N × d`).
pub fn reconstruct(
    state: &CoefficientState,
    disc: &Discretization,
    query: &DMatrix<f64>,
) -> Result<Vec<Complex64>> {
    if query.ncols() != disc.dim() {
        return Err(Error::InvalidArgument(format!(
            "query points have {} columns, model has d = {}",
            query.ncols(),
            disc.dim()
        )));
    }
    let wr = &disc.basis.v_r * &state.c_re;
    let wi = &disc.basis.v_r * &state.c_im;
    let rows: Vec<usize> = (0..query.nrows()).collect();
    let chunk = 256;
    let out: Vec<Vec<Complex64>> = rows
        .par_chunks(chunk)
        .map(|idx| {
            let sub = query.select_rows(idx);
            let t = eval_features(&disc.bank, &sub).expect("dimension checked above");
            let re = t.psi.tr_mul(&wr);
            let im = t.psi.tr_mul(&wi);
            idx.iter()
                .enumerate()
                .map(|(k, &i)| {
                    let x: Vec<f64> = query.row(i).iter().copied().collect();
                    Complex64::new(re[k], im[k]) * disc.envelope.rho(&x)
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}
