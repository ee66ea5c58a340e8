use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{CoefficientState, Discretization, GpeProblem};
use crate::error::{Error, Result};
use crate::features::laplacian_weights;
use crate::sampling::DimensionSubset;

/// Collocation-level assembly of `ċ` from a reduced Laplacian table.
fn assemble(
    state: &CoefficientState,
    problem: &GpeProblem,
    disc: &Discretization,
    lap_r: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let c = state.complex();
    let u = disc.field(&c);
    let lap_re = lap_r.tr_mul(&state.c_re);
    let lap_im = lap_r.tr_mul(&state.c_im);
    let dr_re = disc.drift_r.tr_mul(&state.c_re);
    let dr_im = disc.drift_r.tr_mul(&state.c_im);
    let n = u.len();
    let mut r_re = DVector::zeros(n);
    let mut r_im = DVector::zeros(n);
    for i in 0..n {
        let lin = 0.5 * disc.env.b_corr[i] - disc.potential[i];
        let nl = problem.beta_d * disc.env.rho_sq[i] * u[i].norm_sqr();
        let inner = Complex64::new(
            0.5 * lap_re[i] + dr_re[i] + (lin - nl) * u[i].re,
            0.5 * lap_im[i] + dr_im[i] + (lin - nl) * u[i].im,
        );
        // R = i · inner
        r_re[i] = -inner.im;
        r_im[i] = inner.re;
    }
    if r_re.iter().chain(r_im.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Instability { t: state.t });
    }
    let p = &disc.basis.pinv_psi_r;
    Ok((p.tr_mul(&r_re), p.tr_mul(&r_im)))
}

/// `ċ = R_ρ(X, c) P` with the full Laplacian.
pub fn rhs_full(
    state: &CoefficientState,
    problem: &GpeProblem,
    disc: &Discretization,
) -> Result<(DVector<f64>, DVector<f64>)> {
    assemble(state, problem, disc, &disc.lap_r)
}

/// `ċ` with the Laplacian replaced by its subset estimate.
pub fn rhs_stochastic(
    state: &CoefficientState,
    problem: &GpeProblem,
    disc: &Discretization,
    subset: &DimensionSubset,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if subset.dim() != disc.dim() || subset.size() == 0 {
        return Err(Error::InvalidArgument(
            "subset does not match the model dimension".into(),
        ));
    }
    if subset.is_full() {
        return rhs_full(state, problem, disc);
    }
    let lam = laplacian_weights(&disc.bank, Some(subset));
    let mut table = disc.tables.sigma2();
    for k in 0..lam.len() {
        table.row_mut(k).scale_mut(lam[k]);
    }
    let lap_r = disc.basis.reduce(&table);
    assemble(state, problem, disc, &lap_r)
}

/// The coefficient ODE on stacked real coordinates `z = (c_re, c_im)` with a
/// frozen linear operator, split into linear and cubic parts.
#[derive(Debug, Clone)]
pub struct CoefficientField<'a> {
    disc: &'a Discretization,
    beta_d: f64,
    /// `Aᵀ`, so that `ȧ = −Aᵀ b` and `ḃ = Aᵀ a`.
    op_t: DMatrix<f64>,
}

impl<'a> CoefficientField<'a> {
    pub fn new(disc: &'a Discretization, problem: &GpeProblem, subset: Option<&DimensionSubset>) -> Self {
        let op = match subset {
            Some(s) if !s.is_full() => disc.linear_operator(Some(s)),
            _ => disc.full_op.clone(),
        };
        Self {
            disc,
            beta_d: problem.beta_d,
            op_t: op.transpose(),
        }
    }

    pub fn rank(&self) -> usize {
        self.op_t.nrows()
    }

    pub fn is_linear(&self) -> bool {
        self.beta_d == 0.0
    }

    /// Real `2r × 2r` matrix of the linear part.
    pub fn linear_matrix(&self) -> DMatrix<f64> {
        let r = self.rank();
        let mut l = DMatrix::zeros(2 * r, 2 * r);
        l.view_mut((0, r), (r, r)).copy_from(&(-&self.op_t));
        l.view_mut((r, 0), (r, r)).copy_from(&self.op_t);
        l
    }

    pub fn linear(&self, z: &DVector<f64>) -> DVector<f64> {
        let r = self.rank();
        let a = z.rows(0, r);
        let b = z.rows(r, r);
        let mut out = DVector::zeros(2 * r);
        out.rows_mut(0, r).copy_from(&(-(&self.op_t * b)));
        out.rows_mut(r, r).copy_from(&(&self.op_t * a));
        out
    }

    /// `−i β_d (ρ²|u|² u) P` in stacked coordinates.
    pub fn nonlinear(&self, z: &DVector<f64>) -> DVector<f64> {
        let r = self.rank();
        if self.beta_d == 0.0 {
            return DVector::zeros(2 * r);
        }
        let psi_r = &self.disc.basis.psi_r;
        let ur = psi_r.tr_mul(&z.rows(0, r));
        let ui = psi_r.tr_mul(&z.rows(r, r));
        let rho_sq = &self.disc.env.rho_sq;
        let n = ur.len();
        let mut gr = DVector::zeros(n);
        let mut gi = DVector::zeros(n);
        for i in 0..n {
            let g = self.beta_d * rho_sq[i] * (ur[i] * ur[i] + ui[i] * ui[i]);
            gr[i] = g * ui[i];
            gi[i] = -g * ur[i];
        }
        let p = &self.disc.basis.pinv_psi_r;
        let mut out = DVector::zeros(2 * r);
        out.rows_mut(0, r).copy_from(&p.tr_mul(&gr));
        out.rows_mut(r, r).copy_from(&p.tr_mul(&gi));
        out
    }

    pub fn eval(&self, t: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.linear(z) + self.nonlinear(z);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { t });
        }
        Ok(out)
    }
}
