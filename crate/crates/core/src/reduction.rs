//! SVD-orthogonalized reduced basis, its pseudo-inverse and the mass Gram
//! matrix.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest singular value accepted by [`pseudo_inverse`].
pub const SINGULAR_FLOOR: f64 = 1e-300;
pub const DEFAULT_SVD_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// `(M+1) × r` retained left singular vectors.
    pub v_r: DMatrix<f64>,
    /// `r × N_c`, `V_rᵀ Ψ`.
    pub psi_r: DMatrix<f64>,
    pub sing_vals: DVector<f64>,
    /// `N_c × r` right inverse of `psi_r`: `psi_r · pinv = I_r`.
    pub pinv_psi_r: DMatrix<f64>,
    pub svd_threshold: f64,
    /// Column scaling `s_n` used for the decomposition, if any.
    pub column_scaling: Option<DVector<f64>>,
    /// Full singular spectrum before truncation.
    pub spectrum: Vec<f64>,
}

impl ReducedBasis {
    pub fn rank(&self) -> usize {
        self.sing_vals.len()
    }

    /// Apply `V_rᵀ` to any `(M+1) × N` feature-space table.
    pub fn reduce(&self, table: &DMatrix<f64>) -> DMatrix<f64> {
        self.v_r.tr_mul(table)
    }

    /// Write the full singular spectrum as `index,sigma,relative,retained`.
    pub fn dump_spectrum(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,sigma,relative,retained")?;
        let top = self.spectrum.first().copied().unwrap_or(0.0);
        for (i, s) in self.spectrum.iter().enumerate() {
            writeln!(f, "{i},{s:e},{:e},{}", s / top, i < self.rank())?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Truncated SVD of the feature matrix `psi` (`(M+1) × N_c`).
///
/// With `column_scaling = Some(s)` the decomposition is taken of `Ψ diag(s)`,
/// which makes `psi_r diag(s²) psi_rᵀ = Σ_r²` and turns the right inverse into
/// a least-squares projection in the `s²`-weighted norm. Without scaling this
/// is the plain truncated pseudo-inverse.
pub fn build_reduced_basis(
    psi: &DMatrix<f64>,
    eps: f64,
    column_scaling: Option<&DVector<f64>>,
) -> Result<ReducedBasis> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "SVD threshold must lie in (0, 1), got {eps}"
        )));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("feature matrix contains non-finite entries".into()));
    }
    let n = psi.ncols();
    let scaled = match column_scaling {
        Some(s) => {
            if s.len() != n || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument(
                    "column scaling must be positive with one entry per point".into(),
                ));
            }
            let mut m = psi.clone();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col.scale_mut(s[j]);
            }
            m
        }
        None => psi.clone(),
    };

    let svd = scaled.svd(true, true);
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = spectrum.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateBasis { threshold: eps });
    }
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| svd.singular_values[i] >= eps * top)
        .collect();
    let r = kept.len();
    if r == 0 {
        return Err(Error::DegenerateBasis { threshold: eps });
    }

    let v_r = DMatrix::from_fn(psi.nrows(), r, |i, k| u[(i, kept[k])]);
    let sing_vals = DVector::from_fn(r, |k, _| svd.singular_values[kept[k]]);
    // Right singular vectors of the scaled matrix, N_c × r.
    let u_r = DMatrix::from_fn(n, r, |j, k| vt[(kept[k], j)]);
    let psi_r = v_r.tr_mul(psi);

    let mut basis = ReducedBasis {
        v_r,
        psi_r,
        sing_vals,
        pinv_psi_r: DMatrix::zeros(n, r),
        svd_threshold: eps,
        column_scaling: column_scaling.cloned(),
        spectrum,
    };
    basis.pinv_psi_r = pinv_from_factors(&basis, &u_r)?;
    Ok(basis)
}

fn pinv_from_factors(basis: &ReducedBasis, u_r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let smallest = basis.sing_vals.min();
    if !(smallest > SINGULAR_FLOOR) {
        return Err(Error::Conditioning { sigma: smallest });
    }
    let mut p = u_r.clone();
    for (k, mut col) in p.column_iter_mut().enumerate() {
        col.scale_mut(1.0 / basis.sing_vals[k]);
    }
    if let Some(s) = &basis.column_scaling {
        for (j, mut row) in p.row_iter_mut().enumerate() {
            row.scale_mut(s[j]);
        }
    }
    Ok(p)
}

/// Right inverse of `psi_r`, rebuilt from the diagonal structure
/// `psi_r S² psi_rᵀ = Σ_r²` (with `S = I` when unscaled).
pub fn pseudo_inverse(basis: &ReducedBasis) -> Result<DMatrix<f64>> {
    let smallest = basis.sing_vals.min();
    if !(smallest > SINGULAR_FLOOR) {
        return Err(Error::Conditioning { sigma: smallest });
    }
    let mut p = basis.psi_r.transpose();
    if let Some(s) = &basis.column_scaling {
        for (j, mut row) in p.row_iter_mut().enumerate() {
            row.scale_mut(s[j] * s[j]);
        }
    }
    for (k, mut col) in p.column_iter_mut().enumerate() {
        col.scale_mut(1.0 / (basis.sing_vals[k] * basis.sing_vals[k]));
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub g: DMatrix<f64>,
    pub min_eig: f64,
}

impl GramMatrix {
    /// Radius of the mass-one ellipsoid: `|c| ≤ (1/λ_min)^{1/2}`.
    pub fn coefficient_bound(&self) -> f64 {
        (1.0 / self.min_eig).sqrt()
    }
}

/// `G = Ψ_r diag(w ⊙ ρ²) Ψ_rᵀ`, symmetrized, with its smallest eigenvalue.
pub fn build_gram(
    basis: &ReducedBasis,
    quad_weights: &[f64],
    rho_sq: Option<&DVector<f64>>,
) -> Result<GramMatrix> {
    let n = basis.psi_r.ncols();
    if quad_weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} quadrature weights for {n} points",
            quad_weights.len()
        )));
    }
    if quad_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
    }
    if let Some(s) = &basis.column_scaling {
        let f = |j: usize| quad_weights[j] * rho_sq.map_or(1.0, |r| r[j]);
        // Points whose weight is negligible next to the largest one (often
        // subnormal far out on a Gauss–Hermite rule) cannot be compared relatively.
        let floor = (0..n).map(f).fold(0.0, f64::max) * 1e-30;
        let matches = (0..n).all(|j| (s[j] * s[j] - f(j)).abs() <= 1e-12 * f(j) + floor);
        if matches {
            // The basis is orthogonal in this inner product, so G = Σ_r²
            // exactly; the explicit product would only add roundoff of
            // size ε σ_1² to the small eigenvalues.
            let g = DMatrix::from_diagonal(&basis.sing_vals.map(|v| v * v));
            let min_eig = basis.sing_vals.min().powi(2);
            if !(min_eig > 0.0) {
                return Err(Error::NonSpdGram { min_eig });
            }
            return Ok(GramMatrix { g, min_eig });
        }
    }
    let mut weighted = basis.psi_r.clone();
    for (j, mut col) in weighted.column_iter_mut().enumerate() {
        let f = quad_weights[j] * rho_sq.map_or(1.0, |r| r[j]);
        col.scale_mut(f);
    }
    let g = &weighted * basis.psi_r.transpose();
    let g = (&g + g.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(g.clone()).eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(Error::NonSpdGram { min_eig });
    }
    Ok(GramMatrix { g, min_eig })
}
