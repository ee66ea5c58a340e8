use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dynamics::GpeProblem;
use crate::error::{Error, Result};

/// Largest grid accepted (256³ points).
pub const MAX_GRID_POINTS: usize = 256 * 256 * 256;
/// Edge amplitude that aborts a run as truncated.
pub const LEAK_TOLERANCE: f64 = 1e-8;
/// Relative size of the outer Fourier modes required of the initial data.
pub const RESOLUTION_TOLERANCE: f64 = 1e-10;

/// Periodic box `[−L, L)^d` with `N_g` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TsspGrid {
    pub extent: f64,
    pub n_g: usize,
    pub dt: f64,
    pub d_ref: usize,
}

#[derive(Debug, Clone)]
pub struct TsspSnapshot {
    pub t: f64,
    /// Row-major field values, axis 0 slowest.
    pub psi: Vec<Complex64>,
}

impl TsspGrid {
    pub fn validate(&self) -> Result<()> {
        if !self.n_g.is_power_of_two() || self.n_g < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid size {} must be a power of two",
                self.n_g
            )));
        }
        if !(1..=3).contains(&self.d_ref) {
            return Err(Error::InvalidArgument("reference grids support d = 1, 2, 3".into()));
        }
        if !(self.extent > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument("extent and dt must be positive".into()));
        }
        if self.total_points() > MAX_GRID_POINTS {
            return Err(Error::InvalidArgument(format!(
                "grid of {} points exceeds the {MAX_GRID_POINTS}-point cap",
                self.total_points()
            )));
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.n_g.saturating_pow(self.d_ref as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.n_g as f64
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.n_g).map(|k| -self.extent + k as f64 * self.spacing()).collect()
    }

    /// Coordinates of flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut out = vec![0.0; self.d_ref];
        let mut rem = idx;
        for j in (0..self.d_ref).rev() {
            out[j] = -self.extent + (rem % self.n_g) as f64 * h;
            rem /= self.n_g;
        }
        out
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_g as i64;
        let dk = std::f64::consts::PI / self.extent;
        (0..n)
            .map(|k| if k < n / 2 { k } else { k - n } as f64 * dk)
            .collect()
    }

    pub fn sample(&self, f: &dyn Fn(&[f64]) -> Complex64) -> Vec<Complex64> {
        (0..self.total_points()).map(|i| f(&self.point(i))).collect()
    }

    pub fn mass(&self, psi: &[Complex64]) -> f64 {
        psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spacing().powi(self.d_ref as i32)
    }

    /// Largest modulus on the faces of the box.
    pub fn edge_amplitude(&self, psi: &[Complex64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, v) in psi.iter().enumerate() {
            let mut rem = i;
            let mut on_edge = false;
            for _ in 0..self.d_ref {
                let k = rem % self.n_g;
                on_edge |= k == 0 || k == self.n_g - 1;
                rem /= self.n_g;
            }
            if on_edge {
                worst = worst.max(v.norm());
            }
        }
        worst
    }
}

struct SpectralOps {
    n: usize,
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralOps {
    fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            d,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Transform every axis in turn; lines along axis `a` have stride `n^(d−1−a)`.
    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let n = self.n;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for a in 0..self.d {
            let stride = n.pow((self.d - 1 - a) as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for k in 0..n {
                        line[k] = data[base + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..n {
                        data[base + k * stride] = line[k];
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / data.len() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Largest Fourier coefficient with any axis index in the outer quarter of
/// the spectrum, relative to the largest coefficient overall.
fn spectral_tail(grid: &TsspGrid, psi: &[Complex64]) -> f64 {
    let n = grid.n_g;
    let ops = SpectralOps::new(n, grid.d_ref);
    let mut spec = psi.to_vec();
    ops.transform(&mut spec, false);
    let (mut top, mut tail) = (0.0f64, 0.0f64);
    for (i, c) in spec.iter().enumerate() {
        let mut rem = i;
        let mut outer = false;
        for _ in 0..grid.d_ref {
            let k = rem % n;
            outer |= k.min(n - k) >= 3 * n / 8;
            rem /= n;
        }
        top = top.max(c.norm());
        if outer {
            tail = tail.max(c.norm());
        }
    }
    if top > 0.0 { tail / top } else { 0.0 }
}

/// Strang splitting `N(h/2) K(h) N(h/2)`; snapshots are returned at the
/// requested times (sorted, in `[0, t_final]`, `t = 0` always included).
pub fn tssp_evolve(
    grid: &TsspGrid,
    problem: &GpeProblem,
    psi0: &[Complex64],
    t_final: f64,
    snapshot_times: &[f64],
) -> Result<Vec<TsspSnapshot>> {
    grid.validate()?;
    if problem.dim() != grid.d_ref {
        return Err(Error::InvalidArgument(format!(
            "problem has d = {}, grid has d = {}",
            problem.dim(),
            grid.d_ref
        )));
    }
    if psi0.len() != grid.total_points() {
        return Err(Error::InvalidArgument("initial field does not match the grid".into()));
    }
    let edge0 = grid.edge_amplitude(psi0);
    if edge0 > LEAK_TOLERANCE {
        return Err(Error::TruncationLeak { edge: edge0 });
    }
    let tail = spectral_tail(grid, psi0);
    if tail > RESOLUTION_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "initial field is under-resolved: relative spectral tail {tail:e}, refine the grid"
        )));
    }
    let mut times: Vec<f64> = snapshot_times.to_vec();
    times.push(0.0);
    if times.iter().any(|t| !(*t >= 0.0 && *t <= t_final)) {
        return Err(Error::InvalidArgument("snapshot times must lie in [0, t_final]".into()));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    let ops = SpectralOps::new(grid.n_g, grid.d_ref);
    let potential: Vec<f64> = (0..grid.total_points())
        .map(|i| problem.potential(&grid.point(i)))
        .collect();
    let k = grid.wavenumbers();
    let k2: Vec<f64> = (0..grid.total_points())
        .map(|i| {
            let mut rem = i;
            let mut s = 0.0;
            for _ in 0..grid.d_ref {
                s += k[rem % grid.n_g].powi(2);
                rem /= grid.n_g;
            }
            s
        })
        .collect();

    let mut psi = psi0.to_vec();
    let mut out = vec![TsspSnapshot {
        t: 0.0,
        psi: psi.clone(),
    }];
    let mut t = 0.0;
    let mut cached_h = f64::NAN;
    let mut kinetic: Vec<Complex64> = Vec::new();
    for &target in &times[1..] {
        let span = target - t;
        let n_steps = ((span / grid.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n_steps as f64;
        if h != cached_h {
            kinetic = k2.iter().map(|q| Complex64::from_polar(1.0, -0.5 * q * h)).collect();
            cached_h = h;
        }
        let nonlinear = |psi: &mut [Complex64], tau: f64| {
            for (v, pot) in psi.iter_mut().zip(&potential) {
                let phase = (pot + problem.beta_d * v.norm_sqr()) * tau;
                *v *= Complex64::from_polar(1.0, -phase);
            }
        };
        for _ in 0..n_steps {
            nonlinear(&mut psi, 0.5 * h);
            ops.transform(&mut psi, false);
            psi.iter_mut().zip(&kinetic).for_each(|(v, m)| *v *= m);
            ops.transform(&mut psi, true);
            nonlinear(&mut psi, 0.5 * h);
        }
        t = target;
        let edge = grid.edge_amplitude(&psi);
        if !edge.is_finite() || edge > LEAK_TOLERANCE {
            return Err(Error::TruncationLeak { edge });
        }
        out.push(TsspSnapshot {
            t,
            psi: psi.clone(),
        });
    }
    Ok(out)
}

/// Trigonometric interpolant of a periodic 1D grid field at arbitrary points.
pub fn fourier_interpolate_1d(grid: &TsspGrid, psi: &[Complex64], xs: &[f64]) -> Vec<Complex64> {
    let ops = SpectralOps::new(grid.n_g, 1);
    let mut spec = psi.to_vec();
    ops.transform(&mut spec, false);
    let n = grid.n_g;
    let k = grid.wavenumbers();
    xs.iter()
        .map(|&x| {
            let s = x + grid.extent;
            let mut acc = Complex64::new(0.0, 0.0);
            for (q, c) in spec.iter().enumerate() {
                // Split the Nyquist mode symmetrically so the interpolant is real for real data.
                let w = if q == n / 2 {
                    Complex64::new((k[q] * s).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, k[q] * s)
                };
                acc += c * w;
            }
            acc / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::analytic_ground_state;

    fn grid(n_g: usize, dt: f64, d: usize) -> TsspGrid {
        TsspGrid {
            extent: 8.0,
            n_g,
            dt,
            d_ref: d,
        }
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn linear_ground_state_matches_analytic() {
        // The splitting error of the stationary state is O(dt²).
        let g = grid(128, 5e-5, 1);
        let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.0));
        let out = tssp_evolve(&g, &p, &psi0, 1.0, &[1.0]).unwrap();
        let exact = g.sample(&|x| analytic_ground_state(&[1.0], x, 1.0));
        assert!(rel_l2(&out[1].psi, &exact) < 1e-9, "{}", rel_l2(&out[1].psi, &exact));
        for (a, b) in out[1].psi.iter().zip(&psi0) {
            assert!((a.norm() - b.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_is_conserved_over_many_steps() {
        let g = TsspGrid {
            extent: 16.0,
            n_g: 256,
            dt: 1e-3,
            d_ref: 1,
        };
        let p = GpeProblem::ground_state_start(vec![1.0], 10.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.0));
        let out = tssp_evolve(&g, &p, &psi0, 1.0, &[1.0]).unwrap();
        assert!((g.mass(&out[1].psi) - g.mass(&psi0)).abs() < 1e-11);
    }

    #[test]
    fn anisotropic_2d_ground_state() {
        let g = grid(128, 5e-5, 2);
        let gam = [1.0, 2.0];
        let p = GpeProblem::ground_state_start(gam.to_vec(), 0.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&gam, x, 0.0));
        let out = tssp_evolve(&g, &p, &psi0, 0.1, &[0.1]).unwrap();
        let exact = g.sample(&|x| analytic_ground_state(&gam, x, 0.1));
        assert!(rel_l2(&out[1].psi, &exact) < 1e-9, "{}", rel_l2(&out[1].psi, &exact));
    }

    fn beta10(n_g: usize, dt: f64) -> Vec<Complex64> {
        let g = TsspGrid {
            extent: 16.0,
            n_g,
            dt,
            d_ref: 1,
        };
        let p = GpeProblem::ground_state_start(vec![1.0], 10.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.0));
        tssp_evolve(&g, &p, &psi0, 1.0, &[1.0]).unwrap().pop().unwrap().psi
    }

    #[test]
    fn second_order_self_convergence() {
        let reference = beta10(256, 0.1 / 64.0);
        let e1 = rel_l2(&beta10(256, 0.1), &reference);
        let e2 = rel_l2(&beta10(256, 0.05), &reference);
        let slope = (e1 / e2).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn refined_runs_agree() {
        let coarse = beta10(256, 1e-4);
        let fine = beta10(512, 2.5e-5);
        // Compare on the shared nodes (every other fine node).
        let fine_on_coarse: Vec<Complex64> = fine.iter().step_by(2).copied().collect();
        let err = rel_l2(&coarse, &fine_on_coarse);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn leakage_detected() {
        let g = TsspGrid {
            extent: 3.0,
            n_g: 32,
            dt: 1e-2,
            d_ref: 1,
        };
        let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.0));
        assert!(matches!(
            tssp_evolve(&g, &p, &psi0, 0.1, &[]),
            Err(Error::TruncationLeak { .. })
        ));
    }

    #[test]
    fn under_resolved_initial_data_rejected() {
        let g = grid(16, 1e-2, 1);
        let p = GpeProblem::ground_state_start(vec![1.0], 0.0).unwrap();
        let psi0 = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.0));
        assert!(matches!(
            tssp_evolve(&g, &p, &psi0, 0.1, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(grid(100, 1e-2, 1).validate().is_err());
        assert!(grid(64, 1e-2, 4).validate().is_err());
        assert!(grid(512, 1e-2, 3).validate().is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_smooth_data() {
        let g = grid(128, 1e-2, 1);
        let psi = g.sample(&|x| analytic_ground_state(&[1.0], x, 0.3));
        let nodes = g.axis();
        let back = fourier_interpolate_1d(&g, &psi, &nodes[..5]);
        for (a, b) in back.iter().zip(&psi[..5]) {
            assert!((a - b).norm() < 1e-13);
        }
        let xs = [0.123, -1.77, 2.5];
        let interp = fourier_interpolate_1d(&g, &psi, &xs);
        for (x, v) in xs.iter().zip(interp) {
            assert!((v - analytic_ground_state(&[1.0], &[*x], 0.3)).norm() < 1e-13);
        }
    }
}
