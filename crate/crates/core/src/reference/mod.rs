//! Ground-truth generators: the harmonic-oscillator ground state and a
//! Strang-split Fourier spectral solver on truncated boxes.

mod scaling;
mod tssp;

use num_complex::Complex64;

pub use scaling::{runtime_scaling_bench, BenchMethod, ScalingSettings, TimingRow};
pub use tssp::{fourier_interpolate_1d, tssp_evolve, TsspGrid, TsspSnapshot, MAX_GRID_POINTS};

/// `ψ(x, t) = Π_j (γ_j/π)^{1/4} e^{−γ_j x_j²/2} · e^{−i E₀ t}`, `E₀ = Σ_j γ_j / 2`.
///
/// `gammas` is cycled if shorter than `x` so a scalar trap can be passed as
/// a one-element slice.
pub fn analytic_ground_state(gammas: &[f64], x: &[f64], t: f64) -> Complex64 {
    let mut amp = 1.0;
    let mut e0 = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let g = gammas[j % gammas.len()];
        amp *= (g / std::f64::consts::PI).powf(0.25) * (-0.5 * g * xj * xj).exp();
        e0 += 0.5 * g;
    }
    Complex64::from_polar(amp, -e0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite_scaled;

    #[test]
    fn ground_state_reference_value() {
        let v = analytic_ground_state(&[1.0], &[0.0], 0.0);
        assert!((v.re - 0.7511255444649425).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn modulus_is_time_independent() {
        let x = [0.3, -0.7];
        let a = analytic_ground_state(&[1.0, 2.0], &x, 0.0).norm();
        for t in [0.1, 1.0, 17.3] {
            let b = analytic_ground_state(&[1.0, 2.0], &x, t).norm();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_by_gauss_hermite() {
        let (t, w) = gauss_hermite_scaled(40);
        for gamma in [0.5f64, 1.0, 3.0] {
            // x = t / sqrt(γ) maps e^{−γ x²} onto the Hermite weight.
            let s = 1.0 / gamma.sqrt();
            let mass: f64 = t
                .iter()
                .zip(&w)
                .map(|(ti, wi)| wi * s * analytic_ground_state(&[gamma], &[ti * s], 0.4).norm_sqr())
                .sum();
            assert!((mass - 1.0).abs() < 1e-12, "gamma={gamma} mass={mass}");
        }
    }
}
