//! Gauss–Hermite rules for the weight `exp(-t^2)`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and *scaled* weights `omega_k * exp(t_k^2)` of the `n`-point
/// Gauss–Hermite rule, so that `∫ f(t) dt ≈ Σ_k scaled_k f(t_k)` for
/// integrands decaying like `exp(-t^2)`.
///
/// Nodes come from the Golub–Welsch eigenproblem and are polished with Newton
/// steps on the orthonormal Hermite function of degree `n`; weights use the
/// Christoffel formula evaluated with Hermite *functions*, which stays finite
/// at the outermost nodes.
pub fn gauss_hermite_scaled(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    if n == 1 {
        return (vec![0.0], vec![std::f64::consts::PI.sqrt()]);
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for t in nodes.iter_mut() {
        for _ in 0..3 {
            let (psi_n, psi_nm1, _) = hermite_functions(n, *t);
            let deriv = (2.0 * n as f64).sqrt() * psi_nm1 - *t * psi_n;
            if deriv != 0.0 {
                *t -= psi_n / deriv;
            }
        }
    }
    // Exact antisymmetry of the rule.
    for k in 0..n / 2 {
        let avg = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -avg;
        nodes[n - 1 - k] = avg;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let weights = nodes
        .iter()
        .map(|&t| {
            let (_, _, sum_sq) = hermite_functions(n, t);
            1.0 / sum_sq
        })
        .collect();
    (nodes, weights)
}

/// Returns `(psi_n(t), psi_{n-1}(t), Σ_{k<n} psi_k(t)^2)` for the orthonormal
/// Hermite functions `psi_k(t) = p_k(t) exp(-t^2/2)`.
fn hermite_functions(n: usize, t: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25) * (-0.5 * t * t).exp();
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (2.0 / (k as f64 + 1.0)).sqrt() * t * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_gaussian_moments() {
        for n in [1usize, 2, 5, 16, 64, 128] {
            let (t, w) = gauss_hermite_scaled(n);
            let m0: f64 = t.iter().zip(&w).map(|(t, w)| w * (-t * t).exp()).sum();
            assert!((m0 - std::f64::consts::PI.sqrt()).abs() < 1e-12, "n={n} m0={m0}");
            if n >= 2 {
                let m2: f64 = t.iter().zip(&w).map(|(t, w)| w * t * t * (-t * t).exp()).sum();
                assert!((m2 - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_rule_integrates_sech_squared() {
        // ∫ sech^2 = 2, decays like exp(-2|t|): slower than the weight, so
        // convergence is algebraic-ish but 128 nodes are plenty for 1e-6.
        let (t, w) = gauss_hermite_scaled(128);
        let s: f64 = t.iter().zip(&w).map(|(t, w)| w / t.cosh().powi(2)).sum();
        assert!((s - 2.0).abs() < 1e-4, "{s}");
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let (t, _) = gauss_hermite_scaled(33);
        assert_eq!(t[16], 0.0);
        for k in 0..16 {
            assert_eq!(t[k], -t[32 - k]);
            assert!(t[k] < t[k + 1]);
        }
    }
}
