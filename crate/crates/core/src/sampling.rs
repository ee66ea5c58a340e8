//! Collocation points, frozen hidden parameters and random dimension subsets.
//!
//! All randomness is drawn from an [`RngHandle`], so every object here is a
//! pure function of its arguments and the `(seed, stream)` pair.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_scaled;
use crate::rng::RngHandle;

/// Default box half-width for density exponent `q = 0`.
pub const DEFAULT_BOX_EXTENT: f64 = 4.0;
/// Redraws allowed for a coincident collocation pair before giving up.
pub const PAIR_RETRY_CAP: usize = 16;
/// Candidate pairs per neuron in data-driven sampling.
pub const DRIVEN_POOL_FACTOR: usize = 50;

/// Weight scale placing `tanh` at `±0.5` on the two anchor points.
pub fn default_s1() -> f64 {
    2.0 * 0.5f64.atanh()
}

pub fn default_s2() -> f64 {
    -(0.5f64.atanh())
}

/// How a collocation set was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollocationRule {
    /// i.i.d. draws from the density proportional to `rho^q`.
    EnvelopeDensity,
    /// i.i.d. uniform draws on `[-extent, extent]^d`.
    UniformBox { extent: f64 },
    /// Tensor Gauss–Hermite nodes adapted to `rho^q`.
    GaussHermite { nodes_per_axis: usize },
    /// Points supplied by the caller (e.g. the unit ball of the static problem).
    Custom,
}

/// Collocation points with quadrature weights for whole-space integrals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollocationSet {
    /// `N_c × d`, one point per row.
    pub points: DMatrix<f64>,
    pub quad_weights: Vec<f64>,
    pub density_exponent: f64,
    /// Envelope decay rate the density was built from.
    pub alpha: f64,
    pub rule: CollocationRule,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, n: usize) -> Vec<f64> {
        self.points.row(n).iter().copied().collect()
    }

    /// Build from explicit points and weights, checking the invariants.
    pub fn from_parts(
        points: DMatrix<f64>,
        quad_weights: Vec<f64>,
        alpha: f64,
        density_exponent: f64,
        rule: CollocationRule,
    ) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("collocation set is empty".into()));
        }
        if quad_weights.len() != points.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} points",
                quad_weights.len(),
                points.nrows()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite collocation point".into()));
        }
        if let Some(w) = quad_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "quadrature weight {w} is not finite and positive"
            )));
        }
        Ok(Self {
            points,
            quad_weights,
            density_exponent,
            alpha,
            rule,
        })
    }
}

/// Normalized sampling density `p(x) ∝ exp(-q α |x|^2)` in log form.
pub fn log_envelope_density(x: &[f64], alpha: f64, q: f64) -> f64 {
    let d = x.len() as f64;
    let k = q * alpha;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    0.5 * d * (k / std::f64::consts::PI).ln() - k * r2
}

/// Draw `n_c` points from the envelope-induced density (or a box when `q = 0`)
/// with importance weights `1 / (N_c p(x_n))`.
pub fn sample_collocation(
    d: usize,
    n_c: usize,
    alpha: f64,
    q: f64,
    box_extent: Option<f64>,
    rng: RngHandle,
) -> Result<CollocationSet> {
    if d == 0 || n_c == 0 {
        return Err(Error::InvalidArgument("need d >= 1 and N_c >= 1".into()));
    }
    if !(alpha > 0.0) || !(q >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need alpha > 0 and q >= 0 (alpha = {alpha}, q = {q})"
        )));
    }
    let mut g = rng.generator();
    if q == 0.0 {
        let extent = box_extent.ok_or_else(|| {
            Error::Config("density exponent q = 0 requires a box extent".into())
        })?;
        if !(extent > 0.0) {
            return Err(Error::Config(format!("box extent must be positive, got {extent}")));
        }
        let points = DMatrix::from_fn(n_c, d, |_, _| g.random_range(-extent..extent));
        let w = (2.0 * extent).powi(d as i32) / n_c as f64;
        return CollocationSet::from_parts(
            points,
            vec![w; n_c],
            alpha,
            q,
            CollocationRule::UniformBox { extent },
        );
    }
    let sigma = (1.0 / (2.0 * q * alpha)).sqrt();
    // Row-major draw order so the sequence does not depend on storage layout.
    let mut raw = vec![0.0; n_c * d];
    for v in raw.iter_mut() {
        let z: f64 = g.sample(StandardNormal);
        *v = sigma * z;
    }
    let points = DMatrix::from_row_slice(n_c, d, &raw);
    let weights = (0..n_c)
        .map(|n| {
            let x: Vec<f64> = points.row(n).iter().copied().collect();
            (-(n_c as f64).ln() - log_envelope_density(&x, alpha, q)).exp()
        })
        .collect();
    CollocationSet::from_parts(points, weights, alpha, q, CollocationRule::EnvelopeDensity)
}

/// Tensor Gauss–Hermite nodes for the density `rho^q`; exact for polynomial
/// multiples of `rho^q` up to degree `2 n - 1` per axis.
pub fn gauss_hermite_collocation(
    d: usize,
    nodes_per_axis: usize,
    alpha: f64,
    q: f64,
) -> Result<CollocationSet> {
    if d == 0 || nodes_per_axis == 0 {
        return Err(Error::InvalidArgument("need d >= 1 and at least one node".into()));
    }
    if !(alpha > 0.0 && q > 0.0) {
        return Err(Error::InvalidArgument(
            "Gauss-Hermite collocation needs alpha > 0 and q > 0".into(),
        ));
    }
    let total = nodes_per_axis
        .checked_pow(d as u32)
        .filter(|&t| t <= 1 << 22)
        .ok_or_else(|| Error::InvalidArgument("tensor grid too large".into()))?;
    let (t, w) = gauss_hermite_scaled(nodes_per_axis);
    let scale = 1.0 / (q * alpha).sqrt();
    let mut points = DMatrix::zeros(total, d);
    let mut weights = vec![1.0; total];
    for n in 0..total {
        let mut rem = n;
        for j in 0..d {
            let k = rem % nodes_per_axis;
            rem /= nodes_per_axis;
            points[(n, j)] = t[k] * scale;
            weights[n] *= w[k] * scale;
        }
    }
    CollocationSet::from_parts(
        points,
        weights,
        alpha,
        q,
        CollocationRule::GaussHermite { nodes_per_axis },
    )
}

/// Frozen hidden layer: `tanh(W x + b)` with `M` neurons in `d` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    w: DMatrix<f64>,
    b: DVector<f64>,
    alpha: f64,
}

impl FeatureBank {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>, alpha: f64) -> Result<Self> {
        if w.nrows() != b.len() || w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "weights {}x{} do not match {} biases",
                w.nrows(),
                w.ncols(),
                b.len()
            )));
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite hidden parameter".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { w, b, alpha })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn neurons(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    /// Activation center `-b_k / |w_k|^2 * w_k`, the point on the neuron's
    /// axis where the pre-activation vanishes.
    pub fn center(&self, k: usize) -> Vec<f64> {
        let wk = self.w.row(k);
        let n2 = wk.norm_squared();
        wk.iter().map(|v| -self.b[k] * v / n2).collect()
    }
}

fn neuron_from_pair(x1: &[f64], x2: &[f64], s1: f64, s2: f64) -> Option<(Vec<f64>, f64)> {
    let diff: Vec<f64> = x2.iter().zip(x1).map(|(a, b)| a - b).collect();
    let n2: f64 = diff.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return None;
    }
    let w: Vec<f64> = diff.iter().map(|v| s1 * v / n2).collect();
    let b = -w.iter().zip(x1).map(|(a, b)| a * b).sum::<f64>() + s2;
    Some((w, b))
}

fn has_two_distinct_rows(points: &DMatrix<f64>) -> bool {
    let first = points.row(0);
    (1..points.nrows()).any(|n| points.row(n) != first)
}

fn draw_index_pair<R: Rng>(g: &mut R, n: usize) -> (usize, usize) {
    let i = g.random_range(0..n);
    let mut j = g.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Draw a non-coincident pair, redrawing at most [`PAIR_RETRY_CAP`] times.
fn draw_distinct_pair<R: Rng>(g: &mut R, points: &DMatrix<f64>) -> Result<(usize, usize)> {
    let n = points.nrows();
    for _ in 0..=PAIR_RETRY_CAP {
        let (i, j) = draw_index_pair(g, n);
        if points.row(i) != points.row(j) {
            return Ok((i, j));
        }
    }
    Err(Error::DegenerateInput(format!(
        "drew coincident collocation pairs {} times in a row",
        PAIR_RETRY_CAP + 1
    )))
}

fn check_pair_inputs(points: &CollocationSet, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one neuron".into()));
    }
    if points.len() < 2 || !has_two_distinct_rows(&points.points) {
        return Err(Error::DegenerateInput(
            "weight sampling needs at least two distinct collocation points".into(),
        ));
    }
    Ok(())
}

fn assemble_bank(rows: Vec<(Vec<f64>, f64)>, d: usize, alpha: f64) -> Result<FeatureBank> {
    let m = rows.len();
    let w = DMatrix::from_fn(m, d, |k, j| rows[k].0[j]);
    let b = DVector::from_iterator(m, rows.iter().map(|r| r.1));
    FeatureBank::new(w, b, alpha)
}

/// Data-agnostic sampling: each neuron is anchored on a uniformly drawn pair
/// of distinct collocation points (independently per neuron).
pub fn sample_weights_agnostic(
    points: &CollocationSet,
    m: usize,
    s1: f64,
    s2: f64,
    rng: RngHandle,
) -> Result<FeatureBank> {
    check_pair_inputs(points, m)?;
    let mut g = rng.generator();
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let (i, j) = draw_distinct_pair(&mut g, &points.points)?;
        let (x1, x2) = (points.point(i), points.point(j));
        rows.push(neuron_from_pair(&x1, &x2, s1, s2).expect("pair is distinct"));
    }
    assemble_bank(rows, points.dim(), points.alpha)
}

/// Data-driven sampling: pairs from a pool of `50 M` candidates are chosen
/// with probability proportional to `|f(x2) - f(x1)| / |x2 - x1|`.
///
/// A constant probe carries no information and falls back to agnostic
/// sampling with the same handle.
pub fn sample_weights_driven(
    points: &CollocationSet,
    m: usize,
    probe: &dyn Fn(&[f64]) -> f64,
    s1: f64,
    s2: f64,
    rng: RngHandle,
) -> Result<FeatureBank> {
    check_pair_inputs(points, m)?;
    let values: Vec<f64> = (0..points.len()).map(|n| probe(&points.point(n))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("probe returned a non-finite value".into()));
    }
    let pool = driven_candidate_pool(points, &values, m, rng)?;
    if pool.iter().all(|c| c.score == 0.0) {
        log::warn!("data-driven probe is constant on the pool; falling back to agnostic sampling");
        return sample_weights_agnostic(points, m, s1, s2, rng);
    }
    let mut g = rng.generator();
    // Skip the draws consumed by the pool so selection uses fresh randomness.
    for _ in 0..pool.len() {
        let _ = draw_index_pair(&mut g, points.len());
    }
    let dist = WeightedIndex::new(pool.iter().map(|c| c.score))
        .map_err(|e| Error::DegenerateInput(format!("candidate scores: {e}")))?;
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let c = &pool[dist.sample(&mut g)];
        let (x1, x2) = (points.point(c.first), points.point(c.second));
        rows.push(neuron_from_pair(&x1, &x2, s1, s2).expect("pool pairs are distinct"));
    }
    assemble_bank(rows, points.dim(), points.alpha)
}

/// One scored pair in the data-driven candidate pool.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub first: usize,
    pub second: usize,
    pub score: f64,
}

/// The candidate pool used by [`sample_weights_driven`], exposed so the score
/// distribution can be inspected independently of the selection step.
pub fn driven_candidate_pool(
    points: &CollocationSet,
    values: &[f64],
    m: usize,
    rng: RngHandle,
) -> Result<Vec<Candidate>> {
    let mut g = rng.generator();
    let size = DRIVEN_POOL_FACTOR * m;
    let mut pool = Vec::with_capacity(size);
    for _ in 0..size {
        let (i, j) = draw_index_pair(&mut g, points.len());
        let dist = points
            .points
            .row(j)
            .iter()
            .zip(points.points.row(i).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let score = if dist == 0.0 {
            0.0
        } else {
            (values[j] - values[i]).abs() / dist
        };
        pool.push(Candidate {
            first: i,
            second: j,
            score,
        });
    }
    Ok(pool)
}

/// Sampling scheme for the stochastic-dimension Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SubsetScheme {
    /// `m` distinct indices, each included with probability `m / d`.
    Uniform,
    /// `m` i.i.d. draws from `probs` (duplicates kept).
    HorvitzThompson { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSubset {
    indices: Vec<usize>,
    d: usize,
    scheme: SubsetScheme,
}

impl DimensionSubset {
    pub fn full(d: usize) -> Self {
        Self {
            indices: (0..d).collect(),
            d,
            scheme: SubsetScheme::Uniform,
        }
    }

    /// A uniform-scheme subset from explicit distinct indices.
    pub fn from_indices(d: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() || indices.iter().any(|&j| j >= d) {
            return Err(Error::InvalidArgument(format!(
                "subset must be non-empty with indices below {d}"
            )));
        }
        Ok(Self {
            indices,
            d,
            scheme: SubsetScheme::Uniform,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn scheme(&self) -> &SubsetScheme {
        &self.scheme
    }

    pub fn is_full(&self) -> bool {
        matches!(self.scheme, SubsetScheme::Uniform) && self.indices.len() == self.d
    }

    /// `(j, factor)` pairs such that `Σ factor · ∂²_j` is the unbiased
    /// Laplacian estimate.
    pub fn weighted_indices(&self) -> Vec<(usize, f64)> {
        let m = self.indices.len() as f64;
        match &self.scheme {
            SubsetScheme::Uniform => {
                let f = self.d as f64 / m;
                self.indices.iter().map(|&j| (j, f)).collect()
            }
            SubsetScheme::HorvitzThompson { probs } => self
                .indices
                .iter()
                .map(|&j| (j, 1.0 / (m * probs[j])))
                .collect(),
        }
    }
}

fn validate_probs(d: usize, probs: &[f64]) -> Result<()> {
    if probs.len() != d {
        return Err(Error::InvalidArgument(format!(
            "{} probabilities for {d} dimensions",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidArgument("all probabilities must be positive".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

pub fn sample_dimension_subset(
    d: usize,
    m: usize,
    scheme: &SubsetScheme,
    rng: RngHandle,
) -> Result<DimensionSubset> {
    sample_dimension_subset_with(d, m, scheme, &mut rng.generator())
}

/// Same as [`sample_dimension_subset`] but drawing from a live generator, for
/// callers that resample many times from one stream.
pub fn sample_dimension_subset_with<R: Rng>(
    d: usize,
    m: usize,
    scheme: &SubsetScheme,
    g: &mut R,
) -> Result<DimensionSubset> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument("subset size and dimension must be >= 1".into()));
    }
    match scheme {
        SubsetScheme::Uniform => {
            if m > d {
                return Err(Error::InvalidArgument(format!(
                    "subset size {m} exceeds dimension {d}"
                )));
            }
            let mut indices = if m == d {
                (0..d).collect()
            } else {
                rand::seq::index::sample(g, d, m).into_vec()
            };
            indices.sort_unstable();
            Ok(DimensionSubset {
                indices,
                d,
                scheme: SubsetScheme::Uniform,
            })
        }
        SubsetScheme::HorvitzThompson { probs } => {
            validate_probs(d, probs)?;
            let dist = WeightedIndex::new(probs.iter().copied())
                .map_err(|e| Error::InvalidArgument(format!("probabilities: {e}")))?;
            let mut indices: Vec<usize> = (0..m).map(|_| dist.sample(g)).collect();
            indices.sort_unstable();
            Ok(DimensionSubset {
                indices,
                d,
                scheme: scheme.clone(),
            })
        }
    }
}

/// Every size-`m` subset of `{0, …, d-1}` in lexicographic order.
pub fn all_subsets(d: usize, m: usize) -> Vec<DimensionSubset> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..m).collect();
    if m == 0 || m > d {
        return out;
    }
    loop {
        out.push(DimensionSubset {
            indices: idx.clone(),
            d,
            scheme: SubsetScheme::Uniform,
        });
        let mut k = m;
        while k > 0 && idx[k - 1] == d - m + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        idx[k - 1] += 1;
        for i in k..m {
            idx[i] = idx[i - 1] + 1;
        }
    }
}
