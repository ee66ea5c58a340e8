//! Run configuration: defaults, presets, file/flag merging, validation and
//! the canonical hash that names every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dynamics::{reduced_interaction, IntegratorConfig, OperatorForm, Scheme};
use crate::error::{Error, Result};
use crate::reference::{ScalingSettings, TsspGrid};
use crate::static_solver::{StaticSettings, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Evolve,
    Static,
    Reference,
    Bench,
    Ablation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Decay,
    Subset,
    Conservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollocationKind {
    /// Tensor Gauss–Hermite nodes; `n_c` must be a perfect `d`-th power.
    #[default]
    GaussHermite,
    /// Monte Carlo draws from `ρ^q` (or a box when `q = 0`).
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSampling {
    #[default]
    Agnostic,
    /// Pairs scored against the initial modulus.
    DataDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Analytic ground state when `β_d = 0`, TSSP otherwise (`d ≤ 3`).
    #[default]
    Auto,
    Analytic,
    Tssp,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Dimension actually discretized.
    pub d: usize,
    /// Trap frequencies for all `n_orig` axes; empty means all ones.
    pub gammas: Vec<f64>,
    /// Interaction in `n_orig` dimensions; `β_d` is derived from it.
    pub beta: Option<f64>,
    pub beta_d: Option<f64>,
    pub n_orig: Option<usize>,
    pub t_final: f64,
    /// When non-empty, one run per value of `β` (or `β_d` if `beta` is unset).
    pub beta_sweep: Vec<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            d: 1,
            gammas: Vec::new(),
            beta: None,
            beta_d: Some(0.0),
            n_orig: None,
            t_final: 1.0,
            beta_sweep: Vec::new(),
        }
    }
}

impl ProblemConfig {
    pub fn n_orig(&self) -> usize {
        self.n_orig.unwrap_or(self.d)
    }

    pub fn gammas_orig(&self) -> Vec<f64> {
        if self.gammas.is_empty() {
            vec![1.0; self.n_orig()]
        } else {
            self.gammas.clone()
        }
    }

    /// Interaction strengths to run, as `(label value, β_d)` pairs.
    pub fn interactions(&self) -> Vec<(f64, f64)> {
        let g = self.gammas_orig();
        let derive = |b: f64| {
            if self.beta.is_some() {
                reduced_interaction(b, &g, self.d)
            } else {
                b
            }
        };
        if self.beta_sweep.is_empty() {
            let b = self.beta.or(self.beta_d).unwrap_or(0.0);
            vec![(b, derive(b))]
        } else {
            self.beta_sweep.iter().map(|&b| (b, derive(b))).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    pub neurons: usize,
    pub n_c: usize,
    pub collocation: CollocationKind,
    pub alpha: f64,
    /// Collocation density exponent: points follow `ρ^q`.
    pub q: f64,
    pub box_extent: Option<f64>,
    pub svd_threshold: f64,
    /// Multiplies both weight-sampling scales.
    pub weight_scale: f64,
    pub sampling: WeightSampling,
    /// `false` runs plain features with `ρ ≡ 1`.
    pub envelope: bool,
    pub operator: OperatorForm,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            neurons: 800,
            n_c: 256,
            collocation: CollocationKind::GaussHermite,
            alpha: 0.3,
            q: 2.0,
            box_extent: None,
            svd_threshold: 1e-10,
            weight_scale: 1.0,
            sampling: WeightSampling::Agnostic,
            envelope: true,
            operator: OperatorForm::Collocation,
        }
    }
}

impl DiscretizationConfig {
    /// Gauss–Hermite nodes per axis, when `n_c` is an exact `d`-th power.
    pub fn nodes_per_axis(&self, d: usize) -> Option<usize> {
        let guess = (self.n_c as f64).powf(1.0 / d as f64).round() as usize;
        (guess.saturating_sub(1)..=guess + 1)
            .find(|&k| k > 0 && k.checked_pow(d as u32) == Some(self.n_c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    /// TSSP box half-width.
    pub extent: f64,
    pub n_g: usize,
    pub dt: f64,
    /// Evaluation points per axis.
    pub eval_points: usize,
    /// Half-width of the evaluation box.
    pub eval_extent: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::Auto,
            extent: 16.0,
            n_g: 256,
            dt: 1e-3,
            eval_points: 256,
            eval_extent: 6.0,
        }
    }
}

impl ReferenceConfig {
    pub fn grid(&self, d: usize) -> TsspGrid {
        TsspGrid {
            extent: self.extent,
            n_g: self.n_g,
            dt: self.dt,
            d_ref: d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Explicit snapshot times; empty means `n_snapshots` uniform intervals.
    pub snapshot_times: Vec<f64>,
    pub n_snapshots: usize,
    /// Reduced-coefficient indices written to `traces.csv`.
    pub trace_indices: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            snapshot_times: Vec::new(),
            n_snapshots: 10,
            trace_indices: Vec::new(),
        }
    }
}

impl OutputConfig {
    pub fn times(&self, t_final: f64) -> Vec<f64> {
        if !self.snapshot_times.is_empty() {
            return self.snapshot_times.clone();
        }
        let n = self.n_snapshots.max(1);
        (0..=n).map(|k| t_final * k as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticConfig {
    pub dims: Vec<usize>,
    /// Interior points; `None` takes the table value for the dimension.
    pub n_c: Option<usize>,
    /// Boundary points; `None` matches the interior count.
    pub n_b: Option<usize>,
    pub beta_d: f64,
    pub epsilon: f64,
    pub settings: StaticSettings,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            dims: vec![10],
            n_c: None,
            n_b: None,
            beta_d: 1.0,
            epsilon: DEFAULT_EPSILON,
            settings: StaticSettings::default(),
        }
    }
}

/// Interior collocation counts of the published static table.
pub const TABLE_COLLOCATION: [(usize, usize); 6] =
    [(10, 128), (50, 128), (100, 196), (200, 256), (500, 324), (1000, 428)];

impl StaticConfig {
    pub fn collocation_for(&self, d: usize) -> Option<usize> {
        self.n_c
            .or_else(|| TABLE_COLLOCATION.iter().find(|(k, _)| *k == d).map(|(_, n)| *n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub tssp_dims: Vec<usize>,
    pub sdfsnn_dims: Vec<usize>,
    pub settings: ScalingSettings,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tssp_dims: vec![1, 2, 3],
            sdfsnn_dims: (1..=8).collect(),
            settings: ScalingSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub which: Option<AblationKind>,
    /// Envelope rates compared against the plain ansatz.
    pub decay_alphas: Vec<f64>,
    pub decay_neurons: Vec<usize>,
    /// Subset sizes compared in the subset ablation; empty means `1..=d`.
    pub subset_sizes: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            which: None,
            decay_alphas: vec![0.3, 0.5],
            decay_neurons: vec![50, 100, 200, 400],
            subset_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Name of the preset this config was expanded from, if any.
    pub preset: Option<String>,
    pub seed: u64,
    /// Seeds for mean/std aggregation; empty runs `seed` alone.
    pub seeds: Vec<u64>,
    /// Output root; not part of the hash.
    pub out: PathBuf,
    /// Worker threads; not part of the hash.
    pub threads: Option<usize>,
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    pub integrator: IntegratorConfig,
    pub reference: ReferenceConfig,
    pub output: OutputConfig,
    #[serde(rename = "static")]
    pub static_run: StaticConfig,
    pub bench: BenchConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Evolve,
            preset: None,
            seed: 0,
            seeds: Vec::new(),
            out: PathBuf::from("runs"),
            threads: None,
            problem: ProblemConfig::default(),
            discretization: DiscretizationConfig::default(),
            integrator: IntegratorConfig::default(),
            reference: ReferenceConfig::default(),
            output: OutputConfig::default(),
            static_run: StaticConfig::default(),
            bench: BenchConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 15] = [
    "gpe1d-beta0",
    "gpe1d-beta10",
    "gpe1d-beta10-symplectic",
    "beta-sweep",
    "gpe2d-beta10",
    "long-time",
    "traces",
    "table-row",
    "table",
    "flat-cost",
    "ablation-decay",
    "ablation-subset",
    "ablation-conservation",
    "bench",
    "reference-beta10",
];

fn beta10(c: &mut RunConfig) {
    c.problem.beta = Some(10.0);
    c.problem.beta_d = None;
}

fn midpoint(c: &mut RunConfig, dt: f64) {
    c.integrator.scheme = Scheme::ImplicitMidpoint;
    c.integrator.dt = dt;
}

impl RunConfig {
    /// Expand a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig {
            preset: Some(name.to_string()),
            ..RunConfig::default()
        };
        match name {
            "gpe1d-beta0" => {
                c.discretization.neurons = 200;
                c.discretization.n_c = 128;
                c.discretization.alpha = 0.5;
                c.discretization.svd_threshold = 1e-8;
            }
            "gpe1d-beta10" => {
                beta10(&mut c);
                c.discretization.neurons = 3200;
                c.discretization.n_c = 384;
                c.discretization.svd_threshold = 1e-11;
            }
            "gpe1d-beta10-symplectic" => {
                beta10(&mut c);
                c.problem.t_final = 10.0;
                c.discretization.neurons = 200;
                c.discretization.n_c = 128;
                c.discretization.svd_threshold = 1e-8;
                c.discretization.operator = OperatorForm::Galerkin;
                midpoint(&mut c, 5e-4);
                c.output.n_snapshots = 20;
            }
            "beta-sweep" => {
                c.problem.beta = Some(10.0);
                c.problem.beta_d = None;
                c.problem.beta_sweep = vec![0.1, 1.0, 10.0, 50.0, 100.0];
                c.reference.n_g = 512;
                c.reference.extent = 24.0;
                c.discretization.neurons = 3200;
                c.discretization.n_c = 384;
                c.discretization.svd_threshold = 1e-11;
            }
            "gpe2d-beta10" => {
                beta10(&mut c);
                c.problem.d = 2;
                c.discretization.neurons = 1200;
                c.discretization.n_c = 48 * 48;
                c.reference.n_g = 128;
                c.reference.dt = 2e-3;
                c.reference.eval_extent = 1.0;
                c.output.snapshot_times = vec![0.0, 0.3, 0.6, 1.0];
            }
            "long-time" => {
                beta10(&mut c);
                c.problem.t_final = 100.0;
                c.discretization.neurons = 3200;
                c.discretization.n_c = 384;
                c.discretization.svd_threshold = 1e-11;
                c.output.n_snapshots = 50;
            }
            "traces" => {
                c.problem.beta = Some(10.0);
                c.problem.beta_d = None;
                c.problem.beta_sweep = vec![1.0, 10.0, 50.0, 100.0];
                c.problem.t_final = 5.0;
                c.discretization.neurons = 80;
                c.discretization.n_c = 128;
                c.discretization.svd_threshold = 1e-8;
                midpoint(&mut c, 1e-3);
                c.reference.kind = ReferenceKind::None;
                c.output.n_snapshots = 250;
                c.output.trace_indices = (3..=8).collect();
            }
            "table-row" | "table" | "flat-cost" => {
                c.mode = Mode::Static;
                if name == "table" {
                    c.static_run.dims = TABLE_COLLOCATION.iter().map(|(d, _)| *d).collect();
                }
                if name == "flat-cost" {
                    c.static_run.dims = vec![50, 100, 500, 1000];
                    c.static_run.n_c = Some(196);
                    c.static_run.settings.neurons = 1024;
                    c.static_run.settings.subset_size = Some(10);
                }
            }
            "ablation-decay" => {
                c.mode = Mode::Ablation;
                c.ablation.which = Some(AblationKind::Decay);
                beta10(&mut c);
                c.discretization.alpha = 0.5;
                c.discretization.neurons = 400;
                c.discretization.svd_threshold = 1e-10;
            }
            "ablation-subset" => {
                c.mode = Mode::Ablation;
                c.ablation.which = Some(AblationKind::Subset);
                beta10(&mut c);
                c.problem.d = 3;
                c.problem.t_final = 0.5;
                c.discretization.neurons = 300;
                c.discretization.n_c = 10 * 10 * 10;
                c.discretization.alpha = 0.5;
                c.discretization.svd_threshold = 1e-8;
                c.reference.n_g = 64;
                c.reference.extent = 8.0;
                c.reference.eval_extent = 3.0;
                c.output.n_snapshots = 5;
            }
            "ablation-conservation" => {
                c.mode = Mode::Ablation;
                c.ablation.which = Some(AblationKind::Conservation);
                beta10(&mut c);
                c.problem.t_final = 10.0;
                c.discretization.neurons = 200;
                c.discretization.n_c = 128;
                c.discretization.svd_threshold = 1e-8;
                c.integrator.rtol = 1e-8;
                c.integrator.atol = 1e-8;
                c.reference.kind = ReferenceKind::None;
                c.output.n_snapshots = 50;
            }
            "bench" => {
                c.mode = Mode::Bench;
            }
            "reference-beta10" => {
                c.mode = Mode::Reference;
                beta10(&mut c);
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (available: {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Start from `preset` (or defaults), overlay `file`, then `overrides`
    /// (a JSON object of flag values), and validate.
    pub fn assemble(preset: Option<&str>, file: Option<&Path>, overrides: Value) -> Result<Self> {
        let base = match preset {
            Some(name) => Self::preset(name)?,
            None => Self::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        if let Some(path) = file {
            merge(&mut value, read_config_value(path)?);
        }
        if !overrides.is_null() {
            merge(&mut value, overrides);
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical JSON: sorted keys, output location and thread count removed.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut v {
            map.remove("out");
            map.remove("threads");
        }
        Ok(serde_json::to_string(&v)?)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn short_hash(&self) -> Result<String> {
        Ok(self.hash()?[..16].to_string())
    }

    /// Cross-field checks; the error lists every offending field.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut push = |field: &str, msg: String| bad.push(format!("{field}: {msg}"));
        let p = &self.problem;
        if p.d == 0 {
            push("problem.d", "must be >= 1".into());
        }
        if let Some(n) = p.n_orig {
            if n < p.d {
                push("problem.n_orig", format!("must be >= d = {}", p.d));
            }
        }
        if !p.gammas.is_empty() && p.gammas.len() != p.n_orig() {
            push(
                "problem.gammas",
                format!("expected {} entries, got {}", p.n_orig(), p.gammas.len()),
            );
        }
        if p.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            push("problem.gammas", "must be positive and finite".into());
        }
        match (p.beta, p.beta_d) {
            (Some(_), Some(_)) => push("problem.beta_d", "give either beta or beta_d, not both".into()),
            (None, None) => push("problem.beta", "one of beta or beta_d is required".into()),
            (None, Some(_)) if p.n_orig() > p.d => push(
                "problem.beta",
                "required to derive beta_d when n_orig > d".into(),
            ),
            _ => {}
        }
        if p.beta.into_iter().chain(p.beta_d).chain(p.beta_sweep.iter().copied()).any(|b| !b.is_finite()) {
            push("problem.beta", "must be finite".into());
        }
        if !(p.t_final > 0.0 && p.t_final.is_finite()) {
            push("problem.t_final", "must be > 0".into());
        }

        let dc = &self.discretization;
        if dc.neurons == 0 {
            push("discretization.neurons", "must be >= 1".into());
        }
        if dc.n_c < 2 {
            push("discretization.n_c", "must be >= 2".into());
        }
        if !(dc.alpha > 0.0) {
            push("discretization.alpha", "must be > 0".into());
        }
        if !(dc.q >= 0.0) {
            push("discretization.q", "must be >= 0".into());
        }
        if dc.q == 0.0 && dc.box_extent.is_none() {
            push("discretization.box_extent", "required when q = 0".into());
        }
        if dc.box_extent.is_some_and(|e| !(e > 0.0)) {
            push("discretization.box_extent", "must be > 0".into());
        }
        if dc.collocation == CollocationKind::GaussHermite {
            if dc.q == 0.0 {
                push("discretization.collocation", "Gauss-Hermite nodes need q > 0".into());
            }
            if p.d > 0 && dc.nodes_per_axis(p.d).is_none() {
                push(
                    "discretization.n_c",
                    format!("{} is not a perfect power of d = {}", dc.n_c, p.d),
                );
            }
        }
        if !(dc.svd_threshold > 0.0 && dc.svd_threshold < 1.0) {
            push("discretization.svd_threshold", "must lie in (0, 1)".into());
        }
        if !(dc.weight_scale > 0.0 && dc.weight_scale.is_finite()) {
            push("discretization.weight_scale", "must be > 0".into());
        }

        if let Some(m) = self.integrator.subset_size {
            if m == 0 || m > p.d {
                push("integrator.subset_size", format!("m = {m} must lie in 1..=d = {}", p.d));
            }
        }
        if let Err(e) = self.integrator.validate(p.d.max(1)) {
            if !e.to_string().contains("subset_size") {
                push("integrator", e.to_string());
            }
        }

        let r = &self.reference;
        if matches!(r.kind, ReferenceKind::Tssp) && p.d > 3 {
            push("reference.kind", "TSSP reference supports d <= 3".into());
        }
        let uses_grid = match r.kind {
            ReferenceKind::Tssp => true,
            ReferenceKind::Auto => p.d <= 3,
            ReferenceKind::Analytic | ReferenceKind::None => self.mode == Mode::Reference,
        };
        if uses_grid {
            if let Err(e) = r.grid(p.d.max(1)).validate() {
                push("reference", e.to_string());
            }
        }
        if r.eval_points < 2 || !(r.eval_extent > 0.0) {
            push("reference.eval_points", "need >= 2 points and eval_extent > 0".into());
        }

        let o = &self.output;
        if o.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= p.t_final)) {
            push("output.snapshot_times", "must lie in [0, t_final]".into());
        }
        if o.snapshot_times.is_empty() && o.n_snapshots == 0 {
            push("output.n_snapshots", "must be >= 1".into());
        }

        if self.mode == Mode::Static {
            let s = &self.static_run;
            if s.dims.is_empty() {
                push("static.dims", "at least one dimension required".into());
            }
            for &d in &s.dims {
                match s.collocation_for(d) {
                    None => push("static.n_c", format!("no table value for d = {d}; set n_c")),
                    Some(n) if n < 2 => push("static.n_c", "must be >= 2".into()),
                    _ => {}
                }
                if let Err(e) = s.settings.validate(d) {
                    push("static.settings", format!("d = {d}: {e}"));
                }
            }
            if !s.beta_d.is_finite() {
                push("static.beta_d", "must be finite".into());
            }
            if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
                push("static.epsilon", "must be >= 0".into());
            }
        }
        if self.mode == Mode::Ablation {
            let a = &self.ablation;
            match a.which {
                None => push("ablation.which", "required in ablation mode".into()),
                Some(AblationKind::Subset) => {
                    if a.subset_sizes.iter().any(|&m| m == 0 || m > p.d) {
                        push("ablation.subset_sizes", format!("entries must lie in 1..={}", p.d));
                    }
                }
                Some(AblationKind::Decay) => {
                    if a.decay_neurons.is_empty() || a.decay_neurons.contains(&0) {
                        push("ablation.decay_neurons", "need positive neuron counts".into());
                    }
                    if a.decay_alphas.iter().any(|a| !(*a > 0.0)) {
                        push("ablation.decay_alphas", "must be > 0".into());
                    }
                }
                Some(AblationKind::Conservation) => {}
            }
        }
        if self.mode == Mode::Bench {
            let b = &self.bench;
            if b.tssp_dims.iter().chain(&b.sdfsnn_dims).any(|&d| d == 0) {
                push("bench.dims", "dimensions must be >= 1".into());
            }
            if b.settings.repeats == 0 {
                push("bench.settings.repeats", "must be >= 1".into());
            }
        }
        if self.threads == Some(0) {
            push("threads", "must be >= 1".into());
        }

        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Parse a TOML or JSON config file (by extension; TOML otherwise).
pub fn read_config_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset_is_config_error() {
        let e = RunConfig::preset("nope").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn empty_file_plus_flags_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.toml");
        std::fs::write(&path, "").unwrap();
        let c = RunConfig::assemble(
            None,
            Some(&path),
            json!({"seed": 7, "problem": {"t_final": 0.5}}),
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.problem.t_final, 0.5);
    }

    #[test]
    fn subset_larger_than_dimension_names_the_field() {
        let e = RunConfig::assemble(None, None, json!({"integrator": {"subset_size": 3}}))
            .unwrap_err()
            .to_string();
        assert!(e.contains("integrator.subset_size"), "{e}");
    }

    #[test]
    fn high_dimension_without_grid_reference_is_valid() {
        let overrides = |kind: &str| {
            json!({"problem": {"d": 5, "beta_d": 1.0}, "reference": {"kind": kind},
                   "discretization": {"collocation": "random"}})
        };
        assert!(RunConfig::assemble(None, None, overrides("none")).is_ok());
        assert!(RunConfig::assemble(None, None, overrides("auto")).is_ok());
        let e = RunConfig::assemble(None, None, overrides("tssp")).unwrap_err().to_string();
        assert!(e.contains("reference.kind"), "{e}");
    }

    #[test]
    fn every_bad_field_is_listed() {
        let e = RunConfig::assemble(
            None,
            None,
            json!({
                "problem": {"t_final": -1.0},
                "discretization": {"alpha": 0.0, "q": 0.0, "collocation": "random"}
            }),
        )
        .unwrap_err()
        .to_string();
        for f in ["problem.t_final", "discretization.alpha", "discretization.box_extent"] {
            assert!(e.contains(f), "missing {f} in {e}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::assemble(None, None, json!({"problem": {"dimension": 2}})).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("dimension"));
    }

    #[test]
    fn file_then_flags_override_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"discretization": {"neurons": 300}, "seed": 3}"#).unwrap();
        let c = RunConfig::assemble(Some("gpe1d-beta10"), Some(&path), json!({"seed": 5})).unwrap();
        assert_eq!(c.discretization.neurons, 300);
        assert_eq!(c.seed, 5);
        assert_eq!(c.problem.beta, Some(10.0));
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "seed = 4\n[problem]\nd = 2\n[discretization]\nn_c = 400\n").unwrap();
        std::fs::write(&j, r#"{"seed": 4, "problem": {"d": 2}, "discretization": {"n_c": 400}}"#)
            .unwrap();
        let a = RunConfig::assemble(None, Some(&t), Value::Null).unwrap_or_else(|e| panic!("{e}"));
        let b = RunConfig::assemble(None, Some(&j), Value::Null).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_location_and_threads() {
        let a = RunConfig::preset("gpe1d-beta10").unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        b.threads = Some(3);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn config_round_trips_through_json() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(c, back, "{name}");
        }
    }

    #[test]
    fn beta_d_is_derived_from_beta() {
        let c = RunConfig::assemble(
            None,
            None,
            json!({"problem": {"beta": 2.0, "beta_d": null, "n_orig": 3, "gammas": [1.0, 4.0, 9.0]}}),
        )
        .unwrap();
        let (_, bd) = c.problem.interactions()[0];
        let expect = 2.0 * (4.0 / (2.0 * std::f64::consts::PI)).sqrt() * (9.0 / (2.0 * std::f64::consts::PI)).sqrt();
        assert!((bd - expect).abs() < 1e-14);
    }

    #[test]
    fn beta_d_alone_cannot_cover_extra_axes() {
        let e = RunConfig::assemble(None, None, json!({"problem": {"n_orig": 3}}))
            .unwrap_err()
            .to_string();
        assert!(e.contains("problem.beta"), "{e}");
    }

    #[test]
    fn gauss_hermite_needs_a_perfect_power() {
        let e = RunConfig::assemble(None, None, json!({"problem": {"d": 2}, "discretization": {"n_c": 300}}))
            .unwrap_err()
            .to_string();
        assert!(e.contains("discretization.n_c"), "{e}");
    }

    #[test]
    fn gpe1d_beta10_preset_audit() {
        let c = RunConfig::preset("gpe1d-beta10").unwrap();
        assert_eq!(c.problem.d, 1);
        assert_eq!(c.problem.interactions(), vec![(10.0, 10.0)]);
        assert_eq!(c.problem.t_final, 1.0);
        assert_eq!(c.problem.gammas_orig(), vec![1.0]);
        let t = RunConfig::preset("traces").unwrap();
        assert_eq!(t.discretization.neurons, 80);
        assert_eq!(t.output.trace_indices, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(t.problem.beta_sweep, vec![1.0, 10.0, 50.0, 100.0]);
        assert_eq!(RunConfig::preset("long-time").unwrap().problem.t_final, 100.0);
    }
}
