use std::path::{Path, PathBuf};

use gsi_core::cost::HardwareProfile;
use gsi_core::model::{BasisSource, ModelConfig, Positional, DEFAULT_ETA};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One experiment, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Relative to the workspace root.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub data: DataSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub hardware: HardwareSpec,
    #[serde(default)]
    pub costmodel: CostModelSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Seeded dense weights.
    Random,
    /// Seeded weights whose activations lie in a planted subspace.
    Planted,
    /// Weights read from a tensor container.
    Container,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub source: ModelSource,
    pub d_model: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub vocab: Option<usize>,
    pub max_seq: Option<usize>,
    #[serde(default)]
    pub positional: Positional,
    /// Planted activation rank (`planted` only).
    pub planted_rank: Option<usize>,
    /// Weight manifest (`container` only).
    pub path: Option<PathBuf>,
}

impl ModelSpec {
    /// The architecture for generated weights; `None` for containers.
    pub fn architecture(&self) -> Result<Option<ModelConfig>> {
        if self.source == ModelSource::Container {
            if self.path.is_none() {
                return Err(CliError::Config(
                    "model.path is required when model.source = \"container\"".into(),
                ));
            }
            return Ok(None);
        }
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| CliError::Config(format!("model.{name} is required for generated weights")))
        };
        let cfg = ModelConfig {
            d_model: need(self.d_model, "d_model")?,
            n_layers: need(self.n_layers, "n_layers")?,
            n_heads: need(self.n_heads, "n_heads")?,
            d_ff: need(self.d_ff, "d_ff")?,
            vocab: need(self.vocab, "vocab")?,
            max_seq: need(self.max_seq, "max_seq")?,
            positional: self.positional,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        if self.source == ModelSource::Planted && self.planted_rank.is_none() {
            return Err(CliError::Config(
                "model.planted_rank is required when model.source = \"planted\"".into(),
            ));
        }
        Ok(Some(cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Pre-tokenised corpus: whitespace-separated ids, one sequence per line.
    /// When absent, text is sampled from the model itself.
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_calibration_tokens")]
    pub calibration_tokens: usize,
    #[serde(default = "default_eval_tokens")]
    pub eval_tokens: usize,
    #[serde(default = "default_prompt_tokens")]
    pub prompt_tokens: usize,
    #[serde(default = "default_generate_tokens")]
    pub generate_tokens: usize,
    /// Sampling temperature for model-generated text.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_calibration_tokens() -> usize {
    256
}
fn default_eval_tokens() -> usize {
    128
}
fn default_prompt_tokens() -> usize {
    16
}
fn default_generate_tokens() -> usize {
    50
}
fn default_temperature() -> f64 {
    1.0
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            corpus: None,
            calibration_tokens: default_calibration_tokens(),
            eval_tokens: default_eval_tokens(),
            prompt_tokens: default_prompt_tokens(),
            generate_tokens: default_generate_tokens(),
            temperature: default_temperature(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Baseline,
    Gated,
    StaticProjection,
}

impl ModeKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Gated => "gated",
            Self::StaticProjection => "static_projection",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub k: Vec<usize>,
    pub epsilon: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<ModeKind>,
    #[serde(default)]
    pub cascade: bool,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Cascade growth cap before truncation back to `k`.
    pub k_max: Option<usize>,
    #[serde(default)]
    pub basis_source: BasisSource,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Calibrate in memory when a rank has no stored artifact.
    #[serde(default = "default_true")]
    pub auto_calibrate: bool,
    /// Check every fast-path output against the error bound.
    #[serde(default = "default_true")]
    pub audit: bool,
    /// Rank used for the coherence table; defaults to the smallest `k`.
    pub coherence_k: Option<usize>,
}

fn default_modes() -> Vec<ModeKind> {
    vec![ModeKind::Gated]
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}
fn default_workers() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    /// Bytes per second.
    pub bandwidth: f64,
    /// FLOPs per second.
    pub compute: f64,
    pub element_bytes: u32,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        let hw = HardwareProfile::mi300x();
        Self {
            bandwidth: hw.bandwidth,
            compute: hw.compute,
            element_bytes: hw.element_bytes,
        }
    }
}

impl HardwareSpec {
    pub fn profile(&self) -> HardwareProfile {
        HardwareProfile {
            bandwidth: self.bandwidth,
            compute: self.compute,
            element_bytes: self.element_bytes,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostPreset {
    /// Reference GPT-J 6B component costs and shapes.
    #[default]
    GptjTable,
    /// Roofline estimates at this experiment's model shapes.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelSpec {
    #[serde(default)]
    pub preset: CostPreset,
    /// Fast-path fraction fed to the estimate.
    #[serde(default = "default_fast_fraction")]
    pub fast_fraction: f64,
    /// Basis rank at the preset's model width.
    #[serde(default = "default_cost_k")]
    pub k: usize,
    /// Externally supplied attention acceleration; 1 means none.
    #[serde(default = "default_attention_speedup")]
    pub attention_speedup: f64,
    /// Context length for roofline attention estimates.
    #[serde(default = "default_context")]
    pub context: usize,
    /// Nominal parameter count for the headline effective-parameter figure.
    #[serde(default = "default_nominal_params")]
    pub nominal_params: f64,
}

fn default_fast_fraction() -> f64 {
    0.998
}
fn default_cost_k() -> usize {
    256
}
fn default_attention_speedup() -> f64 {
    1.0
}
fn default_context() -> usize {
    512
}
fn default_nominal_params() -> f64 {
    6.0e9
}

impl Default for CostModelSpec {
    fn default() -> Self {
        Self {
            preset: CostPreset::default(),
            fast_fraction: default_fast_fraction(),
            k: default_cost_k(),
            attention_speedup: default_attention_speedup(),
            context: default_context(),
            nominal_params: default_nominal_params(),
        }
    }
}

/// Command-line and environment overrides, applied after the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<Vec<usize>>,
    pub epsilon: Option<Vec<f64>>,
    pub modes: Option<Vec<ModeKind>>,
    pub cascade: Option<bool>,
    pub eta: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.workers {
            self.sweep.workers = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.k {
            self.sweep.k = v.clone();
        }
        if let Some(v) = &o.epsilon {
            self.sweep.epsilon = v.clone();
        }
        if let Some(v) = &o.modes {
            self.sweep.modes = v.clone();
        }
        if let Some(v) = o.cascade {
            self.sweep.cascade = v;
        }
        if let Some(v) = o.eta {
            self.sweep.eta = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.model.architecture()?;
        let s = &self.sweep;
        if s.k.is_empty() {
            return bad("sweep.k must list at least one rank".into());
        }
        if let Some(k) = s.k.iter().find(|k| **k == 0) {
            return bad(format!("sweep.k contains {k}; ranks start at 1"));
        }
        if s.epsilon.is_empty() {
            return bad("sweep.epsilon must list at least one threshold".into());
        }
        if let Some(e) = s.epsilon.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return bad(format!("sweep.epsilon value {e} is outside (0, 1)"));
        }
        if s.modes.is_empty() {
            return bad("sweep.modes must list at least one mode".into());
        }
        if !(s.eta > 0.0 && s.eta < 1.0) {
            return bad(format!("sweep.eta {} is outside (0, 1)", s.eta));
        }
        if s.workers == 0 {
            return bad("sweep.workers must be at least 1".into());
        }
        let d = &self.data;
        if d.calibration_tokens == 0 || d.eval_tokens < 2 {
            return bad("data needs calibration_tokens >= 1 and eval_tokens >= 2".into());
        }
        if d.prompt_tokens == 0 || d.prompt_tokens > d.eval_tokens {
            return bad(format!(
                "data.prompt_tokens {} must lie in 1..={}",
                d.prompt_tokens, d.eval_tokens
            ));
        }
        if !(d.temperature > 0.0 && d.temperature.is_finite()) {
            return bad(format!("data.temperature {} must be positive", d.temperature));
        }
        self.hardware
            .profile()
            .validate()
            .map_err(|e| CliError::Config(format!("hardware: {e}")))?;
        let c = &self.costmodel;
        if !(0.0..=1.0).contains(&c.fast_fraction) || c.k == 0 || !(c.attention_speedup >= 1.0) {
            return bad("costmodel needs fast_fraction in [0, 1], k >= 1 and attention_speedup >= 1".into());
        }
        Ok(())
    }

    pub fn sorted_ks(&self) -> Vec<usize> {
        let mut k = self.sweep.k.clone();
        k.sort_unstable();
        k.dedup();
        k
    }
}

/// Resolves config-relative paths against the workspace root.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.resolve(&cfg.output_dir)
    }

    pub fn artifact_path(&self, cfg: &ExperimentConfig, k: usize) -> PathBuf {
        self.output_dir(cfg).join("artifacts").join(format!("k{k}.json"))
    }
}
