use std::path::{Path, PathBuf};

use domcert::chartask::{CharTaskSpec, MAX_INPUT_LEN};
use domcert::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One experiment: datasets, models, thresholds and outputs. Read from a
/// single TOML file; `seed` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub models: ModelConfig,
    #[serde(default)]
    pub valid: ValidGrid,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("domcert-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Items of the target domain, sorting over integers.
    pub target_train: usize,
    pub target_val: usize,
    pub target_test: usize,
    /// Items over all tasks and the integer+character pool, for `L`.
    pub general_train: usize,
    pub general_val: usize,
    pub general_test: usize,
    /// Out-of-domain items (general items outside the target domain).
    pub ood_test: usize,
    /// Longest input list.
    pub max_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            target_train: 10_000,
            target_val: 64,
            target_test: 1000,
            general_train: 40_000,
            general_val: 64,
            general_test: 1000,
            ood_test: 1000,
            max_len: MAX_INPUT_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub l_order: usize,
    pub g_order: usize,
    pub alpha: f64,
    /// Temperatures of the models used for scoring and inside the meta-model.
    pub l_temperature: f64,
    pub g_temperature: f64,
    /// Temperatures for free generation in the valid-sequence comparison.
    pub l_generation_temperature: f64,
    pub g_generation_temperature: f64,
    /// Random suffixes per target item in the guide's training corpus.
    pub g_suffixes_per_item: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            l_order: 8,
            g_order: 4,
            alpha: 0.01,
            l_temperature: 1.0,
            g_temperature: 1.0,
            l_generation_temperature: 0.2,
            g_generation_temperature: 0.7,
            g_suffixes_per_item: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidGrid {
    /// Thresholds (bits per token) at which certificates are reported.
    pub k: Vec<f64>,
    pub t: Vec<usize>,
    /// Points of the FRR/TRR sweep grid.
    pub sweep_points: usize,
    /// Response length cap for sampling.
    pub max_response_len: usize,
}

impl Default for ValidGrid {
    fn default() -> Self {
        ValidGrid { k: vec![0.0, 1.0, 2.0], t: vec![1, 5], sweep_points: domcert::analysis::DEFAULT_GRID_POINTS, max_response_len: 120 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Leading tokens of the flat sequence used as the prompt.
    pub prompt_len: usize,
    /// Items whose prompt exceeds this share of the sequence are dropped.
    pub max_prompt_fraction: f64,
    pub robust_quantile: f64,
    /// Solved thresholds below this value are flagged.
    pub k_floor: f64,
    /// Target epsilons for which `k` is solved.
    pub eps: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            prompt_len: 10,
            max_prompt_fraction: 0.25,
            robust_quantile: 1.0,
            k_floor: -20.0,
            eps: vec![1e-5, 1e-10, 1e-20],
            histogram_bins: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub t: usize,
    /// Decreasing epsilon grid for the benchmark score.
    pub eps: Vec<f64>,
    pub accuracy_prompt_lengths: Vec<usize>,
    /// Target-domain items scored by the benchmark.
    pub items: usize,
    /// Longest input list of benchmark items.
    pub max_input_len: usize,
    /// Mixed-task items for the valid-sequence comparison.
    pub accuracy_items: usize,
    pub accuracy_max_input_len: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            t: 1,
            eps: (0..10).map(|i| 10f64.powi(-10 * i)).collect(),
            accuracy_prompt_lengths: vec![1, 5, 10],
            items: 1000,
            max_input_len: 2,
            accuracy_items: 1000,
            accuracy_max_input_len: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.target_train == 0 || d.general_train == 0 {
            return Err(Error::input("training sets must be non-empty"));
        }
        if d.target_test == 0 || d.ood_test == 0 {
            return Err(Error::input("evaluation sets must be non-empty"));
        }
        if d.max_len == 0 || d.max_len > MAX_INPUT_LEN {
            return Err(Error::input(format!("data.max_len must be in 1..={MAX_INPUT_LEN}")));
        }
        let m = &self.models;
        if m.l_order == 0 || m.g_order == 0 {
            return Err(Error::input("n-gram orders must be at least 1"));
        }
        let temps = [m.l_temperature, m.g_temperature, m.l_generation_temperature, m.g_generation_temperature];
        if !(m.alpha.is_finite() && m.alpha > 0.0) || temps.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::input("alpha and temperatures must be positive"));
        }
        if m.g_suffixes_per_item == 0 {
            return Err(Error::input("models.g_suffixes_per_item must be at least 1"));
        }
        let v = &self.valid;
        if v.k.iter().any(|k| !k.is_finite()) || v.t.is_empty() || v.t.contains(&0) {
            return Err(Error::input("valid.k must be finite and valid.t non-empty with T >= 1"));
        }
        if v.sweep_points < 2 || v.max_response_len == 0 {
            return Err(Error::input("valid.sweep_points >= 2 and valid.max_response_len >= 1 required"));
        }
        let e = &self.eval;
        if e.prompt_len == 0 || !(e.max_prompt_fraction > 0.0 && e.max_prompt_fraction <= 1.0) {
            return Err(Error::input("eval.prompt_len >= 1 and eval.max_prompt_fraction in (0, 1] required"));
        }
        if !(e.robust_quantile > 0.0 && e.robust_quantile <= 1.0) {
            return Err(Error::input("eval.robust_quantile must lie in (0, 1]"));
        }
        if e.eps.iter().chain(&self.bench.eps).any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return Err(Error::input("epsilons must lie in (0, 1]"));
        }
        if e.histogram_bins == 0 {
            return Err(Error::input("eval.histogram_bins must be at least 1"));
        }
        let b = &self.bench;
        if b.t == 0 || b.eps.is_empty() || b.items == 0 {
            return Err(Error::input("bench.t >= 1, a non-empty bench.eps and bench.items >= 1 required"));
        }
        if b.accuracy_items == 0 {
            return Err(Error::input("bench.accuracy_items must be at least 1"));
        }
        for len in [b.max_input_len, b.accuracy_max_input_len] {
            if len == 0 || len > MAX_INPUT_LEN {
                return Err(Error::input(format!("bench input lengths must be in 1..={MAX_INPUT_LEN}")));
            }
        }
        Ok(())
    }

    /// Independent seed for a named component.
    pub fn derive_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    pub fn target_spec(&self) -> CharTaskSpec {
        let d = &self.data;
        CharTaskSpec {
            max_len: d.max_len,
            ..CharTaskSpec::target(d.target_train, d.target_val, d.target_test, self.derive_seed("data.target"))
        }
    }

    pub fn general_spec(&self) -> CharTaskSpec {
        let d = &self.data;
        CharTaskSpec {
            max_len: d.max_len,
            ..CharTaskSpec::general(d.general_train, d.general_val, d.general_test, self.derive_seed("data.general"))
        }
    }

    pub fn bench_spec(&self) -> CharTaskSpec {
        let b = &self.bench;
        CharTaskSpec { max_len: b.max_input_len, ..CharTaskSpec::target(0, 0, b.items, self.derive_seed("data.bench")) }
    }

    pub fn accuracy_spec(&self) -> CharTaskSpec {
        let b = &self.bench;
        CharTaskSpec {
            max_len: b.accuracy_max_input_len,
            ..CharTaskSpec::general(0, 0, b.accuracy_items, self.derive_seed("data.accuracy"))
        }
    }

    pub fn ood_spec(&self) -> CharTaskSpec {
        let d = &self.data;
        CharTaskSpec { max_len: d.max_len, ..CharTaskSpec::out_of_domain(0, 0, d.ood_test, self.derive_seed("data.ood")) }
    }
}

pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
