//! Experiment matrix configuration (TOML).
//!
//! ```toml
//! master_seed = 42
//! repeats = 20
//! chunk_count = 16
//! protocols = ["GRR", "OLH", "OUE"]
//! epsilons = [0.5, 1, 2, 3, 4]
//! pp = ["NoPP", "Norm-Sub", "Norm-Cut"]
//! metrics = ["L1", "EMD"]
//! output_dir = "results"
//!
//! [[datasets]]
//! name = "zipf128"
//! kind = "zipf"
//! n = 200000
//! d = 128
//! s = 1.5
//! seed = 1
//!
//! [[datasets]]
//! kind = "kosarak"
//! path = "data/kosarak.dat"
//! top_k = 128
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::datasets::{GeneratorConfig, GeneratorKind};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::postprocess::PPMethod;
use crate::protocols::ProtocolKind;

pub const DEFAULT_EPSILONS: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 4.0];
pub const DEFAULT_REPEATS: usize = 20;
pub const DEFAULT_CHUNK_COUNT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    #[serde(default = "GeneratorConfigDefaults::n")]
    pub n: usize,
    #[serde(default = "GeneratorConfigDefaults::d")]
    pub d: usize,
    #[serde(default = "GeneratorConfigDefaults::mu")]
    pub mu: f64,
    #[serde(default = "GeneratorConfigDefaults::sd")]
    pub sd: f64,
    #[serde(default = "GeneratorConfigDefaults::s")]
    pub s: f64,
    #[serde(default)]
    pub seed: u64,
}

struct GeneratorConfigDefaults;

impl GeneratorConfigDefaults {
    fn n() -> usize {
        GeneratorConfig::new(GeneratorKind::Uniform).n
    }
    fn d() -> usize {
        GeneratorConfig::new(GeneratorKind::Uniform).d
    }
    fn mu() -> f64 {
        GeneratorConfig::new(GeneratorKind::Gaussian).mu
    }
    fn sd() -> f64 {
        GeneratorConfig::new(GeneratorKind::Gaussian).sd
    }
    fn s() -> f64 {
        GeneratorConfig::new(GeneratorKind::Zipfian).s
    }
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n: GeneratorConfigDefaults::n(),
            d: GeneratorConfigDefaults::d(),
            mu: GeneratorConfigDefaults::mu(),
            sd: GeneratorConfigDefaults::sd(),
            s: GeneratorConfigDefaults::s(),
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn generator(&self, kind: GeneratorKind) -> GeneratorConfig {
        GeneratorConfig {
            kind,
            n: self.n,
            d: self.d,
            mu: self.mu,
            sd: self.sd,
            s: self.s,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Gaussian(SyntheticParams),
    #[serde(alias = "zipfian")]
    Zipf(SyntheticParams),
    Uniform(SyntheticParams),
    Adult {
        path: PathBuf,
    },
    #[serde(alias = "transactions")]
    Kosarak {
        path: PathBuf,
        top_k: usize,
    },
    BmsPos {
        path: PathBuf,
        top_k: usize,
    },
    /// A population written by `ldpbench generate`.
    File {
        path: PathBuf,
    },
}

impl DatasetSource {
    pub fn generator(&self) -> Option<GeneratorConfig> {
        match self {
            DatasetSource::Gaussian(p) => Some(p.generator(GeneratorKind::Gaussian)),
            DatasetSource::Zipf(p) => Some(p.generator(GeneratorKind::Zipfian)),
            DatasetSource::Uniform(p) => Some(p.generator(GeneratorKind::Uniform)),
            _ => None,
        }
    }

    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DatasetSource::Adult { path }
            | DatasetSource::Kosarak { path, .. }
            | DatasetSource::BmsPos { path, .. }
            | DatasetSource::File { path } => Some(path),
            _ => None,
        }
    }

    fn default_name(&self) -> String {
        match self {
            DatasetSource::Gaussian(p) => format!("gaussian-sd{}-d{}", p.sd, p.d),
            DatasetSource::Zipf(p) => format!("zipf-s{}-d{}", p.s, p.d),
            DatasetSource::Uniform(p) => format!("uniform-d{}", p.d),
            DatasetSource::Adult { .. } => "adult".into(),
            DatasetSource::Kosarak { .. } => "kosarak".into(),
            DatasetSource::BmsPos { .. } => "bms-pos".into(),
            DatasetSource::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub source: DatasetSource,
}

impl DatasetEntry {
    pub fn new(name: impl Into<String>, source: DatasetSource) -> Self {
        Self {
            name: Some(name.into()),
            source,
        }
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.source.default_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetEntry>,
    #[serde(deserialize_with = "parse_names")]
    pub protocols: Vec<ProtocolKind>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_pp", deserialize_with = "parse_names")]
    pub pp: Vec<PPMethod>,
    #[serde(default = "default_metrics", deserialize_with = "parse_names")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_chunk_count")]
    pub chunk_count: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Regenerate synthetic populations for every run instead of fixing
    /// one population per cell.
    #[serde(default)]
    pub resample_population: bool,
    /// Concurrency limit; never affects results. `0` uses every core.
    #[serde(default)]
    pub max_threads: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}
fn default_pp() -> Vec<PPMethod> {
    PPMethod::ALL.to_vec()
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::L1]
}
fn default_repeats() -> usize {
    DEFAULT_REPEATS
}
fn default_chunk_count() -> usize {
    DEFAULT_CHUNK_COUNT
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

fn parse_names<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: std::str::FromStr<Err = Error>,
{
    Vec::<String>::deserialize(de)?
        .iter()
        .map(|s| s.parse::<T>().map_err(serde::de::Error::custom))
        .collect()
}

impl ExperimentConfig {
    /// Minimal config over the default epsilon grid with every PP method.
    pub fn new(datasets: Vec<DatasetEntry>, protocols: Vec<ProtocolKind>) -> Self {
        Self {
            datasets,
            protocols,
            epsilons: default_epsilons(),
            pp: default_pp(),
            metrics: default_metrics(),
            repeats: DEFAULT_REPEATS,
            chunk_count: DEFAULT_CHUNK_COUNT,
            master_seed: 0,
            resample_population: false,
            max_threads: 0,
            output_dir: None,
            formats: default_formats(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a config file; relative dataset paths resolve against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for entry in &mut config.datasets {
            if let Some(p) = entry.source.path_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(out) = &mut config.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.datasets.is_empty() || self.protocols.is_empty() || self.epsilons.is_empty() {
            return fail("datasets, protocols and epsilons must be non-empty".into());
        }
        if self.pp.is_empty() || self.metrics.is_empty() {
            return fail("pp and metrics must be non-empty".into());
        }
        if self.repeats == 0 || self.chunk_count == 0 {
            return fail("repeats and chunk_count must be at least 1".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return fail(format!("epsilon {e} is not a positive finite number"));
        }
        let mut names: Vec<String> = self
            .datasets
            .iter()
            .map(DatasetEntry::display_name)
            .collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return fail(format!("duplicate dataset name '{}'", w[0]));
        }
        let dup = |len: usize, dedup: usize| len != dedup;
        let mut eps = self.epsilons.clone();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let mut protos = self.protocols.clone();
        protos.sort();
        protos.dedup();
        let mut pp = self.pp.clone();
        pp.sort();
        pp.dedup();
        let mut metrics = self.metrics.clone();
        metrics.sort();
        metrics.dedup();
        if dup(eps.len(), self.epsilons.len())
            || dup(protos.len(), self.protocols.len())
            || dup(pp.len(), self.pp.len())
            || dup(metrics.len(), self.metrics.len())
        {
            return fail("protocols, epsilons, pp and metrics must not repeat".into());
        }
        Ok(())
    }
}
