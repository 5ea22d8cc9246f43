//! Run configuration, read from TOML.
//!
//! ```toml
//! [dataset]
//! path = "data/train.json"
//! format = "canonical_json"
//!
//! [run]
//! seed = 7
//! output_dir = "runs/exp1"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{BackendSet, HttpConfig, DEFAULT_EMBED_DIM};
use crate::dataio::Targeting;
use crate::dataio::{DatasetFormat, DEFAULT_TAIL_THRESHOLD};
use crate::error::{Error, Result};
use crate::filtration::FilterOptions;
use crate::imageproc::{HighPassKind, DEFAULT_ALPHA, DEFAULT_STYLE_BINS};

pub const TOKEN_ENV: &str = "SAIC_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: DatasetFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_map: Option<BTreeMap<String, String>>,
}

fn default_format() -> DatasetFormat {
    DatasetFormat::CanonicalJson
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Bank directory; defaults to `<output_dir>/bank`.
    pub dir: Option<PathBuf>,
    pub min_per_category: usize,
    pub max_per_category: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            dir: None,
            min_per_category: 68,
            max_per_category: 90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposeConfig {
    pub alpha: f64,
    pub highpass: HighPassKind,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            alpha: DEFAULT_ALPHA,
            highpass: HighPassKind::Sobel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Live,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub embed_dim: usize,
    pub http: HttpConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Live,
            embed_dim: DEFAULT_EMBED_DIM,
            http: HttpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub expand_ratio: f64,
    pub targeting: Targeting,
    pub tail_threshold: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            expand_ratio: 1.0,
            targeting: Targeting::TailWeighted,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub style_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            style_bins: DEFAULT_STYLE_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Root seed. Required; there is no time-based default.
    #[serde(default)]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the number of processors.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    /// Fraction of failed entries above which `augment` fails.
    #[serde(default = "default_failure_ratio")]
    pub max_failure_ratio: f64,
}

fn default_failure_ratio() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub run: RunSection,
    #[serde(default)]
    pub bank: BankConfig,
    #[serde(default)]
    pub compose: ComposeConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub filtration: FilterOptions,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, file: &Path) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::parse(file, None, e.message().to_string() + &span_note(text, &e)))
    }

    /// Read, resolve relative paths against the file's directory, pick up
    /// the bearer token from the environment.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, None, e))?;
        let mut cfg = RunConfig::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            if !token.is_empty() {
                cfg.backend.http.token = Some(token);
            }
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.dataset.path = join(&self.dataset.path);
        self.run.output_dir = join(&self.run.output_dir);
        if let Some(d) = &self.bank.dir {
            self.bank.dir = Some(join(d));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.compose.alpha) {
            return Err(Error::Config(format!(
                "compose.alpha {} must lie in [0, 1]",
                self.compose.alpha
            )));
        }
        if self.run.seed.is_none() {
            return Err(Error::Config("run.seed must be set (or pass --seed)".into()));
        }
        if !(self.plan.expand_ratio >= 0.0 && self.plan.expand_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "plan.expand_ratio {} must be >= 0",
                self.plan.expand_ratio
            )));
        }
        if self.run.workers == Some(0) {
            return Err(Error::Config("run.workers must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.run.max_failure_ratio) {
            return Err(Error::Config("run.max_failure_ratio must lie in [0, 1]".into()));
        }
        if self.eval.style_bins == 0 || self.eval.style_bins > 256 {
            return Err(Error::Config("eval.style_bins must lie in 1..=256".into()));
        }
        crate::filtration::template(&self.filtration.template_id).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.expect("validated config has a seed")
    }

    pub fn bank_dir(&self) -> PathBuf {
        self.bank
            .dir
            .clone()
            .unwrap_or_else(|| self.run.output_dir.join("bank"))
    }

    pub fn workers(&self) -> usize {
        self.run
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn backends(&self) -> BackendSet {
        match self.backend.kind {
            BackendKind::Reference => BackendSet::reference(self.backend.embed_dim),
            BackendKind::Live => {
                let mut http = self.backend.http.clone();
                http.embed_dim = self.backend.embed_dim;
                BackendSet::live(http)
            }
        }
    }

    /// Pretty JSON snapshot without secrets or worker count.
    pub fn lock_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::to_value(self).expect("config serialises")).expect("json") + "\n"
    }

    /// SHA-256 of [`RunConfig::lock_json`], hex encoded.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.lock_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn span_note(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!(" (line {})", text[..span.start].lines().count().max(1)),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        path = "data/ds.json"
        [run]
        seed = 3
        output_dir = "out"
    "#;

    #[test]
    fn defaults_and_paths() {
        let mut cfg = RunConfig::from_toml(MINIMAL, Path::new("c.toml")).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        cfg.validate().unwrap();
        assert_eq!(cfg.compose.alpha, 0.1);
        assert_eq!(cfg.dataset.path, PathBuf::from("/base/data/ds.json"));
        assert_eq!(cfg.bank_dir(), PathBuf::from("/base/out/bank"));
        assert_eq!(cfg.plan.tail_threshold, 500);
        assert_eq!(cfg.filtration.template_id, crate::filtration::DEFAULT_TEMPLATE);
    }

    #[test]
    fn rejects_bad_values() {
        let bad_alpha = MINIMAL.to_string() + "[compose]\nalpha = 1.5\n";
        let cfg = RunConfig::from_toml(&bad_alpha, Path::new("c.toml")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let no_seed = MINIMAL.replace("seed = 3", "");
        let cfg = RunConfig::from_toml(&no_seed, Path::new("c.toml")).unwrap();
        assert!(cfg.validate().is_err());

        let typo = MINIMAL.to_string() + "[plan]\nexpand_ration = 2\n";
        let err = RunConfig::from_toml(&typo, Path::new("c.toml")).unwrap_err();
        assert!(err.is_usage());

        let tmpl = MINIMAL.to_string() + "[filtration]\ntemplate_id = \"x\"\n";
        let cfg = RunConfig::from_toml(&tmpl, Path::new("c.toml")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_ignores_token_and_workers() {
        let a = RunConfig::from_toml(MINIMAL, Path::new("c.toml")).unwrap();
        let mut b = a.clone();
        b.backend.http.token = Some("secret".into());
        b.run.workers = Some(3);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(!b.lock_json().contains("secret"));
        let mut c = a.clone();
        c.run.seed = Some(4);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
