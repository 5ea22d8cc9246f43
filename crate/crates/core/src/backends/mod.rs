//! Contracts for the four model services (segmentation, embedding,
//! conditioned generation, pairwise judging), the `v1` wire protocol, an HTTP
//! client for live services and deterministic reference implementations.

pub mod conformance;
pub mod http;
pub mod protocol;
pub mod reference;
pub mod server;

use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

pub use http::{HttpBackend, HttpConfig};
pub use reference::ReferenceBackend;

/// Embedding length used when none is configured.
pub const DEFAULT_EMBED_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub global: Vec<f64>,
    pub tokens: Option<Vec<Vec<f64>>>,
}

impl EmbeddingBundle {
    /// Unit-norm global vector of the expected length, equal-length tokens.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        if let Some(d) = dim {
            if self.global.len() != d {
                return Err(Error::MalformedResponse(format!(
                    "global embedding has length {}, requested {d}",
                    self.global.len()
                )));
            }
        }
        if self.global.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedResponse(
                "global embedding has non-finite values".into(),
            ));
        }
        let norm = self.global.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::MalformedResponse(format!(
                "global embedding norm {norm} is not 1"
            )));
        }
        if let Some(tokens) = &self.tokens {
            if let Some(first) = tokens.first() {
                if tokens.iter().any(|t| t.len() != first.len()) {
                    return Err(Error::MalformedResponse("token vectors differ in length".into()));
                }
            }
        }
        Ok(())
    }

    /// Token sequence, or `[global]` when the backend supplied none.
    pub fn id_tokens(&self) -> Vec<Vec<f64>> {
        match &self.tokens {
            Some(t) if !t.is_empty() => t.clone(),
            _ => vec![self.global.clone()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleVariant {
    SelfStyle,
    BackgroundStyle,
}

impl StyleVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            StyleVariant::SelfStyle => "self_style",
            StyleVariant::BackgroundStyle => "background_style",
        }
    }
}

impl std::fmt::Display for StyleVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub background: Raster,
    pub conditioning: Raster,
    pub shape_mask: Raster,
    pub bbox: BBox,
    pub id_tokens: Vec<Vec<f64>>,
    pub seed: u64,
    pub variant: StyleVariant,
    /// Candidate crop resampled to the box. Live generators work from the ID
    /// tokens; the reference generator pastes this crop.
    pub candidate: Option<Raster>,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.background.dims() != self.conditioning.dims() {
            return Err(Error::DimensionMismatch(format!(
                "background {:?} vs conditioning {:?}",
                self.background.dims(),
                self.conditioning.dims()
            )));
        }
        self.bbox
            .check_inside(self.background.width(), self.background.height())?;
        let size = (self.bbox.w as u32, self.bbox.h as u32);
        if self.shape_mask.dims() != size || self.shape_mask.channels() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "shape mask {:?} does not match box {size:?}",
                self.shape_mask.dims()
            )));
        }
        if let Some(c) = &self.candidate {
            if c.dims() != size {
                return Err(Error::DimensionMismatch("candidate crop does not match box".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmVerdict {
    pub choice: Choice,
    pub rationale: String,
    pub raw: String,
}

/// Parse a judge response: the first line of the form `Choice: A|B`
/// (case-insensitive) decides; a `Reason:` line, if present, is the rationale,
/// otherwise every other non-empty line.
pub fn parse_verdict(text: &str) -> Result<VlmVerdict> {
    static CHOICE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    static REASON: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let choice_re = CHOICE.get_or_init(|| Regex::new(r"(?i)^\s*\**\s*choice\s*\**\s*:\s*\**\s*([ab])\b").unwrap());
    let reason_re = REASON.get_or_init(|| Regex::new(r"(?i)^\s*\**\s*reason\s*\**\s*:\s*(.*)$").unwrap());

    let mut choice = None;
    let mut reason = None;
    let mut others = Vec::new();
    for line in text.lines() {
        if choice.is_none() {
            if let Some(c) = choice_re.captures(line) {
                choice = Some(if c[1].eq_ignore_ascii_case("a") {
                    Choice::A
                } else {
                    Choice::B
                });
                continue;
            }
        }
        if reason.is_none() {
            if let Some(r) = reason_re.captures(line) {
                reason = Some(r[1].trim().to_string());
                continue;
            }
        }
        if !line.trim().is_empty() {
            others.push(line.trim());
        }
    }
    let choice = choice.ok_or_else(|| Error::UnparseableVerdict(text.to_string()))?;
    Ok(VlmVerdict {
        choice,
        rationale: reason.unwrap_or_else(|| others.join(" ")),
        raw: text.to_string(),
    })
}

pub trait Segmenter: Send + Sync {
    /// Single-channel mask of the cell inside `bbox`, sized like the box.
    fn segment(&self, image: &Raster, bbox: BBox) -> Result<Raster>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, image: &Raster, mask: Option<&Raster>) -> Result<EmbeddingBundle>;
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Raster>;
}

pub trait Judge: Send + Sync {
    fn judge(&self, image_a: &Raster, image_b: &Raster, prompt: &str) -> Result<VlmVerdict>;
}

/// The four services a run talks to.
#[derive(Clone)]
pub struct BackendSet {
    pub name: String,
    pub segmenter: Arc<dyn Segmenter>,
    pub embedder: Arc<dyn Embedder>,
    pub generator: Arc<dyn Generator>,
    pub judge: Arc<dyn Judge>,
}

impl BackendSet {
    pub fn reference(dim: usize) -> BackendSet {
        let r = Arc::new(ReferenceBackend::new(dim));
        BackendSet {
            name: "reference".into(),
            segmenter: r.clone(),
            embedder: r.clone(),
            generator: r.clone(),
            judge: r,
        }
    }

    pub fn live(config: HttpConfig) -> BackendSet {
        let h = Arc::new(HttpBackend::new(config));
        BackendSet {
            name: "live".into(),
            segmenter: h.clone(),
            embedder: h.clone(),
            generator: h.clone(),
            judge: h,
        }
    }
}

impl std::fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendSet")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}
