//! `v1` wire format: JSON bodies with base64-encoded PNG rasters.
//!
//! ```text
//! POST /v1/segment  {"image", "bbox": [x,y,w,h]}                 -> {"mask"}
//! POST /v1/embed    {"image", "mask": b64|null, "dim"}           -> {"global", "tokens"}
//! POST /v1/compose  {"background", "conditioning", "shape_mask",
//!                    "bbox", "id_tokens", "seed", "variant"}      -> {"image"}
//! POST /v1/judge    {"image_a", "image_b", "prompt"}             -> {"text"}
//! errors: non-2xx with {"error": "..."}
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GenerationRequest, StyleVariant};
use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

pub const VERSION: &str = "v1";
pub const SEGMENT: &str = "/v1/segment";
pub const EMBED: &str = "/v1/embed";
pub const COMPOSE: &str = "/v1/compose";
pub const JUDGE: &str = "/v1/judge";

pub fn encode_raster(r: &Raster) -> String {
    STANDARD.encode(r.encode_png())
}

pub fn decode_raster(b64: &str) -> Result<Raster> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::MalformedResponse(format!("bad base64: {e}")))?;
    Raster::decode_png(&bytes).map_err(|e| Error::MalformedResponse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub image: String,
    pub mask: Option<String>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub global: Vec<f64>,
    #[serde(default)]
    pub tokens: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub background: String,
    pub conditioning: String,
    pub shape_mask: String,
    pub bbox: BBox,
    pub id_tokens: Vec<Vec<f64>>,
    pub seed: u64,
    pub variant: StyleVariant,
    /// Extension field read only by the reference generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub image_a: String,
    pub image_b: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl ComposeRequest {
    pub fn from_request(req: &GenerationRequest) -> ComposeRequest {
        ComposeRequest {
            background: encode_raster(&req.background),
            conditioning: encode_raster(&req.conditioning),
            shape_mask: encode_raster(&req.shape_mask),
            bbox: req.bbox,
            id_tokens: req.id_tokens.clone(),
            seed: req.seed,
            variant: req.variant,
            candidate: req.candidate.as_ref().map(encode_raster),
        }
    }

    pub fn to_request(&self) -> Result<GenerationRequest> {
        Ok(GenerationRequest {
            background: decode_raster(&self.background)?,
            conditioning: decode_raster(&self.conditioning)?,
            shape_mask: decode_raster(&self.shape_mask)?,
            bbox: self.bbox,
            id_tokens: self.id_tokens.clone(),
            seed: self.seed,
            variant: self.variant,
            candidate: self.candidate.as_deref().map(decode_raster).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn small() -> Raster {
        Raster::from_fn(4, 3, 3, |x, y, c| (x * 60 + y * 10 + c as u32) as u8)
    }

    fn fixtures() -> Vec<(&'static str, Value)> {
        let img = encode_raster(&small());
        let mask = encode_raster(&Raster::filled(2, 2, 1, 255));
        vec![
            ("segment", json!({"image": img, "bbox": [1, 0, 2, 2]})),
            ("embed", json!({"image": img, "mask": null, "dim": 768})),
            ("embed", json!({"image": img, "mask": mask, "dim": 16})),
            (
                "compose",
                json!({"background": img, "conditioning": img, "shape_mask": mask, "bbox": [1, 1, 2, 2],
                       "id_tokens": [[0.5, 0.25]], "seed": 7, "variant": "background_style"}),
            ),
            (
                "judge",
                json!({"image_a": img, "image_b": img, "prompt": "Pick one. Choice: A or B"}),
            ),
            (
                "embed_response",
                json!({"global": [0.6, 0.8], "tokens": [[1.0, 0.0], [0.0, 1.0]]}),
            ),
            ("error", json!({"error": "model loading"})),
        ]
    }

    fn round_trip<T: Serialize + for<'de> Deserialize<'de>>(v: &Value) -> Value {
        let typed: T = serde_json::from_value(v.clone()).unwrap();
        serde_json::to_value(typed).unwrap()
    }

    #[test]
    fn codec_round_trips_fixture_payloads() {
        for (kind, v) in fixtures() {
            let back = match kind {
                "segment" => round_trip::<SegmentRequest>(&v),
                "embed" => round_trip::<EmbedRequest>(&v),
                "compose" => round_trip::<ComposeRequest>(&v),
                "judge" => round_trip::<JudgeRequest>(&v),
                "embed_response" => round_trip::<EmbedResponse>(&v),
                "error" => round_trip::<ErrorBody>(&v),
                _ => unreachable!(),
            };
            assert_eq!(back, v, "{kind}");
        }
    }

    #[test]
    fn raster_payload_round_trips() {
        let r = small();
        let b64 = encode_raster(&r);
        assert_eq!(decode_raster(&b64).unwrap(), r);
        assert_eq!(encode_raster(&decode_raster(&b64).unwrap()), b64);
        assert!(matches!(decode_raster("!!!"), Err(Error::MalformedResponse(_))));
    }

    #[test]
    fn compose_request_conversion() {
        let req = GenerationRequest {
            background: small(),
            conditioning: small(),
            shape_mask: Raster::filled(2, 2, 1, 255),
            bbox: BBox::new(1, 1, 2, 2),
            id_tokens: vec![vec![1.0]],
            seed: 3,
            variant: StyleVariant::SelfStyle,
            candidate: None,
        };
        let wire = ComposeRequest::from_request(&req);
        let v = serde_json::to_value(&wire).unwrap();
        assert_eq!(v["variant"], "self_style");
        assert!(v.get("candidate").is_none());
        assert_eq!(wire.to_request().unwrap(), req);
    }
}
