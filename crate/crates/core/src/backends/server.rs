//! Server-side request dispatch for the `v1` protocol over any [`BackendSet`].
//!
//! Transport-agnostic: hand it a path and a body, get back a status code and
//! a JSON body. Used to host the reference backends behind a real socket.

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{self, decode_raster, encode_raster, ErrorBody};
use super::BackendSet;
use crate::error::{Error, Result};

fn parse<T: DeserializeOwned>(body: &[u8]) -> std::result::Result<T, (u16, String)> {
    serde_json::from_slice(body).map_err(|e| (400, format!("malformed payload: {e}")))
}

fn reply<T: Serialize>(r: Result<T>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).expect("response serialises")),
        Err(e) => {
            let status = match e.root() {
                Error::BackendUnavailable(_) => 503,
                Error::GenerationRejected(_) => 422,
                Error::MalformedResponse(_)
                | Error::DimensionMismatch(_)
                | Error::RegionOutOfBounds { .. }
                | Error::InvalidArgument(_)
                | Error::EmptySelection
                | Error::EmptyMask
                | Error::Codec(_) => 400,
                _ => 500,
            };
            error_body(status, e.to_string())
        }
    }
}

pub fn error_body(status: u16, message: impl Into<String>) -> (u16, String) {
    let body = ErrorBody { error: message.into() };
    (status, serde_json::to_string(&body).expect("error serialises"))
}

/// Handle one `POST` to `path`.
pub fn dispatch(backends: &BackendSet, path: &str, body: &[u8]) -> (u16, String) {
    let handled = match path {
        protocol::SEGMENT => parse::<protocol::SegmentRequest>(body).map(|req| {
            reply((|| {
                let image = decode_raster(&req.image)?;
                let mask = backends.segmenter.segment(&image, req.bbox)?;
                Ok(protocol::SegmentResponse {
                    mask: encode_raster(&mask),
                })
            })())
        }),
        protocol::EMBED => parse::<protocol::EmbedRequest>(body).map(|req| {
            reply((|| {
                let image = decode_raster(&req.image)?;
                let mask = req.mask.as_deref().map(decode_raster).transpose()?;
                let bundle = backends.embedder.embed(&image, mask.as_ref())?;
                if bundle.global.len() != req.dim {
                    return Err(Error::InvalidArgument(format!(
                        "backend embeds to {} dims, {} requested",
                        bundle.global.len(),
                        req.dim
                    )));
                }
                Ok(protocol::EmbedResponse {
                    global: bundle.global,
                    tokens: bundle.tokens,
                })
            })())
        }),
        protocol::COMPOSE => parse::<protocol::ComposeRequest>(body).map(|req| {
            reply((|| {
                let request = req.to_request()?;
                let image = backends.generator.generate(&request)?;
                Ok(protocol::ComposeResponse {
                    image: encode_raster(&image),
                })
            })())
        }),
        protocol::JUDGE => parse::<protocol::JudgeRequest>(body).map(|req| {
            reply((|| {
                let a = decode_raster(&req.image_a)?;
                let b = decode_raster(&req.image_b)?;
                let verdict = backends.judge.judge(&a, &b, &req.prompt)?;
                Ok(protocol::JudgeResponse { text: verdict.raw })
            })())
        }),
        _ => Err((404, format!("no such endpoint {path}"))),
    };
    match handled {
        Ok(resp) => resp,
        Err((status, msg)) => error_body(status, msg),
    }
}
