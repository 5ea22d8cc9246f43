//! Protocol conformance checks against a live `v1` endpoint: payload
//! schemas, unit-norm embeddings, output dimensions and error envelopes.

use std::time::Duration;

use serde::Serialize;

use super::protocol::{self, ErrorBody};
use super::reference::ellipse_mask;
use super::{Embedder, GenerationRequest, Generator, HttpBackend, HttpConfig, Judge, Segmenter, StyleVariant};
use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, r: Result<String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name: name.into(),
            passed: true,
            detail,
        },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fixture_image() -> Raster {
    Raster::from_fn(48, 32, 3, |x, y, c| ((x * 5 + y * 3 + c as u32 * 40) % 256) as u8)
}

fn error_envelope(config: &HttpConfig, path: &str) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
        .http_status_as_error(false)
        .build()
        .into();
    let url = format!("{}{}", config.endpoint.trim_end_matches('/'), path);
    let mut req = agent.post(&url).header("Content-Type", "application/json");
    if let Some(t) = &config.token {
        req = req.header("Authorization", format!("Bearer {t}"));
    }
    let mut resp = req
        .send(&b"{\"image\": 42"[..])
        .map_err(|e| Error::BackendUnavailable(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::MalformedResponse(e.to_string()))?;
    if (200..300).contains(&status) {
        return Err(Error::MalformedResponse(format!(
            "malformed payload accepted with {status}"
        )));
    }
    serde_json::from_str::<ErrorBody>(&text)
        .map_err(|e| Error::MalformedResponse(format!("error body is not {{\"error\": ...}}: {e}")))?;
    Ok(format!("status {status} with error envelope"))
}

/// Run every check; one result per check, in a fixed order.
pub fn run(config: &HttpConfig) -> Vec<CheckResult> {
    let mut cfg = config.clone();
    cfg.retries = cfg.retries.min(1);
    let client = HttpBackend::new(cfg.clone());
    let image = fixture_image();
    let bbox = BBox::new(6, 4, 20, 14);
    let mut out = Vec::new();

    out.push(check(
        "segment.mask_matches_bbox",
        client
            .segment(&image, bbox)
            .map(|m| format!("mask {}x{}, {} on", m.width(), m.height(), m.count_on())),
    ));
    out.push(check(
        "embed.unit_norm_global",
        client.embed(&image, None).map(|b| {
            let norm = b.global.iter().map(|x| x * x).sum::<f64>().sqrt();
            format!("dim {}, norm {norm:.9}", b.global.len())
        }),
    ));
    let mask = ellipse_mask(bbox.w as u32, bbox.h as u32);
    out.push(check(
        "embed.with_mask",
        client
            .embed(&image.crop(bbox).unwrap(), Some(&mask))
            .map(|b| format!("{} tokens", b.tokens.map_or(0, |t| t.len()))),
    ));
    let request = GenerationRequest {
        background: image.clone(),
        conditioning: image.clone(),
        shape_mask: mask,
        bbox,
        id_tokens: vec![vec![1.0; 4]],
        seed: 1,
        variant: StyleVariant::BackgroundStyle,
        candidate: Some(Raster::filled(bbox.w as u32, bbox.h as u32, 3, 90)),
    };
    out.push(check(
        "compose.output_matches_background",
        client
            .generate(&request)
            .map(|r| format!("image {}x{}", r.width(), r.height())),
    ));
    out.push(check(
        "judge.parseable_verdict",
        client
            .judge(&image, &image, "Reply with `Choice: A` or `Choice: B` and a reason.")
            .map(|v| format!("choice {:?}", v.choice)),
    ));
    for path in [protocol::SEGMENT, protocol::EMBED, protocol::COMPOSE, protocol::JUDGE] {
        out.push(check(
            &format!("errors.envelope{}", path.replace('/', ".")),
            error_envelope(&cfg, path),
        ));
    }
    out
}
