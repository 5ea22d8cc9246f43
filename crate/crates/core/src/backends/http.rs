//! Blocking HTTP client for live `v1` services.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::protocol::{self, decode_raster, encode_raster};
use super::{parse_verdict, Embedder, EmbeddingBundle, GenerationRequest, Generator, Judge, Segmenter, VlmVerdict};
use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

const MAX_BODY: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    /// Per-service overrides of `endpoint`.
    pub segment_endpoint: Option<String>,
    pub embed_endpoint: Option<String>,
    pub compose_endpoint: Option<String>,
    pub judge_endpoint: Option<String>,
    pub timeout_secs: f64,
    /// Extra attempts after the first for retryable failures.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Concurrent in-flight requests per client.
    pub max_connections: usize,
    pub embed_dim: usize,
    #[serde(skip)]
    pub token: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://127.0.0.1:8000".into(),
            segment_endpoint: None,
            embed_endpoint: None,
            compose_endpoint: None,
            judge_endpoint: None,
            timeout_secs: 120.0,
            retries: 3,
            backoff_ms: 250,
            max_connections: 8,
            embed_dim: super::DEFAULT_EMBED_DIM,
            token: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

enum Attempt<T> {
    Done(Result<T>),
    Retry(Error),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Limiter::new(config.max_connections);
        HttpBackend { config, agent, limiter }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        let base = match path {
            protocol::SEGMENT => self.config.segment_endpoint.as_ref(),
            protocol::EMBED => self.config.embed_endpoint.as_ref(),
            protocol::COMPOSE => self.config.compose_endpoint.as_ref(),
            protocol::JUDGE => self.config.judge_endpoint.as_ref(),
            _ => None,
        }
        .unwrap_or(&self.config.endpoint);
        format!("{}{}", base.trim_end_matches('/'), path)
    }

    fn attempt<T: DeserializeOwned>(&self, url: &str, body: &[u8]) -> Attempt<T> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(Error::BackendUnavailable(format!("{url}: {e}"))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(MAX_BODY).read_to_string() {
            Ok(t) => t,
            // a 2xx whose body cannot be read is not retried
            Err(e) if (200..300).contains(&status) => {
                return Attempt::Done(Err(Error::MalformedResponse(format!("{url}: {e}"))))
            }
            Err(e) => return Attempt::Retry(Error::BackendUnavailable(format!("{url}: {e}"))),
        };
        if (200..300).contains(&status) {
            return Attempt::Done(
                serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(format!("{url}: {e}"))),
            );
        }
        let message = serde_json::from_str::<protocol::ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        let err = if status == 503 {
            Error::BackendUnavailable(format!("{url}: {message}"))
        } else {
            Error::BackendStatus { status, message }
        };
        if status >= 500 || status == 429 {
            Attempt::Retry(err)
        } else {
            Attempt::Done(Err(err))
        }
    }

    /// POST with retries on transport failures, 5xx and 429. Never retries
    /// after a 2xx.
    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = self.url(path);
        let bytes = serde_json::to_vec(body).expect("request serialises");
        let _slot = self.limiter.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&url, &bytes) {
                Attempt::Done(r) => return r,
                Attempt::Retry(e) => {
                    if attempt >= self.config.retries {
                        return Err(e);
                    }
                    log::warn!("retrying {url} after error: {e}");
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_secs(10));
                    attempt += 1;
                }
            }
        }
    }
}

impl Segmenter for HttpBackend {
    fn segment(&self, image: &Raster, bbox: BBox) -> Result<Raster> {
        bbox.check_inside(image.width(), image.height())?;
        let resp: protocol::SegmentResponse = self.post(
            protocol::SEGMENT,
            &protocol::SegmentRequest {
                image: encode_raster(image),
                bbox,
            },
        )?;
        let mask = decode_raster(&resp.mask)?;
        if mask.dims() != (bbox.w as u32, bbox.h as u32) || mask.channels() != 1 {
            return Err(Error::MalformedResponse(format!(
                "mask {:?}x{} does not match box {}x{}",
                mask.dims(),
                mask.channels(),
                bbox.w,
                bbox.h
            )));
        }
        if mask.count_on() == 0 {
            return Err(Error::MalformedResponse("segmentation mask is empty".into()));
        }
        Ok(mask)
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, image: &Raster, mask: Option<&Raster>) -> Result<EmbeddingBundle> {
        let resp: protocol::EmbedResponse = self.post(
            protocol::EMBED,
            &protocol::EmbedRequest {
                image: encode_raster(image),
                mask: mask.map(encode_raster),
                dim: self.config.embed_dim,
            },
        )?;
        let bundle = EmbeddingBundle {
            global: resp.global,
            tokens: resp.tokens,
        };
        bundle.validate(Some(self.config.embed_dim))?;
        Ok(bundle)
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<Raster> {
        request.validate()?;
        let wire = protocol::ComposeRequest::from_request(request);
        let resp: protocol::ComposeResponse = self.post(protocol::COMPOSE, &wire).map_err(|e| match e {
            Error::BackendStatus { message, .. } => Error::GenerationRejected(message),
            other => other,
        })?;
        let image = decode_raster(&resp.image)?;
        if image.dims() != request.background.dims() {
            return Err(Error::MalformedResponse(format!(
                "composed image {:?} does not match background {:?}",
                image.dims(),
                request.background.dims()
            )));
        }
        Ok(image.to_rgb())
    }
}

impl Judge for HttpBackend {
    fn judge(&self, image_a: &Raster, image_b: &Raster, prompt: &str) -> Result<VlmVerdict> {
        if image_a.dims() != image_b.dims() {
            return Err(Error::DimensionMismatch("judged images differ in size".into()));
        }
        let resp: protocol::JudgeResponse = self.post(
            protocol::JUDGE,
            &protocol::JudgeRequest {
                image_a: encode_raster(image_a),
                image_b: encode_raster(image_b),
                prompt: prompt.to_string(),
            },
        )?;
        parse_verdict(&resp.text)
    }
}
