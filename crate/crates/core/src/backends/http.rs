//! Blocking HTTP client for the backend protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, *};
use super::*;

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
pub struct InFlightLimit {
    free: Mutex<usize>,
    cv: Condvar,
}

impl InFlightLimit {
    pub fn new(limit: usize) -> Self {
        Self {
            free: Mutex::new(limit.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.free.lock().unwrap() += 1;
        self.limit.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before retry `i` is `backoff * 2^i`.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// An HTTP endpoint for one role. Every call is treated as idempotent and
/// retried on transport failures and 5xx answers; 4xx answers and malformed
/// bodies fail immediately as protocol errors.
#[derive(Debug)]
pub struct HttpBackend {
    role: Role,
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    limit: InFlightLimit,
}

enum Attempt {
    Retryable(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(role: Role, base_url: &str, timeout: Duration, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            role,
            base_url: base_url.trim_end_matches('/').to_owned(),
            agent,
            retry,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn endpoint(&self) -> String {
        format!("{} ({}{})", self.role, self.base_url, self.role.path())
    }

    pub fn health(&self) -> Result<HealthResponse, BackendError> {
        let url = format!("{}/health", self.base_url);
        let resp = self.agent.get(&url).call().map_err(|e| BackendError::Transport {
            endpoint: format!("{}/health", self.base_url),
            message: e.to_string(),
        })?;
        resp.into_json().map_err(|e| BackendError::protocol(&url, e.to_string()))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, self.role.path());
        let body = serde_json::to_value(body).map_err(|e| BackendError::protocol(self.endpoint(), e.to_string()))?;
        let _permit = self.limit.acquire();
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                let delay = self.retry.backoff * 2u32.pow(attempt - 1);
                log::debug!("{}: retry {attempt} after {delay:?}: {last}", self.endpoint());
                std::thread::sleep(delay);
            }
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => last = msg,
            }
        }
        Err(BackendError::Transport {
            endpoint: self.endpoint(),
            message: format!("{} attempt(s) failed; last: {last}", self.retry.retries + 1),
        })
    }

    fn attempt<Resp: DeserializeOwned>(&self, url: &str, body: &serde_json::Value) -> Result<Resp, Attempt> {
        match self.agent.post(url).send_json(body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))?;
                serde_json::from_str(&text)
                    .map_err(|e| Attempt::Fatal(BackendError::protocol(self.endpoint(), format!("bad response body: {e}"))))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", detail.trim());
                match code {
                    500.. => Err(Attempt::Retryable(msg)),
                    422 => Err(Attempt::Fatal(BackendError::failed(self.endpoint(), msg))),
                    _ => Err(Attempt::Fatal(BackendError::protocol(self.endpoint(), msg))),
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Retryable(t.to_string())),
        }
    }

    fn decode_sized(&self, payload: &str, dims: (u32, u32)) -> Result<RgbImage, BackendError> {
        let img = wire::decode_image(payload).map_err(|e| BackendError::protocol(self.endpoint(), e.to_string()))?;
        if img.dimensions() != dims {
            return Err(BackendError::protocol(
                self.endpoint(),
                format!("returned a {:?} image, expected {dims:?}", img.dimensions()),
            ));
        }
        Ok(img)
    }
}

impl Analyzer for HttpBackend {
    fn analyze(&self, image: &RgbImage, id: Option<&str>) -> Result<AnalyzerReport, BackendError> {
        let report: AnalyzerReport = self.post(&AnalyzeRequest {
            image: encode_image(image),
            id: id.map(str::to_owned),
        })?;
        report
            .validate(image.width(), image.height())
            .map_err(|e| BackendError::protocol(self.endpoint(), e))?;
        Ok(report)
    }
}

impl Generator for HttpBackend {
    fn generate(&self, prompt: &str, width: u32, height: u32, seed: u64, id: Option<&str>) -> Result<RgbImage, BackendError> {
        let resp: ImageResponse = self.post(&GenerateRequest {
            prompt: prompt.to_owned(),
            width,
            height,
            seed,
            id: id.map(str::to_owned),
        })?;
        self.decode_sized(&resp.image, (width, height))
    }
}

impl Inpainter for HttpBackend {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, explanation: &str, id: Option<&str>) -> Result<RgbImage, BackendError> {
        let resp: ImageResponse = self.post(&InpaintRequest {
            image: encode_image(image),
            mask: mask.to_rle(),
            explanation: explanation.to_owned(),
            id: id.map(str::to_owned),
        })?;
        self.decode_sized(&resp.image, image.dimensions())
    }
}

impl Reviser for HttpBackend {
    fn revise(&self, prompt: &str, memory: &[String]) -> Result<String, BackendError> {
        let resp: ReviseResponse = self.post(&ReviseRequest {
            prompt: prompt.to_owned(),
            memory: memory.to_vec(),
        })?;
        Ok(resp.prompt)
    }
}

impl Captioner for HttpBackend {
    fn caption(&self, image: &RgbImage, instruction: Option<&str>, id: Option<&str>) -> Result<String, BackendError> {
        let resp: CaptionResponse = self.post(&CaptionRequest {
            image: encode_image(image),
            instruction: instruction.map(str::to_owned),
            id: id.map(str::to_owned),
        })?;
        Ok(resp.text)
    }
}

impl HttpBackend {
    fn embed(&self, req: EmbedRequest) -> Result<Vec<f64>, BackendError> {
        let resp: EmbedResponse = self.post(&req)?;
        if resp.vector.len() != resp.dim {
            return Err(BackendError::protocol(
                self.endpoint(),
                format!("vector has {} values but dim is {}", resp.vector.len(), resp.dim),
            ));
        }
        Ok(resp.vector)
    }
}

impl Embedder for HttpBackend {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        self.embed(EmbedRequest {
            text: Some(text.to_owned()),
            image: None,
        })
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, BackendError> {
        self.embed(EmbedRequest {
            text: None,
            image: Some(encode_image(image)),
        })
    }
}

impl Scorer for HttpBackend {
    fn score(&self, image: &RgbImage, prompt: Option<&str>, id: Option<&str>) -> Result<f64, BackendError> {
        let resp: ScoreResponse = self.post(&ScoreRequest {
            image: encode_image(image),
            prompt: prompt.map(str::to_owned),
            id: id.map(str::to_owned),
        })?;
        if !resp.score.is_finite() {
            return Err(BackendError::protocol(self.endpoint(), "non-finite score"));
        }
        Ok(resp.score)
    }
}
