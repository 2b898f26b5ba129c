//! Serves a [`BackendSuite`] over the HTTP protocol.
//!
//! Used to expose the mocks to external tools and to test the client
//! end-to-end. Each configured role answers on its path; `GET /health`
//! lists the roles and, when an embedder is present, its text dimension.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::*;
use super::*;

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server is shut down from another thread.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            self.stop_workers();
        }
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves on `threads` workers.
pub fn serve(suite: BackendSuite, addr: &str, threads: usize) -> std::io::Result<ServerHandle> {
    let server = Arc::new(Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let suite = Arc::new(suite);
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..threads.max(1))
        .map(|_| {
            let (server, suite, stop) = (server.clone(), suite.clone(), stop.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv() {
                        Ok(req) => handle(&suite, req),
                        Err(_) => break,
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        server,
        addr,
        stop,
        workers,
    })
}

type Reply = Result<serde_json::Value, (u16, String)>;

fn json<T: Serialize>(v: T) -> Reply {
    serde_json::to_value(v).map_err(|e| (500, e.to_string()))
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, (u16, String)> {
    serde_json::from_str(body).map_err(|e| (400, format!("invalid request body: {e}")))
}

fn image_arg(payload: &str) -> Result<RgbImage, (u16, String)> {
    decode_image(payload).map_err(|e| (400, e.to_string()))
}

fn backend(e: BackendError) -> (u16, String) {
    match e {
        BackendError::Config(_) => (503, e.to_string()),
        // deterministic refusals; retrying cannot help
        BackendError::Failed { .. } => (422, e.to_string()),
        _ => (502, e.to_string()),
    }
}

fn not_configured(role: Role) -> (u16, String) {
    (404, format!("role {role} is not served here"))
}

fn route(suite: &BackendSuite, method: &Method, path: &str, body: &str) -> Reply {
    match (method, path) {
        (Method::Get, "/health") => {
            let dim = match &suite.embedder {
                Some(e) => Some(e.embed_text("health probe").map_err(backend)?.len()),
                None => None,
            };
            json(HealthResponse {
                status: "ok".into(),
                dim,
                roles: suite.configured().iter().map(|r| r.to_string()).collect(),
            })
        }
        (Method::Post, "/analyze") => {
            let a = suite.analyzer.as_ref().ok_or_else(|| not_configured(Role::Analyzer))?;
            let req: AnalyzeRequest = parse(body)?;
            json(a.analyze(&image_arg(&req.image)?, req.id.as_deref()).map_err(backend)?)
        }
        (Method::Post, "/generate") => {
            let g = suite.generator.as_ref().ok_or_else(|| not_configured(Role::Generator))?;
            let req: GenerateRequest = parse(body)?;
            let img = g
                .generate(&req.prompt, req.width, req.height, req.seed, req.id.as_deref())
                .map_err(backend)?;
            json(ImageResponse { image: encode_image(&img) })
        }
        (Method::Post, "/inpaint") => {
            let i = suite.inpainter.as_ref().ok_or_else(|| not_configured(Role::Inpainter))?;
            let req: InpaintRequest = parse(body)?;
            let mask = req.mask.decode().map_err(|e| (400, e.to_string()))?;
            let img = i
                .inpaint(&image_arg(&req.image)?, &mask, &req.explanation, req.id.as_deref())
                .map_err(backend)?;
            json(ImageResponse { image: encode_image(&img) })
        }
        (Method::Post, "/revise") => {
            let r = suite.reviser.as_ref().ok_or_else(|| not_configured(Role::Reviser))?;
            let req: ReviseRequest = parse(body)?;
            json(ReviseResponse {
                prompt: r.revise(&req.prompt, &req.memory).map_err(backend)?,
            })
        }
        (Method::Post, "/caption") => {
            let c = suite.captioner.as_ref().ok_or_else(|| not_configured(Role::Captioner))?;
            let req: CaptionRequest = parse(body)?;
            let text = c
                .caption(&image_arg(&req.image)?, req.instruction.as_deref(), req.id.as_deref())
                .map_err(backend)?;
            json(CaptionResponse { text })
        }
        (Method::Post, "/embed") => {
            let e = suite.embedder.as_ref().ok_or_else(|| not_configured(Role::Embedder))?;
            let req: EmbedRequest = parse(body)?;
            let vector = match (req.text, req.image) {
                (Some(t), None) => e.embed_text(&t),
                (None, Some(i)) => e.embed_image(&image_arg(&i)?),
                _ => return Err((400, "exactly one of `text` or `image` is required".into())),
            }
            .map_err(backend)?;
            json(EmbedResponse {
                dim: vector.len(),
                vector,
                model_id: "forgeline-hash-embedder".into(),
            })
        }
        (Method::Post, "/score") => {
            let s = suite.scorer.as_ref().ok_or_else(|| not_configured(Role::Scorer))?;
            let req: ScoreRequest = parse(body)?;
            let score = s
                .score(&image_arg(&req.image)?, req.prompt.as_deref(), req.id.as_deref())
                .map_err(backend)?;
            json(ScoreResponse { score })
        }
        _ => Err((404, format!("no route for {method} {path}"))),
    }
}

fn handle(suite: &BackendSuite, mut req: Request) {
    let mut body = String::new();
    let reply = match req.as_reader().read_to_string(&mut body) {
        Ok(_) => route(suite, req.method(), req.url(), &body),
        Err(e) => Err((400, e.to_string())),
    };
    let (status, value) = match reply {
        Ok(v) => (200, v),
        Err((code, error)) => (code, serde_json::to_value(ErrorResponse { error }).unwrap()),
    };
    let header = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
    let resp = Response::from_string(value.to_string())
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = req.respond(resp) {
        log::debug!("failed to send response: {e}");
    }
}
