use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::scene::{AtomicEdit, Prompt};

use super::wire::*;
use super::{ImageRecord, ToolBackend, ToolError, ToolService, ToolStats, VqaAnswer, VqaQuery, WIRE_VERSION};

fn status_of(e: &ToolError) -> StatusCode {
    match e {
        ToolError::NotFound(_) => StatusCode::NOT_FOUND,
        ToolError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ToolError::BadRequest(_) => StatusCode::BAD_REQUEST,
        ToolError::Transport(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(e: ToolError) -> Response {
    let body = ErrorResponse { v: WIRE_VERSION, error: ErrorBody { code: e.code().into(), message: e.to_string() } };
    (status_of(&e), Json(body)).into_response()
}

fn ok<T: Serialize>(body: T) -> Response {
    (StatusCode::OK, Json(body)).into_response()
}

fn parse<T: DeserializeOwned>(bytes: &[u8], version: impl Fn(&T) -> u32) -> Result<T, ToolError> {
    let req: T = serde_json::from_slice(bytes).map_err(|e| ToolError::BadRequest(e.to_string()))?;
    let v = version(&req);
    if v != WIRE_VERSION {
        return Err(ToolError::BadRequest(format!("unsupported protocol version {v}")));
    }
    Ok(req)
}

async fn generate(State(svc): State<Arc<ToolService>>, body: Bytes) -> Response {
    match parse::<GenerateRequest>(&body, |r| r.v).and_then(|r| svc.generate_text(&r.prompt, r.seed)) {
        Ok(image_id) => ok(ImageIdResponse { v: WIRE_VERSION, image_id }),
        Err(e) => error_response(e),
    }
}

async fn edit(State(svc): State<Arc<ToolService>>, body: Bytes) -> Response {
    match parse::<EditRequest>(&body, |r| r.v).and_then(|r| svc.edit(&r.image_id, &r.edit)) {
        Ok(image_id) => ok(ImageIdResponse { v: WIRE_VERSION, image_id }),
        Err(e) => error_response(e),
    }
}

async fn vqa(State(svc): State<Arc<ToolService>>, body: Bytes) -> Response {
    match parse::<VqaRequest>(&body, |r| r.v).and_then(|r| svc.vqa(&r.image_id, &r.query)) {
        Ok(answer) => ok(VqaResponse { v: WIRE_VERSION, answer }),
        Err(e) => error_response(e),
    }
}

async fn image(State(svc): State<Arc<ToolService>>, Path(id): Path<String>) -> Response {
    match svc.image(&id) {
        Ok(record) => ok(ImageResponse { v: WIRE_VERSION, record }),
        Err(e) => error_response(e),
    }
}

async fn stats(State(svc): State<Arc<ToolService>>) -> Response {
    match svc.stats() {
        Ok(stats) => ok(StatsResponse { v: WIRE_VERSION, stats }),
        Err(e) => error_response(e),
    }
}

fn router(svc: Arc<ToolService>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/edit", post(edit))
        .route("/vqa", post(vqa))
        .route("/image/{id}", get(image))
        .route("/stats", get(stats))
        .with_state(svc)
}

/// A running tool server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves `svc` over HTTP on `bind` (use port 0 for an ephemeral port) from
/// a background thread.
pub fn serve(svc: Arc<ToolService>, bind: &str) -> std::io::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("tool server: {e}");
                    return;
                }
            };
            let app = router(svc);
            let server = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = server.await {
                log::error!("tool server: {e}");
            }
        });
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Synchronous HTTP client for a tool server.
pub struct HttpToolClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpToolClient {
    pub fn new(base_url: &str) -> HttpToolClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpToolClient { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    fn finish<T: DeserializeOwned>(&self, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T, ToolError> {
        let mut resp = resp.map_err(|e| ToolError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| ToolError::Transport(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| ToolError::Transport(format!("bad response body: {e}")));
        }
        let err: ErrorResponse = serde_json::from_str(&text)
            .map_err(|_| ToolError::Transport(format!("HTTP {status} without error body")))?;
        Err(match err.error.code.as_str() {
            "not_found" => ToolError::NotFound(err.error.message),
            "validation" => ToolError::Validation(err.error.message),
            "bad_request" => ToolError::BadRequest(err.error.message),
            _ => ToolError::Transport(err.error.message),
        })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ToolError> {
        let payload = serde_json::to_vec(body).map_err(|e| ToolError::Transport(e.to_string()))?;
        let resp = self
            .agent
            .post(format!("{}{}", self.base, path))
            .header("content-type", "application/json")
            .send(&payload[..]);
        self.finish(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ToolError> {
        let resp = self.agent.get(format!("{}{}", self.base, path)).call();
        self.finish(resp)
    }
}

impl ToolBackend for HttpToolClient {
    fn generate(&self, prompt: &Prompt, seed: u64) -> Result<String, ToolError> {
        let r: ImageIdResponse =
            self.post("/generate", &GenerateRequest { v: WIRE_VERSION, prompt: prompt.text.clone(), seed })?;
        Ok(r.image_id)
    }

    fn edit(&self, image_id: &str, edit: &AtomicEdit) -> Result<String, ToolError> {
        let req = EditRequest { v: WIRE_VERSION, image_id: image_id.to_string(), edit: edit.clone() };
        let r: ImageIdResponse = self.post("/edit", &req)?;
        Ok(r.image_id)
    }

    fn vqa(&self, image_id: &str, query: &VqaQuery) -> Result<VqaAnswer, ToolError> {
        let req = VqaRequest { v: WIRE_VERSION, image_id: image_id.to_string(), query: query.clone() };
        let r: VqaResponse = self.post("/vqa", &req)?;
        Ok(r.answer)
    }

    fn image(&self, image_id: &str) -> Result<ImageRecord, ToolError> {
        let r: ImageResponse = self.get(&format!("/image/{image_id}"))?;
        Ok(r.record)
    }

    fn stats(&self) -> Result<ToolStats, ToolError> {
        let r: StatsResponse = self.get("/stats")?;
        Ok(r.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vocabulary;
    use crate::tools::NoiseProfile;

    #[test]
    fn wire_matches_in_process() {
        let v = Vocabulary::default();
        let profile = NoiseProfile { vqa_error_rate: 0.2, seed: 4, ..NoiseProfile::default() };
        let local = ToolService::new(&v, profile.clone());
        let server = serve(Arc::new(ToolService::new(&v, profile)), "127.0.0.1:0").unwrap();
        let remote = HttpToolClient::new(&server.url());
        let p = Prompt::parse("a red book and two yellow vases", &v).unwrap();
        let q = VqaQuery::CountOf { category: "vase".into(), color: None, size: None };
        for seed in 0..10 {
            let a = local.generate(&p, seed).unwrap();
            let b = remote.generate(&p, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(local.vqa(&a, &q).unwrap(), remote.vqa(&b, &q).unwrap());
            assert_eq!(local.image(&a).unwrap(), remote.image(&b).unwrap());
        }
        assert_eq!(remote.stats().unwrap().imggen_calls, 10);
    }

    #[test]
    fn malformed_body_is_rejected_without_counting() {
        let v = Vocabulary::default();
        let server = serve(Arc::new(ToolService::new(&v, NoiseProfile::perfect(0))), "127.0.0.1:0").unwrap();
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let mut resp = agent
            .post(format!("{}/edit", server.url()))
            .header("content-type", "application/json")
            .send(&b"{\"v\":1,\"image_id\":"[..])
            .unwrap();
        assert_eq!(resp.status(), 400);
        let body: ErrorResponse = serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body.error.code, "bad_request");
        let client = HttpToolClient::new(&server.url());
        assert_eq!(client.stats().unwrap().edit_calls, 0);
        assert!(matches!(client.image("img-404"), Err(ToolError::NotFound(_))));
        let bad = VqaQuery::GroupPresent { category: "dragon".into() };
        assert!(matches!(client.vqa("img-1", &bad), Err(ToolError::Validation(_))));
    }
}
