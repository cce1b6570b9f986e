//! Scripted OpenAI-compatible endpoint on a random local port.

use std::collections::VecDeque;
use std::net::TcpListener as StdListener;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Script {
    replies: Arc<Mutex<VecDeque<String>>>,
    last: Arc<Mutex<Option<String>>>,
    requests: Arc<Mutex<Vec<Value>>>,
}

pub struct MockLlm {
    /// Base URL including the `/v1` prefix.
    pub base_url: String,
    script: Script,
}

impl MockLlm {
    /// Serves `replies` in order; the last one repeats once the script runs out.
    pub fn start<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> MockLlm {
        let script = Script {
            replies: Arc::new(Mutex::new(replies.into_iter().map(Into::into).collect())),
            ..Default::default()
        };
        let listener = StdListener::bind("127.0.0.1:0").expect("bind mock port");
        listener.set_nonblocking(true).expect("nonblocking");
        let addr = listener.local_addr().expect("local addr");
        let app = Router::new()
            .route("/v1/chat/completions", post(complete))
            .route("/v1/models", get(models))
            .with_state(script.clone());
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("mock runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
                axum::serve(listener, app).await.expect("mock serve");
            });
        });
        MockLlm {
            base_url: format!("http://{addr}/v1"),
            script,
        }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.script.requests.lock().unwrap().clone()
    }
}

/// A URL nothing listens on.
pub fn unreachable_url() -> String {
    let l = StdListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/v1")
}

async fn complete(State(s): State<Script>, Json(body): Json<Value>) -> Json<Value> {
    s.requests.lock().unwrap().push(body);
    let next = s.replies.lock().unwrap().pop_front();
    let reply = match next {
        Some(r) => {
            *s.last.lock().unwrap() = Some(r.clone());
            r
        }
        None => s.last.lock().unwrap().clone().unwrap_or_default(),
    };
    Json(json!({
        "id": "cmpl-mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}]
    }))
}

async fn models() -> Json<Value> {
    Json(json!({"object": "list", "data": [{"id": "mock"}]}))
}
