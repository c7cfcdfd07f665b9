use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use ragkit_core::embedding::{
    EmbedError, EmbeddingProvider, HttpEmbeddingConfig, HttpEmbeddingProvider,
};
use ragkit_core::generation::{
    build_prompt, ChatProvider, GenerationError, HttpChatConfig, HttpChatProvider,
};

struct Reply {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

impl Reply {
    fn json(value: Value) -> Self {
        Reply {
            status: 200,
            headers: Vec::new(),
            body: value.to_string(),
        }
    }

    fn status(status: u16, body: &str) -> Self {
        Reply {
            status,
            headers: Vec::new(),
            body: body.to_string(),
        }
    }
}

type Handler = dyn Fn(usize, &Value) -> Reply + Send + Sync;

/// Local HTTP server answering each request through `handler`, which gets the
/// request number and parsed JSON body. Request bodies are recorded.
struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

impl MockServer {
    fn start(handler: impl Fn(usize, &Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (handler, log) = (Arc::clone(&handler), Arc::clone(&log));
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        MockServer { url, requests }
    }

    fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let n = {
        let mut log = log.lock().unwrap();
        log.push(body.clone());
        log.len() - 1
    };
    let reply = handler(n, &body);
    let mut head = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    let mut stream = stream;
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.body.as_bytes());
}

/// Vector whose first component is the input's length, so responses can be
/// matched back to inputs.
fn fake_embedding(text: &str) -> Vec<f64> {
    vec![text.len() as f64, 1.0, 0.0, 0.5]
}

fn embedding_reply(body: &Value, reverse: bool) -> Reply {
    let inputs: Vec<&str> = body["input"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": fake_embedding(t)}))
        .collect();
    if reverse {
        data.reverse();
    }
    Reply::json(json!({ "data": data }))
}

fn embed_config(url: &str) -> HttpEmbeddingConfig {
    HttpEmbeddingConfig {
        backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        ..HttpEmbeddingConfig::new(url, "mock-embed", 4)
    }
}

fn chat_config(url: &str) -> HttpChatConfig {
    HttpChatConfig {
        backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        ..HttpChatConfig::new(url, "mock-chat")
    }
}

fn closed_port_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}

#[test]
fn batches_keep_input_order() {
    let server = MockServer::start(|_, body| embedding_reply(body, true));
    let provider = HttpEmbeddingProvider::new(HttpEmbeddingConfig {
        batch_size: 2,
        max_in_flight: 2,
        ..embed_config(&server.url)
    })
    .unwrap();
    let texts = ["a", "bb", "ccc", "dddd", "eeeee"];
    let vectors = provider.embed_batch(&texts).unwrap();
    for (t, v) in texts.iter().zip(&vectors) {
        let want =
            ragkit_core::embedding::EmbeddingVector::from_raw(&fake_embedding(t), "x").unwrap();
        assert_eq!(v.values(), want.values(), "{t}");
    }
    let requests = server.requests();
    assert_eq!(requests.len(), 3);
    assert!(requests
        .iter()
        .all(|r| r["model"] == "mock-embed" && r["input"].as_array().unwrap().len() <= 2));
    assert_eq!(provider.provider_id(), "http:mock-embed");
}

#[test]
fn transient_failure_is_retried() {
    let server = MockServer::start(|n, body| {
        if n == 0 {
            Reply::status(503, "busy")
        } else {
            embedding_reply(body, false)
        }
    });
    let provider = HttpEmbeddingProvider::new(embed_config(&server.url)).unwrap();
    provider.embed("hello").unwrap();
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn retries_exhaust_into_provider_unavailable() {
    let server = MockServer::start(|_, _| Reply {
        status: 429,
        headers: vec![("Retry-After", "0".into())],
        body: String::new(),
    });
    let provider = HttpEmbeddingProvider::new(HttpEmbeddingConfig {
        max_retries: 2,
        ..embed_config(&server.url)
    })
    .unwrap();
    match provider.embed("hello") {
        Err(EmbedError::ProviderUnavailable {
            attempts,
            retry_after_ms,
            ..
        }) => {
            assert_eq!(attempts, 3);
            assert_eq!(retry_after_ms, Some(0));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_error_is_not_retried() {
    let server = MockServer::start(|_, _| Reply::status(400, "bad"));
    let provider = HttpEmbeddingProvider::new(embed_config(&server.url)).unwrap();
    assert!(matches!(
        provider.embed("hello"),
        Err(EmbedError::ProviderUnavailable { attempts: 1, .. })
    ));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn wrong_dimension_and_truncation() {
    let server = MockServer::start(|n, _| {
        if n == 0 {
            Reply::json(json!({"data": [{"embedding": [1.0, 2.0]}]}))
        } else {
            Reply::json(json!({"data": [{"embedding": [1.0, 2.0, 3.0, 4.0], "truncated": true}]}))
        }
    });
    let provider = HttpEmbeddingProvider::new(embed_config(&server.url)).unwrap();
    assert!(matches!(
        provider.embed("x"),
        Err(EmbedError::Dimension {
            expected: 4,
            found: 2
        })
    ));
    provider.embed("y").unwrap();
    assert_eq!(provider.truncated_inputs(), 1);
}

#[test]
fn unreachable_embedding_service() {
    let provider = HttpEmbeddingProvider::new(HttpEmbeddingConfig {
        max_retries: 1,
        ..embed_config(&closed_port_url())
    })
    .unwrap();
    assert!(matches!(
        provider.embed("x"),
        Err(EmbedError::ProviderUnavailable { attempts: 2, .. })
    ));
}

#[test]
fn chat_request_shape_and_answer() {
    let server =
        MockServer::start(|_, _| Reply::json(json!({"choices": [{"message": {"content": "42"}}]})));
    let llm = HttpChatProvider::new(chat_config(&server.url)).unwrap();
    let prompt = build_prompt(&["Context."], "Question?").unwrap();
    assert_eq!(llm.complete(&prompt).unwrap(), "42");
    let req = &server.requests()[0];
    assert_eq!(req["model"], "mock-chat");
    assert_eq!(req["temperature"], 0.0);
    assert_eq!(req["messages"][0]["role"], "system");
    assert_eq!(req["messages"][0]["content"], prompt.system.as_str());
    assert_eq!(req["messages"][1]["role"], "user");
    assert_eq!(
        req["messages"][1]["content"],
        "PARAGRAPHS : Context.QUESTIONS: Question?"
    );
}

#[test]
fn chat_context_overflow() {
    let server = MockServer::start(|_, _| {
        Reply::status(400, r#"{"error": "maximum context length is 8 tokens"}"#)
    });
    let llm = HttpChatProvider::new(chat_config(&server.url)).unwrap();
    let prompt = build_prompt(&["Context."], "Question?").unwrap();
    assert!(matches!(
        llm.complete(&prompt),
        Err(GenerationError::ContextOverflow { .. })
    ));

    let capped = HttpChatProvider::new(HttpChatConfig {
        max_context_tokens: Some(5),
        ..chat_config(&server.url)
    })
    .unwrap();
    assert!(matches!(
        capped.complete(&prompt),
        Err(GenerationError::ContextOverflow { limit: Some(5), .. })
    ));
    assert_eq!(server.requests().len(), 1, "capped prompt must not be sent");
}

#[test]
fn chat_server_errors_and_empty_choices() {
    let server = MockServer::start(|n, _| {
        if n < 3 {
            Reply::status(500, "down")
        } else {
            Reply::json(json!({"choices": []}))
        }
    });
    let llm = HttpChatProvider::new(chat_config(&server.url)).unwrap();
    let prompt = build_prompt(&["Context."], "Question?").unwrap();
    assert!(matches!(
        llm.complete(&prompt),
        Err(GenerationError::ProviderUnavailable { attempts: 3, .. })
    ));
    assert!(matches!(
        llm.complete(&prompt),
        Err(GenerationError::Protocol(_))
    ));
}

#[test]
fn unreachable_chat_service() {
    let llm = HttpChatProvider::new(HttpChatConfig {
        max_retries: 0,
        ..chat_config(&closed_port_url())
    })
    .unwrap();
    let prompt = build_prompt(&["Context."], "Question?").unwrap();
    assert!(matches!(
        llm.complete(&prompt),
        Err(GenerationError::ProviderUnavailable { attempts: 1, .. })
    ));
}
