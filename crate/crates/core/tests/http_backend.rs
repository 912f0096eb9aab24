//! HTTP backend against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use contestable::backend::{
    BackendConfig, BackendError, ChatBackend, ChatMessage, ChatRequest, HttpBackend,
};

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"level: 1 fine"}}]}"#;

struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves the canned `(status, extra headers, body)` replies in order, one
/// per connection, and records what each request carried.
fn mock(replies: Vec<(u16, &'static str, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, headers, body) in replies {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                authorization: auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{headers}\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn backend(url: &str, var: &str, key: &str, retries: u32) -> HttpBackend {
    std::env::set_var(var, key);
    let mut config = BackendConfig::http(url, Some(var.to_string()));
    config.max_retries = retries;
    config.retry_base_ms = 1;
    config.retry_max_ms = 5;
    config.request_timeout_secs = 5.0;
    HttpBackend::new(&config).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest::new(
        "issue/initial/Mike/review",
        vec![ChatMessage::system("sys"), ChatMessage::user("essay")],
    )
}

#[test]
fn retries_after_rate_limit() {
    let (url, seen) = mock(vec![
        (429, "Retry-After: 0\r\n", "{}".into()),
        (200, "", OK_BODY.into()),
    ]);
    let b = backend(&url, "CFE_TEST_KEY_A", "sk-alpha", 3);
    assert_eq!(b.complete(&request()).unwrap(), "level: 1 fine");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].authorization.as_deref(), Some("Bearer sk-alpha"));
    assert_eq!(seen[1].body["messages"][1]["content"], "essay");
    assert_eq!(seen[1].body["messages"][0]["role"], "system");
    assert!(seen[1].body["model"].is_string());
}

#[test]
fn rate_limit_budget_is_bounded() {
    let (url, seen) = mock(vec![(429, "", "{}".into()); 3]);
    let b = backend(&url, "CFE_TEST_KEY_B", "sk-beta", 2);
    let err = b.complete(&request()).unwrap_err();
    assert!(
        matches!(err, BackendError::RateLimited { attempts: 3, .. }),
        "{err:?}"
    );
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn server_errors_are_retried_client_errors_are_not() {
    let (url, seen) = mock(vec![
        (503, "", "{}".into()),
        (400, "", "bad request for sk-gamma".into()),
    ]);
    let b = backend(&url, "CFE_TEST_KEY_C", "sk-gamma", 3);
    let err = b.complete(&request()).unwrap_err();
    match &err {
        BackendError::Http { status, message } => {
            assert_eq!(*status, 400);
            assert!(message.contains("[redacted]"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(!err.to_string().contains("sk-gamma"));
    assert!(!format!("{b:?}").contains("sk-gamma"));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn auth_failure_names_variable_not_secret() {
    let (url, _) = mock(vec![(401, "", "invalid key sk-delta".into())]);
    let b = backend(&url, "CFE_TEST_KEY_D", "sk-delta", 3);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Auth { status: 401, .. }));
    let text = err.to_string();
    assert!(text.contains("CFE_TEST_KEY_D"));
    assert!(!text.contains("sk-delta"));
}

#[test]
fn malformed_body() {
    let (url, _) = mock(vec![(200, "", "{\"choices\": []}".into())]);
    let b = backend(&url, "CFE_TEST_KEY_E", "k", 0);
    assert!(matches!(
        b.complete(&request()),
        Err(BackendError::MalformedResponse(_))
    ));
}

#[test]
fn unreachable_endpoint() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let b = backend(
        &format!("http://127.0.0.1:{port}/v1"),
        "CFE_TEST_KEY_F",
        "sk-zeta",
        1,
    );
    let err = b.complete(&request()).unwrap_err();
    assert!(
        matches!(err, BackendError::Transport { attempts: 2, .. }),
        "{err:?}"
    );
    assert!(!err.to_string().contains("sk-zeta"));
}

#[test]
fn missing_credentials_variable() {
    let config = BackendConfig::http("http://127.0.0.1:9/v1", Some("CFE_TEST_KEY_UNSET".into()));
    let err = HttpBackend::new(&config).unwrap_err();
    assert!(err.to_string().contains("CFE_TEST_KEY_UNSET"));
}
