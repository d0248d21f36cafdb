// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use covforge_core::genbridge::{
    GenError, Generator, HttpChatGenerator, Message, PromptBundle, PromptMode, RetryPolicy, Role, SamplingParams,
};

/// Serves canned replies in order, one per connection, and records bodies.
struct Stub {
    url: String,
    bodies: Arc<Mutex<Vec<String>>>,
    hits: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn stub(replies: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let hits = Arc::new(AtomicUsize::new(0));
    let (b, h) = (bodies.clone(), hits.clone());
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((mut s, _)) = listener.accept() else { return };
            b.lock().unwrap().push(read_request(&mut s));
            h.fetch_add(1, Ordering::SeqCst);
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = s.write_all(resp.as_bytes());
        }
    });
    Stub { url, bodies, hits }
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn bundle() -> PromptBundle {
    PromptBundle {
        mode: PromptMode::Memoryless,
        messages: vec![Message::new(Role::System, "sys"), Message::new(Role::User, "write a testbench")],
    }
}

fn client(url: &str, retries: u32) -> HttpChatGenerator {
    HttpChatGenerator::new(
        url,
        "m-4b",
        SamplingParams::default(),
        2,
        RetryPolicy { max_retries: retries, initial_backoff: Duration::from_millis(10) },
        Duration::from_secs(5),
    )
    .unwrap()
}

#[test]
fn posts_chat_request_and_reads_content() {
    let s = stub(vec![(200, completion("```sv\nmodule tb; endmodule\n```"))]);
    let out = client(&s.url, 0).generate(&bundle(), 42).unwrap();
    assert!(out.contains("module tb"));
    let body: serde_json::Value = serde_json::from_str(&s.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body["model"], "m-4b");
    assert_eq!(body["seed"], 42);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["top_p"], 0.8);
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "write a testbench");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let s = stub(vec![(503, "{}".into()), (500, "{}".into()), (200, completion("ok"))]);
    assert_eq!(client(&s.url, 3).generate(&bundle(), 1).unwrap(), "ok");
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![(400, "{\"error\":\"bad\"}".into()), (200, completion("late"))]);
    let err = client(&s.url, 3).generate(&bundle(), 1).unwrap_err();
    assert!(matches!(err, GenError::Transport { .. }));
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn empty_completion_is_reported() {
    let s = stub(vec![(200, completion(""))]);
    assert_eq!(client(&s.url, 0).generate(&bundle(), 1).unwrap_err(), GenError::EmptyCompletion);
}

#[test]
fn unreachable_endpoint_fails_after_retries() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(&format!("http://127.0.0.1:{port}/v1/chat/completions"), 2)
        .generate(&bundle(), 1)
        .unwrap_err();
    match err {
        GenError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}
