use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use trustlab::game::GameConfig;
use trustlab::gateway::{
    AttemptOutcome, ExchangeContext, Gateway, GatewayError, MemoryTranscript, ProviderProfile, SystemClock,
};
use trustlab::observation::{ObservationToggles, SenderObservation};
use trustlab::prompting::{compose, Objective, ReasoningStrategy};

struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned (status, body) per connection and reports what it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            seen.push(Seen { authorization, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn profile(url: &str, key_env: &str) -> ProviderProfile {
    let mut p = ProviderProfile::http("local", url, "local-model");
    p.temperature = Some(0.7);
    p.backoff_base = Duration::from_millis(5);
    p.backoff_max = Duration::from_millis(20);
    p.timeout = Duration::from_secs(5);
    p.max_retries = 2;
    p.api_key_env = key_env.into();
    p
}

fn bundle() -> trustlab::prompting::PromptBundle {
    compose(
        Objective::Helpful,
        ReasoningStrategy::ZeroShotCot,
        &ObservationToggles::default(),
        &SenderObservation::first_round(&GameConfig::default()),
        &GameConfig::default(),
    )
    .unwrap()
}

fn ctx() -> ExchangeContext {
    ExchangeContext { game_id: "g-http".into(), round_index: 1, sample_index: 0, seed: 9 }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let ok = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": "Thinking...\nAMOUNT: 4", "reasoning_content": "hmm"}}],
        "usage": {"prompt_tokens": 120, "completion_tokens": 8}
    })
    .to_string();
    let (url, server) = serve(vec![(503, "{\"error\":\"busy\"}".into()), (200, ok)]);
    std::env::set_var("TRUSTLAB_HTTP_TEST_KEY", "sk-local");

    let gateway = Gateway::new(Arc::new(SystemClock));
    let sink = MemoryTranscript::new();
    let exchange = gateway.complete(&bundle(), &profile(&url, "TRUSTLAB_HTTP_TEST_KEY"), &ctx(), &sink).unwrap();
    assert_eq!(exchange.attempt_count, 2);
    assert_eq!(exchange.response_text, "Thinking...\nAMOUNT: 4");
    assert_eq!(exchange.reasoning_text.as_deref(), Some("hmm"));

    let entries = sink.entries();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0].outcome, AttemptOutcome::TransportError);
    assert_eq!(entries[1].outcome, AttemptOutcome::Ok);
    assert_eq!(entries[1].prompt_tokens, Some(120));

    let seen = server.join().unwrap();
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-local"));
    assert_eq!(seen[1].body["model"], "local-model");
    assert_eq!(seen[1].body["temperature"], 0.7);
    assert_eq!(seen[1].body["messages"][0]["role"], "system");
    assert_eq!(seen[1].body["messages"][1]["role"], "user");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let gateway = Gateway::new(Arc::new(SystemClock));
    let sink = MemoryTranscript::new();
    let err = gateway.complete(&bundle(), &profile(&url, "TRUSTLAB_UNSET_KEY"), &ctx(), &sink).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 1, .. }), "{err:?}");
    assert_eq!(sink.len(), 1);
    assert!(server.join().unwrap()[0].authorization.is_none());
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let gateway = Gateway::new(Arc::new(SystemClock));
    let sink = MemoryTranscript::new();
    let err = gateway.complete(&bundle(), &profile(&url, "TRUSTLAB_UNSET_KEY"), &ctx(), &sink).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(sink.len(), 3);
}
