use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use evoipd_core::error::AgentError;
use evoipd_core::game::{run_phase, MatchView, PhaseContext};
use evoipd_core::llm::{
    build_prompt, llm_decide, parse_response, prompt_template_hash, LlmClient, MockErrorKind, MockProvider, MockReply,
    ProviderConfig, ProviderKind, PROMPT_TEMPLATE,
};
use evoipd_core::{Move, PayoffMatrix, TournamentConfig};
use sha2::{Digest, Sha256};

fn mock_cfg(max_retries: u32) -> ProviderConfig {
    let mut cfg = ProviderConfig::new(ProviderKind::Mock, "mock-1");
    cfg.max_retries = max_retries;
    cfg
}

fn client(replies: Vec<MockReply>, max_retries: u32) -> (LlmClient, Arc<MockProvider>) {
    let provider = Arc::new(MockProvider::scripted(replies));
    (LlmClient::new(provider.clone(), &mock_cfg(max_retries)).without_backoff(), provider)
}

fn fail(kind: MockErrorKind) -> MockReply {
    MockReply::Error { error: kind }
}

fn opening_view() -> MatchView<'static> {
    MatchView::new(&[], &[], 0.25)
}

#[test]
fn two_failures_then_success_takes_three_attempts() {
    let (c, provider) = client(
        vec![fail(MockErrorKind::Transport), fail(MockErrorKind::RateLimited), MockReply::Text("Fine.\nC".into())],
        3,
    );
    let d = llm_decide(&c, &opening_view(), &PayoffMatrix::default()).unwrap();
    assert_eq!((d.mv, d.attempts, d.rationale.text.as_str()), (Move::C, 3, "Fine."));
    assert_eq!(provider.calls(), 3);
}

#[test]
fn persistent_failure_reports_every_attempt() {
    let (c, provider) = client(vec![fail(MockErrorKind::Transport)], 2);
    match llm_decide(&c, &opening_view(), &PayoffMatrix::default()) {
        Err(AgentError::Failure { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected failure, got {other:?}"),
    }
    assert_eq!(provider.calls(), 3);
}

#[test]
fn malformed_replies_are_retried_and_auth_is_not() {
    let (c, _) = client(vec![MockReply::Text("I am not sure.".into()), MockReply::Text("Then:\nD".into())], 3);
    let d = llm_decide(&c, &opening_view(), &PayoffMatrix::default()).unwrap();
    assert_eq!((d.mv, d.attempts), (Move::D, 2));

    let (c, provider) = client(vec![fail(MockErrorKind::Auth), MockReply::Text("C".into())], 3);
    assert!(matches!(llm_decide(&c, &opening_view(), &PayoffMatrix::default()), Err(AgentError::Auth(_))));
    assert_eq!(provider.calls(), 1);
}

#[test]
fn template_hash_is_the_sha256_of_the_template() {
    assert_eq!(prompt_template_hash(), hex::encode(Sha256::digest(PROMPT_TEMPLATE.as_bytes())));
    let prompt = build_prompt(&opening_view(), &PayoffMatrix::default());
    assert!(prompt.contains("25%"));
    assert_eq!(prompt, build_prompt(&opening_view(), &PayoffMatrix::default()));
}

#[test]
fn parse_takes_the_final_token() {
    assert_eq!(parse_response("Cooperate? No.\n\nD").unwrap().1, Move::D);
    assert_eq!(parse_response("Answer: **C**").unwrap().1, Move::C);
    assert!(parse_response("C or D").is_ok());
    assert!(parse_response("").is_err());
    assert!(parse_response("Defect").is_err());
}

/// Serves `responses` in order over HTTP/1.1, one connection each, and
/// returns the raw requests seen.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            head.push_str(&String::from_utf8(payload).unwrap());
            seen.push(head);
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (base, handle)
}

#[test]
fn openai_dialect_over_http_with_a_retried_server_error() {
    let ok = serde_json::json!({"choices": [{"message": {"content": "They keep cooperating.\nC"}}]}).to_string();
    let (base, server) = serve(vec![(500, "{}".into()), (200, ok)]);
    std::env::set_var("EVOIPD_TEST_OPENAI_KEY", "sk-test");
    let mut cfg = ProviderConfig::new(ProviderKind::OpenaiCompatible, "gpt-test");
    cfg.base_url = base;
    cfg.api_key_env = "EVOIPD_TEST_OPENAI_KEY".into();
    let c = LlmClient::from_config(&cfg).unwrap().without_backoff();
    let d = llm_decide(&c, &opening_view(), &PayoffMatrix::default()).unwrap();
    assert_eq!((d.mv, d.attempts), (Move::C, 2));
    assert_eq!(d.rationale.model, "gpt-test");

    let requests = server.join().unwrap();
    let last = requests[1].to_ascii_lowercase();
    assert!(last.starts_with("post /chat/completions"));
    assert!(last.contains("authorization: bearer sk-test"));
    assert!(last.contains("\"temperature\":0.7"));
}

#[test]
fn gemini_dialect_sends_no_temperature_and_rejects_bad_keys() {
    let ok = serde_json::json!({"candidates": [{"content": {"parts": [{"text": "Short horizon.\nD"}]}}]}).to_string();
    let (base, server) = serve(vec![(200, ok), (401, "{}".into())]);
    std::env::set_var("EVOIPD_TEST_GEMINI_KEY", "g-test");
    let mut cfg = ProviderConfig::new(ProviderKind::GeminiCompatible, "gemini-test");
    cfg.base_url = base;
    cfg.api_key_env = "EVOIPD_TEST_GEMINI_KEY".into();
    let c = LlmClient::from_config(&cfg).unwrap().without_backoff();
    assert_eq!(llm_decide(&c, &opening_view(), &PayoffMatrix::default()).unwrap().mv, Move::D);
    assert!(matches!(llm_decide(&c, &opening_view(), &PayoffMatrix::default()), Err(AgentError::Auth(_))));

    let requests = server.join().unwrap();
    let first = requests[0].to_ascii_lowercase();
    assert!(first.starts_with("post /models/gemini-test:generatecontent"));
    assert!(first.contains("x-goog-api-key: g-test"));
    assert!(!first.contains("temperature"));
}

#[test]
fn every_llm_move_has_exactly_one_matching_rationale() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("m.json");
    std::fs::write(
        &fixture,
        r#"{"mode": "prompt_hash", "replies": ["Trust.\nC", "Risky.\nD", "Not sure yet,\nC", "Punish.\nD"]}"#,
    )
    .unwrap();
    let cfg = TournamentConfig::from_toml_str(&format!(
        "tournament_id = \"bij\"\ntermination_probability = 0.2\nmaster_seed = 5\n\
         [roster]\nTFT = 2\nWSLS = 2\nBot = 3\n\
         [providers.Bot]\nprovider = \"mock\"\nmodel_name = \"m\"\nmock_fixture = {:?}\n",
        fixture.display().to_string()
    ))
    .unwrap();
    let ctx = PhaseContext { tournament_id: "bij", phase: 1, first_rationale_id: 1 };
    let log = run_phase(&ctx, &cfg.initial_population().unwrap(), &cfg.match_config(), &cfg.registry().unwrap()).unwrap();
    assert!(log.aborted.is_empty());

    let mut referenced = BTreeSet::new();
    let mut llm_moves = 0;
    for m in &log.matches {
        for (i, r) in m.rounds.iter().enumerate() {
            for (agent, mv, rid) in [(&m.agent_a, r.move_a, r.rationale_a), (&m.agent_b, r.move_b, r.rationale_b)] {
                let is_llm = agent.strategy.as_str() == "Bot";
                assert_eq!(is_llm, rid.is_some());
                if let Some(id) = rid {
                    llm_moves += 1;
                    assert!(referenced.insert(id), "rationale {id} used twice");
                    let rec = log.rationales.iter().find(|x| x.rationale_id == id).unwrap();
                    assert_eq!((rec.match_id, rec.round_idx, rec.chosen_move), (m.match_id, i as u32 + 1, mv));
                }
            }
        }
    }
    assert_eq!(llm_moves, log.rationales.len());
    let ids: Vec<u64> = log.rationales.iter().map(|r| r.rationale_id).collect();
    assert_eq!(ids, (1..=ids.len() as u64).collect::<Vec<_>>());
}
