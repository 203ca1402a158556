mod common;

use std::time::Duration;

use common::{ok, serve, Reply};
use maspob::embeddings::PromptCombination;
use maspob::evaluators::{EvalContext, Evaluator, EvaluatorError, RemoteEvaluator, RemoteEvaluatorSpec};

fn spec(url: &str, retries: u32, timeout_s: f64) -> RemoteEvaluatorSpec {
    RemoteEvaluatorSpec {
        endpoint: url.to_string(),
        timeout_s,
        retries,
        auth_token_env: None,
        backoff_initial_ms: 10,
        backoff_factor: 2.0,
    }
}

const CTX: EvalContext<'static> = EvalContext {
    run_id: "run-a",
    round: 7,
};

#[test]
fn echoes_score_and_sends_protocol_body() {
    let server = serve(|_, _| ok(0.73));
    let mut ev = RemoteEvaluator::new(spec(&server.url, 0, 5.0)).unwrap();
    let e = ev.evaluate(&PromptCombination(vec![3, 0, 11]), &CTX).unwrap();
    assert_eq!(e.score, 0.73);
    assert_eq!(e.n_instances, Some(100));
    let body: serde_json::Value = serde_json::from_str(&server.requests.lock().unwrap()[0].body).unwrap();
    assert_eq!(body, serde_json::json!({"combination": [3, 0, 11], "run_id": "run-a", "round": 7}));
}

#[test]
fn out_of_range_score_is_rejected() {
    let server = serve(|_, _| Reply::Json(200, r#"{"score": 1.2}"#.into()));
    let mut ev = RemoteEvaluator::new(spec(&server.url, 3, 5.0)).unwrap();
    let err = ev.evaluate(&PromptCombination(vec![0]), &CTX).unwrap_err();
    assert!(matches!(err, EvaluatorError::ScoreOutOfRange(x) if x == 1.2));
    assert_eq!(server.count(), 1);
}

#[test]
fn two_timeouts_then_success() {
    let server = serve(|k, _| if k < 2 { Reply::Sleep(Duration::from_millis(1500)) } else { ok(0.4) });
    let mut ev = RemoteEvaluator::new(spec(&server.url, 3, 0.3)).unwrap();
    let e = ev.evaluate(&PromptCombination(vec![1, 2]), &CTX).unwrap();
    assert_eq!(e.score, 0.4);
    assert_eq!(server.count(), 3);
    assert_eq!(ev.requests_sent(), 3);
}

#[test]
fn timeouts_exhaust_retries() {
    let server = serve(|_, _| Reply::Sleep(Duration::from_millis(1500)));
    let mut ev = RemoteEvaluator::new(spec(&server.url, 1, 0.2)).unwrap();
    let err = ev.evaluate(&PromptCombination(vec![0]), &CTX).unwrap_err();
    assert!(matches!(err, EvaluatorError::Timeout { attempts: 2 }), "{err:?}");
}

#[test]
fn non_2xx_and_malformed_bodies_fail() {
    let server = serve(|_, _| Reply::Json(503, r#"{"error": "busy"}"#.into()));
    let mut ev = RemoteEvaluator::new(spec(&server.url, 2, 5.0)).unwrap();
    let err = ev.evaluate(&PromptCombination(vec![0]), &CTX).unwrap_err();
    assert!(matches!(err, EvaluatorError::EvaluatorFailure(ref m) if m.contains("503")), "{err:?}");
    assert_eq!(server.count(), 3);

    let server = serve(|_, _| Reply::Json(200, "not json".into()));
    let mut ev = RemoteEvaluator::new(spec(&server.url, 2, 5.0)).unwrap();
    assert!(matches!(
        ev.evaluate(&PromptCombination(vec![0]), &CTX),
        Err(EvaluatorError::EvaluatorFailure(_))
    ));
}

#[test]
fn bearer_token_from_environment() {
    let server = serve(|_, _| ok(0.5));
    let var = "MASPOB_TEST_REMOTE_TOKEN";
    std::env::set_var(var, "s3cret");
    let mut s = spec(&server.url, 0, 5.0);
    s.auth_token_env = Some(var.into());
    let mut ev = RemoteEvaluator::new(s.clone()).unwrap();
    ev.evaluate(&PromptCombination(vec![0]), &CTX).unwrap();
    assert_eq!(
        server.requests.lock().unwrap()[0].authorization.as_deref(),
        Some("Bearer s3cret")
    );
    s.auth_token_env = Some("MASPOB_TEST_UNSET_VARIABLE".into());
    assert!(matches!(RemoteEvaluator::new(s), Err(EvaluatorError::InvalidSpec(_))));
}
