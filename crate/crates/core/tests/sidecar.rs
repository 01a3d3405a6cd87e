//! Client side of the code-runner line protocol, driven by shell stand-ins.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use pdl_core::code::{CodeError, CodeRunner, SidecarRunner};
use pdl_core::{Map, Value};

/// Echoes each request id back, with a running count as the result.
/// Requests whose code contains `hang` never get an answer; `fail`
/// produces an error response; `skew` answers with the wrong id.
const STAND_IN: &str = r#"
n=0
while IFS= read -r line; do
  n=$((n + 1))
  id=$(printf '%s' "$line" | sed -n 's/^{"id":\([0-9]*\).*/\1/p')
  case "$line" in
    *hang*) sleep 5 ;;
    *fail*) printf '{"id": %s, "ok": false, "error": {"type": "ZeroDivisionError", "message": "division by zero", "traceback": "line 1"}}\n' "$id" ;;
    *skew*) printf '{"id": %s, "ok": true, "result": null}\n' "$((id + 100))" ;;
    *) printf '{"id": %s, "ok": true, "result": %s, "stdout": "seen %s\\n"}\n' "$id" "$n" "$id" ;;
  esac
done
"#;

fn runner() -> SidecarRunner {
    SidecarRunner::new("sh").with_args(["-c", STAND_IN])
}

#[test]
fn responses_match_requests_in_order() {
    let mut r = runner();
    for i in 1..=1000 {
        let resp = r.request("x = 1", &Map::new()).unwrap();
        assert_eq!(resp.id, i);
        assert!(resp.ok);
        assert_eq!(resp.result, Value::Int(i));
        assert_eq!(resp.stdout, format!("seen {i}\n"));
    }
}

#[test]
fn execute_maps_results_and_errors() {
    let mut r = runner();
    let mut scope = Map::new();
    scope.insert("topic".into(), Value::String("earth".into()));
    let out = r.execute("result = topic", &scope).unwrap();
    assert_eq!(out.result, Value::Int(1));
    let err = r.execute("1/0  # fail", &scope).unwrap_err();
    assert_eq!(
        err,
        CodeError::Exec {
            kind: "ZeroDivisionError".into(),
            message: "division by zero".into(),
            traceback: Some("line 1".into()),
        }
    );
    assert_eq!(r.execute("ok", &scope).unwrap().result, Value::Int(3));
}

#[test]
fn timeouts_restart_the_sidecar() {
    let mut r = runner().with_timeout(Duration::from_millis(300));
    assert_eq!(r.request("a", &Map::new()).unwrap().result, Value::Int(1));
    let start = Instant::now();
    let err = r.request("hang", &Map::new()).unwrap_err();
    assert_eq!(err, CodeError::Timeout(Duration::from_millis(300)));
    assert!(start.elapsed() < Duration::from_secs(3));
    // A fresh process counts from one again; ids keep increasing.
    let resp = r.request("b", &Map::new()).unwrap();
    assert_eq!(resp.id, 3);
    assert_eq!(resp.result, Value::Int(1));
}

#[test]
fn mismatched_ids_are_protocol_errors() {
    let mut r = runner();
    let err = r.request("skew", &Map::new()).unwrap_err();
    assert!(
        matches!(err, CodeError::Protocol(ref m) if m.contains("does not match")),
        "{err:?}"
    );
}

#[test]
fn malformed_lines_are_protocol_errors() {
    let mut r =
        SidecarRunner::new("sh").with_args(["-c", "while read -r l; do echo 'not json'; done"]);
    assert!(matches!(
        r.request("x", &Map::new()),
        Err(CodeError::Protocol(_))
    ));
}

#[test]
fn early_exit_is_reported() {
    let mut r = SidecarRunner::new("sh").with_args(["-c", "exit 0"]);
    assert!(matches!(
        r.request("x", &Map::new()),
        Err(CodeError::Protocol(_))
    ));
}

#[test]
fn missing_binary_is_a_spawn_error() {
    let mut r = SidecarRunner::new("/nonexistent/pdl-code-runner");
    assert!(matches!(
        r.request("x", &Map::new()),
        Err(CodeError::Spawn(_))
    ));
}

#[test]
fn demo_stub_answers_searches() {
    let stub = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo/wikipedia_stub.sh");
    let mut r = SidecarRunner::new("sh").with_args([stub.to_string_lossy().into_owned()]);
    let out = r.execute("search(topic)", &Map::new()).unwrap();
    let Value::String(text) = out.result else {
        panic!("{:?}", out.result)
    };
    assert!(text.starts_with("Earth's circumference"));
}
