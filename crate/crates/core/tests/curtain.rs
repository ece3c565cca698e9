mod common;

use common::{asset, curtain_trace, run_curtain, MockHook};
use neuron_core::engine::load_graph;

#[test]
fn shipped_graph_has_nine_nodes() {
    let g = load_graph(&std::fs::read_to_string(asset("curtain.json")).unwrap()).unwrap();
    assert_eq!(g.nodes.len(), 9);
    assert_eq!(g.tick_ms, 40);
}

#[test]
fn scripted_trace_opens_closes_opens() {
    let dir = tempfile::tempdir().unwrap();
    let trace = curtain_trace(dir.path());
    let hook = MockHook::start();
    let run = run_curtain(&trace, &dir.path().join("out"), &hook);
    assert_eq!(run.events, ["curtain_open", "curtain_close", "curtain_open"]);
    let paths: Vec<&str> = run.requests.iter().map(|r| r.path.as_str()).collect();
    assert_eq!(
        paths,
        [
            "/trigger/curtain_open/with/key/test-key",
            "/trigger/curtain_close/with/key/test-key",
            "/trigger/curtain_open/with/key/test-key",
        ]
    );
    for r in &run.requests {
        assert_eq!(r.method, "POST");
        let body: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&r.body).unwrap();
        let keys: Vec<&str> = body.keys().map(String::as_str).collect();
        assert_eq!(keys, ["value1", "value2", "value3"]);
        assert!(body.values().all(|v| v.is_string()));
    }
    println!("{:#?}", run.requests);
}
