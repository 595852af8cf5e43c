mod common;

use common::*;

#[test]
fn ablation_suite_shows_every_capability_matters() {
    let dir = sandbox("cstr");
    let p = dir.path();
    let out = procalc(p, &["eval", "ablation", "--cases", "ablation.toml", "--out", "abl", "--work", "work"]);
    assert_eq!(code(&out), 0, "{}\n{}", stdout(&out), stderr(&out));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("abl/report.json")).unwrap()).unwrap();
    let r = &r["report"];
    let variant = |name: &str| r["variants"].as_array().unwrap().iter().find(|v| v["name"] == name).unwrap().clone();
    let full = variant("full");
    assert_eq!(full["pass_rate"], 1.0);
    assert_eq!(full["first_try_rate"], 0.5);
    assert_eq!(full["mean_repeat_calls"], 1.0);
    assert_eq!(variant("no_react")["first_try_rate"], 0.0);
    assert_eq!(variant("no_external_knowledge")["pass_rate"], 0.5);
    assert_eq!(variant("no_reflection")["pass_rate"], 0.5);
    assert!(variant("no_cache")["mean_repeat_calls"].as_f64().unwrap() > 1.0);
    let dirs = r["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 4);
    assert!(dirs.iter().all(|d| d["no_better"] == true && d["worse"] == true), "{dirs:#?}");
}

#[test]
fn ablation_rejects_unknown_variants_and_bad_cases() {
    let dir = sandbox("cstr");
    let p = dir.path();
    assert_eq!(code(&procalc(p, &["eval", "ablation", "--cases", "ablation.toml", "--variants", "raw_backend"])), 64);
    std::fs::write(p.join("cases.toml"), "[[case]]\nid = 'x'\n").unwrap();
    assert_eq!(code(&procalc(p, &["eval", "ablation", "--cases", "cases.toml"])), 4);
}

#[test]
fn no_react_skips_the_doc_lookups_and_needs_a_revision() {
    let dir = sandbox("cstr");
    let (exit, r) = ask_json(dir.path(), "agent.toml", &["--no-react"]);
    assert_eq!(exit, 0);
    assert!(r["react"].is_null());
    assert_eq!(r["outcome"]["executions"], 2);
    assert_eq!(r["outcome"]["state"]["history"][0]["result"]["exception"]["type_name"], "TypeError");
}

#[test]
fn no_external_knowledge_loses_the_horizon() {
    let dir = sandbox("cstr");
    let (exit, r) = ask_json(dir.path(), "agent.toml", &["--no-external-knowledge"]);
    assert_eq!(exit, 0);
    assert!(r["knowledge"].as_array().unwrap().is_empty());
    let answer = r["response"]["answer_text"].as_str().unwrap();
    // without the ten-time-constant advice the simulation stops at 10 min
    assert!(answer.contains("c(5 min)") && !answer.contains("c(50 min)"), "{answer}");
}

#[test]
fn no_cache_repeats_the_whole_pipeline() {
    let dir = sandbox("cstr");
    let (_, first) = ask_json(dir.path(), "agent.toml", &["--no-cache"]);
    let (_, second) = ask_json(dir.path(), "agent.toml", &["--no-cache"]);
    assert_eq!(first["model_calls"], 9);
    assert_eq!(second["model_calls"], 9);
    assert!(second["cache_hit"].is_null());
}
