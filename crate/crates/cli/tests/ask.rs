mod common;

use std::collections::BTreeSet;

use common::*;
use serde_json::Value;

fn params_of<'a>(report: &'a Value, tool: &str) -> &'a Value {
    report["params"].as_array().unwrap().iter().find(|p| p["tool_id"] == tool).unwrap_or_else(|| panic!("no params for {tool}"))
}

#[test]
fn cstr_query_runs_every_stage() {
    let dir = sandbox("cstr");
    let (code, r) = ask_json(dir.path(), "agent.toml", &[]);
    assert_eq!(code, 0);
    assert_eq!(r["status"], "succeeded");
    assert!(r["cache_hit"].is_null());

    // planning
    assert_eq!(r["graph"]["nodes"].as_array().unwrap().len(), 4);
    // selection
    let tools: BTreeSet<&str> = r["selected_tools"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert_eq!(tools, BTreeSet::from(CSTR_TOOLS));
    // extraction: the four tank parameters, exactly
    let ode = params_of(&r, "ode_ivp_solver");
    let v = &ode["values"];
    for (name, value, unit) in [("V", 2.0, Some("m3")), ("q", 0.4, Some("m3/min")), ("c_i", 50.0, Some("kg/m3")), ("c0", 0.0, None)] {
        assert_eq!(v[name]["parsed"]["value"].as_f64(), Some(value), "{name}");
        assert_eq!(v[name]["unit"].as_str(), unit, "{name}");
    }
    assert_eq!(v.as_object().unwrap().len(), 4);
    assert!(ode["missing"].as_array().unwrap().is_empty());
    // composition and execution
    assert_eq!(r["outcome"]["executions"], 1);
    assert!(r["outcome"]["final_program"]["source"].as_str().unwrap().contains("solve_ivp("));
    assert!(r["knowledge"].as_array().unwrap().iter().any(|h| h["chunk"]["doc_id"] == "mixing_tank_dynamics"));
    // integration
    let answer = r["response"]["answer_text"].as_str().unwrap();
    assert!(answer.contains("c(50 min) = 49.998 kg/m3"), "{answer}");
    assert!(answer.contains("concentration_profile.png"));
    assert_eq!(r["model_calls"], 9);
}

#[test]
fn three_runs_are_identical() {
    let mut answers = Vec::new();
    let mut traces = Vec::new();
    for _ in 0..3 {
        let dir = sandbox("cstr");
        let out = procalc(dir.path(), &["ask", "-c", "agent.toml", "--query-file", "query.txt", "--trace", "trace"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        answers.push(stdout(&out));
        traces.push(read_tree(&dir.path().join("trace")));
    }
    assert!(!traces[0].is_empty());
    assert!(answers.windows(2).all(|w| w[0] == w[1]));
    assert!(traces.windows(2).all(|w| w[0] == w[1]), "trace files differ between runs");
}

#[test]
fn unrecorded_query_is_a_replay_miss() {
    let dir = sandbox("cstr");
    let out = procalc(dir.path(), &["ask", "-c", "agent.toml", "How hot is the reboiler?"]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    let key = err.lines().find_map(|l| l.strip_prefix("request key: ")).expect("key printed");
    assert_eq!(key.len(), 64);
    assert!(key.chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn exit_codes_for_bad_setups_and_inputs() {
    let dir = sandbox("cstr");
    let p = dir.path();
    assert_eq!(code(&procalc(p, &["ask", "-c", "missing.toml", "anything"])), 3);
    assert_eq!(code(&procalc(p, &["ask", "-c", "agent.toml", "   "])), 4);
    assert_eq!(code(&procalc(p, &["ask", "-c", "agent.toml", "--query-file", "nope.txt"])), 4);
    assert_eq!(code(&procalc(p, &["ask", "-c", "agent.toml", "--max-iterations", "0", "x"])), 64);
    assert_eq!(code(&procalc(p, &["ask", "--frobnicate"])), 64);
    assert_eq!(code(&procalc(p, &["ask"])), 64);
    assert_eq!(code(&procalc(p, &["--help"])), 0);
    std::fs::write(p.join("broken.toml"), "[model]\nmode = 'sometimes'\n").unwrap();
    assert_eq!(code(&procalc(p, &["ask", "-c", "broken.toml", "x"])), 3);
}

#[test]
fn tools_and_index_commands() {
    let dir = sandbox("cstr");
    let p = dir.path();
    let out = procalc(p, &["tools", "list"]);
    assert_eq!(code(&out), 0);
    for t in CSTR_TOOLS {
        assert!(stdout(&out).contains(t));
    }
    let out = procalc(p, &["tools", "show", "ode_ivp_solver"]);
    assert!(stdout(&out).contains("passed through args"));
    assert_eq!(code(&procalc(p, &["tools", "show", "nonesuch"])), 4);

    let out = procalc(p, &["index", "stats", "-c", "agent.toml"]);
    assert!(stdout(&out).contains("documents: 3"), "{}", stdout(&out));
    std::fs::write(p.join("pump_curves.txt"), "Centrifugal pump head falls as flow rises. ".repeat(40)).unwrap();
    let out = procalc(p, &["index", "add", "-c", "agent.toml", "--doc", "pump_curves.txt"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&procalc(p, &["index", "stats", "-c", "agent.toml"])).contains("documents: 4"));
    // same document twice: chunk ids collide
    assert_ne!(code(&procalc(p, &["index", "add", "-c", "agent.toml", "--doc", "pump_curves.txt"])), 0);
}
