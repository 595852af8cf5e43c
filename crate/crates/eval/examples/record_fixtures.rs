//! Regenerates the CSTR replay fixtures used by the CLI tests and the
//! ablation suite.
//!
//!     cargo run -p procalc-eval --example record_fixtures -- \
//!         crates/cli/fixtures/cstr crates/core/tests/fixtures/mini_runner.py
//!
//! The "model" is a small rule set keyed on each template's header line. Its
//! programs really run under the given runner (python3 with scipy and
//! matplotlib), and the results are frozen next to the model responses.
//! Every prompt the ablation cases reach is recorded by running the ablation
//! suite itself. Rerun this after changing any template or tool protocol.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock, Mutex};

use regex::Regex;

use procalc_core::composer::Program;
use procalc_core::config::{AblationFlags, AgentConfig, ExecutorKind};
use procalc_core::executor::{
    ExecError, ExecStatus, ExecutionResult, Executor, RecordedRun, SandboxExecutor, SandboxLimits,
};
use procalc_core::gateway::{Gateway, RecordingBackend, ReplayStore, ScriptedBackend};
use procalc_core::pipeline::{RunOptions, RunReport, RunStatus};
use procalc_core::planner::Query;
use procalc_core::rag::{chunk_document, HashedBagOfWords, VectorIndex, DEFAULT_STRIDE, DEFAULT_WINDOW};
use procalc_core::runtime::{Components, RuntimeError};
use procalc_eval::ablation::{load_cases, run_ablation, standard_variants};
use procalc_eval::report::render_ablation;

const HORIZON_HINT: &str = "ten time constants";
const ARGS_HINT: &str = "passed through args";

static PARAM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^(V|q|c_i|c0) = ([0-9.]+)").unwrap());
static STDOUT_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^c\((\d+) min\) = ([0-9.]+) kg/m3$").unwrap());

fn header(prompt: &str) -> &str {
    prompt.lines().next().unwrap_or("").trim_start_matches("### procalc:")
}

fn section<'a>(prompt: &'a str, title: &str) -> &'a str {
    let start = prompt.find(title).map(|i| i + title.len()).unwrap_or(prompt.len());
    &prompt[start..]
}

fn plan_reply() -> String {
    [
        "1. Define the ODE right-hand side for the outlet concentration tools: yes",
        "2. Set the initial conditions and the evaluation time grid after: 1 tools: yes",
        "3. Solve the ODE initial value problem with SciPy after: 1, 2 tools: yes",
        "4. Plot the concentration results against time after: 3 tools: yes",
    ]
    .join("\n")
}

fn extraction_reply(prompt: &str) -> String {
    let tool = section(prompt, "Tool:\n");
    if tool.contains("(ode_ivp_solver)") {
        "V = 2 m3\nq = 0.4 m3/min\nc_i = 50 kg/m3\nc0 = 0".into()
    } else if tool.contains("(plotter)") {
        "title = Outlet concentration of the tank\nx_label = Time (min)\ny_label = Concentration (kg/m3)".into()
    } else {
        String::new()
    }
}

fn react_reply(prompt: &str) -> String {
    let so_far = section(prompt, "Trajectory so far:\n");
    if !so_far.contains("lookup_docs[ode_ivp_solver]") {
        "Thought: The balance is a linear first-order ODE in c, so it should be integrated numerically. \
I need the calling convention of the solver first.\nAction: lookup_docs[ode_ivp_solver]"
            .into()
    } else if !so_far.contains("search_knowledge[") {
        "Thought: The model parameters go through args. I still need a sensible time horizon for the plot.\n\
Action: search_knowledge[time constant and simulation horizon of a mixed tank]"
            .into()
    } else if !so_far.contains("lookup_docs[plotter]") {
        "Thought: Next I should check how the figure has to be saved.\nAction: lookup_docs[plotter]".into()
    } else {
        "Thought: I know how to chain the tools now.\nAnswer: Write dc/dt = (q/V)(c_i - c), pass V, q and c_i to \
solve_ivp through args, evaluate on a numpy time grid and save a plot of c(t) to a file."
            .into()
    }
}

fn program_reply(prompt: &str) -> String {
    let knows_args = prompt.contains(ARGS_HINT);
    let horizon = if prompt.contains(HORIZON_HINT) { 50 } else { 10 };
    let mut vals = std::collections::HashMap::new();
    for cap in PARAM.captures_iter(prompt) {
        vals.entry(cap[1].to_string()).or_insert_with(|| cap[2].to_string());
    }
    let get = |k: &str, d: &str| vals.get(k).cloned().unwrap_or_else(|| d.to_string());
    let (signature, call_args) = if knows_args {
        ("tank_balance(t, c, V, q, c_i)", "args=(V, q, c_i), ")
    } else {
        ("tank_balance(t, c, V, q, c_i)", "")
    };
    format!(
        "The balance rearranges to dc/dt = (q/V)(c_i - c).\n\n```python\n\
import numpy as np
import matplotlib.pyplot as plt
from scipy.integrate import solve_ivp

V = {v}  # m3
q = {q}  # m3/min
c_i = {ci}  # kg/m3
c0 = [{c0}]  # kg/m3 at t = 0


def {signature}:
    return q / V * (c_i - c)


t_end = {horizon}.0  # min
t_eval = np.linspace(0.0, t_end, 501)
sol = solve_ivp(tank_balance, (0.0, t_end), c0, {call_args}t_eval=t_eval, rtol=1e-8, atol=1e-10)
c = sol.y[0]

for t_mark in (5, 25, 50):
    if t_mark <= t_end:
        print(f\"c({{t_mark}} min) = {{np.interp(t_mark, sol.t, c):.3f}} kg/m3\")

plt.figure(figsize=(8, 5))
plt.plot(sol.t, c, label=\"c(t)\")
plt.xlabel(\"Time (min)\")
plt.ylabel(\"Concentration (kg/m3)\")
plt.title(\"Outlet concentration of the tank\")
plt.grid(True)
plt.legend()
plt.savefig(\"concentration_profile.png\", dpi=100)
print(\"Saved plot: concentration_profile.png\")
```\n",
        v = get("V", "2"),
        q = get("q", "0.4"),
        ci = get("c_i", "50"),
        c0 = get("c0", "0"),
    )
}

fn integration_reply(prompt: &str) -> String {
    let out = section(prompt, "Program output:\n");
    let values: Vec<String> =
        STDOUT_LINE.captures_iter(out).map(|c| format!("c({} min) = {} kg/m3", &c[1], &c[2])).collect();
    let mut answer = String::from(
        "The outlet concentration obeys dc/dt = (q/V)(c_i - c) with c(0) = 0, so it rises as a first-order lag \
with time constant V/q = 5 min toward the inlet concentration.",
    );
    if !values.is_empty() {
        answer.push_str(&format!(" The numerical solution gives {}.", values.join(", ")));
    }
    if out.contains("concentration_profile.png") {
        answer.push_str(" The concentration profile over time is plotted in concentration_profile.png.");
    }
    answer
}

fn author(prompt: &str) -> Option<String> {
    Some(match header(prompt) {
        "planning" => plan_reply(),
        "extraction" => extraction_reply(prompt),
        "react" => react_reply(prompt),
        "program_instruction" => program_reply(prompt),
        "integration" => integration_reply(prompt),
        "attribution_instruction" => "ode_ivp_solver".into(),
        _ => return None,
    })
}

/// Runs programs for real, each in a fresh directory, and keeps the results.
struct Recorder {
    inner: SandboxExecutor,
    scratch: PathBuf,
    runs: Mutex<Vec<RecordedRun>>,
}

impl Executor for Recorder {
    fn execute(&self, program: &Program, limits: &SandboxLimits) -> Result<ExecutionResult, ExecError> {
        let n = self.runs.lock().unwrap().len();
        let mut limits = limits.clone();
        limits.artifact_dir = self.scratch.join(format!("run{n}"));
        let result = self.inner.execute(program, &limits)?;
        assert_ne!(result.status, ExecStatus::SetupError, "runner setup failed: {}", result.stderr);
        self.runs.lock().unwrap().push(RecordedRun { program_id: program.program_id.clone(), result: result.clone() });
        Ok(result)
    }
}

struct Shared(Arc<Recorder>);

impl Executor for Shared {
    fn execute(&self, program: &Program, limits: &SandboxLimits) -> Result<ExecutionResult, ExecError> {
        self.0.execute(program, limits)
    }
}

fn build_index(knowledge: &Path, out: &Path) {
    let bow = HashedBagOfWords::default();
    let mut index = VectorIndex::new();
    let mut docs: Vec<_> = fs::read_dir(knowledge).unwrap().map(|e| e.unwrap().path()).collect();
    docs.sort();
    for path in docs {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let title = stem.replace('_', " ");
        let text = fs::read_to_string(&path).unwrap();
        index.add(chunk_document(&stem, &title, text.trim(), DEFAULT_WINDOW, DEFAULT_STRIDE).unwrap(), &bow).unwrap();
    }
    index.save(out).unwrap();
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) {
    let body: String = items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect();
    fs::write(path, body).unwrap();
}

/// First recording per program; reruns differ only in timing.
fn unique_runs(recorder: &Recorder) -> Vec<RecordedRun> {
    let mut seen = std::collections::HashSet::new();
    recorder.runs.lock().unwrap().iter().filter(|r| seen.insert(r.program_id.clone())).cloned().collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let [_, out, runner] = &args[..] else {
        eprintln!("usage: record_fixtures <fixture-dir> <runner.py>");
        std::process::exit(64);
    };
    let out = PathBuf::from(out);
    let replay_path = out.join("replay.jsonl");
    let _ = fs::remove_file(&replay_path);
    let store = Arc::new(ReplayStore::open(&replay_path).unwrap());
    build_index(&out.join("knowledge"), &out.join("index"));
    let scratch = tempfile::tempdir().unwrap();
    let recorder = Arc::new(Recorder {
        // the runner starts inside the artifact directory, so its path must be absolute
        inner: SandboxExecutor::new("python3", vec![fs::canonicalize(runner).unwrap().display().to_string()]),
        scratch: scratch.path().join("runs"),
        runs: Mutex::new(Vec::new()),
    });
    // placeholder so the recorded-executor configs load before anything ran
    write_jsonl::<RecordedRun>(&out.join("executions.jsonl"), &[]);
    write_jsonl::<ExecutionResult>(&out.join("exec_flaky.jsonl"), &[]);
    write_jsonl::<ExecutionResult>(&out.join("exec_exhaust.jsonl"), &[]);

    let build = |cfg: &AgentConfig| -> Result<Components, RuntimeError> {
        let mut c = Components::from_config(cfg)?;
        c.gateway = Gateway::new(RecordingBackend::new(
            ScriptedBackend::new("fixture-author", |r| author(&r.prompt_text)),
            store.clone(),
        ));
        if cfg.sandbox.executor == ExecutorKind::Recorded {
            c.executor = Box::new(Shared(recorder.clone()));
        }
        Ok(c)
    };
    let run = |config: &str, flags: AblationFlags, label: &str| -> RunReport {
        let mut cfg = AgentConfig::load(&out.join(config)).unwrap();
        cfg.ablation = flags;
        cfg.cache.path = scratch.path().join(format!("{label}.cache.jsonl"));
        let components = build(&cfg).unwrap();
        let query = Query::new("cstr", fs::read_to_string(out.join("query.txt")).unwrap().trim());
        let report = components.agent(RunOptions::from_config(&cfg)).run(&query).unwrap_or_else(|e| panic!("{label}: {e}"));
        eprintln!("{label}: {:?}, {} execution(s), {} model call(s)", report.status, report.outcome.executions, report.model_calls);
        report
    };

    // real outcomes for the scripted flaky case
    let full = run("agent.toml", AblationFlags::default(), "full");
    assert_eq!(full.status, RunStatus::Succeeded);
    let ok = full.outcome.final_result.clone();
    let no_react = run("agent.toml", AblationFlags::only("no_react").unwrap(), "no_react");
    let fail = no_react.outcome.state.history.first().expect("first draft without docs fails").result.clone();
    assert_eq!(fail.status, ExecStatus::RuntimeError);
    write_jsonl(&out.join("exec_flaky.jsonl"), &[fail.clone(), ok.clone(), ok]);
    let budget = AgentConfig::load(&out.join("exhaust.toml")).unwrap().reflection.max_iterations as usize;
    write_jsonl(&out.join("exec_exhaust.jsonl"), &vec![fail; budget + 1]);
    let exhausted = run("exhaust.toml", AblationFlags::default(), "exhaust");
    assert_eq!(exhausted.status, RunStatus::Exhausted);
    write_jsonl(&out.join("executions.jsonl"), &unique_runs(&recorder));

    let cases = load_cases(&out.join("ablation.toml")).unwrap();
    let report = run_ablation(&cases, &standard_variants(), &scratch.path().join("ablation"), build).unwrap();
    eprint!("{}", render_ablation(&report));
    assert!(report.all_directions_hold(), "an ablation did not hurt");

    let runs = unique_runs(&recorder);
    write_jsonl(&out.join("executions.jsonl"), &runs);
    eprintln!("{} replay records, {} recorded executions", store.len(), runs.len());
}
