use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde_json::Value;

use procalc_core::config::AgentConfig;
use procalc_core::rag::{DEFAULT_STRIDE, DEFAULT_WINDOW};
use procalc_core::runtime::Components;
use procalc_eval::ablation::{load_cases, run_ablation, standard_variants, variants_named};
use procalc_eval::gold::{bundled_cases, parse_cases, run_gold};
use procalc_eval::metrics::NdcgMode;
use procalc_eval::needle::{run_on_index, NeedleCorpus};
use procalc_eval::report::{
    check_thresholds, needle_values, render_ablation, render_gold, render_metrics, render_needle, Threshold,
};
use procalc_eval::suite::{evaluate, read_lines, SuiteOptions};

use crate::admin::embedder;
use crate::args::{EvalCommand, Grades, OutArgs};
use crate::exit::{self, WithCode};

/// Needle runs must find every planted fact unless told otherwise.
const NEEDLE_DEFAULT_REQUIRE: &str = "recall>=1.0";

fn write_report(out: Option<&Path>, text: &str, json: &Value) -> Result<()> {
    let Some(dir) = out else { return Ok(()) };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.txt"), text)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(json)? + "\n")?;
    Ok(())
}

fn parse_thresholds(raw: &[String]) -> Result<Vec<Threshold>> {
    raw.iter().map(|r| r.parse::<Threshold>().code(exit::USAGE)).collect()
}

/// Appends threshold verdicts to `text` and reports whether all were met.
fn apply_thresholds(values: &[(String, f64)], raw: &[String], text: &mut String, json: &mut Value) -> Result<bool> {
    let results = check_thresholds(values, &parse_thresholds(raw)?).code(exit::USAGE)?;
    if !results.is_empty() {
        text.push('\n');
    }
    for r in &results {
        let op = match r.threshold.bound {
            procalc_eval::report::Bound::AtLeast => ">=",
            procalc_eval::report::Bound::AtMost => "<=",
        };
        text.push_str(&format!(
            "{}: {} {op} {} (actual {:.4})\n",
            if r.met { "PASS" } else { "FAIL" },
            r.threshold.metric,
            r.threshold.value,
            r.actual
        ));
    }
    json["thresholds"] = serde_json::to_value(&results)?;
    Ok(results.iter().all(|r| r.met))
}

fn finish(text: &str, json: &Value, out: &OutArgs, ok: bool) -> Result<u8> {
    print!("{text}");
    write_report(out.out.as_deref(), text, json)?;
    Ok(if ok { exit::OK } else { exit::FAILURE })
}

pub fn run(cmd: &EvalCommand) -> Result<u8> {
    match cmd {
        EvalCommand::Metrics { pred, gold, k, ndcg, out } => {
            if k.is_empty() || k.contains(&0) {
                return Err(anyhow!("--k needs positive cutoffs")).code(exit::USAGE);
            }
            let preds = read_lines(pred).code(exit::BAD_INPUT)?;
            let golds = read_lines(gold).code(exit::BAD_INPUT)?;
            let opts = SuiteOptions {
                ks: k.clone(),
                ndcg_mode: match ndcg {
                    Grades::Binary => NdcgMode::Binary,
                    Grades::Graded => NdcgMode::Graded,
                },
                ..SuiteOptions::default()
            };
            let report = evaluate(&pred.display().to_string(), &preds, &gold.display().to_string(), &golds, &opts)
                .code(exit::BAD_INPUT)?;
            let mut text = render_metrics(&report);
            let mut json = serde_json::json!({ "suite": "metrics", "report": report });
            let ok = apply_thresholds(&report.values(), &out.require, &mut text, &mut json)?;
            finish(&text, &json, out, ok)
        }
        EvalCommand::Needle { corpus, k, embed_url, out } => {
            if *k == 0 {
                return Err(anyhow!("--k must be positive")).code(exit::USAGE);
            }
            let corpus = match corpus {
                Some(dir) => NeedleCorpus::load_dir(dir).code(exit::BAD_INPUT)?,
                None => NeedleCorpus::bundled(),
            };
            let mut cfg = AgentConfig::default();
            cfg.rag.embed_url = embed_url.clone();
            let backend = embedder(&cfg);
            let index = corpus.build_index(backend.as_ref(), DEFAULT_WINDOW, DEFAULT_STRIDE).code(exit::SETUP)?;
            let report = run_on_index(&corpus, &index, backend.as_ref(), *k).code(exit::SETUP)?;
            let mut text = render_needle(&report);
            let mut json = serde_json::json!({ "suite": "needle", "report": report });
            let require =
                if out.require.is_empty() { vec![NEEDLE_DEFAULT_REQUIRE.to_string()] } else { out.require.clone() };
            let ok = apply_thresholds(&needle_values(&report), &require, &mut text, &mut json)?;
            finish(&text, &json, out, ok)
        }
        EvalCommand::Gold { fixtures, out } => {
            let cases = match fixtures {
                Some(f) => {
                    let body = std::fs::read_to_string(f)
                        .with_context(|| format!("reading {}", f.display()))
                        .code(exit::BAD_INPUT)?;
                    parse_cases(&body).code(exit::BAD_INPUT)?
                }
                None => bundled_cases(),
            };
            let report = run_gold(&cases);
            let text = render_gold(&report);
            let json = serde_json::json!({ "suite": "gold", "report": report });
            finish(&text, &json, &OutArgs { out: out.clone(), require: vec![] }, report.all_pass())
        }
        EvalCommand::Ablation { cases, variants, work, out } => {
            let cases = load_cases(cases).code(exit::BAD_INPUT)?;
            let variants =
                if variants.is_empty() { standard_variants() } else { variants_named(variants).code(exit::USAGE)? };
            let scratch;
            let work_root = match work {
                Some(w) => w.clone(),
                None => {
                    scratch = tempfile::tempdir()?;
                    scratch.path().to_path_buf()
                }
            };
            let report = run_ablation(&cases, &variants, &work_root, Components::from_config)
                .code(exit::SETUP)?;
            let mut text = render_ablation(&report);
            for v in &report.variants {
                for r in v.runs.iter().filter(|r| r.error.is_some()) {
                    text.push_str(&format!("{} / {}: {}\n", v.name, r.case_id, r.error.as_deref().unwrap_or("")));
                }
            }
            let json = serde_json::json!({ "suite": "ablation", "report": report });
            finish(&text, &json, &OutArgs { out: out.clone(), require: vec![] }, report.all_directions_hold())
        }
    }
}
