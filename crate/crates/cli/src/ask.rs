use anyhow::{anyhow, Context, Result};

use procalc_core::config::AgentConfig;
use procalc_core::pipeline::{RunOptions, RunStatus};
use procalc_core::planner::Query;
use procalc_core::progcache::signature;
use procalc_core::runtime::Components;

use crate::args::AskArgs;
use crate::exit::{self, WithCode};

fn query_text(a: &AskArgs) -> Result<String> {
    let text = match (&a.query, &a.query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(f)) => std::fs::read_to_string(f)
            .with_context(|| format!("reading query file {}", f.display()))
            .code(exit::BAD_INPUT)?,
        (None, None) => unreachable!("clap requires a query"),
    };
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(anyhow!("the query is empty")).code(exit::BAD_INPUT);
    }
    Ok(text)
}

fn configure(a: &AskArgs) -> Result<AgentConfig> {
    let mut cfg = AgentConfig::load(&a.config.config).code(exit::SETUP)?;
    let f = &mut cfg.ablation;
    f.no_react |= a.no_react;
    f.no_external_knowledge |= a.no_external_knowledge;
    f.no_reflection |= a.no_reflection;
    f.no_cache |= a.no_cache;
    if let Some(p) = &a.cache_path {
        cfg.cache.path = p.clone();
    }
    if let Some(d) = &a.tools_dir {
        cfg.tools.dir = Some(d.clone());
    }
    if let Some(u) = &a.embed_url {
        cfg.rag.embed_url = Some(u.clone());
    }
    if let Some(u) = &a.rerank_url {
        cfg.rag.rerank_url = Some(u.clone());
    }
    if let Some(n) = a.max_iterations {
        cfg.reflection.max_iterations = n;
    }
    cfg.validate().code(exit::USAGE)?;
    Ok(cfg)
}

pub fn run(a: &AskArgs) -> Result<u8> {
    let text = query_text(a)?;
    let cfg = configure(a)?;
    let components = Components::from_config(&cfg).code(exit::SETUP)?;
    let mut options = RunOptions::from_config(&cfg);
    options.trace_dir = a.trace.clone();
    // the id only has to be stable for identical questions
    let query = Query::new(format!("q-{}", &signature(&text)[..12]), text);

    let report = match components.agent(options).run(&query) {
        Ok(r) => r,
        Err(e) => {
            if let Some(key) = e.request_key() {
                eprintln!("request key: {key}");
                return Err(e).code(exit::SETUP);
            }
            return Err(e.into());
        }
    };

    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else if let Some(resp) = &report.response {
        println!("{}", resp.answer_text);
    }
    let cache = match report.cache_hit {
        Some(kind) => format!("{kind:?} hit").to_lowercase(),
        None => "miss".into(),
    };
    eprintln!(
        "status: {:?} | tools: {} | executions: {} | model calls: {} | cache: {cache}",
        report.status,
        if report.selected_tools.is_empty() { "-".into() } else { report.selected_tools.join(", ") },
        report.outcome.executions,
        report.model_calls,
    );
    if report.setup_failed() {
        eprintln!("runner setup failed: {}", report.outcome.final_result.stderr.trim());
        return Ok(exit::SETUP);
    }
    Ok(match report.status {
        RunStatus::Succeeded => exit::OK,
        RunStatus::Exhausted => {
            eprintln!("gave up after {} execution(s); last error: {}", report.outcome.executions, report.outcome.final_result.summary());
            exit::EXHAUSTED
        }
    })
}
