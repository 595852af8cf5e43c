//! Index, cache and tool housekeeping.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use procalc_core::config::AgentConfig;
use procalc_core::progcache::ProgramCache;
use procalc_core::rag::{chunk_document, EmbeddingBackend, HashedBagOfWords, HttpEmbedding, VectorIndex};
use procalc_core::toolhub::Registry;

use crate::args::{CacheArgs, CacheCommand, IndexCommand, ToolsCommand};
use crate::exit::{self, WithCode};

/// The config at `path`, or defaults when there is no such file.
fn config_or_default(path: &Path) -> Result<AgentConfig> {
    if path.exists() {
        AgentConfig::load(path).code(exit::SETUP)
    } else {
        Ok(AgentConfig::default())
    }
}

pub fn embedder(cfg: &AgentConfig) -> Box<dyn EmbeddingBackend> {
    match &cfg.rag.embed_url {
        Some(url) => Box::new(HttpEmbedding::new(url.clone(), cfg.rag.embed_model.clone(), cfg.rag.embed_dim)),
        None => Box::new(HashedBagOfWords::new(cfg.rag.embed_dim)),
    }
}

pub fn index(cmd: &IndexCommand) -> Result<u8> {
    match cmd {
        IndexCommand::Add { config, doc, title, id, index } => {
            let cfg = config_or_default(&config.config)?;
            let dir = index.clone().unwrap_or_else(|| cfg.rag.index_path.clone());
            let text = std::fs::read_to_string(doc)
                .with_context(|| format!("reading {}", doc.display()))
                .code(exit::BAD_INPUT)?;
            let stem = doc.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "doc".into());
            let doc_id = id.clone().unwrap_or_else(|| stem.clone());
            let title = title.clone().unwrap_or_else(|| stem.replace('_', " "));
            let chunks = chunk_document(&doc_id, &title, text.trim(), cfg.rag.window, cfg.rag.stride).code(exit::BAD_INPUT)?;
            let mut idx = VectorIndex::load(&dir).code(exit::SETUP)?;
            let added = idx.add(chunks, embedder(&cfg).as_ref())?;
            idx.save(&dir)?;
            println!("added {added} chunk(s) from {doc_id}; {} now holds {} chunk(s)", dir.display(), idx.len());
        }
        IndexCommand::Stats { config, index } => {
            let cfg = config_or_default(&config.config)?;
            let dir = index.clone().unwrap_or_else(|| cfg.rag.index_path.clone());
            let idx = VectorIndex::load(&dir).code(exit::SETUP)?;
            let docs: BTreeSet<&str> = idx.chunks().iter().map(|c| c.doc_id.as_str()).collect();
            println!("index: {}", dir.display());
            println!("chunks: {}", idx.len());
            println!("documents: {}", docs.len());
            println!("dimension: {}", idx.dimension().map_or("-".into(), |d| d.to_string()));
        }
    }
    Ok(exit::OK)
}

fn open_cache(a: &CacheArgs) -> Result<ProgramCache> {
    let path: PathBuf = match &a.cache_path {
        Some(p) => p.clone(),
        None => config_or_default(&a.config.config)?.cache.path,
    };
    ProgramCache::open(path).code(exit::SETUP)
}

pub fn cache(cmd: &CacheCommand) -> Result<u8> {
    match cmd {
        CacheCommand::List(a) => {
            let rows: Vec<Vec<String>> = open_cache(a)?
                .list()
                .iter()
                .map(|e| {
                    vec![
                        e.signature[..12].to_string(),
                        e.hit_count.to_string(),
                        e.created_at.format("%Y-%m-%d %H:%M").to_string(),
                        e.query_text.chars().take(60).collect(),
                    ]
                })
                .collect();
            print!("{}", procalc_eval::report::table(&["signature", "hits", "created", "query"], &rows));
        }
        CacheCommand::Clear(a) => println!("removed {} entr(ies)", open_cache(a)?.clear()?),
        CacheCommand::Stats(a) => {
            let s = open_cache(a)?.stats();
            println!("entries: {}\nwith embedding: {}\ntotal hits: {}", s.entries, s.with_embedding, s.total_hits);
        }
    }
    Ok(exit::OK)
}

fn registry(dir: &Option<PathBuf>) -> Result<Registry> {
    match dir {
        Some(d) => Registry::load_dir(d).code(exit::BAD_INPUT),
        None => Ok(Registry::bundled()),
    }
}

pub fn tools(cmd: &ToolsCommand) -> Result<u8> {
    match cmd {
        ToolsCommand::List { tools_dir } => {
            let reg = registry(tools_dir)?;
            let width = reg.iter().map(|t| t.tool_id.len()).max().unwrap_or(0);
            for t in reg.iter() {
                println!("{:<width$}  {}", t.tool_id, t.overview);
            }
        }
        ToolsCommand::Show { tool_id, tools_dir } => {
            let reg = registry(tools_dir)?;
            let t = reg.get(tool_id).ok_or_else(|| anyhow!("no tool {tool_id:?}")).code(exit::BAD_INPUT)?;
            println!("{} ({})\n\n{}\n\n{}\n\nReturns: {}\n\n{}", t.name, t.tool_id, t.overview, t.args_table(), t.response_schema, t.docs.trim_end());
            println!("\nImport markers: {}", t.import_markers.join(", "));
        }
    }
    Ok(exit::OK)
}
