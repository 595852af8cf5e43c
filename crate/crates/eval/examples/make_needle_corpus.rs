//! Writes the bundled needle corpus: `cargo run -p procalc-eval --example make_needle_corpus -- <dir>`.

use procalc_eval::needle::{generate, BUNDLED_SEED, CORPUS_FILE, QA_FILE};

fn main() -> std::io::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/eval/fixtures/needle".into()));
    std::fs::create_dir_all(&dir)?;
    let (corpus, qa) = generate(BUNDLED_SEED).to_jsonl();
    std::fs::write(dir.join(CORPUS_FILE), corpus)?;
    std::fs::write(dir.join(QA_FILE), qa)
}
