//! Needle-in-a-haystack retrieval runs.
//!
//! The bundled corpus holds 100 short documents. Twenty of them each plant
//! one fact about an invented piece of equipment; the question for a needle
//! repeats the invented names, which appear nowhere else, so a bag-of-words
//! retriever must rank that document first. The other 80 are generic
//! process-engineering filler.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use procalc_core::rag::{chunk_document, EmbeddingBackend, RagError, VectorIndex};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QA_FILE: &str = "qa.jsonl";
pub const BUNDLED_SEED: u64 = 7;
pub const CORPUS_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum NeedleError {
    #[error("{file}:{line}: {reason}")]
    Format { file: String, line: usize, reason: String },
    #[error("question {0} names no relevant chunk")]
    NoRelevant(String),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleDoc {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleQa {
    pub query_id: String,
    pub question: String,
    pub answer: String,
    /// Chunk ids that answer the question.
    pub relevant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleCorpus {
    pub docs: Vec<NeedleDoc>,
    pub qa: Vec<NeedleQa>,
}

// (equipment name, site, equipment kind, quantity, value with unit)
const NEEDLES: [(&str, &str, &str, &str, &str); 20] = [
    ("Kestrova", "Aldmere", "absorber", "packing factor", "417 1/m"),
    ("Brannock", "Quillfeld", "reboiler", "fouling resistance", "0.00035 m2K/W"),
    ("Tessaly", "Oronvale", "condenser", "approach temperature", "6.5 K"),
    ("Vindrel", "Harrowgate", "crystallizer", "magma density", "212 kg/m3"),
    ("Morcant", "Elsbury", "scrubber", "liquid-to-gas ratio", "3.8 L/m3"),
    ("Galvenor", "Pennath", "centrifuge", "bowl speed", "4200 rpm"),
    ("Ostrelle", "Dunmarrow", "kiln", "shell temperature", "265 C"),
    ("Pyrandel", "Caskwell", "fermenter", "oxygen transfer rate", "88 mmol/L/h"),
    ("Quenlow", "Bratheny", "stripper", "steam ratio", "0.14 kg/kg"),
    ("Rhossick", "Ventmoor", "extruder", "screw speed", "310 rpm"),
    ("Sallowen", "Tirrabel", "digester", "retention time", "23 d"),
    ("Thornvik", "Mellacourt", "cyclone", "cut diameter", "7.2 um"),
    ("Ulverin", "Saxholm", "evaporator", "steam economy", "2.6"),
    ("Varrowind", "Glenmirk", "filter press", "cake moisture", "31 percent"),
    ("Wexlane", "Porthaven", "decanter", "differential speed", "12 rpm"),
    ("Yarnesk", "Colbridge", "spray dryer", "outlet air temperature", "92 C"),
    ("Zelmira", "Hathersage", "ion exchanger", "service flow", "24 BV/h"),
    ("Abernoth", "Ludcombe", "membrane skid", "permeate flux", "18 LMH"),
    ("Corviden", "Ashkettle", "thickener", "underflow density", "1.42 t/m3"),
    ("Drummelin", "Fenwarren", "quench tower", "water recirculation", "540 m3/h"),
];

const FILLER: [&str; 32] = [
    "Pumps are sized from the system curve and the required flow at the duty point.",
    "Heat exchangers are rated by their overall heat transfer coefficient and surface area.",
    "Pressure drop in packed beds grows with gas velocity until the column approaches flooding.",
    "Mass balances are closed around each unit before the energy balance is attempted.",
    "Control valves are usually selected so that normal flow falls between a third and two thirds of travel.",
    "Instrument air must be dry enough that its dew point stays well below ambient temperature.",
    "Batch cycle time includes charging, reaction, cooling, discharge and cleaning.",
    "Insulation thickness is chosen by balancing heat loss against installed cost.",
    "Relief devices are sized for the worst credible overpressure scenario.",
    "Agitator power scales with the cube of impeller speed and the fifth power of diameter.",
    "Fouling factors add a resistance that lowers the clean heat transfer coefficient.",
    "Distillation tray efficiency depends on vapour load, liquid load and physical properties.",
    "Heat tracing keeps viscous lines above their pour point during winter operation.",
    "Cooling water returns warmer than it arrives, and the rise is limited by scaling.",
    "Compressors need anti-surge control when throughput can fall below the surge line.",
    "Plant start-up procedures are written to bring utilities online before process streams.",
    "Sampling points should be placed where the stream is well mixed.",
    "Piping is sloped so that condensate drains toward the traps.",
    "Steam traps that fail open waste energy, while traps that fail shut flood the equipment.",
    "Level transmitters on boiling liquids must account for the density of the froth.",
    "Operators log readings each shift so that slow drifts become visible.",
    "Tank farms are bunded to hold more than the largest tank in the group.",
    "Vacuum systems leak air in, and the leak rate sets the ejector size.",
    "Reaction rate constants usually follow an Arrhenius dependence on temperature.",
    "Dryers are often limited by the rate at which moisture diffuses to the solid surface.",
    "Filtration rate falls as the cake builds up and its resistance increases.",
    "Cyclone efficiency falls off sharply for particles below a few microns.",
    "Evaporator trains reuse vapour from one effect to heat the next.",
    "Membrane performance declines as the surface fouls and must be restored by cleaning.",
    "Centrifugal separators rely on a density difference between the phases.",
    "Material of construction is chosen for corrosion resistance at the operating temperature.",
    "Safety reviews walk through each line and ask what happens if a parameter deviates.",
];

const FILLER_TITLES: [&str; 8] = [
    "Utilities notes",
    "Design rules of thumb",
    "Operating practice",
    "Equipment sizing",
    "Maintenance notes",
    "Safety practice",
    "Unit operations primer",
    "Shift handbook",
];

/// Builds the needle corpus deterministically from `seed`. Needles are
/// scattered among the filler documents.
pub fn generate(seed: u64) -> NeedleCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler_count = CORPUS_SIZE - NEEDLES.len();
    let mut slots: Vec<usize> = (0..CORPUS_SIZE).collect();
    rand::seq::SliceRandom::shuffle(slots.as_mut_slice(), &mut rng);
    let mut needle_slots: Vec<usize> = slots[..NEEDLES.len()].to_vec();
    needle_slots.sort_unstable();

    let mut docs = Vec::with_capacity(CORPUS_SIZE);
    let mut qa = Vec::with_capacity(NEEDLES.len());
    let mut next_needle = 0;
    let mut filler_no = 0;
    for slot in 0..CORPUS_SIZE {
        let doc_id = format!("doc{slot:03}");
        if needle_slots.get(next_needle) == Some(&slot) {
            let (name, site, kind, quantity, value) = NEEDLES[next_needle];
            docs.push(NeedleDoc {
                doc_id: doc_id.clone(),
                title: format!("{site} site log"),
                text: format!(
                    "Commissioning record from the {site} site. The {name} {kind} was run in at its design point, \
                     and its {quantity} settled at {value}. No further adjustment was needed."
                ),
            });
            qa.push(NeedleQa {
                query_id: format!("needle{:02}", next_needle),
                question: format!("What {quantity} did the {name} {kind} at {site} settle at?"),
                answer: value.to_string(),
                relevant: vec![format!("{doc_id}#0")],
            });
            next_needle += 1;
        } else {
            let n = 3 + filler_no % 3;
            let sentences: Vec<&str> = FILLER.choose_multiple(&mut rng, n).copied().collect();
            docs.push(NeedleDoc {
                doc_id,
                title: FILLER_TITLES[filler_no % FILLER_TITLES.len()].to_string(),
                text: sentences.join(" "),
            });
            filler_no += 1;
        }
    }
    debug_assert_eq!(filler_no, filler_count);
    NeedleCorpus { docs, qa }
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(file: &str, text: &str) -> Result<Vec<T>, NeedleError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| NeedleError::Format { file: file.into(), line: i + 1, reason: e.to_string() })
        })
        .collect()
}

impl NeedleCorpus {
    pub fn parse(corpus: &str, qa: &str) -> Result<Self, NeedleError> {
        let c = Self { docs: parse_jsonl(CORPUS_FILE, corpus)?, qa: parse_jsonl(QA_FILE, qa)? };
        if let Some(q) = c.qa.iter().find(|q| q.relevant.is_empty()) {
            return Err(NeedleError::NoRelevant(q.query_id.clone()));
        }
        Ok(c)
    }

    /// Reads `corpus.jsonl` and `qa.jsonl` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, NeedleError> {
        Self::parse(&std::fs::read_to_string(dir.join(CORPUS_FILE))?, &std::fs::read_to_string(dir.join(QA_FILE))?)
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../fixtures/needle/corpus.jsonl"), include_str!("../fixtures/needle/qa.jsonl"))
            .expect("bundled needle corpus is valid")
    }

    pub fn to_jsonl(&self) -> (String, String) {
        let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        (
            lines(self.docs.iter().map(|d| serde_json::to_string(d).expect("serializable")).collect()),
            lines(self.qa.iter().map(|q| serde_json::to_string(q).expect("serializable")).collect()),
        )
    }

    pub fn build_index(&self, backend: &dyn EmbeddingBackend, window: usize, stride: usize) -> Result<VectorIndex, NeedleError> {
        let mut index = VectorIndex::new();
        for d in &self.docs {
            index.add(chunk_document(&d.doc_id, &d.title, &d.text, window, stride)?, backend)?;
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub retrieved: Vec<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision, recall and F1 of one retrieval.
pub fn score_query(query_id: &str, retrieved: Vec<String>, relevant: &[String]) -> QueryScore {
    let hits = retrieved.iter().filter(|r| relevant.contains(r)).count() as f64;
    let precision = if retrieved.is_empty() { 0.0 } else { hits / retrieved.len() as f64 };
    let recall = if relevant.is_empty() { 0.0 } else { hits / relevant.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    QueryScore { query_id: query_id.into(), retrieved, precision, recall, f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleReport {
    pub k: usize,
    pub queries: Vec<QueryScore>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

/// Runs every question through `retrieve(question, k)` (which returns chunk
/// ids, best first) and scores the results.
pub fn needle_run<E>(
    qa: &[NeedleQa],
    k: usize,
    mut retrieve: impl FnMut(&str, usize) -> Result<Vec<String>, E>,
) -> Result<NeedleReport, E> {
    let mut queries = Vec::with_capacity(qa.len());
    for q in qa {
        let got = retrieve(&q.question, k)?;
        queries.push(score_query(&q.query_id, got, &q.relevant));
    }
    let n = queries.len().max(1) as f64;
    let mean = |f: fn(&QueryScore) -> f64| queries.iter().map(f).sum::<f64>() / n;
    Ok(NeedleReport {
        k,
        mean_precision: mean(|q| q.precision),
        mean_recall: mean(|q| q.recall),
        mean_f1: mean(|q| q.f1),
        queries,
    })
}

/// [`needle_run`] against a vector index.
pub fn run_on_index(
    corpus: &NeedleCorpus,
    index: &VectorIndex,
    backend: &dyn EmbeddingBackend,
    k: usize,
) -> Result<NeedleReport, NeedleError> {
    needle_run(&corpus.qa, k, |q, k| {
        Ok(index.retrieve(q, k, backend, None)?.into_iter().map(|h| h.chunk.chunk_id).collect())
    })
}
