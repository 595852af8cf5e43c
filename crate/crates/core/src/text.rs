//! Small text helpers shared by tool selection, retrieval, parameter
//! extraction and answer checking.

use std::sync::LazyLock;

use regex::Regex;

static NUMBER_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex")
});

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "with", "using", "use", "what", "which",
    "how", "do", "does", "we", "you", "given", "then", "than", "per",
];

/// Lowercased alphanumeric tokens with stopwords removed.
///
/// Underscores are kept inside tokens so identifiers such as `solve_ivp`
/// survive as one token.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Whitespace tokenization after splitting punctuation into separate tokens.
/// Used by the text-overlap metrics.
pub fn metric_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                cur.push(ch);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Canonical spelling of a unit string.
///
/// Folds case, whitespace, `^`, superscript digits and a short alias table
/// (`hr`→`h`, `litre`→`l`, `feet`→`ft`, `per min`→`/min`, ...). No dimensional
/// analysis is attempted: two units are compatible iff their canonical
/// spellings are equal.
pub fn normalize_unit(unit: &str) -> String {
    let lowered = unit.trim().to_lowercase();
    let mut s = String::with_capacity(lowered.len());
    for ch in lowered.chars() {
        match ch {
            '³' => s.push('3'),
            '²' => s.push('2'),
            '¹' => s.push('1'),
            '^' | '·' | '*' => {}
            c => s.push(c),
        }
    }
    // "per min", "per-min" → "/min"
    let s = s.replace("per-", "/").replace("per ", "/");
    let s: String = s.split_whitespace().collect::<Vec<_>>().join("");
    s.split('/')
        .map(alias)
        .collect::<Vec<_>>()
        .join("/")
}

fn alias(part: &str) -> String {
    let base = match part {
        "hr" | "hrs" | "hour" | "hours" => "h",
        "mins" | "minute" | "minutes" => "min",
        "sec" | "secs" | "second" | "seconds" => "s",
        "litre" | "litres" | "liter" | "liters" => "l",
        "feet" | "foot" => "ft",
        "feet3" | "foot3" => "ft3",
        "cubicfeet" | "cuft" => "ft3",
        "kilowatt" | "kilowatts" => "kw",
        "gram" | "grams" => "g",
        "kilogram" | "kilograms" | "kgs" => "kg",
        other => other,
    };
    base.to_string()
}

/// Returns true when both spellings fold to the same canonical unit.
pub fn units_compatible(a: &str, b: &str) -> bool {
    normalize_unit(a) == normalize_unit(b)
}

/// Parses a decimal number (optional sign, optional scientific exponent) at
/// the start of `text`. Returns the value and the number of bytes consumed.
///
/// Thousands separators and decimal commas are not accepted.
pub fn parse_number_prefix(text: &str) -> Option<(f64, usize)> {
    let m = NUMBER_PREFIX.find(text)?;
    let end = m.end();
    // "1,5" or "1,000": reject locale separators instead of silently truncating.
    let rest = &text[end..];
    if rest.starts_with(',') && rest[1..].starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    m.as_str().parse::<f64>().ok().map(|v| (v, end))
}

/// SHA-256 digest rendered as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
