use serde::{Deserialize, Serialize};

use super::RagError;

/// A window of a source document plus the metadata needed to cite it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub section_title: String,
    /// Ordinal within the document, from 0.
    pub position: usize,
    pub text: String,
    /// Offset of the first character, counted in chars.
    pub char_offset: usize,
}

impl Chunk {
    /// One-line provenance header injected ahead of the chunk text in prompts.
    pub fn provenance(&self) -> String {
        format!("[source: {} | section: {} | chunk: {}]", self.doc_id, self.section_title, self.position)
    }
}

/// Sliding-window chunking over characters.
///
/// Windows start at `0, stride, 2*stride, ...` and cover
/// `min(window, remaining)` characters. A trailing window that lies wholly
/// inside the previous one is not emitted.
pub fn chunk_document(
    doc_id: &str,
    section_title: &str,
    text: &str,
    window_chars: usize,
    stride_chars: usize,
) -> Result<Vec<Chunk>, RagError> {
    if window_chars == 0 || stride_chars == 0 || stride_chars > window_chars {
        return Err(RagError::InvalidWindow { window: window_chars, stride: stride_chars });
    }
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut prev_end = 0usize;
    while start < chars.len() {
        let end = (start + window_chars).min(chars.len());
        if !chunks.is_empty() && end <= prev_end {
            break;
        }
        let position = chunks.len();
        chunks.push(Chunk {
            chunk_id: format!("{doc_id}#{position}"),
            doc_id: doc_id.to_string(),
            section_title: section_title.to_string(),
            position,
            text: chars[start..end].iter().collect(),
            char_offset: start,
        });
        prev_end = end;
        start += stride_chars;
    }
    Ok(chunks)
}

/// Rebuilds the document from its chunks by dropping each window's overlap
/// with the text already covered.
pub fn reassemble(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    let mut covered = 0usize;
    for c in chunks {
        let skip = covered.saturating_sub(c.char_offset);
        out.extend(c.text.chars().skip(skip));
        covered = covered.max(c.char_offset + c.text.chars().count());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thousand_chars_window_400_stride_300() {
        let text: String = (0..1000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let chunks = chunk_document("d", "s", &text, 400, 300).unwrap();
        let offsets: Vec<usize> = chunks.iter().map(|c| c.char_offset).collect();
        // [600, 1000) already reaches the end, so a window at 900 would be
        // wholly contained in it.
        assert_eq!(offsets, vec![0, 300, 600]);
        assert_eq!(chunks[2].text.len(), 400);
        assert_eq!(chunks.iter().map(|c| c.position).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(chunks[1].chunk_id, "d#1");
    }

    #[test]
    fn trailing_partial_window_kept_when_it_adds_text() {
        let text = "x".repeat(1050);
        let chunks = chunk_document("d", "s", &text, 400, 300).unwrap();
        let offsets: Vec<usize> = chunks.iter().map(|c| c.char_offset).collect();
        assert_eq!(offsets, vec![0, 300, 600, 900]);
        assert_eq!(chunks[3].text.len(), 150);
    }

    #[test]
    fn empty_and_short_texts() {
        assert!(chunk_document("d", "s", "", 400, 300).unwrap().is_empty());
        let one = chunk_document("d", "s", &"y".repeat(100), 400, 300).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].char_offset, 0);
        assert_eq!(one[0].text.len(), 100);
    }

    #[test]
    fn stride_larger_than_window_rejected() {
        assert!(matches!(chunk_document("d", "s", "abc", 2, 3), Err(RagError::InvalidWindow { .. })));
        assert!(matches!(chunk_document("d", "s", "abc", 0, 0), Err(RagError::InvalidWindow { .. })));
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let chunks = chunk_document("d", "s", "ääääää", 4, 2).unwrap();
        assert_eq!(chunks[1].char_offset, 2);
        assert_eq!(chunks[1].text, "ääää");
    }

    proptest! {
        #[test]
        fn reassembly_reproduces_text(text in "\\PC{0,300}", window in 1usize..60, stride_frac in 0.05f64..1.0) {
            let stride = ((window as f64 * stride_frac).ceil() as usize).clamp(1, window);
            let chunks = chunk_document("doc", "sec", &text, window, stride).unwrap();
            prop_assert_eq!(reassemble(&chunks), text);
            prop_assert!(chunks.iter().all(|c| !c.text.is_empty()));
        }
    }
}
