//! Pre-tokenized corpora: one sequence per line, whitespace-separated
//! integer token ids, `#` starts a comment.

use crate::error::{Error, Result};

/// Parses a corpus into its non-empty sequences.
pub fn parse_corpus(text: &str) -> Result<Vec<Vec<u32>>> {
    let mut sequences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("");
        let mut seq = Vec::new();
        for tok in content.split_whitespace() {
            let id = tok.parse::<u32>().map_err(|_| Error::Corpus {
                line: lineno + 1,
                message: format!("`{tok}` is not a token id"),
            })?;
            seq.push(id);
        }
        if !seq.is_empty() {
            sequences.push(seq);
        }
    }
    Ok(sequences)
}

/// All sequences joined end to end.
pub fn flatten(sequences: &[Vec<u32>]) -> Vec<u32> {
    sequences.iter().flatten().copied().collect()
}
