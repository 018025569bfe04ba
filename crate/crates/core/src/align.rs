//! Frame-to-word alignment by character matching.
//!
//! Frame tokens come from a CTC-style recognizer, one (possibly blank)
//! character per frame. Word tokens come from a text tokenizer. Each
//! non-blank frame character is matched greedily, in order, against the
//! concatenated spelling of the non-special words; the frame takes the index
//! of the word that owns the matched character. Unmatched frames are then
//! filled from the nearest matched frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNASSIGNED: i64 = -1;

const DEFAULT_BLANKS: &[&str] = &["", "<pad>", "<blank>", "<s>", "</s>", "|", "_"];
const DEFAULT_SPECIALS: &[&str] = &["CLS", "POS", "SEP", "[CLS]", "[SEP]", "<s>", "</s>", "[PAD]"];
const SUBWORD_MARKERS: &[&str] = &["##", "\u{2581}", "\u{120}"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Frame tokens treated as blank (compared after trimming).
    pub blank_tokens: BTreeSet<String>,
    /// Word tokens that carry no spelling.
    pub special_markers: BTreeSet<String>,
    /// A frame repeating the previous frame's character, with no blank in
    /// between, continues that emission instead of consuming a new letter.
    pub collapse_repeats: bool,
    /// Reject inputs with no non-blank frame instead of returning all `-1`.
    pub error_on_all_blank: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            blank_tokens: DEFAULT_BLANKS.iter().map(|s| s.to_string()).collect(),
            special_markers: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
            collapse_repeats: true,
            error_on_all_blank: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWordAlignment {
    pub word_index: Vec<i64>,
    pub filled: Vec<bool>,
}

impl FrameWordAlignment {
    pub fn from_indices(word_index: Vec<i64>) -> Self {
        let filled = vec![false; word_index.len()];
        FrameWordAlignment { word_index, filled }
    }

    pub fn is_monotone(&self) -> bool {
        self.word_index
            .iter()
            .filter(|&&w| w != UNASSIGNED)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|p| p[0] <= p[1])
    }
}

/// Lowercases and keeps alphanumeric characters only.
fn fold(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn strip_subword(word: &str) -> &str {
    let mut w = word;
    for m in SUBWORD_MARKERS {
        w = w.strip_prefix(m).unwrap_or(w);
    }
    w
}

/// Parses a one-token-per-line file; blank lines are blank tokens.
pub fn parse_token_lines(text: &str) -> Vec<String> {
    text.lines().map(|l| l.trim().to_string()).collect()
}

pub fn align_tokens(frames: &[String], words: &[String], config: &AlignConfig) -> Result<FrameWordAlignment> {
    if frames.is_empty() {
        return Err(Error::Validation("frame token sequence is empty".into()));
    }
    // (character, owning word index)
    let mut spelling: Vec<(char, i64)> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if config.special_markers.contains(w.trim()) {
            continue;
        }
        if w.trim().is_empty() {
            return Err(Error::Validation(format!("word {i} is empty")));
        }
        spelling.extend(fold(strip_subword(w.trim())).chars().map(|c| (c, i as i64)));
    }

    let mut out = vec![UNASSIGNED; frames.len()];
    let mut cursor = 0usize;
    let mut prev: Option<(String, i64)> = None;
    let mut any = false;
    for (f, tok) in frames.iter().enumerate() {
        let raw = tok.trim();
        let folded = if config.blank_tokens.contains(raw) { String::new() } else { fold(raw) };
        if folded.is_empty() {
            prev = None;
            continue;
        }
        any = true;
        if config.collapse_repeats {
            if let Some((p, idx)) = &prev {
                if *p == folded {
                    out[f] = *idx;
                    continue;
                }
            }
        }
        let mut first = None;
        for c in folded.chars() {
            let hit = spelling[cursor..].iter().position(|&(s, _)| s == c).ok_or_else(|| Error::Alignment {
                frame: f,
                detail: format!(
                    "character '{c}' has no match at or after position {cursor} of the word spelling"
                ),
            })?;
            cursor += hit;
            first.get_or_insert(spelling[cursor].1);
            cursor += 1;
        }
        let idx = first.expect("non-empty token");
        out[f] = idx;
        prev = Some((folded, idx));
    }
    if !any && config.error_on_all_blank {
        return Err(Error::Validation("every frame token is blank".into()));
    }
    Ok(FrameWordAlignment::from_indices(out))
}

/// Gives each unassigned frame the index of the nearest assigned frame,
/// preferring the earlier one on equal distance.
pub fn fill_gaps(alignment: &FrameWordAlignment) -> Result<FrameWordAlignment> {
    let idx = &alignment.word_index;
    if alignment.filled.len() != idx.len() {
        return Err(Error::Shape("filled flags and word indices differ in length".into()));
    }
    let n = idx.len();
    let mut before = vec![None; n];
    let mut last = None;
    for f in 0..n {
        if idx[f] != UNASSIGNED {
            last = Some(f);
        }
        before[f] = last;
    }
    let mut after = vec![None; n];
    let mut next = None;
    for f in (0..n).rev() {
        if idx[f] != UNASSIGNED {
            next = Some(f);
        }
        after[f] = next;
    }
    if next.is_none() {
        return Err(Error::Validation("no frame is assigned, nothing to fill from".into()));
    }
    let mut out = alignment.clone();
    for f in 0..n {
        if idx[f] != UNASSIGNED {
            continue;
        }
        let src = match (before[f], after[f]) {
            (Some(b), Some(a)) => {
                if f - b <= a - f {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("at least one frame is assigned"),
        };
        out.word_index[f] = idx[src];
        out.filled[f] = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn worked_example() {
        let frames = strs(&["", "", "T", "", "", "h", "e", "", "F", "i", "r", "s", "t"]);
        let words = strs(&["CLS", "The", "First", "POS"]);
        let a = align_tokens(&frames, &words, &AlignConfig::default()).unwrap();
        assert_eq!(a.word_index, vec![-1, -1, 1, -1, -1, 1, 1, -1, 2, 2, 2, 2, 2]);
        let f = fill_gaps(&a).unwrap();
        assert_eq!(f.word_index, vec![1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert!(f.filled[0] && !f.filled[2]);
    }

    #[test]
    fn single_word() {
        let a = align_tokens(&strs(&["a"]), &strs(&["CLS", "a", "POS"]), &AlignConfig::default()).unwrap();
        assert_eq!(a.word_index, vec![1]);
    }

    #[test]
    fn all_blank_per_flag() {
        let frames = strs(&["", "<pad>", "|"]);
        let words = strs(&["hi"]);
        assert!(align_tokens(&frames, &words, &AlignConfig::default()).is_err());
        let cfg = AlignConfig {
            error_on_all_blank: false,
            ..AlignConfig::default()
        };
        assert_eq!(align_tokens(&frames, &words, &cfg).unwrap().word_index, vec![-1; 3]);
    }

    #[test]
    fn mismatch_names_frame() {
        let err = align_tokens(&strs(&["", "x"]), &strs(&["ab"]), &AlignConfig::default()).unwrap_err();
        match err {
            Error::Alignment { frame, .. } => assert_eq!(frame, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn repeats_and_subwords() {
        let words = strs(&["[CLS]", "he", "##llo", "Ġworld!", "[SEP]"]);
        let frames = strs(&["H", "E", "l", "l", "", "l", "o", "W", "o", "r", "l", "d"]);
        let a = align_tokens(&frames, &words, &AlignConfig::default()).unwrap();
        assert_eq!(a.word_index, vec![1, 1, 2, 2, -1, 2, 2, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn fill_examples() {
        let f = fill_gaps(&FrameWordAlignment::from_indices(vec![-1, 1, -1, -1, 2])).unwrap();
        assert_eq!(f.word_index, vec![1, 1, 1, 2, 2]);
        let f = fill_gaps(&FrameWordAlignment::from_indices(vec![-1, -1, 5])).unwrap();
        assert_eq!(f.word_index, vec![5, 5, 5]);
        let full = FrameWordAlignment::from_indices(vec![0, 1, 1]);
        assert_eq!(fill_gaps(&full).unwrap(), full);
        assert!(fill_gaps(&FrameWordAlignment::from_indices(vec![-1, -1])).is_err());
    }

    #[test]
    fn tie_goes_earlier() {
        let f = fill_gaps(&FrameWordAlignment::from_indices(vec![3, -1, 4])).unwrap();
        assert_eq!(f.word_index, vec![3, 3, 4]);
    }
}
