//! Byte-pair-encoding subwords over characters.
//!
//! Merges are learned inside words. Every symbol exists in two variants:
//! plain, and word-initial (prefixed with `▁`), so word boundaries survive
//! the round trip through token ids.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BOS, EOS, PAD, UNK};

pub const WORD_START: char = '▁';
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpeModel {
    /// Applied in order.
    pub merges: Vec<(String, String)>,
    /// Id order: specials, then each base character and merge result as
    /// (plain, word-initial).
    pub vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn split_chars(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let merged = format!("{a}{b}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    /// Greedy most-frequent-pair merging; ties go to the lexicographically
    /// smallest pair.
    pub fn train<'a>(
        transcripts: impl IntoIterator<Item = &'a str>,
        n_merges: usize,
    ) -> Result<Self> {
        let mut words: BTreeMap<String, u64> = BTreeMap::new();
        for t in transcripts {
            for w in t.split_whitespace() {
                *words.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        if words.is_empty() {
            return Err(Error::Data("BPE training corpus is empty".into()));
        }
        let mut chars: Vec<String> = words.keys().flat_map(|w| split_chars(w)).collect();
        chars.sort();
        chars.dedup();
        let mut segmented: Vec<(Vec<String>, u64)> =
            words.iter().map(|(w, &c)| (split_chars(w), c)).collect();
        let mut merges = Vec::new();
        for _ in 0..n_merges {
            let mut pairs: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (syms, c) in &segmented {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += c;
                }
            }
            // BTreeMap iterates in lexicographic order, so the first maximum wins ties
            let Some((best, _)) = pairs.iter().fold(
                None,
                |acc: Option<(&(&str, &str), u64)>, (p, &c)| match acc {
                    Some((_, bc)) if bc >= c => acc,
                    _ => Some((p, c)),
                },
            ) else {
                break;
            };
            let (a, b) = (best.0.to_string(), best.1.to_string());
            for (syms, _) in segmented.iter_mut() {
                apply_merge(syms, &a, &b);
            }
            merges.push((a, b));
        }
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let symbols = chars
            .iter()
            .cloned()
            .chain(merges.iter().map(|(a, b)| format!("{a}{b}")));
        for s in symbols {
            vocab.push(s.clone());
            vocab.push(format!("{WORD_START}{s}"));
        }
        Ok(Self::from_parts(merges, vocab))
    }

    pub fn from_parts(merges: Vec<(String, String)>, vocab: Vec<String>) -> Self {
        let mut index = HashMap::new();
        for (i, v) in vocab.iter().enumerate() {
            index.entry(v.clone()).or_insert(i);
        }
        Self {
            merges,
            vocab,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_parts(self.merges, self.vocab)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = split_chars(word);
        for (a, b) in &self.merges {
            apply_merge(&mut syms, a, b);
        }
        if let Some(first) = syms.first_mut() {
            first.insert(0, WORD_START);
        }
        syms
    }

    /// Token ids without BOS/EOS; unseen symbols map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .flat_map(|w| self.segment_word(w))
            .map(|s| self.id(&s).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            let tok = if id == UNK {
                "<unk>"
            } else {
                self.vocab.get(id).map(String::as_str).unwrap_or("<unk>")
            };
            if let Some(rest) = tok.strip_prefix(WORD_START) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(rest);
            } else {
                out.push_str(tok);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_merge_on_aaaa() {
        let m = BpeModel::train(["aaaa"], 1).unwrap();
        assert_eq!(m.merges, vec![("a".to_string(), "a".to_string())]);
        let ids = m.encode("aaaa");
        assert_eq!(ids.len(), 2);
        assert_eq!(m.decode(&ids), "aaaa");
    }

    #[test]
    fn zero_merges_is_character_split() {
        let m = BpeModel::train(["ab ba"], 0).unwrap();
        let toks: Vec<&str> = m
            .encode("ab ba")
            .iter()
            .map(|&i| m.vocab[i].as_str())
            .collect();
        assert_eq!(toks, vec!["▁a", "b", "▁b", "a"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let m = BpeModel::train(["ab cd"], 1).unwrap();
        assert_eq!(m.merges[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(BpeModel::train([" "], 5), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_character_maps_to_unk() {
        let m = BpeModel::train(["ab"], 0).unwrap();
        assert_eq!(m.encode("az")[1], UNK);
    }
}
