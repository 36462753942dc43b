use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn key(&self) -> (usize, usize) {
        (self.total(), self.deletions + self.insertions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub rate: f64,
    pub counts: EditCounts,
    pub n_ref: usize,
}

/// Minimum word edit script between `reference` and `hypothesis`. Among
/// scripts with equally many edits the one with the fewest insertions plus
/// deletions is chosen, which makes the counts unique.
pub fn align_words(reference: &[&str], hypothesis: &[&str]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<EditCounts> = (0..=m)
        .map(|j| EditCounts {
            insertions: j,
            ..EditCounts::default()
        })
        .collect();
    for i in 1..=n {
        let mut cur = vec![
            EditCounts {
                deletions: i,
                ..EditCounts::default()
            };
            m + 1
        ];
        for j in 1..=m {
            let mut diag = prev[j - 1];
            if reference[i - 1] != hypothesis[j - 1] {
                diag.substitutions += 1;
            }
            let mut del = prev[j];
            del.deletions += 1;
            let mut ins = cur[j - 1];
            ins.insertions += 1;
            cur[j] = [diag, del, ins]
                .into_iter()
                .min_by_key(EditCounts::key)
                .unwrap_or(diag);
        }
        prev = cur;
    }
    prev[m]
}

pub fn wer(hypothesis: &str, reference: &str) -> Result<WerResult> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(Error::Data(
            "WER is undefined for an empty reference".into(),
        ));
    }
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let counts = align_words(&r, &h);
    Ok(WerResult {
        rate: counts.total() as f64 / r.len() as f64,
        counts,
        n_ref: r.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub n_ref_words: usize,
    pub n_utts: usize,
}

/// Corpus-level WER over `(hypothesis, reference)` pairs.
pub fn score<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<ScoreReport> {
    let mut total = ScoreReport {
        wer: 0.0,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        n_ref_words: 0,
        n_utts: 0,
    };
    for (h, r) in pairs {
        let w = wer(h, r)?;
        total.substitutions += w.counts.substitutions;
        total.deletions += w.counts.deletions;
        total.insertions += w.counts.insertions;
        total.n_ref_words += w.n_ref;
        total.n_utts += 1;
    }
    if total.n_utts == 0 {
        return Err(Error::Data("no utterances to score".into()));
    }
    total.wer = (total.substitutions + total.deletions + total.insertions) as f64
        / total.n_ref_words as f64;
    Ok(total)
}
