//! Word Error Rate with full alignment-operation accounting.
//!
//! `align_edit` runs the unit-cost edit-distance DP and backtraces one
//! optimal alignment with a fixed tie-break (substitution over deletion over
//! insertion), so traces are deterministic. Tokens compare by exact string
//! equality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WerError {
    #[error("reference is empty; WER divides by the reference length")]
    EmptyReference,
    #[error("no (reference, hypothesis) pairs supplied")]
    NoPairs,
    #[error("gloss token {0:?} contains whitespace")]
    TokenWithWhitespace(String),
}

/// An ordered sequence of gloss tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GlossSeq {
    tokens: Vec<String>,
}

impl GlossSeq {
    pub fn new(tokens: Vec<String>) -> Result<Self, WerError> {
        for t in &tokens {
            if t.chars().any(char::is_whitespace) {
                return Err(WerError::TokenWithWhitespace(t.clone()));
            }
        }
        Ok(GlossSeq { tokens })
    }

    /// Split a line on whitespace; empty lines give an empty sequence.
    pub fn parse(line: &str) -> Self {
        GlossSeq {
            tokens: line.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for GlossSeq {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        GlossSeq {
            tokens: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Alignment-operation counts for one or more scored pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub matches: usize,
    pub ref_len: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn hyp_len(&self) -> usize {
        self.matches + self.substitutions + self.insertions
    }

    fn accumulate(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.matches += other.matches;
        self.ref_len += other.ref_len;
    }
}

/// One step of an optimal alignment; indices point into the reference and
/// hypothesis token lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match { ref_idx: usize, hyp_idx: usize },
    Substitute { ref_idx: usize, hyp_idx: usize },
    Delete { ref_idx: usize },
    Insert { hyp_idx: usize },
}

/// Minimal-edit alignment of `hyp` against `ref`, with the operation counts
/// and one optimal trace.
pub fn align_edit(reference: &GlossSeq, hypothesis: &GlossSeq) -> (WerBreakdown, Vec<AlignOp>) {
    let r = reference.tokens();
    let h = hypothesis.tokens();
    let (n, m) = (r.len(), h.len());

    let mut dist = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dist[at(i, 0)] = i;
    }
    for j in 0..=m {
        dist[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = usize::from(r[i - 1] != h[j - 1]);
            let diag = dist[at(i - 1, j - 1)] + sub_cost;
            let del = dist[at(i - 1, j)] + 1;
            let ins = dist[at(i, j - 1)] + 1;
            dist[at(i, j)] = diag.min(del).min(ins);
        }
    }

    // Backtrace, preferring substitution/match over deletion over insertion.
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[at(i, j)];
        if i > 0 && j > 0 {
            let sub_cost = usize::from(r[i - 1] != h[j - 1]);
            if dist[at(i - 1, j - 1)] + sub_cost == here {
                ops.push(if sub_cost == 0 {
                    AlignOp::Match {
                        ref_idx: i - 1,
                        hyp_idx: j - 1,
                    }
                } else {
                    AlignOp::Substitute {
                        ref_idx: i - 1,
                        hyp_idx: j - 1,
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[at(i - 1, j)] + 1 == here {
            ops.push(AlignOp::Delete { ref_idx: i - 1 });
            i -= 1;
            continue;
        }
        ops.push(AlignOp::Insert { hyp_idx: j - 1 });
        j -= 1;
    }
    ops.reverse();

    let mut breakdown = WerBreakdown {
        ref_len: n,
        ..WerBreakdown::default()
    };
    for op in &ops {
        match op {
            AlignOp::Match { .. } => breakdown.matches += 1,
            AlignOp::Substitute { .. } => breakdown.substitutions += 1,
            AlignOp::Delete { .. } => breakdown.deletions += 1,
            AlignOp::Insert { .. } => breakdown.insertions += 1,
        }
    }
    debug_assert_eq!(breakdown.edits(), dist[at(n, m)]);
    breakdown.wer = if n > 0 {
        breakdown.edits() as f64 / n as f64
    } else if m == 0 {
        0.0
    } else {
        f64::INFINITY
    };
    (breakdown, ops)
}

/// WER of one pair; errors on an empty reference.
pub fn wer(reference: &GlossSeq, hypothesis: &GlossSeq) -> Result<f64, WerError> {
    if reference.is_empty() {
        return Err(WerError::EmptyReference);
    }
    Ok(align_edit(reference, hypothesis).0.wer)
}

/// Pooled corpus WER: global operation counts over global reference words.
pub fn corpus_wer(pairs: &[(GlossSeq, GlossSeq)]) -> Result<(f64, WerBreakdown), WerError> {
    if pairs.is_empty() {
        return Err(WerError::NoPairs);
    }
    let mut total = WerBreakdown::default();
    for (reference, hypothesis) in pairs {
        total.accumulate(&align_edit(reference, hypothesis).0);
    }
    if total.ref_len == 0 {
        return Err(WerError::EmptyReference);
    }
    total.wer = total.edits() as f64 / total.ref_len as f64;
    Ok((total.wer, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> GlossSeq {
        GlossSeq::parse(s)
    }

    #[test]
    fn identical_sequences_score_zero() {
        let (b, ops) = align_edit(&seq("A B C"), &seq("A B C"));
        assert_eq!(b.edits(), 0);
        assert_eq!(b.matches, 3);
        assert_eq!(b.wer, 0.0);
        assert!(ops.iter().all(|o| matches!(o, AlignOp::Match { .. })));
    }

    #[test]
    fn substitution_plus_insertion() {
        // ref "A B C" vs hyp "A X C D": S=1, I=1, wer = 2/3.
        let (b, _) = align_edit(&seq("A B C"), &seq("A X C D"));
        assert_eq!(b.substitutions, 1);
        assert_eq!(b.insertions, 1);
        assert_eq!(b.deletions, 0);
        assert_eq!(b.matches, 2);
        assert!((b.wer - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wer_can_exceed_one() {
        let (b, _) = align_edit(&seq("A"), &seq("B C"));
        assert_eq!(b.edits(), 2);
        assert_eq!(b.wer, 2.0);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let (b, _) = align_edit(&seq("A B C D"), &seq(""));
        assert_eq!(b.deletions, 4);
        assert_eq!(b.wer, 1.0);
    }

    #[test]
    fn empty_reference_errors_in_wer() {
        assert!(matches!(
            wer(&seq(""), &seq("A")).unwrap_err(),
            WerError::EmptyReference
        ));
    }

    #[test]
    fn breakdown_identities_hold() {
        let cases = [
            ("A B C", "A B C"),
            ("A B C", "A X C D"),
            ("A", "B C"),
            ("X Y Z W", ""),
            ("", "A B"),
            ("A A A", "A"),
        ];
        for (r, h) in cases {
            let (b, _) = align_edit(&seq(r), &seq(h));
            assert_eq!(b.matches + b.substitutions + b.deletions, b.ref_len);
            assert_eq!(b.hyp_len(), seq(h).len());
            assert_eq!(
                b.deletions as i64 - b.insertions as i64,
                b.ref_len as i64 - seq(h).len() as i64
            );
        }
    }

    #[test]
    fn tokens_compare_case_sensitively() {
        let (b, _) = align_edit(&seq("hello"), &seq("HELLO"));
        assert_eq!(b.substitutions, 1);
    }

    #[test]
    fn trace_is_consistent_with_counts() {
        let (b, ops) = align_edit(&seq("A B C D E"), &seq("A C D X E Y"));
        let subs = ops
            .iter()
            .filter(|o| matches!(o, AlignOp::Substitute { .. }))
            .count();
        let dels = ops.iter().filter(|o| matches!(o, AlignOp::Delete { .. })).count();
        let inss = ops.iter().filter(|o| matches!(o, AlignOp::Insert { .. })).count();
        assert_eq!(subs, b.substitutions);
        assert_eq!(dels, b.deletions);
        assert_eq!(inss, b.insertions);
        // Ref/hyp indices must each advance 0..len in order.
        let mut ri = 0;
        let mut hi = 0;
        for op in &ops {
            match *op {
                AlignOp::Match { ref_idx, hyp_idx } | AlignOp::Substitute { ref_idx, hyp_idx } => {
                    assert_eq!(ref_idx, ri);
                    assert_eq!(hyp_idx, hi);
                    ri += 1;
                    hi += 1;
                }
                AlignOp::Delete { ref_idx } => {
                    assert_eq!(ref_idx, ri);
                    ri += 1;
                }
                AlignOp::Insert { hyp_idx } => {
                    assert_eq!(hyp_idx, hi);
                    hi += 1;
                }
            }
        }
        assert_eq!(ri, 5);
        assert_eq!(hi, 6);
    }

    #[test]
    fn corpus_pooling_arithmetic() {
        // Pair A: 1 error / 1 word; pair B: 0 errors / 3 words -> 0.25.
        let pairs = vec![
            (seq("A"), seq("B")),
            (seq("C D E"), seq("C D E")),
        ];
        let (w, totals) = corpus_wer(&pairs).unwrap();
        assert!((w - 0.25).abs() < 1e-15);
        assert_eq!(totals.ref_len, 4);
        assert_eq!(totals.edits(), 1);
    }

    #[test]
    fn corpus_homogeneous_pairs_keep_rate() {
        let pairs = vec![
            (seq("A B"), seq("A X")),
            (seq("C D"), seq("C Y")),
        ];
        let (w, _) = corpus_wer(&pairs).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn corpus_single_pair_matches_wer() {
        let pairs = vec![(seq("A B C"), seq("A X C D"))];
        let (w, _) = corpus_wer(&pairs).unwrap();
        assert_eq!(w, wer(&seq("A B C"), &seq("A X C D")).unwrap());
    }

    #[test]
    fn corpus_rejects_empty_inputs() {
        assert!(matches!(corpus_wer(&[]).unwrap_err(), WerError::NoPairs));
        let pairs = vec![(seq(""), seq(""))];
        assert!(matches!(
            corpus_wer(&pairs).unwrap_err(),
            WerError::EmptyReference
        ));
    }

    #[test]
    fn gloss_seq_rejects_whitespace_tokens() {
        assert!(GlossSeq::new(vec!["A B".into()]).is_err());
    }
}
