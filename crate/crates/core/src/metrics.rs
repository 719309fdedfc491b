//! Levenshtein distance and the error rates built on it.

use crate::error::{Error, Result};
use crate::vocab::TokenSequence;

/// Unit-cost Levenshtein distance with two rolling rows.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // keep the shorter sequence on the row axis
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, x) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// One step of an optimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// Full DP table plus one optimal edit script turning `a` into `b`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub distance: usize,
    pub table: Vec<Vec<usize>>,
    pub ops: Vec<EditOp>,
}

/// Debug mode: keeps the whole `(|a|+1) x (|b|+1)` table and backtraces it.
pub fn align<T: PartialEq>(a: &[T], b: &[T]) -> Alignment {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (a.len(), b.len());
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && table[i][j] == table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1])
        {
            ops.push(if a[i - 1] == b[j - 1] {
                EditOp::Match
            } else {
                EditOp::Substitute
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && table[i][j] == table[i - 1][j] + 1 {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    Alignment {
        distance: table[a.len()][b.len()],
        table,
        ops,
    }
}

/// Character error rate over character tokens (control symbols stripped).
pub fn cer(hyp: &TokenSequence, reference: &TokenSequence) -> Result<f64> {
    cer_tokens(&hyp.characters(), &reference.characters())
}

/// CER on raw character slices.
pub fn cer_tokens(hyp: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("CER needs a non-empty reference"));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

fn split_words(tokens: &[u32], separator: u32) -> Vec<&[u32]> {
    tokens
        .split(|&t| t == separator)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word error rate, words being maximal runs between `separator` tokens.
pub fn wer(hyp: &TokenSequence, reference: &TokenSequence, separator: u32) -> Result<f64> {
    let h = hyp.characters();
    let r = reference.characters();
    let hyp_words = split_words(&h, separator);
    let ref_words = split_words(&r, separator);
    if ref_words.is_empty() {
        return Err(Error::UndefinedMetric("WER needs at least one reference word"));
    }
    Ok(edit_distance(&hyp_words, &ref_words) as f64 / ref_words.len() as f64)
}
