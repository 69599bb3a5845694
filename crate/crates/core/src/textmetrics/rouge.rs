use alloc::vec;

use super::{Prf, TokenSeq};

/// Rows up to this length live on the stack.
const STACK_ROW: usize = 64;

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return 0;
    }
    let mut stack = [0usize; STACK_ROW];
    let mut heap;
    let row = if b.len() < STACK_ROW {
        &mut stack[..=b.len()]
    } else {
        heap = vec![0usize; b.len() + 1];
        &mut heap[..]
    };
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { row[j].max(up) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS-based precision (over `hyp`), recall (over `reference`) and F1.
pub fn rouge_l(hyp: &TokenSeq, reference: &TokenSeq) -> Prf {
    if hyp.is_empty() || reference.is_empty() {
        return Prf::ZERO;
    }
    let l = lcs_len(hyp.tokens(), reference.tokens()) as f64;
    Prf::new(l / hyp.len() as f64, l / reference.len() as f64)
}
