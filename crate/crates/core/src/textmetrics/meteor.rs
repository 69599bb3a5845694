//! Exact-match METEOR.
//!
//! The alignment is a maximum one-to-one matching of equal tokens, chosen
//! among all maximum matchings to minimize the chunk count. The chunk count
//! is `m − a` where `a` counts hypothesis neighbours `(i, i+1)` that are
//! matched to reference neighbours `(j, j+1)`, so the search maximizes `a`.
//! The search is exact up to [`MAX_SEARCH_STATES`] memoized states; beyond
//! that a longest-run-first greedy alignment is used.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::TokenSeq;

/// Memo size at which the exact search gives up.
pub const MAX_SEARCH_STATES: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    /// Matched token pairs.
    pub matches: usize,
    /// Contiguous, identically ordered runs of matches.
    pub chunks: usize,
    /// False when the greedy fallback produced the alignment.
    pub exact: bool,
}

const NO_PREV: usize = usize::MAX;

/// Used-reference bitset; references of up to 64 tokens avoid an allocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum UsedKey {
    Word(u64),
    Words(Vec<u64>),
}

struct Search {
    hyp: Vec<usize>,
    cands: Vec<Vec<usize>>,
    rem_after: Vec<usize>,
    quota: Vec<usize>,
    matched: Vec<usize>,
    used: Vec<u64>,
    memo: BTreeMap<(usize, usize, UsedKey), usize>,
}

impl Search {
    fn is_used(&self, j: usize) -> bool {
        self.used[j / 64] >> (j % 64) & 1 == 1
    }

    fn flip(&mut self, j: usize) {
        self.used[j / 64] ^= 1 << (j % 64);
    }

    /// Most adjacencies achievable from hypothesis position `i`, given the
    /// reference position matched at `i − 1`.
    fn best(&mut self, i: usize, prev: usize) -> Option<usize> {
        if i == self.hyp.len() {
            return Some(0);
        }
        let t = self.hyp[i];
        let needed = self.quota[t] - self.matched[t];
        if needed == 0 {
            return self.best(i + 1, NO_PREV);
        }
        let used = match self.used.as_slice() {
            [w] => UsedKey::Word(*w),
            ws => UsedKey::Words(ws.to_vec()),
        };
        let key = (i, prev, used);
        if let Some(&v) = self.memo.get(&key) {
            return Some(v);
        }
        if self.memo.len() >= MAX_SEARCH_STATES {
            return None;
        }
        let mut best = None;
        if self.rem_after[i] >= needed {
            best = self.best(i + 1, NO_PREV);
            best?;
        }
        for k in 0..self.cands[i].len() {
            let j = self.cands[i][k];
            if self.is_used(j) {
                continue;
            }
            let gain = usize::from(prev != NO_PREV && prev + 1 == j);
            self.flip(j);
            self.matched[t] += 1;
            let sub = self.best(i + 1, j);
            self.matched[t] -= 1;
            self.flip(j);
            let v = sub? + gain;
            if best.is_none_or(|b| v > b) {
                best = Some(v);
            }
        }
        // `needed > 0` guarantees an unused candidate or a permitted skip.
        let v = best.unwrap_or(0);
        self.memo.insert(key, v);
        Some(v)
    }
}

fn intern(hyp: &TokenSeq, reference: &TokenSeq) -> (Vec<usize>, Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let mut id = |s: &str| {
        let n = ids.len();
        *ids.entry(alloc::string::String::from(s)).or_insert(n)
    };
    let h: Vec<usize> = hyp.tokens().iter().map(|s| id(s)).collect();
    let r: Vec<usize> = reference.tokens().iter().map(|s| id(s)).collect();
    (h, r, ids.len())
}

fn count_chunks(mut pairs: Vec<(usize, usize)>) -> usize {
    pairs.sort_unstable();
    let adj = pairs
        .windows(2)
        .filter(|w| w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)
        .count();
    pairs.len() - adj
}

/// Repeatedly aligns the longest run of equal unmatched tokens (earliest on
/// ties). Always reaches the maximum matching size.
fn greedy(h: &[usize], r: &[usize]) -> Vec<(usize, usize)> {
    let mut hu = vec![false; h.len()];
    let mut ru = vec![false; r.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best = (0, 0, 0);
        for i in 0..h.len() {
            for j in 0..r.len() {
                let mut l = 0;
                while i + l < h.len()
                    && j + l < r.len()
                    && !hu[i + l]
                    && !ru[j + l]
                    && h[i + l] == r[j + l]
                {
                    l += 1;
                }
                if l > best.2 {
                    best = (i, j, l);
                }
            }
        }
        let (i, j, l) = best;
        if l == 0 {
            return pairs;
        }
        for k in 0..l {
            hu[i + k] = true;
            ru[j + k] = true;
            pairs.push((i + k, j + k));
        }
    }
}

/// Maximum exact-match alignment with the fewest chunks.
pub fn meteor_alignment(hyp: &TokenSeq, reference: &TokenSeq) -> Alignment {
    let (h, r, n_ids) = intern(hyp, reference);
    let mut count_h = vec![0usize; n_ids];
    let mut count_r = vec![0usize; n_ids];
    h.iter().for_each(|&t| count_h[t] += 1);
    r.iter().for_each(|&t| count_r[t] += 1);
    let quota: Vec<usize> = (0..n_ids).map(|t| count_h[t].min(count_r[t])).collect();
    let matches: usize = quota.iter().sum();
    if matches == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
            exact: true,
        };
    }
    let cands = h
        .iter()
        .map(|&t| (0..r.len()).filter(|&j| r[j] == t).collect())
        .collect();
    let mut seen = vec![0usize; n_ids];
    let mut rem_after = vec![0usize; h.len()];
    for i in (0..h.len()).rev() {
        rem_after[i] = seen[h[i]];
        seen[h[i]] += 1;
    }
    let mut search = Search {
        hyp: h.clone(),
        cands,
        rem_after,
        quota,
        matched: vec![0; n_ids],
        used: vec![0; r.len().div_ceil(64)],
        memo: BTreeMap::new(),
    };
    match search.best(0, NO_PREV) {
        Some(adj) => Alignment {
            matches,
            chunks: matches - adj,
            exact: true,
        },
        None => {
            let pairs = greedy(&h, &r);
            debug_assert_eq!(pairs.len(), matches);
            Alignment {
                matches: pairs.len(),
                chunks: count_chunks(pairs),
                exact: false,
            }
        }
    }
}

/// `F · (1 − 0.5·(ch/m)³)` with `F = 10PR / (R + 9P)`; zero when nothing matches.
pub fn meteor(hyp: &TokenSeq, reference: &TokenSeq) -> f64 {
    let a = meteor_alignment(hyp, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let frag = a.chunks as f64 / m;
    let penalty = 0.5 * frag * frag * frag;
    (f * (1.0 - penalty)).clamp(0.0, 1.0)
}
