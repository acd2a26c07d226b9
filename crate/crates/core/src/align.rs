//! Character alignment between an edited text and its original.
//!
//! Unique n-gram anchors shared by both texts are chained monotonically,
//! grown into maximal equal blocks, and the gaps between blocks are aligned
//! with an LCS table.

use std::collections::HashMap;

pub const ANCHOR_LEN: usize = 8;
/// Gaps whose DP table would exceed this many cells are left unaligned.
const MAX_GAP_CELLS: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// For each char of the edited text, the matching original char.
    pub map: Vec<Option<usize>>,
    pub matched: usize,
    pub original_len: usize,
}

impl Alignment {
    /// Matched characters over the longer of the two texts; 1.0 for two
    /// empty texts.
    pub fn score(&self) -> f64 {
        let denom = self.map.len().max(self.original_len);
        if denom == 0 {
            1.0
        } else {
            self.matched as f64 / denom as f64
        }
    }

    /// Projects the edited range `[start, end)` onto the original. Returns the
    /// hull of matched characters and the local similarity.
    pub fn project(&self, start: usize, end: usize) -> Option<(usize, usize, f64)> {
        let hits: Vec<usize> = self.map[start..end].iter().flatten().copied().collect();
        let (&lo, &hi) = (hits.first()?, hits.last()?);
        let span = (hi + 1 - lo).max(end - start);
        Some((lo, hi + 1, hits.len() as f64 / span as f64))
    }
}

pub fn align(edited: &[char], original: &[char]) -> Alignment {
    if edited == original {
        return Alignment {
            map: (0..edited.len()).map(Some).collect(),
            matched: edited.len(),
            original_len: original.len(),
        };
    }
    let mut map = vec![None; edited.len()];
    let blocks = anchor_blocks(edited, original);
    let (mut pa, mut pb) = (0usize, 0usize);
    for &(a, b, len) in &blocks {
        align_gap(edited, original, pa..a, pb..b, &mut map);
        for k in 0..len {
            map[a + k] = Some(b + k);
        }
        pa = a + len;
        pb = b + len;
    }
    align_gap(edited, original, pa..edited.len(), pb..original.len(), &mut map);
    let matched = map.iter().filter(|m| m.is_some()).count();
    Alignment {
        map,
        matched,
        original_len: original.len(),
    }
}

fn unique_grams(text: &[char]) -> HashMap<&[char], Option<usize>> {
    let mut seen: HashMap<&[char], Option<usize>> = HashMap::new();
    if text.len() < ANCHOR_LEN {
        return seen;
    }
    for i in 0..=text.len() - ANCHOR_LEN {
        seen.entry(&text[i..i + ANCHOR_LEN])
            .and_modify(|v| *v = None)
            .or_insert(Some(i));
    }
    seen
}

/// Longest strictly increasing subsequence of `values`, as indices.
fn lis(values: &[usize]) -> Vec<usize> {
    let mut tails: Vec<usize> = Vec::new();
    let mut prev = vec![usize::MAX; values.len()];
    for (i, &v) in values.iter().enumerate() {
        let pos = tails.partition_point(|&t| values[t] < v);
        if pos > 0 {
            prev[i] = tails[pos - 1];
        }
        if pos == tails.len() {
            tails.push(i);
        } else {
            tails[pos] = i;
        }
    }
    let mut out = Vec::with_capacity(tails.len());
    let mut cur = tails.last().copied();
    while let Some(i) = cur {
        out.push(i);
        cur = (prev[i] != usize::MAX).then(|| prev[i]);
    }
    out.reverse();
    out
}

/// Non-overlapping, monotone equal blocks `(edited_start, original_start, len)`.
fn anchor_blocks(a: &[char], b: &[char]) -> Vec<(usize, usize, usize)> {
    let ga = unique_grams(a);
    let gb = unique_grams(b);
    let mut pairs: Vec<(usize, usize)> = ga
        .iter()
        .filter_map(|(g, &i)| Some((i?, gb.get(g).copied().flatten()?)))
        .collect();
    pairs.sort_unstable();
    let chain = lis(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());

    let mut blocks: Vec<(usize, usize, usize)> = Vec::new();
    for idx in chain {
        let (i, j) = pairs[idx];
        let (end_a, end_b) = blocks.last().map_or((0, 0), |&(x, y, l)| (x + l, y + l));
        if i < end_a || j < end_b {
            // Inside or crossing the previous block.
            continue;
        }
        let (mut s_a, mut s_b) = (i, j);
        while s_a > end_a && s_b > end_b && a[s_a - 1] == b[s_b - 1] {
            s_a -= 1;
            s_b -= 1;
        }
        let mut len = i - s_a + ANCHOR_LEN;
        while s_a + len < a.len() && s_b + len < b.len() && a[s_a + len] == b[s_b + len] {
            len += 1;
        }
        blocks.push((s_a, s_b, len));
    }
    blocks
}

fn align_gap(
    a: &[char],
    b: &[char],
    ra: std::ops::Range<usize>,
    rb: std::ops::Range<usize>,
    map: &mut [Option<usize>],
) {
    let (n, m) = (ra.len(), rb.len());
    if n == 0 || m == 0 || n.saturating_mul(m) > MAX_GAP_CELLS {
        return;
    }
    let (xa, xb) = (&a[ra.clone()], &b[rb.clone()]);
    // dp[i][j] = LCS length of xa[i..] and xb[j..].
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i * w + j] = if xa[i] == xb[j] {
                dp[(i + 1) * w + j + 1] + 1
            } else {
                dp[(i + 1) * w + j].max(dp[i * w + j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if xa[i] == xb[j] {
            map[ra.start + i] = Some(rb.start + j);
            i += 1;
            j += 1;
        } else if dp[(i + 1) * w + j] >= dp[i * w + j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
}
