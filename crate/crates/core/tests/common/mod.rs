//! Independent reference implementations shared by the integration tests.
//!
//! These are deliberately naive: set intersections by linear scan, CEAF by
//! enumerating matchings. They share nothing with the library's scorer
//! beyond the `ClusterSet` type.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use shiftcoref::corpus::{ClusterSet, Document, MentionSpan};

pub fn m(i: usize) -> MentionSpan {
    MentionSpan::new(i, i)
}

pub fn clusters(groups: &[&[usize]]) -> ClusterSet {
    groups
        .iter()
        .map(|g| g.iter().map(|&i| m(i)).collect())
        .collect()
}

/// `(recall, precision, f1)`, zero where undefined.
pub type Prf = (f64, f64, f64);

fn prf(recall: f64, precision: f64) -> Prf {
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    (recall, precision, f1)
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn overlap(a: &[MentionSpan], b: &[MentionSpan]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

fn containing<'a>(sys: &'a ClusterSet, mention: &MentionSpan) -> Option<&'a Vec<MentionSpan>> {
    sys.iter().find(|c| c.contains(mention))
}

/// Vilain et al. MUC: a key cluster of size `s` split into `p` pieces by
/// the response (unmatched mentions are pieces of their own) scores `s - p`
/// out of `s - 1`.
fn muc_side(key: &ClusterSet, response: &ClusterSet) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for cluster in key.iter() {
        let mut pieces: Vec<Option<usize>> = Vec::new();
        let mut lone = 0;
        for mention in cluster {
            match response.iter().position(|c| c.contains(mention)) {
                Some(i) => {
                    if !pieces.contains(&Some(i)) {
                        pieces.push(Some(i));
                    }
                }
                None => lone += 1,
            }
        }
        num += (cluster.len() - pieces.len() - lone) as f64;
        den += (cluster.len() - 1) as f64;
    }
    div(num, den)
}

pub fn muc_reference(gold: &ClusterSet, pred: &ClusterSet) -> Prf {
    prf(muc_side(gold, pred), muc_side(pred, gold))
}

/// Per-mention B-cubed: each key mention scores the fraction of its key
/// cluster found in its response cluster.
fn b_cubed_side(key: &ClusterSet, response: &ClusterSet) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for cluster in key.iter() {
        for mention in cluster {
            count += 1;
            if let Some(r) = containing(response, mention) {
                total += overlap(cluster, r) as f64 / cluster.len() as f64;
            }
        }
    }
    div(total, count as f64)
}

pub fn b_cubed_reference(gold: &ClusterSet, pred: &ClusterSet) -> Prf {
    prf(b_cubed_side(gold, pred), b_cubed_side(pred, gold))
}

pub fn phi4_reference(a: &[MentionSpan], b: &[MentionSpan]) -> f64 {
    2.0 * overlap(a, b) as f64 / (a.len() + b.len()) as f64
}

/// Best total similarity over one-to-one matchings of rows to columns,
/// by trying every injection of the smaller side into the larger.
pub fn brute_force_assignment(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows <= cols {
        best_injection(rows, cols, &|r, c| weights[r][c])
    } else {
        best_injection(cols, rows, &|c, r| weights[r][c])
    }
}

fn best_injection(small: usize, large: usize, w: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn go(i: usize, small: usize, used: &mut Vec<bool>, w: &dyn Fn(usize, usize) -> f64) -> f64 {
        if i == small {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w(i, j) + go(i + 1, small, used, w));
                used[j] = false;
            }
        }
        best
    }
    go(0, small, &mut vec![false; large], w)
}

/// Best CEAF matching by search over gold clusters, memoized on the set of
/// response clusters already used. Only overlapping pairs can contribute,
/// so the reachable states stay few even for many small clusters.
pub fn best_matching_dp(gold: &ClusterSet, pred: &ClusterSet) -> f64 {
    assert!(pred.len() <= 128);
    let sims: Vec<Vec<(usize, f64)>> = gold
        .iter()
        .map(|g| {
            pred.iter()
                .enumerate()
                .filter(|(_, p)| overlap(g, p) > 0)
                .map(|(j, p)| (j, phi4_reference(g, p)))
                .collect()
        })
        .collect();
    fn go(
        i: usize,
        used: u128,
        sims: &[Vec<(usize, f64)>],
        memo: &mut HashMap<(usize, u128), f64>,
    ) -> f64 {
        if i == sims.len() {
            return 0.0;
        }
        if let Some(v) = memo.get(&(i, used)) {
            return *v;
        }
        let mut best = go(i + 1, used, sims, memo);
        for &(j, s) in &sims[i] {
            if used & (1 << j) == 0 {
                best = best.max(s + go(i + 1, used | (1 << j), sims, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, &sims, &mut HashMap::new())
}

pub fn ceaf_reference_with(gold: &ClusterSet, pred: &ClusterSet, best: f64) -> Prf {
    prf(div(best, gold.len() as f64), div(best, pred.len() as f64))
}

/// CEAF-phi4 with the matching found by exhaustive enumeration.
pub fn ceaf_reference(gold: &ClusterSet, pred: &ClusterSet) -> Prf {
    let weights: Vec<Vec<f64>> = gold
        .iter()
        .map(|g| pred.iter().map(|p| phi4_reference(g, p)).collect())
        .collect();
    let best = if gold.is_empty() || pred.is_empty() {
        0.0
    } else {
        brute_force_assignment(&weights)
    };
    ceaf_reference_with(gold, pred, best)
}

/// Every way to cluster some subset of `0..n`: label `n` marks "absent".
/// These are the set partitions of `n + 1` elements.
pub fn partial_partitions(n: usize) -> Vec<ClusterSet> {
    fn go(i: usize, n: usize, labels: &mut Vec<usize>, out: &mut Vec<ClusterSet>) {
        if i == n + 1 {
            // element n's block is the absent set
            let absent = labels[n];
            let mut blocks: Vec<Vec<MentionSpan>> = Vec::new();
            let mut ids: Vec<usize> = Vec::new();
            for (e, &l) in labels[..n].iter().enumerate() {
                if l == absent {
                    continue;
                }
                match ids.iter().position(|&x| x == l) {
                    Some(b) => blocks[b].push(m(e)),
                    None => {
                        ids.push(l);
                        blocks.push(vec![m(e)]);
                    }
                }
            }
            out.push(ClusterSet::new(blocks));
            return;
        }
        let next = labels.iter().copied().max().map_or(0, |x| x + 1);
        for l in 0..=next {
            labels.push(l);
            go(i + 1, n, labels, out);
            labels.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, &mut Vec::new(), &mut out);
    out
}

/// Random clustering of `0..n`, each mention present with probability `keep`.
pub fn random_clustering(rng: &mut impl Rng, n: usize, keep: f64) -> ClusterSet {
    let blocks = rng.gen_range(1..=n);
    let mut groups: Vec<Vec<MentionSpan>> = vec![Vec::new(); blocks];
    for i in 0..n {
        if rng.gen_bool(keep) {
            groups[rng.gen_range(0..blocks)].push(m(i));
        }
    }
    groups.retain(|g| !g.is_empty());
    ClusterSet::new(groups)
}

/// Deepest chain of nested gold mentions.
pub fn nesting_depth(doc: &Document) -> usize {
    let mentions: Vec<MentionSpan> = doc.gold_clusters.mentions().collect();
    mentions
        .iter()
        .map(|a| mentions.iter().filter(|b| b.contains(a)).count())
        .max()
        .unwrap_or(0)
}

pub fn close(a: Prf, b: Prf, tol: f64) -> bool {
    (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol && (a.2 - b.2).abs() <= tol
}
