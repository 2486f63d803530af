//! Brute-force metric reference implementations shared by test targets.
//! Deliberately naive: explicit n-gram lists, linear-scan counting,
//! product-form BLEU and memoized-recursion LCS.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BLEU_EPSILON: f64 = 1e-9;

pub fn ngrams(seq: &[u8], n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= seq.len() {
        out.push(seq[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn occurrences(list: &[Vec<u8>], gram: &[u8]) -> usize {
    list.iter().filter(|g| g.as_slice() == gram).count()
}

pub fn clipped(cand: &[u8], reference: &[u8], n: usize) -> usize {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let mut distinct: Vec<Vec<u8>> = Vec::new();
    for g in &c {
        if !distinct.contains(g) {
            distinct.push(g.clone());
        }
    }
    distinct
        .iter()
        .map(|g| occurrences(&c, g).min(occurrences(&r, g)))
        .sum()
}

fn f(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn token_f1(cand: &[u8], reference: &[u8]) -> (f64, f64, f64) {
    let o = clipped(cand, reference, 1) as f64;
    let p = if cand.is_empty() {
        0.0
    } else {
        o / cand.len() as f64
    };
    let r = o / reference.len() as f64;
    (100.0 * p, 100.0 * r, 100.0 * f(p, r))
}

pub fn bleu(cand: &[u8], reference: &[u8]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let orders = 4.min(reference.len());
    let mut product = 1.0;
    for n in 1..=orders {
        let total = ngrams(cand, n).len();
        let m = clipped(cand, reference, n);
        product *= if m == 0 {
            BLEU_EPSILON
        } else {
            m as f64 / total as f64
        };
    }
    let bp = if cand.len() < reference.len() {
        (1.0 - reference.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * product.powf(1.0 / orders as f64)
}

pub fn rouge_n(cand: &[u8], reference: &[u8], n: usize) -> f64 {
    let (c, r) = (ngrams(cand, n).len(), ngrams(reference, n).len());
    if c == 0 || r == 0 {
        return if c == r && cand == reference {
            100.0
        } else {
            0.0
        };
    }
    let m = clipped(cand, reference, n) as f64;
    100.0 * f(m / c as f64, m / r as f64)
}

/// Memoized recursion over suffixes; quadratic in the lengths.
pub fn lcs(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

pub fn rouge_l(cand: &[u8], reference: &[u8]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let l = lcs(cand, reference) as f64;
    100.0 * f(l / cand.len() as f64, l / reference.len() as f64)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn random_pairs(seed: u64, count: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let alphabet = rng.gen_range(2..=8u8);
            let mut seq = |min: usize| {
                let len = rng.gen_range(min..=50);
                (0..len)
                    .map(|_| rng.gen_range(0..alphabet))
                    .collect::<Vec<u8>>()
            };
            let c = seq(0);
            (c, seq(1))
        })
        .collect()
}
