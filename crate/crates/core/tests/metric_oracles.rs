//! Metrics checked against brute-force reference implementations.

use proptest::prelude::*;
use tinv_core::metrics::{bleu, lcs_len, rouge, token_f1, RougeVariant, BLEU_EPSILON};

#[path = "support/oracle.rs"]
mod oracle;

use oracle::{random_pairs, rel_err};

#[test]
fn oracle_self_check() {
    // Hand-computed values the oracle must reproduce before it is trusted.
    let (a, b, c, d, e) = (0u8, 1u8, 2u8, 3u8, 4u8);
    let (_, _, f1) = oracle::token_f1(&[a, b, c], &[a, b, d]);
    assert!((f1 - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(oracle::lcs(&[a, b, c], &[a, c, b]), 2);
    let want = 100.0 * (0.75f64 * (2.0 / 3.0) * 0.5 * BLEU_EPSILON).powf(0.25);
    assert!(rel_err(oracle::bleu(&[a, b, c, d], &[a, b, c, e]), want) < 1e-12);
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let mut worst = 0.0f64;
    for (cand, reference) in random_pairs(20_240_601, 200) {
        let (p, r, f1) = oracle::token_f1(&cand, &reference);
        let got = token_f1(&cand, &reference).unwrap();
        let pairs = [
            (got.precision, p),
            (got.recall, r),
            (got.f1, f1),
            (
                bleu(&cand, &reference, 4).unwrap(),
                oracle::bleu(&cand, &reference),
            ),
            (
                rouge(&cand, &reference, RougeVariant::R1).unwrap(),
                oracle::rouge_n(&cand, &reference, 1),
            ),
            (
                rouge(&cand, &reference, RougeVariant::R2).unwrap(),
                oracle::rouge_n(&cand, &reference, 2),
            ),
            (
                rouge(&cand, &reference, RougeVariant::RL).unwrap(),
                oracle::rouge_l(&cand, &reference),
            ),
        ];
        for (i, (g, w)) in pairs.into_iter().enumerate() {
            let err = rel_err(g, w);
            assert!(
                err <= 1e-9,
                "metric {i}: got {g}, oracle {w} for {cand:?} vs {reference:?}"
            );
            worst = worst.max(err);
        }
        assert_eq!(lcs_len(&cand, &reference), oracle::lcs(&cand, &reference));
    }
    assert!(worst <= 1e-9);
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 1..40)
}

proptest! {
    #[test]
    fn identity_scores_are_exactly_100(x in seq()) {
        prop_assert_eq!(token_f1(&x, &x).unwrap().f1, 100.0);
        prop_assert_eq!(bleu(&x, &x, 4).unwrap(), 100.0);
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            prop_assert_eq!(rouge(&x, &x, v).unwrap(), 100.0);
        }
    }

    #[test]
    fn token_f1_symmetry(a in seq(), b in seq()) {
        let ab = token_f1(&a, &b).unwrap();
        let ba = token_f1(&b, &a).unwrap();
        prop_assert_eq!(ab.f1, ba.f1);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
    }

    #[test]
    fn tf1_is_100_iff_same_multiset(a in seq(), b in seq()) {
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_unstable();
        sb.sort_unstable();
        prop_assert_eq!(token_f1(&a, &b).unwrap().f1 == 100.0, sa == sb);
    }

    #[test]
    fn bounded_scores(a in prop::collection::vec(0u8..6, 0..40), b in seq()) {
        let tf = token_f1(&a, &b).unwrap();
        for v in [tf.precision, tf.recall, tf.f1, bleu(&a, &b, 4).unwrap()] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        for v in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL] {
            prop_assert!((0.0..=100.0).contains(&rouge(&a, &b, v).unwrap()));
        }
        prop_assert!(lcs_len(&a, &b) <= a.len().min(b.len()));
    }

    #[test]
    fn truncating_candidate_never_adds_matches(a in seq(), b in seq()) {
        let shorter = &a[..a.len() - 1];
        for n in 1..=4 {
            prop_assert!(
                tinv_core::metrics::clipped_overlap(shorter, &b, n)
                    <= tinv_core::metrics::clipped_overlap(&a, &b, n)
            );
        }
    }
}
