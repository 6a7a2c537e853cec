use eduaudit::metrics::{mab, mcv, mdb, z_scores};
use eduaudit::profile_space::{
    enumerate_profiles, read_profiles_tsv, write_profiles_tsv, DimensionCatalog,
};
use eduaudit::prompt_forge::{decode_ranking_response, Permutation};
use eduaudit::readability::{analyze_text, total_grade_level};
use eduaudit::stats::{cohens_d, cohens_kappa, kl_divergence, t_test};
use proptest::prelude::*;

fn sample(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

fn permutation() -> impl Strategy<Value = Permutation> {
    Just([1u8, 2, 3, 4, 5])
        .prop_shuffle()
        .prop_map(|e| Permutation::new(e).unwrap())
}

#[test]
fn enumeration_matches_nested_loops() {
    for catalog in [DimensionCatalog::indian(), DimensionCatalog::american()] {
        let ids: Vec<String> = enumerate_profiles(&catalog)
            .iter()
            .map(|p| p.id().to_string())
            .collect();
        let mut combos: Vec<Vec<&str>> = vec![vec![]];
        for d in catalog.dimensions() {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    d.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(v.as_str());
                        c
                    })
                })
                .collect();
        }
        let expected: Vec<String> = combos
            .iter()
            .map(|c| catalog.profile(c).unwrap().id().to_string())
            .collect();
        assert_eq!(ids, expected);
        assert_eq!(ids.len(), catalog.space_size());
    }
}

#[test]
fn profiles_round_trip_through_tsv() {
    let catalog = DimensionCatalog::american();
    let profiles = enumerate_profiles(&catalog);
    let mut buf = Vec::new();
    write_profiles_tsv(&catalog, &profiles, &mut buf).unwrap();
    assert_eq!(
        read_profiles_tsv(&catalog, buf.as_slice()).unwrap(),
        profiles
    );
}

proptest! {
    #[test]
    fn t_and_d_flip_sign_when_samples_swap(a in sample(2..30), b in sample(2..30)) {
        if let (Ok(ab), Ok(ba)) = (t_test(&a, &b), t_test(&b, &a)) {
            prop_assert_eq!(ab.statistic, -ba.statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
            let p = ab.p_value.unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
        if let (Ok(ab), Ok(ba)) = (cohens_d(&a, &b), cohens_d(&b, &a)) {
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_ignores_label_names(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 5..100),
        relabel in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let ra: Vec<usize> = a.iter().map(|x| relabel[*x]).collect();
        let rb: Vec<usize> = b.iter().map(|x| relabel[*x]).collect();
        let k1 = cohens_kappa(&a, &b).unwrap().statistic;
        let k2 = cohens_kappa(&ra, &rb).unwrap().statistic;
        prop_assert!((k1 - k2).abs() < 1e-12);
        prop_assert!(k1 <= 1.0 + 1e-12);
        let self_k = cohens_kappa(&a, &a).unwrap().statistic;
        prop_assert!((self_k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(
        p in prop::collection::vec(0.0..1.0f64, 5),
        q in prop::collection::vec(0.0..1.0f64, 5),
    ) {
        prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
        let kl = kl_divergence(&p, &q).unwrap().statistic;
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn z_scores_are_standardized(x in sample(2..60)) {
        let z = z_scores(&x);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - x.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-9 {
            let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((sd - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(z.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn bias_metrics_are_bounded(x in sample(1..60)) {
        let m = mdb(&x).unwrap();
        prop_assert!(m >= 0.0);
        let a = mab(&x).unwrap();
        let max_abs = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(a >= 0.0 && a <= max_abs + 1e-12);
    }

    #[test]
    fn decoding_inverts_display_order(level in 1u8..=5, perm in permutation()) {
        let shown = perm.position_of(level);
        prop_assert_eq!(perm.level_at(shown), level);
        prop_assert_eq!(decode_ranking_response(&format!("{shown}"), &perm).unwrap(), level);
    }

    #[test]
    fn mcv_stays_in_level_range(levels in prop::collection::vec(1u8..=5, 1..50)) {
        let v = mcv(&levels).unwrap();
        prop_assert!((1.0..=5.0).contains(&v));
    }

    #[test]
    fn text_stats_are_consistent(words in prop::collection::vec("[a-z]{1,12}", 2..40)) {
        let text = format!("{}.", words.join(" "));
        let s = analyze_text(&text).unwrap();
        prop_assert_eq!(s.sentences, 1);
        prop_assert_eq!(s.words, words.len());
        prop_assert!(s.syllables >= s.words);
        prop_assert!(s.complex_words <= s.words);
        prop_assert!(total_grade_level(&text).unwrap().is_finite());
    }
}
