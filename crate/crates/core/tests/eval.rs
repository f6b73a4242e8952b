use dive_core::eval::{
    confounding_metric, embedding_frechet, judge_outputs, success_rate, NuisanceFlip,
};
use dive_core::models::OracleOutput;
use proptest::prelude::*;

fn output(label_prob: f64, shape: usize, style: usize, embedding: Vec<f64>) -> OracleOutput {
    OracleOutput {
        embedding,
        label_prob,
        shape,
        style,
        rotation_bin: 0,
        scale_bin: 2,
    }
}

fn arb_output() -> impl Strategy<Value = OracleOutput> {
    (0.0f64..1.0, 0usize..16, 0usize..8, prop::collection::vec(-1.0f64..1.0, 4))
        .prop_map(|(p, sh, st, e)| output(p, sh, st, e))
}

fn arb_set(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), n..n + 8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn success_never_exceeds_validity(
        cases in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, arb_output(), arb_output()), 1..40)
    ) {
        let js: Vec<_> = cases.iter().map(|(px, pc, ox, oc)| judge_outputs(*px, *pc, ox, oc)).collect();
        let s = success_rate(&js).unwrap();
        prop_assert!(s.rate <= s.validity);
        for j in &js {
            prop_assert!(!j.success || j.valid);
            prop_assert!((0.0..=2.0).contains(&j.proximity));
        }
    }

    #[test]
    fn unchanged_input_is_never_a_success(p in 0.0f64..1.0, o in arb_output()) {
        let j = judge_outputs(p, p, &o, &o);
        prop_assert!(!j.success && !j.valid);
        prop_assert_eq!(j.proximity, 0.0);
    }

    #[test]
    fn confounding_ignores_order(
        flips in prop::collection::vec((0u8..2, 0usize..2, 0usize..2), 1..30),
        seed in 0u64..1000
    ) {
        let v: Vec<NuisanceFlip> = flips
            .iter()
            .map(|&(t, a, b)| NuisanceFlip { target_class: t, original_group: a, cf_group: b })
            .collect();
        let mut w = v.clone();
        dive_core::tensor::SeededRng::new(seed).shuffle(&mut w);
        prop_assert_eq!(confounding_metric(&v).unwrap(), confounding_metric(&w).unwrap());
    }

    #[test]
    fn frechet_is_symmetric_and_non_negative(a in arb_set(4), b in arb_set(4)) {
        let ab = embedding_frechet(&a, &b).unwrap();
        let ba = embedding_frechet(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab));
    }
}
