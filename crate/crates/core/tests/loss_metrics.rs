use proptest::prelude::*;
use tritrans::config::LossConfig;
use tritrans::decoder::DecoderOutput;
use tritrans::loss::{ppa_loss, total_loss, weight_map};
use tritrans::metrics::{self, MetricReport};
use tritrans::tensor::{Graph, Tensor};

fn binary(side: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY, side * side).prop_map(|v| v.into_iter().map(|b| b as u8 as f64).collect())
}

fn probabilities(side: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, side * side)
}

fn plane(side: usize, v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_f64(&[side, side], &v).unwrap()
}

fn image(side: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(&[1, 1, side, side], v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative(gt in binary(6), logits in prop::collection::vec(-8.0f64..8.0, 36)) {
        let g = Graph::new();
        let l = ppa_loss(&g, g.constant(image(6, &logits)), g.constant(image(6, &gt)), &LossConfig::default()).unwrap();
        let v = g.value(l).item();
        prop_assert!(v.is_finite() && v >= 0.0, "{}", v);
    }

    #[test]
    fn weight_map_bounded(gt in binary(8)) {
        let g = Graph::new();
        let w = weight_map(&g, g.constant(image(8, &gt)), &LossConfig::default()).unwrap();
        prop_assert!(g.value(w).data().iter().all(|&v| (1.0..=6.0).contains(&v)));
    }

    #[test]
    fn total_is_sum_of_terms(gt in binary(4), seeds in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 16), 1..5)) {
        let g = Graph::new();
        let gtv = g.constant(image(4, &gt));
        let vars: Vec<_> = seeds.iter().map(|l| g.constant(image(4, l))).collect();
        let out = DecoderOutput { final_logits: vars[0], side_logits: vars[1..].to_vec() };
        let cfg = LossConfig::default();
        let total = g.value(total_loss(&g, &out, gtv, &cfg).unwrap()).item();
        let sum: f64 = vars.iter().map(|&v| g.value(ppa_loss(&g, v, gtv, &cfg).unwrap()).item()).sum();
        prop_assert!((total - sum).abs() < 1e-9);
    }

    #[test]
    fn metrics_bounded(s in probabilities(6), gt in binary(6)) {
        let (s, gt) = (plane(6, s), plane(6, gt));
        let r = metrics::score_image(&s, &gt).unwrap();
        for v in [r.mae, r.emeasure, r.smeasure].into_iter().chain(r.fmeasure) {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
        for (p, rc) in r.pr.into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&rc));
        }
    }

    #[test]
    fn mae_complement_sums_to_one(s in probabilities(5), gt in binary(5)) {
        let inv: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let (s, inv, gt) = (plane(5, s), plane(5, inv), plane(5, gt));
        let total = metrics::mae(&s, &gt).unwrap() + metrics::mae(&inv, &gt).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_falls_as_threshold_rises(s in probabilities(6), gt in binary(6)) {
        prop_assume!(gt.iter().any(|&v| v == 1.0));
        let pr = metrics::pr_curve(&plane(6, s), &plane(6, gt)).unwrap().unwrap();
        prop_assert_eq!(pr.len(), 256);
        prop_assert_eq!(pr[0].1, 1.0);
        for w in pr.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn metrics_are_deterministic(s in probabilities(4), gt in binary(4)) {
        let (s, gt) = (plane(4, s), plane(4, gt));
        prop_assert_eq!(metrics::score_image(&s, &gt).unwrap(), metrics::score_image(&s, &gt).unwrap());
    }
}

#[test]
fn limit_cases_of_the_loss() {
    let cfg = LossConfig::default();
    for (gt, logit) in [(0.0, -40.0), (1.0, 40.0)] {
        let g = Graph::new();
        let l = ppa_loss(&g, g.constant(Tensor::full(&[2, 1, 8, 8], logit)), g.constant(Tensor::full(&[2, 1, 8, 8], gt)), &cfg)
            .unwrap();
        assert!(g.value(l).item() < 1e-12);
    }
}

#[test]
fn mae_examples() {
    let gt = plane(4, (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect());
    assert_eq!(metrics::mae(&gt, &gt).unwrap(), 0.0);
    assert_eq!(metrics::mae(&Tensor::full(&[4, 4], 0.5), &gt).unwrap(), 0.5);
}

#[test]
fn f_measure_extremes() {
    let gt = plane(4, (0..16).map(|i| (i < 6) as u8 as f64).collect());
    let inv = gt.map(|v| 1.0 - v);
    assert_eq!(metrics::adaptive_fmeasure(&gt, &gt).unwrap(), Some(1.0));
    assert_eq!(metrics::adaptive_fmeasure(&inv, &gt).unwrap(), Some(0.0));
    assert_eq!(metrics::adaptive_fmeasure(&gt, &Tensor::zeros(&[4, 4])).unwrap(), None);
}

#[test]
fn e_measure_of_perfect_binary_match() {
    let gt = plane(4, (0..16).map(|i| (i % 2) as f64).collect());
    assert!((metrics::e_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_prediction_scores_below_perfect() {
    let gt = plane(8, (0..64).map(|i| ((i / 8) < 3 && (i % 8) < 5) as u8 as f64).collect());
    let m = gt.sum() / 64.0;
    let uniform = metrics::s_measure(&Tensor::full(&[8, 8], m), &gt).unwrap();
    assert!(uniform < metrics::s_measure(&gt, &gt).unwrap());
}

#[test]
fn pr_of_perfect_prediction() {
    let gt = plane(4, (0..16).map(|i| (i % 5 == 0) as u8 as f64).collect());
    let pr = metrics::pr_curve(&gt, &gt).unwrap().unwrap();
    // At threshold 0 every pixel is predicted positive, so precision is the
    // foreground fraction there; every positive threshold is exact.
    assert_eq!(pr[0].1, 1.0);
    assert!(pr[1..].iter().all(|&(p, r)| p == 1.0 && r == 1.0));
}

#[test]
fn dataset_report_is_unweighted_mean() {
    let gt = plane(4, (0..16).map(|i| (i < 8) as u8 as f64).collect());
    let half = Tensor::full(&[4, 4], 0.5);
    let report = MetricReport::from_pairs("set", [(&gt, &gt), (&half, &gt)]).unwrap();
    assert_eq!(report.images, 2);
    assert!((report.mae - 0.25).abs() < 1e-12);
    assert_eq!(report.pr.len(), 256);
    assert!(report.lines().contains("set MAE"));
    assert!(report.pr_csv().lines().count() >= 256);
}
