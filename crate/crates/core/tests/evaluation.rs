use laykari::dataset::Section;
use laykari::evaluation::{
    EvalReport, LabelDim, LabellingScores, boundary_hits, boundary_prf, evaluate_concert, labelling_accuracy,
    render_tables,
};
use laykari::segmentation::SectionSequence;
use proptest::prelude::*;

/// Largest one-to-one matching within `tol`, by exhaustive search.
fn optimal_hits(est: &[f64], gt: &[f64], tol: f64) -> usize {
    fn go(i: usize, est: &[f64], gt: &[f64], used: &mut Vec<bool>, tol: f64) -> usize {
        if i == est.len() {
            return 0;
        }
        let mut best = go(i + 1, est, gt, used, tol);
        for j in 0..gt.len() {
            if !used[j] && (est[i] - gt[j]).abs() <= tol + 1e-9 {
                used[j] = true;
                best = best.max(1 + go(i + 1, est, gt, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(0, est, gt, &mut vec![false; gt.len()], tol)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn bounds(max: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..60.0, 0..=max).prop_map(sorted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn greedy_agrees_with_optimal_when_counts_match(est in bounds(8), gt in bounds(8), tol in 0.5f64..4.0) {
        let greedy = boundary_hits(&est, &gt, tol);
        let best = optimal_hits(&est, &gt, tol);
        prop_assert!(greedy <= best);
        if greedy == best {
            let p = boundary_prf(&est, &gt, tol);
            let expect_p = if est.is_empty() { 0.0 } else { best as f64 / est.len() as f64 };
            let expect_r = if gt.is_empty() { 0.0 } else { best as f64 / gt.len() as f64 };
            prop_assert_eq!(p.precision, expect_p);
            prop_assert_eq!(p.recall, expect_r);
        }
    }

    #[test]
    fn scores_never_drop_when_tolerance_grows(est in bounds(10), gt in bounds(10), t1 in 0.1f64..5.0, dt in 0.0f64..5.0) {
        let a = boundary_prf(&est, &gt, t1);
        let b = boundary_prf(&est, &gt, t1 + dt);
        prop_assert!(b.precision >= a.precision && b.recall >= a.recall && b.f >= a.f);
    }

    #[test]
    fn prf_values_are_consistent(est in bounds(10), gt in bounds(10), tol in 0.1f64..5.0) {
        let p = boundary_prf(&est, &gt, tol);
        for v in [p.precision, p.recall, p.f] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if p.precision + p.recall > 0.0 {
            prop_assert!((p.f - 2.0 * p.precision * p.recall / (p.precision + p.recall)).abs() < 1e-12);
        } else {
            prop_assert_eq!(p.f, 0.0);
        }
    }
}

/// Boundaries at least `2 tol` apart within each list, so every boundary has
/// at most one partner and the matching is unique.
fn spaced(n: usize, tol: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, 0..=n).prop_map(move |gaps| {
        let mut t = 0.0;
        gaps.iter()
            .map(|g| {
                t += 2.0 * tol + 0.01 + 5.0 * g;
                t
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn swapping_roles_swaps_precision_and_recall(est in spaced(8, 1.5), gt in spaced(8, 1.5)) {
        let a = boundary_prf(&est, &gt, 1.5);
        let b = boundary_prf(&gt, &est, 1.5);
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f, b.f);
    }
}

fn seq(parts: &[(f64, Option<u32>, Option<u32>, Option<u32>)]) -> SectionSequence {
    let mut t = 0.0;
    SectionSequence {
        sections: parts
            .iter()
            .map(|&(d, v, p, n)| {
                let s = Section::new(t, t + d, v, p, n);
                t += d;
                s
            })
            .collect(),
    }
}

#[test]
fn labelling_fixtures() {
    let gt = seq(&[(100.0, Some(2), Some(4), Some(4))]);
    assert_eq!(labelling_accuracy(&gt, &gt, LabelDim::Joint).unwrap(), 1.0);

    let est = seq(&[(60.0, Some(2), Some(4), Some(4)), (40.0, Some(2), Some(8), Some(8))]);
    let l = LabellingScores::compute(&est, &gt).unwrap();
    assert_eq!((l.vocal, l.pakhawaj, l.net, l.joint), (1.0, 0.6, 0.6, 0.6));

    let gt = seq(&[
        (40.0, Some(1), Some(1), Some(1)),
        (20.0, None, None, None),
        (40.0, Some(1), Some(1), Some(1)),
    ]);
    let est = seq(&[(50.0, Some(1), Some(1), Some(1)), (50.0, Some(2), Some(2), Some(2))]);
    // Scored span is 80 s, of which the first 40 s agree.
    assert_eq!(labelling_accuracy(&est, &gt, LabelDim::Net).unwrap(), 0.5);
}

#[test]
fn labelling_rejects_gaps_and_uses_the_common_span() {
    let mut gap = seq(&[(10.0, Some(1), Some(1), Some(1)), (10.0, Some(1), Some(1), Some(1))]);
    gap.sections[1].start = 11.0;
    let gt = seq(&[(30.0, Some(1), Some(1), Some(1))]);
    assert!(labelling_accuracy(&gap, &gt, LabelDim::Net).is_err());
    let short = seq(&[(10.0, Some(1), Some(1), Some(1))]);
    assert_eq!(labelling_accuracy(&short, &gt, LabelDim::Joint).unwrap(), 1.0);
}

fn label_seq() -> impl Strategy<Value = SectionSequence> {
    let label = (0usize..4, 0usize..5);
    proptest::collection::vec((1.0f64..20.0, label), 1..8).prop_map(|parts| {
        let (v, p) = ([1, 2, 4, 8], [1, 2, 4, 8, 16]);
        let items: Vec<_> = parts
            .iter()
            .map(|&(d, (a, b))| (d, Some(v[a]), Some(p[b]), Some(v[a].max(p[b]))))
            .collect();
        seq(&items)
    })
}

proptest! {
    #[test]
    fn joint_accuracy_is_bounded_by_each_dimension(est in label_seq(), gt in label_seq()) {
        if let Ok(s) = LabellingScores::compute(&est, &gt) {
            prop_assert!(s.joint <= s.vocal.min(s.pakhawaj).min(s.net) + 1e-12);
            for v in [s.vocal, s.pakhawaj, s.net, s.joint] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn report_averages_and_renders() {
    let gt = seq(&[(20.0, Some(1), Some(2), Some(2)), (20.0, Some(2), Some(4), Some(4))]);
    let est = seq(&[(21.0, Some(1), Some(2), Some(2)), (19.0, Some(2), Some(4), Some(4))]);
    let a = evaluate_concert("a", &est, &gt, &[1.5, 3.0], None).unwrap();
    let b = evaluate_concert("b", &gt, &gt, &[1.5, 3.0], None).unwrap();
    let report = EvalReport::new("seg2", vec![a, b]);
    assert_eq!(report.mean.boundaries.len(), 2);
    assert_eq!(report.mean.boundaries[0].prf.f, 1.0);
    let lab = report.mean.labelling.unwrap();
    assert!((lab.joint - (39.0 / 40.0 + 1.0) / 2.0).abs() < 1e-12);
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["mean"]["boundaries"][1]["tol"], 3.0);
    let text = render_tables(&[report]);
    assert!(text.contains("+-1.5s tolerance") && text.contains("All 3 labels") && text.contains("seg2"));
}
