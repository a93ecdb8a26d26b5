use evigrid::fusion::FusedBelief;
use evigrid::metrics::{
    combined_loss, combined_loss_gradient, false_belief_metrics, layer_error, loss_mask, LossWeights, TaskLosses,
};
use evigrid::Layer;
use proptest::prelude::*;

fn losses() -> impl Strategy<Value = TaskLosses> {
    (0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0).prop_map(|(a, b, c, d)| TaskLosses {
        grid_map: a,
        evidence: b,
        localization: c,
        classification: d,
    })
}

fn weights() -> impl Strategy<Value = LossWeights> {
    (0.2f64..3.0, 0.2f64..3.0, 0.2f64..3.0, 0.2f64..3.0).prop_map(|(a, b, c, d)| LossWeights::new(a, b, c, d).unwrap())
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(l in losses(), w in weights()) {
        let g = combined_loss_gradient(&l, &w).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = w.sigma;
            let mut down = w.sigma;
            up[i] += h;
            down[i] -= h;
            let f = |s: [f64; 4]| combined_loss(&l, &LossWeights::new(s[0], s[1], s[2], s[3]).unwrap()).unwrap().0;
            let numeric = (f(up) - f(down)) / (2.0 * h);
            prop_assert!((numeric - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{} vs {}", numeric, g[i]);
        }
    }

    #[test]
    fn loss_is_minimized_where_the_gradient_vanishes(l in losses()) {
        // sigma^2 = l for the halved terms and 2 l for the others
        prop_assume!([l.grid_map, l.evidence, l.localization, l.classification].iter().all(|&v| v > 0.05));
        let s = [l.grid_map.sqrt(), (2.0 * l.evidence).sqrt(), l.localization.sqrt(), (2.0 * l.classification).sqrt()];
        let w = LossWeights::new(s[0], s[1], s[2], s[3]).unwrap();
        for g in combined_loss_gradient(&l, &w).unwrap() {
            prop_assert!(g.abs() < 1e-9);
        }
        let best = combined_loss(&l, &w).unwrap().0;
        for i in 0..4 {
            for scale in [0.9, 1.1] {
                let mut t = s;
                t[i] *= scale;
                let other = combined_loss(&l, &LossWeights::new(t[0], t[1], t[2], t[3]).unwrap()).unwrap().0;
                prop_assert!(other > best);
            }
        }
    }

    #[test]
    fn errors_are_non_negative_and_ordered(pairs in prop::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 1..60)) {
        let t = Layer::new("t", pairs.iter().map(|p| p.0).collect());
        let e = Layer::new("e", pairs.iter().map(|p| p.1).collect());
        let (l1, l2) = layer_error(&t, &e, None).unwrap();
        prop_assert!(l1 >= 0.0 && l2 >= 0.0);
        // mean square dominates squared mean
        prop_assert!(l2 + 1e-9 >= l1 * l1);
    }

    #[test]
    fn false_beliefs_stay_in_the_unit_interval(
        cells in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..40),
    ) {
        let fb = |a: f64, b: f64| {
            let (o, f) = (a, (1.0 - a) * b);
            FusedBelief { occupied: o, free: f, unknown: 1.0 - o - f }
        };
        let est: Vec<_> = cells.iter().map(|c| fb(c.0, c.1)).collect();
        let tgt: Vec<_> = cells.iter().map(|c| fb(c.2, c.3)).collect();
        let (fo, ff) = false_belief_metrics(&est, &tgt).unwrap();
        prop_assert!((0.0..=1.0).contains(&fo) && (0.0..=1.0).contains(&ff));
    }
}

#[test]
fn loss_mask_weights() {
    let u = Layer::new("bel_unknown", vec![0.0, 0.5, 1.0]);
    let w = loss_mask(&u, 0.8).unwrap().values;
    for (got, want) in w.iter().zip([1.0, 0.6, 0.2]) {
        assert!((*got as f64 - want).abs() < 1e-6, "{w:?}");
    }
    assert!(loss_mask(&u, 1.5).is_err());
}
