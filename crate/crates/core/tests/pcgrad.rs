use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use survmtl::surgery::{
    conflict_rate, cosine, dot, pcgrad_project, pcgrad_projected, pcgrad_step, ConflictRecord, ProjectionOrder,
    TaskGradient, TaskName, PCGRAD_EPS,
};
use survmtl_testkit::rng;

fn tasks(gs: Vec<Vec<f64>>) -> Vec<TaskGradient<f64>> {
    gs.into_iter()
        .zip(TaskName::ALL)
        .map(|(g, task)| TaskGradient { task, g })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[test]
fn worked_example() {
    let grads = tasks(vec![vec![1.0, 0.0], vec![-1.0, 1.0]]);
    let g = pcgrad_step(&grads, ProjectionOrder::Fixed, 0).unwrap();
    assert!((g[0] - 0.25).abs() < 1e-12 && (g[1] - 0.75).abs() < 1e-12, "{g:?}");
    let projected = pcgrad_projected(&grads, ProjectionOrder::Fixed, 0).unwrap();
    assert!((projected[0][0] - 0.5).abs() < 1e-12 && (projected[0][1] - 0.5).abs() < 1e-12);
    assert!(projected[1][0].abs() < 1e-11 && projected[1][1] == 1.0);
}

#[test]
fn isotropic_pairs_conflict_half_the_time() {
    let mut r = rng(11);
    let draws = 1000;
    let mut total = 0.0;
    for step in 0..draws {
        let gs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..64).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        total += ConflictRecord::from_gradients(step, &tasks(gs)).unwrap().conflict_rate;
    }
    let mean = total / draws as f64;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn four_task_rates_sit_on_the_sixths_lattice() {
    let mut r = rng(5);
    for step in 0..200 {
        let gs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let rate = ConflictRecord::from_gradients(step, &tasks(gs)).unwrap().conflict_rate;
        let sixths = rate * 6.0;
        assert!(
            (sixths - sixths.round()).abs() < 1e-12 && (0.0..=1.0).contains(&rate),
            "{rate}"
        );
    }
}

#[test]
fn conflict_rate_counts_negative_pairs() {
    let cos = vec![vec![1.0, -0.1, 0.3], vec![-0.1, 1.0, 0.0], vec![0.3, 0.0, 1.0]];
    assert!((conflict_rate(&cos) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn mismatched_and_degenerate_inputs_are_rejected() {
    assert!(pcgrad_step(&tasks(vec![vec![1.0]]), ProjectionOrder::Fixed, 0).is_err());
    assert!(pcgrad_step(&tasks(vec![vec![1.0], vec![1.0, 2.0]]), ProjectionOrder::Fixed, 0).is_err());
    assert!(pcgrad_step(&tasks(vec![vec![1.0], vec![f64::NAN]]), ProjectionOrder::Fixed, 0).is_err());
}

fn grad_sets(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..12).prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), k))
}

proptest! {
    #[test]
    fn non_conflicting_gradients_pass_through_bitwise(gi in prop::collection::vec(-5.0f64..5.0, 1..16), seed in any::<u64>()) {
        let mut r = rng(seed);
        let gj: Vec<f64> = gi.iter().map(|v| v * r.random_range(0.1..2.0)).collect();
        prop_assume!(dot(&gi, &gj) >= 0.0);
        let out = pcgrad_project(&gi, &gj, PCGRAD_EPS);
        prop_assert_eq!(
            out.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            gi.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn severe_conflict_projects_onto_the_normal_plane(gs in grad_sets(2)) {
        let (gi, gj) = (&gs[0], &gs[1]);
        prop_assume!(dot(gi, gj) < 0.0);
        let out = pcgrad_project(gi, gj, PCGRAD_EPS);
        prop_assert!(dot(&out, gj).abs() <= 1e-10 * norm(gi) * norm(gj));
        prop_assert!(norm(&out) <= norm(gi) * (1.0 + 1e-12));
    }

    #[test]
    fn agreeing_tasks_average_unchanged(raw in grad_sets(3)) {
        // a shared orthant makes every pair agree
        let gs: Vec<Vec<f64>> = raw.iter().map(|g| g.iter().map(|v| v.abs()).collect()).collect();
        let g = pcgrad_step(&tasks(gs.clone()), ProjectionOrder::Fixed, 0).unwrap();
        for (d, v) in g.iter().enumerate() {
            let mean = gs.iter().map(|x| x[d]).sum::<f64>() / 3.0;
            prop_assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_orders_are_deterministic(gs in grad_sets(4), seed in any::<u64>(), step in 0u64..1000) {
        let grads = tasks(gs);
        for order in [ProjectionOrder::Fixed, ProjectionOrder::SeededShuffle { seed }] {
            let a = pcgrad_step(&grads, order, step).unwrap();
            let b = pcgrad_step(&grads, order, step).unwrap();
            prop_assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn pairwise_cosines_are_symmetric_and_bounded(gs in grad_sets(4)) {
        let rec = ConflictRecord::from_gradients(0, &tasks(gs.clone())).unwrap();
        for i in 0..4 {
            prop_assert_eq!(rec.pairwise_cos[i][i], 1.0);
            for j in 0..4 {
                prop_assert_eq!(rec.pairwise_cos[i][j], rec.pairwise_cos[j][i]);
                prop_assert!((-1.0..=1.0).contains(&rec.pairwise_cos[i][j]));
            }
        }
        prop_assert_eq!(rec.cos(TaskName::CA, TaskName::ID), Some(cosine(&gs[0], &gs[3])));
        prop_assert!((0.0..=1.0).contains(&rec.conflict_rate));
    }
}
