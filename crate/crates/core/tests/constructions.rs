//! Quantified soundness checks for the weight constructions: random plans
//! against their oracles, exhaustive selection sweeps, and the structural
//! invariants that tie heads, anchors, and outputs together.

use attn_interp::construct_multi::{
    build_multi_head, classify_heads, CaseSplit, HeadCase, MultiHeadPlan,
};
use attn_interp::construct_single::{
    attention_column_argmax, build_single_head, single_head_parts, verify_single_head,
    SingleHeadPlan,
};
use attn_interp::grid_uap::{build_seq_to_scalar, bump_value, InputGrid, ScalarTargetTable, UapBudgets};
use attn_interp::interp::{score_form_equivalence_check, IndexMapG, InterpolationGrid, TruncatedLinearModel};
use attn_interp::numkit::{seeding, Matrix};
use attn_interp::AttentionStack;
use rand::Rng;

fn random_task(
    rng: &mut rand_chacha::ChaCha8Rng,
    d: usize,
    n: usize,
    a: f64,
    b: f64,
) -> Vec<TruncatedLinearModel> {
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| seeding::standard_normal(rng)).collect();
            TruncatedLinearModel::new(w, 0.3 * seeding::standard_normal(rng), a, b).unwrap()
        })
        .collect()
}

#[test]
fn single_head_soundness_thousand_random_plans() {
    let mut rng = seeding::rng_for(101, 0);
    for trial in 0..1000 {
        let d = rng.gen_range(1..4);
        let n = rng.gen_range(1..6);
        let p = n + rng.gen_range(1..12);
        let a = rng.gen_range(-2.0..1.0);
        let b = a + rng.gen_range(0.25..2.5);
        let task = random_task(&mut rng, d, n, a, b);
        let grid = InterpolationGrid::new(a, b, p).unwrap();
        let plan =
            SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
        let x = Matrix::from_fn(d, n, |_, _| rng.gen_range(-2.0..2.0));
        let report = verify_single_head(&plan, &x).unwrap();
        assert!(
            report.pass,
            "trial {trial}: measured {} > bound {} (d={d} n={n} p={p} [{a},{b}])",
            report.measured_inf, report.bound
        );
    }
}

#[test]
fn interior_values_within_half_spacing_of_selected_anchor() {
    let mut rng = seeding::rng_for(102, 0);
    for _ in 0..200 {
        let p = rng.gen_range(2..50);
        let a = rng.gen_range(-3.0..0.0);
        let b = a + rng.gen_range(0.5..4.0);
        let grid = InterpolationGrid::new(a, b, p).unwrap();
        let v = rng.gen_range(a..b);
        let k = grid.nearest_anchor(v);
        // the theorem's interpolation budget
        assert!((v - grid.anchor(k)).abs() <= (b - a) / p as f64 + 1e-12);
    }
}

#[test]
fn score_form_equivalence_sweep_all_small_p() {
    for p in 2..=64usize {
        let grid = InterpolationGrid::new(-0.75, 1.25, p).unwrap();
        for i in 0..=1500 {
            let v = (grid.a - 1.0) + (grid.b - grid.a + 2.0) * i as f64 / 1500.0;
            assert!(score_form_equivalence_check(&grid, v), "p={p} v={v}");
        }
    }
}

#[test]
fn argmax_concentrates_on_boundary_for_narrow_range() {
    // narrow truncation with wide inputs pushes selections to the ends
    let mut rng = seeding::rng_for(103, 0);
    let mut count_boundary = |a: f64, b: f64| -> f64 {
        let n = 30;
        let p = 30;
        let mut boundary = 0usize;
        let mut total = 0usize;
        for _ in 0..40 {
            let task: Vec<TruncatedLinearModel> = (0..n)
                .map(|_| {
                    TruncatedLinearModel::new(
                        vec![seeding::standard_normal(&mut rng)],
                        seeding::standard_normal(&mut rng),
                        a,
                        b,
                    )
                    .unwrap()
                })
                .collect();
            let grid = InterpolationGrid::new(a, b, p).unwrap();
            let plan =
                SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
            let x = Matrix::from_fn(1, n, |_, _| rng.gen_range(-5.0..5.0));
            for arg in attention_column_argmax(&plan, &x).unwrap() {
                if arg == 0 || arg == p - 1 {
                    boundary += 1;
                }
                total += 1;
            }
        }
        boundary as f64 / total as f64
    };
    let narrow = count_boundary(-0.5, 0.5);
    let wide = count_boundary(-3.0, 3.0);
    assert!(narrow >= 0.8, "narrow range boundary share {narrow}");
    assert!(wide < 0.4, "wide range boundary share {wide}");
    assert!(narrow > wide);
}

#[test]
fn padding_anchor_permutation_leaves_forward_unchanged() {
    let mut rng = seeding::rng_for(104, 0);
    let n = 4;
    let p = 12;
    let task = random_task(&mut rng, 2, n, -1.0, 1.0);
    let grid = InterpolationGrid::new(-1.0, 1.0, p).unwrap();
    let plan = SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
    let (pre, head) = single_head_parts(&plan).unwrap();

    // permute the padding columns n..p of the pre-map bias: keys and values
    // both live there, so selection is content-based and the output is
    // invariant
    let mut permuted_pre = pre.clone();
    let perm: Vec<usize> = {
        let mut idx: Vec<usize> = (n..p).collect();
        // fixed shuffle
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    };
    let bias = pre.bias.clone();
    for (slot, &src) in perm.iter().enumerate() {
        for r in 0..bias.rows() {
            permuted_pre.bias.set(r, n + slot, bias.get(r, src));
        }
    }
    let stack = AttentionStack::new(vec![head.clone()]).with_pre(pre);
    let stack_perm = AttentionStack::new(vec![head]).with_pre(permuted_pre);
    let x = Matrix::from_fn(2, n, |_, _| rng.gen_range(-1.5..1.5));
    let a = stack.forward(&x).unwrap();
    let b = stack_perm.forward(&x).unwrap();
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() <= 1e-9, "{u} vs {v}");
    }
}

#[test]
fn multi_head_dichotomy_dense_mesh() {
    let mesh = 100_000usize;
    for heads in 1..=8usize {
        for n in [4usize, 8, 12] {
            let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, -1.0, 1.0).unwrap(); n];
            let plan = MultiHeadPlan::new(task, heads, 0, 1, 1e-3).unwrap();
            for i in 0..=mesh {
                let u = -1.0 + 2.0 * i as f64 / mesh as f64;
                let (labels, split) = classify_heads(&plan, u);
                let covers = labels.iter().filter(|&&c| c == HeadCase::Covers).count();
                let boundary = labels.iter().filter(|&&c| c == HeadCase::Boundary).count();
                match split {
                    CaseSplit::Interior(_) => {
                        assert_eq!((covers, boundary), (1, 0), "H={heads} n={n} u={u}")
                    }
                    CaseSplit::AdjacentBoundary(h0, h1) => {
                        assert_eq!((covers, boundary), (0, 2));
                        assert_eq!(h1, h0 + 1, "H={heads} n={n} u={u}");
                    }
                }
            }
        }
    }
}

#[test]
fn equal_error_tradeoff_between_width_and_heads() {
    // same anchor count p = 64 via (n = 66, H = 1) and (n = 10, H = 8):
    // identical grids, so per-value interpolation errors agree
    let shared_values: Vec<f64> = (0..10).map(|i| -0.93 + 0.2 * i as f64).collect();
    let measure = |n: usize, heads: usize| -> Vec<f64> {
        let task = vec![TruncatedLinearModel::new(vec![1.0], 0.0, -1.0, 1.0).unwrap(); n];
        let plan = MultiHeadPlan::new(task, heads, 0, 1, 1e-6)
            .unwrap()
            .with_beta(1e7);
        assert_eq!(plan.grid.p, 64);
        let mut vals = vec![0.0; n];
        for (i, slot) in vals.iter_mut().enumerate() {
            *slot = shared_values[i.min(shared_values.len() - 1)];
        }
        let x = Matrix::from_rows(&[vals]).unwrap();
        let out = build_multi_head(&plan).unwrap().forward(&x).unwrap();
        (0..shared_values.len())
            .map(|i| (out.get(0, i) - shared_values[i]).abs())
            .collect()
    };
    let wide = measure(66, 1);
    let many = measure(10, 8);
    for (i, (a, b)) in wide.iter().zip(&many).enumerate() {
        let hi = a.max(*b).max(1e-6);
        let lo = a.min(*b).max(1e-6);
        assert!(hi / lo <= 1.1, "value {i}: {a} vs {b}");
    }
}

#[test]
fn stage1_row_fidelity_thousand_samples() {
    let grid = InputGrid::new(1.0, 2, 1, 2, 0.25).unwrap();
    let budgets = UapBudgets::default();
    let table = ScalarTargetTable::tabulate(&grid, |v| v.data().iter().sum());
    let built = build_seq_to_scalar(&grid, &table, budgets).unwrap();
    let mut rng = seeding::rng_for(105, 0);
    for _ in 0..1000 {
        let x = grid.domain().sample(&mut rng);
        let row = built.bump_row(&x).unwrap();
        for k in 0..grid.center_count() {
            let want = bump_value(&grid, k, &x);
            assert!((row.get(0, k) - want).abs() <= budgets.epsilon0);
        }
    }
}

#[test]
fn build_single_head_deterministic_serialization() {
    let mut rng = seeding::rng_for(106, 0);
    let task = random_task(&mut rng, 2, 3, -1.0, 1.0);
    let grid = InterpolationGrid::new(-1.0, 1.0, 8).unwrap();
    let plan =
        SingleHeadPlan::new(task, grid, IndexMapG::constant(0, 1).unwrap(), 1e-3).unwrap();
    let a = build_single_head(&plan).unwrap().to_text();
    let b = build_single_head(&plan).unwrap().to_text();
    assert_eq!(a, b);
    let parsed = AttentionStack::from_text(&a).unwrap();
    assert_eq!(parsed.to_text(), a);
}
