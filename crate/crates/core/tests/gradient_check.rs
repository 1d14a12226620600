//! Analytic gradients against central finite differences.
//!
//! Coordinates whose `±h` perturbation changes any ReLU sign are skipped and
//! replaced; there the objective is not differentiable at the scale of `h`.

use grade_core::discrepancy::{Coral, Estimator, Mmd};
use grade_core::gnn::{
    activation_pattern, gsd_inputs, init_params, loss_and_gradients, objective_value, DomainInput,
    GsdVariant, LinkSample, ModelParams, ObjectiveSpec, TaskLoss,
};
use grade_core::graph::{degree_one_hot, renormalized_adjacency, synth_shift_pair, Graph, SynthShiftConfig};
use grade_core::linalg::Matrix;
use grade_core::trainer::one_hot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

struct Instance {
    source: Graph,
    target: Graph,
}

fn instance(nodes_per_block: usize, feature_dim: usize, seed: u64) -> Instance {
    let (source, target) = synth_shift_pair(&SynthShiftConfig {
        nodes_per_block,
        num_blocks: 2,
        intra_edge_prob: 0.4,
        inter_edge_prob: 0.1,
        feature_dim,
        source_mean_scale: 1.0,
        target_mean_scale: 3.0,
        target_intra_edge_prob: Some(0.2),
        seed,
    })
    .unwrap();
    Instance { source, target }
}

/// Checks `count` random coordinates; returns how many were compared.
fn check(
    obj: &ObjectiveSpec<'_>,
    inst: &Instance,
    params: &ModelParams,
    count: usize,
    seed: u64,
) -> usize {
    let adj_s = renormalized_adjacency(&inst.source);
    let adj_t = renormalized_adjacency(&inst.target);
    let s = DomainInput { adj: &adj_s, features: inst.source.features() };
    let t = DomainInput { adj: &adj_t, features: inst.target.features() };
    let analytic = loss_and_gradients(obj, s, t, params).unwrap().gradients.to_flat();
    let base_pattern = activation_pattern(obj, s, t, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.num_params();
    let mut checked = 0;
    let mut attempts = 0;
    while checked < count.min(n) {
        attempts += 1;
        assert!(attempts < 20 * count, "too many coordinates sit on ReLU kinks");
        let i = rng.random_range(0..n);
        let x = params.get(i).unwrap();
        let mut plus = params.clone();
        plus.set(i, x + STEP);
        let mut minus = params.clone();
        minus.set(i, x - STEP);
        if activation_pattern(obj, s, t, &plus).unwrap() != base_pattern
            || activation_pattern(obj, s, t, &minus).unwrap() != base_pattern
        {
            continue;
        }
        let fp = objective_value(obj, s, t, &plus).unwrap().2;
        let fm = objective_value(obj, s, t, &minus).unwrap().2;
        let numeric = (fp - fm) / (2.0 * STEP);
        let a = analytic[i];
        let diff = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        assert!(
            diff <= ABS_FLOOR || diff <= REL_TOL * scale,
            "coordinate {i}: analytic {a:e} vs numeric {numeric:e}"
        );
        checked += 1;
    }
    checked
}

fn frozen_mmd(variant: &GsdVariant<'_>, inst: &Instance, params: &ModelParams, estimator: Estimator) -> Mmd {
    let adj_s = renormalized_adjacency(&inst.source);
    let adj_t = renormalized_adjacency(&inst.target);
    let (xs, xt) = gsd_inputs(
        variant,
        DomainInput { adj: &adj_s, features: inst.source.features() },
        DomainInput { adj: &adj_t, features: inst.target.features() },
        params,
    )
    .unwrap();
    Mmd { estimator, ..Mmd::default() }.frozen(&xs, &xt).unwrap()
}

fn labels(g: &Graph) -> Vec<usize> {
    g.labels().unwrap().classes().unwrap().to_vec()
}

#[test]
fn cross_entropy_with_mmd_gsd() {
    let inst = instance(10, 5, 1);
    let params = init_params(&[5, 16, 16], &[16, 2], 3).unwrap();
    let base = frozen_mmd(&GsdVariant::Plain, &inst, &params, Estimator::Biased);
    let y = labels(&inst.source);
    let obj = ObjectiveSpec {
        task: TaskLoss::CrossEntropy { labels: &y },
        lambda: 0.5,
        base: &base,
        variant: GsdVariant::Plain,
    };
    assert_eq!(check(&obj, &inst, &params, 200, 7), 200);
}

#[test]
fn unbiased_mmd_and_hidden_head() {
    let inst = instance(8, 4, 2);
    let params = init_params(&[4, 8, 6], &[6, 7, 2], 5).unwrap();
    let base = frozen_mmd(&GsdVariant::Plain, &inst, &params, Estimator::Unbiased);
    let y = labels(&inst.source);
    let obj = ObjectiveSpec {
        task: TaskLoss::CrossEntropy { labels: &y },
        lambda: 1.0,
        base: &base,
        variant: GsdVariant::Plain,
    };
    check(&obj, &inst, &params, 150, 8);
}

#[test]
fn regression_with_coral() {
    let inst = instance(8, 4, 3);
    let params = init_params(&[4, 8, 8], &[8, 1], 6).unwrap();
    let targets: Vec<f64> = (0..inst.source.num_nodes()).map(|v| (v as f64 * 0.37).sin()).collect();
    let obj = ObjectiveSpec {
        task: TaskLoss::SquaredError { targets: &targets },
        lambda: 2.0,
        base: &Coral,
        variant: GsdVariant::Plain,
    };
    check(&obj, &inst, &params, 150, 9);
}

#[test]
fn degree_and_label_variants() {
    let inst = instance(8, 4, 4);
    let params = init_params(&[4, 8, 8], &[8, 2], 7).unwrap();
    let y = labels(&inst.source);
    let deg_s = degree_one_hot(&inst.source, 6);
    let deg_t = degree_one_hot(&inst.target, 6);
    let variant = GsdVariant::Degree { source: &deg_s, target: &deg_t };
    let base = frozen_mmd(&variant, &inst, &params, Estimator::Biased);
    let obj = ObjectiveSpec {
        task: TaskLoss::CrossEntropy { labels: &y },
        lambda: 0.8,
        base: &base,
        variant,
    };
    check(&obj, &inst, &params, 120, 10);

    let ys = one_hot(&y, 2);
    let yt = one_hot(&(0..inst.target.num_nodes()).map(|v| v % 2).collect::<Vec<_>>(), 2);
    let variant = GsdVariant::Label { source: &ys, target: &yt };
    let obj = ObjectiveSpec { variant, base: &Coral, ..obj };
    check(&obj, &inst, &params, 120, 11);
}

#[test]
fn link_objective() {
    let inst = instance(6, 3, 5);
    let params = init_params(&[3, 6, 5], &[10, 4, 1], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |g: &Graph| -> Vec<LinkSample> {
        (0..15)
            .map(|_| LinkSample {
                u: rng.random_range(0..g.num_nodes()),
                v: rng.random_range(0..g.num_nodes()),
                label: f64::from(rng.random_range(0..2u8)),
            })
            .collect()
    };
    let ss = draw(&inst.source);
    let st = draw(&inst.target);
    let base = frozen_mmd(&GsdVariant::Plain, &inst, &params, Estimator::Biased);
    let obj = ObjectiveSpec {
        task: TaskLoss::Link { source: &ss, target: &st },
        lambda: 0.1,
        base: &base,
        variant: GsdVariant::Plain,
    };
    check(&obj, &inst, &params, 150, 12);
}

#[test]
fn lambda_zero_gradient_equals_task_gradient() {
    let inst = instance(6, 3, 6);
    let params = init_params(&[3, 5, 5], &[5, 2], 1).unwrap();
    let y = labels(&inst.source);
    let adj_s = renormalized_adjacency(&inst.source);
    let adj_t = renormalized_adjacency(&inst.target);
    let s = DomainInput { adj: &adj_s, features: inst.source.features() };
    let t = DomainInput { adj: &adj_t, features: inst.target.features() };
    let base = Mmd::default();
    let obj = ObjectiveSpec {
        task: TaskLoss::CrossEntropy { labels: &y },
        lambda: 0.0,
        base: &base,
        variant: GsdVariant::Plain,
    };
    let zero = loss_and_gradients(&obj, s, t, &params).unwrap();
    // With an edgeless copy of the target the GSD changes but the gradient must not.
    let bare = Graph::new(inst.target.num_nodes(), [], inst.target.features().clone(), None).unwrap();
    let adj_b = renormalized_adjacency(&bare);
    let other = loss_and_gradients(&obj, s, DomainInput { adj: &adj_b, features: &Matrix::zeros(bare.num_nodes(), 3) }, &params).unwrap();
    assert_eq!(zero.gradients, other.gradients);
    assert_ne!(zero.report.gsd, other.report.gsd);
}
