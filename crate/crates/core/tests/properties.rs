use std::collections::HashMap;

use grade_core::discrepancy::{coral, mmd2, DiscrepancyReport, Estimator};
use grade_core::gnn::{gcn_forward, init_params};
use grade_core::graph::{renormalized_adjacency, Graph};
use grade_core::linalg::Matrix;
use grade_core::metrics::{rank_metrics, RankedEval, UserCandidates};
use grade_core::wl::{
    counting_gsd, counting_gsd_joint, kernel_report, relabel_pair, subtree_histogram,
    wl_relabel, wl_subtree_kernel, histogram_similarity, CountingBase,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Labeled {
    graph: Graph,
    labels: Vec<u8>,
}

fn labeled_graph(max_nodes: usize, symbols: u8) -> impl Strategy<Value = Labeled> {
    (1..=max_nodes).prop_flat_map(move |n| {
        let pairs = n * (n - 1) / 2;
        (
            proptest::collection::vec(any::<bool>(), pairs),
            proptest::collection::vec(0..symbols, n),
        )
            .prop_map(move |(bits, labels)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for u in 0..n {
                    for v in u + 1..n {
                        if bits[k] {
                            edges.push((u, v));
                        }
                        k += 1;
                    }
                }
                let graph = Graph::new(n, edges, Matrix::zeros(n, 1), None).unwrap();
                Labeled { graph, labels }
            })
    })
}

/// Fully expanded subtree strings, no interning.
fn explicit_subtrees(g: &Graph, labels: &[u8], depth: usize) -> Vec<Vec<String>> {
    let nbrs = g.neighbors();
    let mut out = vec![labels.iter().map(|l| l.to_string()).collect::<Vec<_>>()];
    for m in 1..=depth {
        let prev = &out[m - 1];
        let next = (0..g.num_nodes())
            .map(|v| {
                let mut kids: Vec<&str> = nbrs[v].iter().map(|&u| prev[u].as_str()).collect();
                kids.sort_unstable();
                format!("[{}:{}]", prev[v], kids.join(";"))
            })
            .collect();
        out.push(next);
    }
    out
}

fn brute_force_kernel(a: &Labeled, b: &Labeled, depth: usize) -> f64 {
    let sa = explicit_subtrees(&a.graph, &a.labels, depth);
    let sb = explicit_subtrees(&b.graph, &b.labels, depth);
    let mut matches: u64 = 0;
    for m in 0..=depth {
        for x in &sa[m] {
            for y in &sb[m] {
                if x == y {
                    matches += 1;
                }
            }
        }
    }
    matches as f64 / (a.graph.num_nodes() * b.graph.num_nodes()) as f64
}

fn matrix(max_rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    (2..=max_rows).prop_flat_map(move |r| {
        proptest::collection::vec(-3.0f64..3.0, r * cols)
            .prop_map(move |data| Matrix::from_vec(r, cols, data).unwrap())
    })
}

fn brute_mmd(xs: &Matrix, xt: &Matrix, bw: f64, unbiased: bool) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (2.0 * bw * bw)).exp()
    };
    let within = |x: &Matrix| {
        let mut s = 0.0;
        let mut c = 0.0;
        for i in 0..x.rows() {
            for j in 0..x.rows() {
                if unbiased && i == j {
                    continue;
                }
                s += k(x.row(i), x.row(j));
                c += 1.0;
            }
        }
        s / c
    };
    let mut cross = 0.0;
    for i in 0..xs.rows() {
        for j in 0..xt.rows() {
            cross += k(xs.row(i), xt.row(j));
        }
    }
    within(xs) + within(xt) - 2.0 * cross / (xs.rows() * xt.rows()) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matches_explicit_subtrees(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=3) {
        let k = wl_subtree_kernel(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        prop_assert_eq!(k, brute_force_kernel(&a, &b, depth));
    }

    #[test]
    fn kernel_is_symmetric(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=3) {
        let ab = wl_subtree_kernel(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        let ba = wl_subtree_kernel(&b.graph, &b.labels, &a.graph, &a.labels, depth).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn per_depth_pair_count_equals_histogram_similarity(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=3) {
        let (sa, sb) = relabel_pair(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        let report = kernel_report(&sa, &sb).unwrap();
        let ea = explicit_subtrees(&a.graph, &a.labels, depth);
        let eb = explicit_subtrees(&b.graph, &b.labels, depth);
        for m in 0..=depth {
            let brute = ea[m].iter().flat_map(|x| eb[m].iter().filter(move |y| *y == x)).count() as u128;
            prop_assert_eq!(report.matches[m], brute);
            let sim = histogram_similarity(&subtree_histogram(&sa, m).unwrap(), &subtree_histogram(&sb, m).unwrap());
            prop_assert!((sim - brute as f64 / report.pair_count as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn tv_is_monotone_in_depth(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=4) {
        let (sa, sb) = relabel_pair(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        let r = counting_gsd(&sa, &sb, CountingBase::TotalVariation).unwrap();
        for w in r.per_depth.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(r.per_depth.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn null_graph_gsd_is_depth_zero_tv(na in 1usize..10, nb in 1usize..10, la in proptest::collection::vec(0u8..3, 10), lb in proptest::collection::vec(0u8..3, 10), depth in 0usize..=4) {
        let ga = Graph::new(na, [], Matrix::zeros(na, 1), None).unwrap();
        let gb = Graph::new(nb, [], Matrix::zeros(nb, 1), None).unwrap();
        let (sa, sb) = relabel_pair(&ga, &la[..na], &gb, &lb[..nb], depth).unwrap();
        let r = counting_gsd(&sa, &sb, CountingBase::TotalVariation).unwrap();
        prop_assert!(r.per_depth.iter().all(|&x| x == r.per_depth[0]));
        prop_assert_eq!(r.gsd, r.per_depth[0]);
    }

    #[test]
    fn summed_inner_product_gsd_is_the_kernel(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=3) {
        let (sa, sb) = relabel_pair(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        let r = counting_gsd(&sa, &sb, CountingBase::InnerProduct).unwrap();
        let k = kernel_report(&sa, &sb).unwrap().value;
        prop_assert!(((depth + 1) as f64 * r.gsd - k).abs() < 1e-12);
    }

    #[test]
    fn degree_refinement_never_lowers_tv(a in labeled_graph(8, 3), b in labeled_graph(8, 3), depth in 0usize..=3) {
        let (sa, sb) = relabel_pair(&a.graph, &a.labels, &b.graph, &b.labels, depth).unwrap();
        let plain = counting_gsd(&sa, &sb, CountingBase::TotalVariation).unwrap();
        let joint = counting_gsd_joint(&sa, &a.graph.degrees(), &sb, &b.graph.degrees(), CountingBase::TotalVariation).unwrap();
        prop_assert!(plain.gsd <= joint.gsd);
        for (p, j) in plain.per_depth.iter().zip(&joint.per_depth) {
            prop_assert!(p <= j);
        }
    }

    #[test]
    fn relabeling_commutes_with_permutation(a in labeled_graph(8, 3), seed in any::<u64>(), depth in 0usize..=3) {
        let n = a.graph.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let pg = a.graph.permuted(&perm).unwrap();
        let mut plabels = vec![0u8; n];
        for v in 0..n {
            plabels[perm[v]] = a.labels[v];
        }
        let (sa, sp) = relabel_pair(&a.graph, &a.labels, &pg, &plabels, depth).unwrap();
        for m in 0..=depth {
            let ca = sa.at(m).unwrap();
            let cp = sp.at(m).unwrap();
            for v in 0..n {
                prop_assert_eq!(ca[v], cp[perm[v]]);
            }
        }
        // A private relabeler gives the same partition.
        let single = wl_relabel(&a.graph, &a.labels, depth).unwrap();
        prop_assert_eq!(single, sa);
    }

    #[test]
    fn gcn_is_permutation_equivariant(a in labeled_graph(8, 2), feats in proptest::collection::vec(-2.0f64..2.0, 24), seed in 0u64..1000) {
        let n = a.graph.num_nodes();
        let f = Matrix::from_vec(n, 3, feats[..3 * n].to_vec()).unwrap();
        let g = a.graph.clone().with_features(f).unwrap();
        let perm: Vec<usize> = (0..n).map(|v| (v + seed as usize) % n).collect();
        let pg = g.permuted(&perm).unwrap();
        let params = init_params(&[3, 5, 4], &[4, 2], seed).unwrap();
        let out = gcn_forward(&renormalized_adjacency(&g), g.features(), &params).unwrap();
        let pout = gcn_forward(&renormalized_adjacency(&pg), pg.features(), &params).unwrap();
        prop_assert_eq!(out.at(0).unwrap(), g.features());
        for m in 0..=2 {
            for (v, &pv) in perm.iter().enumerate() {
                let (x, y) = (out.at(m).unwrap().row(v), pout.at(m).unwrap().row(pv));
                for (p, q) in x.iter().zip(y) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
                if m >= 1 {
                    prop_assert!(x.iter().all(|&e| e >= 0.0));
                }
            }
        }
    }

    #[test]
    fn mmd_matches_double_sum(xs in matrix(12, 3), xt in matrix(12, 3), bw in 0.3f64..3.0) {
        for (est, unbiased) in [(Estimator::Biased, false), (Estimator::Unbiased, true)] {
            let v = mmd2(&xs, &xt, bw, est).unwrap();
            prop_assert!((v - brute_mmd(&xs, &xt, bw, unbiased)).abs() < 1e-10);
            prop_assert_eq!(v, mmd2(&xt, &xs, bw, est).unwrap());
        }
        let biased = mmd2(&xs, &xt, bw, Estimator::Biased).unwrap();
        prop_assert!(biased >= 0.0);
        let unbiased = mmd2(&xs, &xt, bw, Estimator::Unbiased).unwrap();
        prop_assert!(unbiased >= -2.0 / xs.rows().min(xt.rows()) as f64);
    }

    #[test]
    fn coral_invariances(xs in matrix(10, 3), xt in matrix(10, 3), shift in proptest::collection::vec(-5.0f64..5.0, 3), angle in 0.0f64..std::f64::consts::TAU) {
        let c = coral(&xs, &xt).unwrap();
        prop_assert!(c >= 0.0);
        let mut moved = xs.clone();
        for r in 0..moved.rows() {
            for (x, s) in moved.row_mut(r).iter_mut().zip(&shift) {
                *x += s;
            }
        }
        prop_assert!((coral(&moved, &xt).unwrap() - c).abs() < 1e-9);
        let (s, co) = angle.sin_cos();
        let rot = Matrix::from_rows(&[[co, -s, 0.0], [s, co, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let rotated = coral(&xs.matmul(&rot), &xt.matmul(&rot)).unwrap();
        prop_assert!((rotated - c).abs() < 1e-9 * (1.0 + c));
    }

    #[test]
    fn report_mean_is_within_tolerance(values in proptest::collection::vec(0.0f64..10.0, 1..8), scale in 0.1f64..10.0) {
        let r = DiscrepancyReport::new(values.clone(), "x", None);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((r.gsd - mean).abs() < 1e-12);
        let scaled = DiscrepancyReport::new(values.iter().map(|v| v * scale).collect(), "x", None);
        prop_assert!((scaled.gsd - scale * r.gsd).abs() < 1e-12 * (1.0 + scale * mean));
    }

    #[test]
    fn rank_metrics_survive_monotone_transforms(users in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 2..30), any::<prop::sample::Index>()), 1..20), k in 1usize..15) {
        let users: Vec<UserCandidates> = users
            .into_iter()
            .map(|(scores, idx)| UserCandidates {
                items: (0..scores.len()).map(|i| i * 7 % 31 + i).collect(),
                positive: idx.index(scores.len()),
                scores,
            })
            .collect();
        let eval = RankedEval { users: users.clone(), k };
        let base = rank_metrics(&eval).unwrap();
        let transformed = RankedEval {
            users: users.iter().map(|u| UserCandidates { scores: u.scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect(), ..u.clone() }).collect(),
            k,
        };
        prop_assert_eq!(base, rank_metrics(&transformed).unwrap());

        // Brute force: sort candidates explicitly.
        let mut hr = 0.0;
        let mut mrr = 0.0;
        let mut ndcg = 0.0;
        for u in &users {
            let mut order: Vec<usize> = (0..u.items.len()).collect();
            order.sort_by(|&a, &b| u.scores[b].partial_cmp(&u.scores[a]).unwrap().then(u.items[a].cmp(&u.items[b])));
            let r = order.iter().position(|&i| i == u.positive).unwrap() + 1;
            if r <= k {
                hr += 1.0;
                mrr += 1.0 / r as f64;
                ndcg += 1.0 / ((r + 1) as f64).log2();
            }
        }
        let n = users.len() as f64;
        prop_assert!((base.hr - hr / n).abs() < 1e-12);
        prop_assert!((base.mrr - mrr / n).abs() < 1e-12);
        prop_assert!((base.ndcg - ndcg / n).abs() < 1e-12);
        for x in [base.hr, base.mrr, base.ndcg] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}

#[test]
fn histogram_frequencies_are_multiples_of_one_over_n() {
    let g = Graph::new(5, [(0, 1), (1, 2), (3, 4)], Matrix::zeros(5, 1), None).unwrap();
    let seq = wl_relabel(&g, &[0, 0, 1, 0, 1], 2).unwrap();
    for m in 0..=2 {
        let h = subtree_histogram(&seq, m).unwrap();
        let mut total = 0.0;
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for &c in seq.at(m).unwrap() {
            *counts.entry(c).or_default() += 1;
        }
        for (k, f) in h.frequencies() {
            assert_eq!(f, counts[k] as f64 / 5.0);
            total += f;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
