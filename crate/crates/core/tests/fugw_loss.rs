//! The loss against brute-force definitions.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulot::autodiff::{grad_check, Tape};
use ulot::fugw::{
    fugw_loss_var, gw_linearization, kl_product, kl_unnormalized, marginal_penalty, wasserstein_cost, FugwProblem,
    GraphVars,
};
use ulot::graph::{sbm_generate, Graph, SbmConfig};
use ulot::tensor::{Tensor, TensorError};

/// Quartic double sum `sum_ijkl (D1[i][k] - D2[j][l])^2 P[i][j] P[k][l]`.
fn gw_quartic(d1: &Tensor, d2: &Tensor, p: &Tensor) -> f64 {
    let (n1, n2) = p.shape();
    let mut s = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n1 {
                for l in 0..n2 {
                    let diff = d1.get(i, k) - d2.get(j, l);
                    s += diff * diff * p.get(i, j) * p.get(k, l);
                }
            }
        }
    }
    s
}

/// KL between the explicit outer products, summed entry by entry.
fn kl_product_brute(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            let (x, y) = (a[i] * a[j], b[i] * b[j]);
            if x > 0.0 {
                s += x * (x / y).ln();
            }
            s += y - x;
        }
    }
    s
}

fn loss_brute(g1: &Graph, g2: &Graph, p: &Tensor, alpha: f64, rho: f64) -> f64 {
    let (n1, n2) = p.shape();
    let mut w = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let m: f64 = g1
                .features()
                .row(i)
                .iter()
                .zip(g2.features().row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            w += m * p.get(i, j);
        }
    }
    let gw = gw_quartic(g1.connectivity(), g2.connectivity(), p);
    let pen = kl_product_brute(&p.row_sums(), g1.weights()) + kl_product_brute(&p.col_sums(), g2.weights());
    (1.0 - alpha) * w + alpha * gw + rho * pen
}

fn small_graph(seed: u64, nodes: (usize, usize)) -> Graph {
    sbm_generate(&SbmConfig::with_clusters(&[1, 2]).with_nodes(nodes.0, nodes.1), seed).unwrap()
}

fn random_plan(rng: &mut ChaCha8Rng, n1: usize, n2: usize, scale: f64) -> Tensor {
    Tensor::from_fn(n1, n2, |_, _| rng.random_range(0.0..scale))
}

proptest! {
    #[test]
    fn linearization_matches_quartic_sum(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (rng.random_range(2..7), rng.random_range(2..7));
        let d1 = Tensor::from_fn(n1, n1, |i, j| if i == j { 0.0 } else { rng.random_range(0.0..3.0) });
        let d2 = Tensor::from_fn(n2, n2, |i, j| if i == j { 0.0 } else { rng.random_range(0.0..3.0) });
        let p = random_plan(&mut rng, n1, n2, 0.2);
        let fast = gw_linearization(&d1, &d2, &p).unwrap().dot(&p).unwrap();
        let slow = gw_quartic(&d1, &d2, &p);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn product_kl_identity(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..9);
        let a: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.0..0.5) }).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
        let fast = kl_product(&a, &b);
        let slow = kl_product_brute(&a, &b);
        prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1.0), "{fast} vs {slow}");
        prop_assert!(fast >= -1e-15);
        prop_assert!(kl_unnormalized(&a, &b) >= -1e-15);
    }

    #[test]
    fn full_loss_matches_brute_force(seed in 0u64..200, alpha in 0.0f64..=1.0, rho in 0.0f64..2.0) {
        let g1 = small_graph(seed, (4, 7));
        let g2 = small_graph(seed + 1000, (4, 7));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_plan(&mut rng, g1.n(), g2.n(), 0.1);
        let fast = FugwProblem::new(&g1, &g2).unwrap().loss(&p, alpha, rho).unwrap();
        let slow = loss_brute(&g1, &g2, &p, alpha, rho);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
    }

    #[test]
    fn loss_is_invariant_under_joint_permutation(seed in 0u64..200) {
        let g1 = small_graph(seed, (5, 9));
        let g2 = small_graph(seed + 7, (5, 9));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_plan(&mut rng, g1.n(), g2.n(), 0.05);
        let mut o1: Vec<usize> = (0..g1.n()).collect();
        let mut o2: Vec<usize> = (0..g2.n()).collect();
        for i in (1..o1.len()).rev() { o1.swap(i, rng.random_range(0..=i)); }
        for i in (1..o2.len()).rev() { o2.swap(i, rng.random_range(0..=i)); }
        let base = FugwProblem::new(&g1, &g2).unwrap().loss(&p, 0.4, 0.3).unwrap();
        let perm = FugwProblem::new(&g1.permuted(&o1), &g2.permuted(&o2))
            .unwrap()
            .loss(&p.permute(&o1, &o2), 0.4, 0.3)
            .unwrap();
        prop_assert!((base - perm).abs() <= 1e-12 * base.abs().max(1.0));
    }
}

#[test]
fn tape_loss_matches_plain_loss() {
    let g1 = small_graph(3, (8, 12));
    let g2 = small_graph(4, (8, 12));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_plan(&mut rng, g1.n(), g2.n(), 0.02);
    let plain = FugwProblem::new(&g1, &g2).unwrap().loss(&p, 0.6, 0.25).unwrap();
    let tape = Tape::new();
    let v1 = GraphVars::constant(&tape, &g1);
    let v2 = GraphVars::constant(&tape, &g2);
    let taped = fugw_loss_var(&v1, &v2, tape.constant(p), 0.6, 0.25).unwrap().item();
    assert!((plain - taped).abs() < 1e-12 * plain.abs().max(1.0), "{plain} vs {taped}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let g1 = small_graph(8, (5, 7));
    let g2 = small_graph(9, (5, 7));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let p = Tensor::from_fn(g1.n(), g2.n(), |_, _| rng.random_range(0.005..0.05));
        let alpha = rng.random_range(0.0..1.0);
        let rho = rng.random_range(0.01..1.0);
        // plan, both feature matrices and both connectivities are inputs
        let points = [
            p,
            g1.features().clone(),
            g2.features().clone(),
            g1.connectivity().clone(),
            g2.connectivity().clone(),
        ];
        let err = grad_check(
            |tape, v| {
                let a = GraphVars {
                    features: v[1],
                    connectivity: v[3],
                    weights: tape.constant(Tensor::column(g1.weights())),
                };
                let b = GraphVars {
                    features: v[2],
                    connectivity: v[4],
                    weights: tape.constant(Tensor::column(g2.weights())),
                };
                fugw_loss_var(&a, &b, v[0], alpha, rho).map_err(|e| TensorError::NonFinite(e.to_string()))
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "relative error {err:e}");
    }
}

#[test]
fn marginal_penalty_is_zero_only_at_matching_marginals() {
    let w1 = vec![0.5, 0.5];
    let w2 = vec![0.25; 4];
    let exact = Tensor::outer(&w1, &w2);
    assert!(marginal_penalty(&exact, &w1, &w2).unwrap().abs() < 1e-15);
    let shrunk = exact.scale(0.5);
    assert!(marginal_penalty(&shrunk, &w1, &w2).unwrap() > 0.1);
    let m = wasserstein_cost(&Tensor::identity(2), &Tensor::identity(2)).unwrap();
    assert_eq!(m.to_rows(), vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
}
