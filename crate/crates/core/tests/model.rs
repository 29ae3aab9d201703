use proptest::prelude::*;
use ulot::autodiff::{grad_check, Tape};
use ulot::fugw::{fugw_loss_var, GraphVars};
use ulot::graph::{sbm_generate, Graph, SbmConfig};
use ulot::model::{
    cond_rows, conditioning, cross_attention, encode_alpha, gcn_forward, load_weights, normalized_adjacency,
    predict_plan, predict_plan_var, save_weights, GraphInput, ModelConfig, ModelError, ModelWeights, WeightVars,
};
use ulot::tensor::Tensor;

fn tiny() -> ModelConfig {
    ModelConfig {
        layers: 1,
        alpha_dim: 2,
        embed_dim: 4,
        mlp_hidden: 5,
        gcn_hidden: 3,
        temperature: 2.0,
        input_dim: 3,
    }
}

fn graph(seed: u64, min: usize, max: usize) -> Graph {
    // three clusters need six nodes; small graphs use two
    let clusters: &[usize] = if min < 6 { &[1, 2] } else { &[1, 2, 3] };
    sbm_generate(&SbmConfig::with_clusters(clusters).with_nodes(min, max), seed).unwrap()
}

#[test]
fn alpha_encoding_endpoints() {
    let e0 = encode_alpha(0.0, 10).unwrap();
    assert_eq!(e0.len(), 20);
    assert!(e0[..10].iter().all(|&c| c == 1.0));
    assert!(e0[10..].iter().all(|s| s.abs() < 1e-12));
    let e1 = encode_alpha(1.0, 10).unwrap();
    for (k, c) in e1[..10].iter().enumerate() {
        let expected = if k % 2 == 0 { -1.0 } else { 1.0 };
        assert!((c - expected).abs() < 1e-12);
    }
    assert!(e1[10..].iter().all(|&s| s == 0.0));
    assert!(matches!(encode_alpha(1.5, 10), Err(ModelError::Alpha(_))));
}

#[test]
fn alpha_encoding_on_tape_matches() {
    let tape = Tape::new();
    let enc = ulot::model::encode_alpha_var(tape.scalar(0.3), 4).unwrap();
    let plain = encode_alpha(0.3, 4).unwrap();
    assert_eq!(enc.value().data(), plain.as_slice());
}

#[test]
fn gcn_on_isolated_node_is_two_dense_layers() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg, 1).unwrap();
    let prop = normalized_adjacency(&Tensor::zeros(1, 1));
    assert_eq!(prop.data(), &[1.0]);
    let f = Tensor::row_vector(&[0.3, -0.2, 0.9]);
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, &w);
    let out = gcn_forward(&wv.layer(0), tape.constant(f.clone()), tape.constant(prop)).unwrap().value();
    // gcn.hidden and gcn.out are maps 3 and 4 of layer 0
    let t = w.tensors();
    let dense = |x: &Tensor, wi: usize| x.matmul(&t[2 * wi]).unwrap().add(&t[2 * wi + 1]).unwrap().map(|v| v.max(0.0));
    let expected = dense(&dense(&f, 3), 4);
    assert_eq!(out, expected);
}

#[test]
fn gcn_with_zero_weights_broadcasts_the_bias() {
    let cfg = tiny();
    let init = ModelWeights::init(&cfg, 2).unwrap();
    let shapes = cfg.parameter_shapes();
    let tensors = shapes
        .iter()
        .map(|(name, (r, c))| {
            if name == "layers.0.gcn.out.bias" {
                Tensor::row_vector(&[0.5, -1.0, 2.0])
            } else {
                Tensor::zeros(*r, *c)
            }
        })
        .collect();
    let w = ModelWeights::from_tensors(&cfg, tensors).unwrap();
    assert_ne!(w, init);
    let g = graph(3, 6, 9);
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, &w);
    let input = GraphInput::constant(&tape, &g);
    let out = gcn_forward(&wv.layer(0), input.features, input.propagation).unwrap().value();
    for i in 0..g.n() {
        assert_eq!(out.row(i), &[0.5, 0.0, 2.0]);
    }
}

#[test]
fn attention_matrices_are_normalized() {
    let cfg = ModelConfig::default();
    let w = ModelWeights::init(&cfg, 4).unwrap();
    let (g1, g2) = (graph(5, 8, 14), graph(6, 8, 14));
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, &w);
    let (i1, i2) = (GraphInput::constant(&tape, &g1), GraphInput::constant(&tape, &g2));
    let cond = conditioning(tape.scalar(0.01), tape.scalar(0.4), cfg.alpha_dim).unwrap();
    let (c1, c2) = (cond_rows(cond, g1.n()).unwrap(), cond_rows(cond, g2.n()).unwrap());
    let out = cross_attention(&wv.layer(0), i1.features, i2.features, c1, c2, 9.0).unwrap();
    assert!(out.similarity.value().data().iter().all(|s| (-1.0..=1.0).contains(s)));
    for r in out.s1.value().row_sums() {
        assert!((r - 1.0).abs() < 1e-12);
    }
    for c in out.s2.value().col_sums() {
        assert!((c - 1.0).abs() < 1e-12);
    }
    assert_eq!(out.to1.shape().0, g1.n());
    assert_eq!(out.to2.shape().0, g2.n());
}

#[test]
fn sharp_attention_finds_the_matching_node() {
    let cfg = ModelConfig {
        temperature: 50.0,
        ..ModelConfig::default()
    };
    let w = ModelWeights::init(&cfg, 7).unwrap();
    let g = graph(8, 10, 16);
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, &w);
    let input = GraphInput::constant(&tape, &g);
    let cond = conditioning(tape.scalar(0.1), tape.scalar(0.5), cfg.alpha_dim).unwrap();
    let c = cond_rows(cond, g.n()).unwrap();
    let out = cross_attention(&wv.layer(0), input.features, input.features, c, c, 2500.0).unwrap();
    let s1 = out.s1.value();
    for i in 0..g.n() {
        let row = s1.row(i);
        let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(best, i);
    }
}

#[test]
fn forward_is_deterministic() {
    let w = ModelWeights::init(&ModelConfig::default(), 9).unwrap();
    let (g1, g2) = (graph(1, 6, 10), graph(2, 6, 10));
    let a = predict_plan(&g1, &g2, 0.3, 0.05, &w).unwrap();
    let b = predict_plan(&g1, &g2, 0.3, 0.05, &w).unwrap();
    assert_eq!(a.plan(), b.plan());
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::{seq::SliceRandom, SeedableRng};
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    order
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn predictor_invariants(
        s1 in 0u64..1_000_000,
        s2 in 0u64..1_000_000,
        wseed in 0u64..1_000_000,
        alpha in 0.0f64..=1.0,
        log_rho in -7.0f64..0.0,
    ) {
        let rho = 10f64.powf(log_rho);
        let w = ModelWeights::init(&ModelConfig::default(), wseed).unwrap();
        let (g1, g2) = (graph(s1, 4, 12), graph(s2, 4, 12));
        let p = predict_plan(&g1, &g2, alpha, rho, &w).unwrap();
        let pt = predict_plan(&g2, &g1, alpha, rho, &w).unwrap();
        prop_assert!(pt.plan().sub(&p.plan().transpose()).unwrap().max_abs() <= 1e-12);

        let plan = p.plan();
        prop_assert!(plan.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((0.0..=1.0).contains(&p.mass()));

        let order = shuffled(g1.n(), s1 ^ wseed);
        let pp = predict_plan(&g1.permuted(&order), &g2, alpha, rho, &w).unwrap();
        prop_assert!(pp.plan().sub(&plan.select_rows(&order)).unwrap().max_abs() <= 1e-12);
    }
}

#[test]
fn mass_is_the_mean_of_node_weights() {
    let cfg = ModelConfig::default();
    let w = ModelWeights::init(&cfg, 11).unwrap();
    let (g1, g2) = (graph(12, 6, 12), graph(13, 6, 12));
    let tape = Tape::new();
    let wv = WeightVars::constants(&tape, &w);
    let (i1, i2) = (GraphInput::constant(&tape, &g1), GraphInput::constant(&tape, &g2));
    let out = predict_plan_var(&wv, &i1, &i2, tape.scalar(0.5), tape.scalar(0.01)).unwrap();
    let v1 = out.v1.value();
    let v2 = out.v2.value();
    assert!(v1.data().iter().chain(v2.data()).all(|&v| v > 0.0 && v < 1.0));
    let expected = 0.5 * (v1.sum() / g1.n() as f64 + v2.sum() / g2.n() as f64);
    assert!((out.plan.value().sum() - expected).abs() < 1e-14);
}

#[test]
fn plan_is_continuous_in_the_parameters() {
    let w = ModelWeights::init(&ModelConfig::default(), 14).unwrap();
    let (g1, g2) = (graph(15, 8, 12), graph(16, 8, 12));
    let plan = |a: f64, r: f64| predict_plan(&g1, &g2, a, r, &w).unwrap().into_plan();
    let diff = |x: &Tensor, y: &Tensor| x.sub(y).unwrap().max_abs();
    let base = plan(0.4, 0.02);
    let lip_alpha = diff(&base, &plan(0.4 + 1e-3, 0.02)) / 1e-3;
    assert!(diff(&base, &plan(0.4 + 1e-6, 0.02)) <= 1e-3 * lip_alpha);
    let lip_rho = diff(&base, &plan(0.4, 0.02 + 1e-3)) / 1e-3;
    assert!(diff(&base, &plan(0.4, 0.02 + 1e-6)) <= 1e-3 * lip_rho);
}

#[test]
fn loss_gradient_through_the_model_matches_finite_differences() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg, 17).unwrap();
    let (g1, g2) = (graph(18, 4, 6), graph(19, 4, 6));
    let err = grad_check(
        |tape, vars| {
            let wv = WeightVars::from_vars(&cfg, vars.to_vec()).unwrap();
            let (i1, i2) = (GraphInput::constant(tape, &g1), GraphInput::constant(tape, &g2));
            let out = predict_plan_var(&wv, &i1, &i2, tape.scalar(0.4), tape.scalar(0.3)).unwrap();
            let (v1, v2) = (GraphVars::constant(tape, &g1), GraphVars::constant(tape, &g2));
            Ok(fugw_loss_var(&v1, &v2, out.plan, 0.4, 0.3).unwrap())
        },
        w.tensors(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn weights_round_trip_through_files() {
    let cfg = ModelConfig {
        layers: 2,
        ..ModelConfig::default()
    };
    let w = ModelWeights::init(&cfg, 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path, Some(&cfg)).unwrap();
    assert_eq!(back, w);
    let (g1, g2) = (graph(22, 5, 9), graph(23, 5, 9));
    let a = predict_plan(&g1, &g2, 0.5, 0.01, &w).unwrap();
    let b = predict_plan(&g1, &g2, 0.5, 0.01, &back).unwrap();
    assert_eq!(a.plan(), b.plan());

    let other = ModelConfig {
        layers: 3,
        ..ModelConfig::default()
    };
    match load_weights(&path, Some(&other)) {
        Err(ModelError::ConfigMismatch { field, .. }) => assert_eq!(field, "layers"),
        r => panic!("expected a config mismatch, got {r:?}"),
    }

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_weights(&path, None), Err(ModelError::Format(_))));
}

#[test]
fn wrong_parameter_shape_names_the_parameter() {
    let cfg = tiny();
    let w = ModelWeights::init(&cfg, 24).unwrap();
    let mut tensors = w.tensors().to_vec();
    tensors[5] = Tensor::zeros(1, 1);
    match ModelWeights::from_tensors(&cfg, tensors) {
        Err(ModelError::Parameter { name, .. }) => assert_eq!(name, "layers.0.cross_update.bias"),
        r => panic!("unexpected {r:?}"),
    }
}

#[test]
fn feature_width_is_checked() {
    let cfg = ModelConfig {
        input_dim: 4,
        ..tiny()
    };
    let w = ModelWeights::init(&cfg, 25).unwrap();
    let g = graph(26, 4, 6);
    assert!(matches!(
        predict_plan(&g, &g, 0.5, 0.1, &w),
        Err(ModelError::InputDim { expected: 4, found: 3 })
    ));
}
