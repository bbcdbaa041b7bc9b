use forge_core::data::{batch_iter, one_hot, synthetic_blobs, BlobsConfig, LabeledBatch};
use forge_core::engine::{
    forward, grad_check, init_params, loss, loss_and_grads, sgd_step, EngineError, ParamSet,
};
use forge_core::rng::SeededRng;
use forge_core::tensor::Tensor;
use forge_core::testing::{random_spec, SpecOptions};
use forge_core::{parse, validate, ValidatedGraph};
use proptest::prelude::*;

fn graph_file(name: &str) -> ValidatedGraph {
    let text = std::fs::read_to_string(format!("../../graphs/{name}")).unwrap();
    validate(&parse(&text).unwrap()).unwrap()
}

fn random_batch(rng: &mut SeededRng, m: usize, dim: usize, n: usize) -> LabeledBatch {
    let x = Tensor::matrix(m, dim, (0..m * dim).map(|_| rng.next_f64()).collect()).unwrap();
    let classes: Vec<usize> = (0..m).map(|_| rng.below(n as u64) as usize).collect();
    LabeledBatch::new(x, one_hot(&classes, n)).unwrap()
}

/// Glorot-style random values for every param, zeros-init ones included, so
/// that no layer is degenerate.
fn random_params(g: &ValidatedGraph, rng: &mut SeededRng) -> ParamSet {
    let mut p = ParamSet::new();
    for decl in &g.spec().params {
        let dims = decl.shape.bind(0);
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        p.insert(decl.name.clone(), Tensor::new(dims, data).unwrap());
    }
    p
}

#[test]
fn softmax_regression_gradients_match() {
    let g = graph_file("mnist_softmax.graph");
    let mut rng = SeededRng::new(9);
    let batch = random_batch(&mut rng, 4, 784, 10);
    let err = grad_check(&g, &init_params(&g, 9), &batch, 1e-6).unwrap();
    assert!(err <= 1e-6, "max relative error {err}");
}

#[test]
fn zeros_regression_logit_gradient() {
    let g = graph_file("mnist_softmax.graph");
    let mut params = init_params(&g, 0);
    params.insert("W", Tensor::zeros(&[784, 10]));
    let mut rng = SeededRng::new(1);
    let batch = random_batch(&mut rng, 4, 784, 10);
    let (l, grads) = loss_and_grads(&g, &params, &batch).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-12);
    // d loss / d b = column sums of (uniform - y) / m
    let mut expected = vec![0.0; 10];
    for y in batch.labels().row_iter() {
        for (e, v) in expected.iter_mut().zip(y) {
            *e += (0.1 - v) / 4.0;
        }
    }
    for (a, b) in grads.get("b").unwrap().data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let g = graph_file("mlp_hidden.graph");
    let params = init_params(&g, 4);
    let mut rng = SeededRng::new(4);
    let batch = random_batch(&mut rng, 8, 784, 10);
    let a = forward(&g, &params, batch.images()).unwrap();
    let b = forward(&g, &params, batch.images()).unwrap();
    assert_eq!(a, b);
    for row in a["probs"].row_iter() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn missing_and_misshapen_params_are_reported() {
    let g = graph_file("mnist_softmax.graph");
    let mut rng = SeededRng::new(2);
    let batch = random_batch(&mut rng, 2, 784, 10);
    let mut params = init_params(&g, 0);
    params.insert("b", Tensor::zeros(&[9]));
    assert!(matches!(
        loss(&g, &params, &batch),
        Err(EngineError::ParamShape { .. })
    ));
    let mut only_w = ParamSet::new();
    only_w.insert("W", Tensor::zeros(&[784, 10]));
    assert_eq!(
        loss(&g, &only_w, &batch),
        Err(EngineError::MissingParam("b".into()))
    );
}

#[test]
fn wrong_label_width_is_rejected() {
    let g = graph_file("mnist_softmax.graph");
    let x = Tensor::zeros(&[1, 784]);
    let batch = LabeledBatch::new(x, one_hot(&[0], 5)).unwrap();
    assert!(matches!(
        loss(&g, &init_params(&g, 0), &batch),
        Err(EngineError::LabelShape { .. })
    ));
}

#[test]
fn small_steps_decrease_the_loss() {
    let g = graph_file("blobs_softmax.graph");
    let data = synthetic_blobs(&BlobsConfig::default()).unwrap();
    let batch = batch_iter(&data.train, 100, 5).unwrap().next().unwrap();
    let mut params = init_params(&g, 5);
    let mut losses = Vec::new();
    for _ in 0..11 {
        let (l, grads) = loss_and_grads(&g, &params, &batch).unwrap();
        losses.push(l);
        params = sgd_step(&params, &grads, 1e-3);
    }
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "{losses:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_on_random_graphs(seed in any::<u64>(), m in 1usize..=8) {
        let mut rng = SeededRng::new(seed);
        let opts = SpecOptions { n_classes: 1 + rng.below(8) as usize, ..SpecOptions::default() };
        let spec = random_spec(&mut rng, &opts);
        let g = validate(&spec).unwrap();
        let params = random_params(&g, &mut rng);
        let dim = g.spec().inputs[0].shape.bind(0)[1];
        let batch = random_batch(&mut rng, m, dim, opts.n_classes);
        let err = grad_check(&g, &params, &batch, 1e-6).unwrap();
        prop_assert!(err <= 1e-6, "error {} on\n{}", err, forge_core::dsl::serialize(&spec).unwrap());
    }
}
