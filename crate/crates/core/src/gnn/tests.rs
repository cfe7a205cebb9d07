use super::*;
use crate::graph::{build_temporal_knn_graph, FeatureTensor};
use rand::{Rng, SeedableRng};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(t_len: usize, n: usize, rng: &mut ChaCha8Rng) -> FeatureTensor {
    let values: Vec<f64> = (0..t_len * n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureTensor::new(t_len, n, values).unwrap()
}

fn tiny_config(hidden: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: 2,
        hidden_dim: hidden,
        layer_count: 2,
        n_classes: classes,
        aggregation: Aggregation::Mean,
    }
}

fn random_example(
    t_len: usize,
    n: usize,
    k: usize,
    label: u8,
    rng: &mut ChaCha8Rng,
) -> TrainExample {
    let tensor = random_tensor(t_len, n, rng);
    let graph = build_temporal_knn_graph(&tensor, k).unwrap();
    TrainExample {
        tensor,
        graph,
        label,
    }
}

#[test]
fn singleton_softmax_attention_is_one() {
    let mut r = rng(1);
    let tensor = random_tensor(3, 2, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 1).unwrap();
    let params = ModelParams::init(&tiny_config(4, 3), &mut r);
    let (_, cache) = layer_forward_cached(
        &graph,
        tensor.values(),
        &params.layers[0],
        Aggregation::Mean,
    );
    for &alpha in &cache.edge_alpha {
        assert_eq!(alpha, 1.0);
    }
}

#[test]
fn identical_neighbor_features_give_uniform_attention() {
    let mut r = rng(2);
    // Constant features: every source looks alike, so scores tie everywhere.
    let tensor = FeatureTensor::new(3, 4, vec![0.7; 3 * 4 * 2]).unwrap();
    let graph = build_temporal_knn_graph(&tensor, 3).unwrap();
    let params = ModelParams::init(&tiny_config(4, 3), &mut r);
    let (_, cache) = layer_forward_cached(
        &graph,
        tensor.values(),
        &params.layers[0],
        Aggregation::Mean,
    );
    for alpha in cache.edge_alpha.chunks(3) {
        for &a in alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_message_net_passes_residual_through() {
    let mut r = rng(3);
    let hidden = 4;
    let params = ModelParams::init(&tiny_config(hidden, 3), &mut r);
    // Second layer has in_dim == out_dim, identity residual.
    let mut layer = params.layers[1].clone();
    layer.w_msg2 = Mat::zeros(hidden, hidden);
    layer.b_msg2 = vec![0.0; hidden];
    let tensor = random_tensor(3, 2, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 2).unwrap();
    let features: Vec<f64> = (0..graph.node_count() * hidden)
        .map(|_| r.gen_range(-1.0..1.0))
        .collect();
    let out = layer_forward(&graph, &features, &layer, Aggregation::Mean);
    assert_eq!(out, features);
}

#[test]
fn sum_aggregation_is_k_times_mean_on_identical_messages() {
    let mut r = rng(4);
    let hidden = 4;
    let k = 3;
    // Constant tensor -> every edge of a node carries the same message and
    // uniform attention.
    let tensor = FeatureTensor::new(2, 4, vec![0.3; 2 * 4 * 2]).unwrap();
    let graph = build_temporal_knn_graph(&tensor, k).unwrap();
    let params = ModelParams::init(&tiny_config(hidden, 3), &mut r);
    let layer = &params.layers[0];
    let mean_out = layer_forward(&graph, tensor.values(), layer, Aggregation::Mean);
    let sum_out = layer_forward(&graph, tensor.values(), layer, Aggregation::Sum);
    // Residual term: t=0 nodes have no edges, so their output is exactly it.
    let n = 4;
    for j in 0..n {
        let res = &mean_out[j * hidden..(j + 1) * hidden];
        let node = n + j; // a t=1 node
        for d in 0..hidden {
            let mean_term = mean_out[node * hidden + d] - res[d];
            let sum_term = sum_out[node * hidden + d] - res[d];
            assert!(
                (sum_term - k as f64 * mean_term).abs() < 1e-9,
                "sum {sum_term} vs k*mean {}",
                k as f64 * mean_term
            );
        }
    }
}

#[test]
fn zero_classifier_gives_uniform_probabilities() {
    let mut r = rng(5);
    let mut params = ModelParams::init(&tiny_config(4, 21), &mut r);
    params.w_cls = Mat::zeros(21, 4);
    params.b_cls = vec![0.0; 21];
    let tensor = random_tensor(4, 3, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 2).unwrap();
    let logits = forward(&params, &tensor, &graph);
    assert!(logits.iter().all(|&l| l == 0.0));
    let (class, probs) = predict(&params, &tensor, &graph);
    assert_eq!(class, 1); // tie broken toward the smallest class id
    for p in probs {
        assert!((p - 1.0 / 21.0).abs() < 1e-12);
    }
}

#[test]
fn predict_dominant_logit() {
    let mut r = rng(6);
    let mut params = ModelParams::init(&tiny_config(4, 21), &mut r);
    params.w_cls = Mat::zeros(21, 4);
    // Large bias on class 7.
    params.b_cls = vec![0.0; 21];
    params.b_cls[6] = 50.0;
    let tensor = random_tensor(4, 3, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 2).unwrap();
    let (class, probs) = predict(&params, &tensor, &graph);
    assert_eq!(class, 7);
    assert!(probs[6] > 0.999);
}

#[test]
fn probabilities_form_a_simplex_for_random_params() {
    let mut r = rng(7);
    for _ in 0..10 {
        let params = ModelParams::init(&tiny_config(6, 5), &mut r);
        let tensor = random_tensor(5, 3, &mut r);
        let graph = build_temporal_knn_graph(&tensor, 2).unwrap();
        let (_, probs) = predict(&params, &tensor, &graph);
        assert!(probs.iter().all(|&p| p >= 0.0));
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn attention_weights_sum_to_one_per_node() {
    let mut r = rng(8);
    let tensor = random_tensor(6, 5, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 3).unwrap();
    let params = ModelParams::init(&tiny_config(8, 4), &mut r);
    let (_, cache) = layer_forward_cached(
        &graph,
        tensor.values(),
        &params.layers[0],
        Aggregation::Mean,
    );
    for alphas in cache.edge_alpha.chunks(3) {
        assert!(alphas.iter().all(|&a| a >= 0.0));
        let sum: f64 = alphas.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn forward_is_equivariant_to_edge_list_order() {
    let mut r = rng(9);
    let tensor = random_tensor(5, 4, &mut r);
    let graph = build_temporal_knn_graph(&tensor, 3).unwrap();
    // Same edges, reversed list order per node.
    let lists: Vec<Vec<Vec<usize>>> = (0..graph.t_len)
        .map(|t| {
            (0..graph.n_tags)
                .map(|j| {
                    let mut l = graph.in_neighbors(t, j).to_vec();
                    l.reverse();
                    l
                })
                .collect()
        })
        .collect();
    let shuffled = TemporalGraph::from_in_neighbors(graph.t_len, graph.n_tags, 3, lists).unwrap();
    let params = ModelParams::init(&tiny_config(6, 4), &mut r);
    let a = forward(&params, &tensor, &graph);
    let b = forward(&params, &tensor, &shuffled);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut r = rng(10);
    let config = tiny_config(4, 3);
    let examples: Vec<TrainExample> = vec![
        random_example(3, 2, 2, 1, &mut r),
        random_example(3, 2, 2, 3, &mut r),
    ];
    let refs: Vec<&TrainExample> = examples.iter().collect();
    for aggregation in [Aggregation::Mean, Aggregation::Sum] {
        let mut cfg = config.clone();
        cfg.aggregation = aggregation;
        let params = ModelParams::init(&cfg, &mut r);
        let (_, _, grads) = batch_loss_and_grads(&params, &refs);
        let analytic = grads.to_param_vector();

        let step = 1e-5;
        let theta = params.to_param_vector();
        let mut numeric = vec![0.0f64; theta.len()];
        let mut probe = params.clone();
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += step;
            probe.set_param_vector(&plus);
            let up = batch_loss(&probe, &refs);
            let mut minus = theta.clone();
            minus[i] -= step;
            probe.set_param_vector(&minus);
            let down = batch_loss(&probe, &refs);
            numeric[i] = (up - down) / (2.0 * step);
        }
        let diff: f64 = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = diff / norm.max(1e-12);
        assert!(rel <= 1e-4, "aggregation {aggregation}: relative error {rel}");
    }
}

#[test]
fn training_is_bit_deterministic() {
    let mut r = rng(11);
    let dataset: Vec<TrainExample> = (0..12)
        .map(|i| random_example(4, 3, 2, (i % 3 + 1) as u8, &mut r))
        .collect();
    let model_cfg = tiny_config(6, 3);
    let train_cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 0.01,
        seed: 99,
        weight_decay: 1e-4,
        momentum: 0.9,
        optimizer: Optimizer::Adam,
    };
    let a = train(&dataset, &model_cfg, &train_cfg).unwrap();
    let b = train(&dataset, &model_cfg, &train_cfg).unwrap();
    assert_eq!(a.params.to_param_vector(), b.params.to_param_vector());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let mut r = rng(12);
    let dataset: Vec<TrainExample> = (0..8)
        .map(|i| random_example(4, 3, 2, (i % 2 + 1) as u8, &mut r))
        .collect();
    let model_cfg = tiny_config(6, 2);
    let train_cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 0.0,
        seed: 7,
        weight_decay: 0.0,
        momentum: 0.9,
        optimizer: Optimizer::Momentum,
    };
    use rand::SeedableRng;
    let mut init_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let initial = ModelParams::init(&model_cfg, &mut init_rng);
    let out = train(&dataset, &model_cfg, &train_cfg).unwrap();
    assert_eq!(out.params.to_param_vector(), initial.to_param_vector());
    let losses: Vec<f64> = out.trace.iter().map(|s| s.loss).collect();
    for w in losses.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-12);
    }
}

/// Two well-separated synthetic classes. Also exercises the smoke property
/// that the loss is non-increasing early in training at a small step size.
#[test]
fn separable_two_class_set_reaches_high_accuracy() {
    let mut r = rng(13);
    let mut dataset = Vec::new();
    for i in 0..200 {
        let label = (i % 2 + 1) as u8;
        let center = if label == 1 { 0.2 } else { 0.8 };
        let values: Vec<f64> = (0..4 * 2 * 2)
            .map(|_| center + r.gen_range(-0.05..0.05))
            .collect();
        let tensor = FeatureTensor::new(4, 2, values).unwrap();
        let graph = build_temporal_knn_graph(&tensor, 1).unwrap();
        dataset.push(TrainExample {
            tensor,
            graph,
            label,
        });
    }
    let model_cfg = ModelConfig {
        feature_dim: 2,
        hidden_dim: 8,
        layer_count: 2,
        n_classes: 2,
        aggregation: Aggregation::Mean,
    };
    let train_cfg = TrainConfig {
        epochs: 50,
        batch_size: 16,
        learning_rate: 0.02,
        seed: 42,
        weight_decay: 0.0,
        momentum: 0.9,
        optimizer: Optimizer::Momentum,
    };
    let out = train(&dataset, &model_cfg, &train_cfg).unwrap();
    let final_acc = out.trace.last().unwrap().accuracy;
    assert!(final_acc >= 0.99, "train accuracy {final_acc}");

    let early: Vec<f64> = out.trace.iter().take(5).map(|s| s.loss).collect();
    let violations = early.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    assert!(violations <= 1, "early losses {early:?}");
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut r = rng(14);
    let params = ModelParams::init(&tiny_config(6, 5), &mut r);
    let mut buf = Vec::new();
    save_checkpoint(&params, &mut buf).unwrap();
    let loaded = load_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(params, loaded);

    let mut corrupted = buf.clone();
    corrupted[0] = b'X';
    assert!(matches!(
        load_checkpoint(&mut corrupted.as_slice()),
        Err(CheckpointError::BadMagic)
    ));
}

#[test]
fn train_rejects_bad_labels() {
    let mut r = rng(15);
    let dataset = vec![random_example(3, 2, 1, 9, &mut r)];
    let err = train(&dataset, &tiny_config(4, 3), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::BadLabel { label: 9, .. }));
    let err = train(&[], &tiny_config(4, 3), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::EmptyDataset));
}
