#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::fixtures::document;
use crate::encoding::{EmbeddingSource, EventEmbeddings, SyntheticProvider};
use crate::relgraph::{build_graph, GraphStrategy, RelationalGraph};
use crate::tensor::{Matrix, Tape};

type NoRng = ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Dense multi-head attention with non-neighbors masked to -inf, written
/// with plain loops. Returns the layer output and the dense `N x N`
/// attention matrix of each head.
fn dense_oracle(
    v: &Matrix<f64>,
    adjacency: &[Vec<usize>],
    heads: &[HeadParams<f64>],
    output: &Matrix<f64>,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = v.rows();
    let mm = |a: &Matrix<f64>, b: &Matrix<f64>| -> Vec<Vec<f64>> {
        (0..a.rows())
            .map(|i| {
                (0..b.cols())
                    .map(|j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
                    .collect()
            })
            .collect()
    };
    let mut concat: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut alphas = Vec::new();
    for h in heads {
        let d_k = h.query.cols();
        let (q, k, val) = (mm(v, &h.query), mm(v, &h.key), mm(v, &h.value));
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    if adjacency[i].contains(&j) {
                        q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d_k as f64).sqrt()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..n {
                alpha[i][j] = exps[j] / total;
            }
            for c in 0..d_k {
                concat[i].push((0..n).map(|j| alpha[i][j] * val[j][c]).sum());
            }
        }
        alphas.push(alpha);
    }
    let concat = Matrix::from_rows(&concat).unwrap();
    (mm(&concat, output), alphas)
}

fn rgt_config(input: usize, global: usize, layers: usize, heads: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        input_dim: input,
        global_dim: global,
        layers,
        heads,
        hidden_dim: hidden,
        head_dim: None,
        dropout: 0.0,
        layer_kind: LayerKind::Rgt,
    }
}

fn first_layer(params: &ErgoParams<f64>) -> (&[HeadParams<f64>], &Matrix<f64>) {
    match &params.layers()[0] {
        LayerParams::Rgt { heads, output } => (heads, output),
        LayerParams::Gcn { .. } => unreachable!(),
    }
}

fn run_layer(
    params: &ErgoParams<f64>,
    graph: &RelationalGraph,
    v: &Matrix<f64>,
) -> (Matrix<f64>, Tape<f64>, ForwardPass) {
    let mut tape = Tape::new();
    let global = vec![0.0; params.config().global_dim];
    let pass = params.forward::<NoRng>(&mut tape, graph, v, &global, None).unwrap();
    let (heads, output) = first_layer(params);
    let input = tape.constant(v.clone());
    let handles: Vec<HeadHandles> = heads
        .iter()
        .map(|h| HeadHandles {
            query: tape.constant(h.query.clone()),
            key: tape.constant(h.key.clone()),
            value: tape.constant(h.value.clone()),
        })
        .collect();
    let out = tape.constant(output.clone());
    let (layer_out, _) = rgt_layer::<f64, NoRng>(&mut tape, input, &graph.csr(), &handles, out, 0.0, None).unwrap();
    (tape.value(layer_out).clone(), tape, pass)
}

#[test]
fn node_init_concatenates() {
    let doc = document("d", "t", 2, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let mut emb = EventEmbeddings {
        global: vec![0.0, 0.0],
        events: Default::default(),
    };
    emb.events.insert("e0".into(), vec![1.0, 0.0]);
    emb.events.insert("e1".into(), vec![0.0, 1.0]);
    let m = init_node_embeddings(&emb, &graph).unwrap();
    assert_eq!(m.as_slice(), &[1.0, 0.0, 0.0, 1.0]);

    emb.events.insert("e0".into(), vec![0.0, 1.0]);
    emb.events.insert("e1".into(), vec![1.0, 0.0]);
    assert_eq!(
        init_node_embeddings(&emb, &graph).unwrap().as_slice(),
        &[0.0, 1.0, 1.0, 0.0]
    );

    emb.events.remove("e1");
    assert_eq!(
        init_node_embeddings(&emb, &graph).unwrap_err(),
        ModelError::MissingEmbedding("e1".into())
    );
}

#[test]
fn node_init_shape() {
    let doc = document("d", "t", 5, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let emb: EventEmbeddings<f64> = SyntheticProvider::new(8, 0).embed(&doc).unwrap();
    assert_eq!(init_node_embeddings(&emb, &graph).unwrap().shape(), (10, 16));
}

#[test]
fn singleton_node_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let doc = document("d", "t", 2, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let params = ErgoParams::<f64>::init(rgt_config(4, 2, 1, 2, 4), &mut rng).unwrap();
    let v = random(&mut rng, 1, 4);
    let (out, tape, pass) = run_layer(&params, &graph, &v);
    let att = pass.attention_of(&tape, 0, 1, 0).unwrap();
    assert_eq!(
        att,
        vec![AttentionEntry {
            neighbor: 0,
            alpha: 1.0
        }]
    );

    let (heads, output) = first_layer(&params);
    let mut concat = Vec::new();
    for h in heads {
        concat.extend_from_slice(v.matmul(&h.value).as_slice());
    }
    let expected = Matrix::row_vector(&concat).matmul(output);
    for (a, b) in out.as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_query_gives_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let doc = document("d", "t", 4, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let mut params = ErgoParams::<f64>::init(rgt_config(6, 3, 1, 2, 4), &mut rng).unwrap();
    if let LayerParams::Rgt { heads, .. } = &mut params.layers_mut()[0] {
        for h in heads {
            h.query = Matrix::zeros(6, 2);
        }
    }
    let v = random(&mut rng, 6, 6);
    let (_, tape, pass) = run_layer(&params, &graph, &v);
    for node in 0..6 {
        let att = pass.attention_of(&tape, 0, 0, node).unwrap();
        assert_eq!(att.len(), 5);
        for e in att {
            assert!((e.alpha - 0.2).abs() < 1e-15);
        }
    }
}

#[test]
fn empty_neighborhood_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let doc = document("d", "t", 2, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, false).unwrap();
    let params = ErgoParams::<f64>::init(rgt_config(4, 2, 1, 1, 2), &mut rng).unwrap();
    let mut tape = Tape::new();
    let err = params
        .forward::<NoRng>(&mut tape, &graph, &random(&mut rng, 1, 4), &[0.0, 0.0], None)
        .unwrap_err();
    assert_eq!(err, ModelError::EmptyNeighborhood(0));
}

#[test]
fn attention_dump_indices_are_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let doc = document("d", "t", 3, 3, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let params = ErgoParams::<f64>::init(rgt_config(4, 2, 2, 2, 4), &mut rng).unwrap();
    let (_, tape, pass) = run_layer(&params, &graph, &random(&mut rng, 3, 4));
    assert!(pass.attention_of(&tape, 2, 0, 0).is_err());
    assert!(pass.attention_of(&tape, 1, 2, 0).is_err());
    assert!(pass.attention_of(&tape, 1, 1, 3).is_err());
    assert!(pass.attention_of(&tape, 1, 1, 2).is_ok());
}

#[test]
fn gcn_single_node_is_relu_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let doc = document("d", "t", 2, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, false).unwrap();
    let v = random(&mut rng, 1, 4);
    let w = random(&mut rng, 4, 3);
    let mut tape = Tape::new();
    let vi = tape.constant(v.clone());
    let wi = tape.constant(w.clone());
    let out = gcn_layer::<f64, NoRng>(&mut tape, vi, &graph, wi, 0.0, None).unwrap();
    let expected = v.matmul(&w).map(|x| x.max(0.0));
    assert_eq!(tape.value(out), &expected);
}

#[test]
fn gcn_identical_connected_nodes_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let doc = document("d", "t", 3, 3, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let row = random(&mut rng, 1, 4);
    let v = Matrix::from_rows(&[row.as_slice(), row.as_slice(), row.as_slice()]).unwrap();
    let mut tape = Tape::new();
    let vi = tape.constant(v);
    let wi = tape.constant(random(&mut rng, 4, 5));
    let out = gcn_layer::<f64, NoRng>(&mut tape, vi, &graph, wi, 0.0, None).unwrap();
    let o = tape.value(out);
    assert_eq!(o.row(0), o.row(1));
    assert_eq!(o.row(1), o.row(2));
}

#[test]
fn gcn_normalization_matches_dense_formula() {
    let doc = document("d", "t", 4, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, false).unwrap();
    let (csr, w) = gcn_normalized(&graph);
    // Every node has degree 2(m-2) = 4, plus the self loop.
    for &x in &w {
        assert!((x - 0.2).abs() < 1e-15);
    }
    assert_eq!(csr.targets.len(), 6 * 5);
}

#[test]
fn zero_classifier_is_indifferent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let nodes = tape.constant(random(&mut rng, 5, 3));
    let global = tape.constant(random(&mut rng, 1, 2));
    let w = tape.constant(Matrix::zeros(5, 2));
    let p = classify_pairs(&mut tape, nodes, global, w).unwrap();
    assert!(tape.value(p).as_slice().iter().all(|&x| x == 0.5));

    let bad = tape.constant(Matrix::zeros(4, 2));
    assert!(matches!(
        classify_pairs(&mut tape, nodes, global, bad),
        Err(ModelError::DimensionMismatch { .. })
    ));
}

#[test]
fn classifier_rows_are_distributions_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let n = rng.random_range(1..8);
        let nodes = random(&mut rng, n, 4);
        let global = random(&mut rng, 1, 3);
        let w = random(&mut rng, 7, 2).map(|x| x * 4.0);
        let mut tape = Tape::new();
        let (a, b, c) = (
            tape.constant(nodes.clone()),
            tape.constant(global.clone()),
            tape.constant(w),
        );
        let p = classify_pairs(&mut tape, a, b, c).unwrap();
        let probs = tape.value(p).clone();
        for r in 0..n {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        // Adding the same constant to both logits: append a constant-one
        // feature whose classifier row is [k, k].
        let ones = Matrix::filled(n, 1, 1.0);
        let mut joined = Vec::new();
        for r in 0..n {
            joined.extend_from_slice(nodes.row(r));
            joined.extend_from_slice(ones.row(r));
        }
        let joined = Matrix::from_vec(n, 5, joined).unwrap();
        let mut w2 = tape.value(c).as_slice()[..8].to_vec();
        w2.extend_from_slice(&[3.7, 3.7]);
        w2.extend_from_slice(&tape.value(c).as_slice()[8..]);
        let w2 = Matrix::from_vec(8, 2, w2).unwrap();
        let mut t2 = Tape::new();
        let (a2, b2, c2) = (t2.constant(joined), t2.constant(global), t2.constant(w2));
        let p2 = classify_pairs(&mut t2, a2, b2, c2).unwrap();
        for r in 0..n {
            let arg = |m: &Matrix<f64>| usize::from(m.get(r, 1) > m.get(r, 0));
            assert_eq!(arg(&probs), arg(t2.value(p2)));
            assert!((probs.get(r, 1) - t2.value(p2).get(r, 1)).abs() < 1e-12);
        }
    }
}

#[test]
fn param_count_examples() {
    let mut cfg = rgt_config(16, 8, 2, 4, 16);
    cfg.head_dim = Some(4);
    assert_eq!(param_count(&cfg, false).exact, 2048);
    assert_eq!(param_count(&cfg, false).class.notation(), "O(LHD^2)");

    let gcn = ModelConfig {
        layer_kind: LayerKind::Gcn,
        ..rgt_config(16, 8, 2, 1, 16)
    };
    assert_eq!(param_count(&gcn, false).exact, 512);
    assert_eq!(param_count(&gcn, false).class.notation(), "O(LD^2)");

    let none = rgt_config(16, 8, 0, 4, 16);
    assert_eq!(param_count(&none, false).exact, 0);
    assert_eq!(param_count(&none, true).exact, (16 + 8) * 2);
}

#[test]
fn config_validation() {
    assert!(rgt_config(8, 4, 2, 3, 8).validate().is_err());
    let mut ok = rgt_config(8, 4, 2, 3, 8);
    ok.head_dim = Some(5);
    assert!(ok.validate().is_ok());
    assert!(rgt_config(8, 4, 2, 0, 8).validate().is_err());
    let mut bad = rgt_config(8, 4, 2, 2, 8);
    bad.dropout = 1.0;
    assert!(bad.validate().is_err());
}

#[test]
fn named_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ErgoParams::<f64>::init(rgt_config(6, 3, 2, 2, 4), &mut rng).unwrap();
    let named = params.named().into_iter().map(|(n, m)| (n, m.clone())).collect();
    let back = ErgoParams::from_named(params.config().clone(), named).unwrap();
    assert_eq!(back, params);

    let mut named: alloc::collections::BTreeMap<_, _> =
        params.named().into_iter().map(|(n, m)| (n, m.clone())).collect();
    named.insert("layer0.w_o".into(), Matrix::zeros(1, 1));
    assert!(matches!(
        ErgoParams::from_named(params.config().clone(), named),
        Err(ModelError::BadParameter { .. })
    ));
}

#[test]
fn dropout_only_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let doc = document("d", "t", 4, 2, &[]);
    let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
    let mut cfg = rgt_config(6, 3, 2, 2, 4);
    cfg.dropout = 0.5;
    let params = ErgoParams::<f64>::init(cfg, &mut rng).unwrap();
    let v = random(&mut rng, 6, 6);
    let eval = |p: &ErgoParams<f64>| {
        let mut tape = Tape::new();
        let pass = p
            .forward::<NoRng>(&mut tape, &graph, &v, &[0.1, 0.2, 0.3], None)
            .unwrap();
        tape.value(pass.probs).clone()
    };
    assert_eq!(eval(&params), eval(&params));
    let mut tape = Tape::new();
    let pass = params
        .forward(&mut tape, &graph, &v, &[0.1, 0.2, 0.3], Some(&mut rng))
        .unwrap();
    assert_ne!(tape.value(pass.probs), &eval(&params));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rgt_matches_dense_oracle(
        m in 2usize..=6,
        heads in 1usize..=3,
        complete: bool,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = document("d", "t", m, 2, &[]);
        let strategy = if complete { GraphStrategy::Complete } else { GraphStrategy::SharedEvent };
        let graph = build_graph(&doc, strategy, true).unwrap();
        let n = graph.node_count();
        let cfg = rgt_config(6, 3, 1, heads, 2 * heads);
        let params = ErgoParams::<f64>::init(cfg, &mut rng).unwrap();
        let v = random(&mut rng, n, 6).map(|x| 2.0 * x);
        let (out, tape, pass) = run_layer(&params, &graph, &v);
        let (heads_p, output) = first_layer(&params);
        let (expected, alphas) = dense_oracle(&v, graph.adjacency(), heads_p, output);
        for i in 0..n {
            for (a, b) in out.row(i).iter().zip(&expected[i]) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
        for (c, dense) in alphas.iter().enumerate() {
            for i in 0..n {
                let sparse = pass.attention_of(&tape, 0, c, i).unwrap();
                let total: f64 = sparse.iter().map(|e| e.alpha).sum();
                prop_assert!((total - 1.0).abs() <= 1e-6);
                let mut row = vec![0.0; n];
                for e in &sparse {
                    row[e.neighbor] = e.alpha;
                }
                for j in 0..n {
                    if !graph.adjacency()[i].contains(&j) {
                        prop_assert_eq!(row[j], 0.0);
                        prop_assert_eq!(dense[i][j], 0.0);
                    }
                    prop_assert!((row[j] - dense[i][j]).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn rgt_is_permutation_equivariant(m in 3usize..=6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = document("d", "t", m, 2, &[]);
        let graph = build_graph(&doc, GraphStrategy::SharedEvent, true).unwrap();
        let n = graph.node_count();
        let params = ErgoParams::<f64>::init(rgt_config(6, 3, 2, 2, 4), &mut rng).unwrap();
        let v = random(&mut rng, n, 6);

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // Node k of the relabelled graph is node perm[k] of the original.
        let nodes = perm.iter().map(|&p| graph.nodes()[p].clone()).collect();
        let relabelled = RelationalGraph::from_pairs("d".into(), nodes, GraphStrategy::SharedEvent, true);
        let rows: Vec<&[f64]> = perm.iter().map(|&p| v.row(p)).collect();
        let v_perm = Matrix::from_rows(&rows).unwrap();

        let global = [0.3, -0.2, 0.1];
        let run = |g: &RelationalGraph, x: &Matrix<f64>| {
            let mut tape = Tape::new();
            let pass = params.forward::<NoRng>(&mut tape, g, x, &global, None).unwrap();
            tape.value(pass.probs).clone()
        };
        let base = run(&graph, &v);
        let moved = run(&relabelled, &v_perm);
        for (k, &p) in perm.iter().enumerate() {
            for c in 0..2 {
                prop_assert!((moved.get(k, c) - base.get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_count_matches_registry(
        layers in 0usize..4,
        heads in 1usize..5,
        dk in 1usize..6,
        input in 1usize..20,
        hidden in 1usize..20,
        gcn: bool,
    ) {
        let cfg = ModelConfig {
            input_dim: input,
            global_dim: 3,
            layers,
            heads,
            hidden_dim: hidden,
            head_dim: Some(dk),
            dropout: 0.1,
            layer_kind: if gcn { LayerKind::Gcn } else { LayerKind::Rgt },
        };
        let params = ErgoParams::<f64>::zeroed(cfg.clone()).unwrap();
        prop_assert_eq!(param_count(&cfg, false).exact, params.scalar_count(false));
        prop_assert_eq!(param_count(&cfg, true).exact, params.scalar_count(true));
    }
}
