mod common;

use std::sync::Arc;

use common::{dense, random_graph, random_matrix};
use gfgn::layers::{
    gcn_forward, mlp_forward, Activation, GraphContext, LayerParams, Model, ModelConfig,
    ScoreRecord,
};
use gfgn::rng;
use gfgn::{Graph, Matrix, Tape, Variant};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Literal per-node evaluation of one gating head.
fn dense_head(
    g: &Graph,
    variant: Variant,
    h: &Matrix,
    w: &Matrix,
    w_s: &Matrix,
    lambda: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = g.n();
    let xw = dense::mul(&dense::rows(h), &dense::rows(w));
    let d = xw[0].len();
    let nbhd: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut v: Vec<usize> = g.neighbors(i).to_vec();
            v.push(i);
            v.sort_unstable();
            v
        })
        .collect();
    let deg: Vec<f64> = nbhd.iter().map(|v| v.len() as f64).collect();
    let gate = |input: Vec<f64>| -> Vec<f64> {
        (0..d)
            .map(|c| {
                let z: f64 = (0..input.len()).map(|r| input[r] * w_s.get(r, c)).sum();
                lambda * sigmoid(z)
            })
            .collect()
    };
    let mut out = vec![vec![0.0; d]; n];
    let mut scores = Vec::new();
    match variant {
        Variant::GfgnGraph | Variant::GfgnNeighbor => {
            let node_scores: Vec<Vec<f64>> = if variant == Variant::GfgnGraph {
                let mean: Vec<f64> = (0..d)
                    .map(|c| (0..n).map(|i| xw[i][c]).sum::<f64>() / n as f64)
                    .collect();
                let s = gate(mean);
                scores.push(s.clone());
                vec![s; n]
            } else {
                let s: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        let mut input = xw[i].clone();
                        input.extend((0..d).map(|c| {
                            nbhd[i].iter().map(|&j| xw[j][c]).sum::<f64>() / deg[i]
                        }));
                        gate(input)
                    })
                    .collect();
                scores.extend(s.iter().cloned());
                s
            };
            for i in 0..n {
                let s = &node_scores[i];
                for c in 0..d {
                    let mut v = (1.0 - s[c]) * xw[i][c];
                    for &j in &nbhd[i] {
                        v += s[c] * xw[j][c] / (deg[i] * deg[j]).sqrt();
                    }
                    out[i][c] = v;
                }
            }
        }
        Variant::GfgnPair => {
            for i in 0..n {
                let s: Vec<Vec<f64>> = nbhd[i]
                    .iter()
                    .map(|&j| {
                        let mut input = xw[i].clone();
                        input.extend_from_slice(&xw[j]);
                        gate(input)
                    })
                    .collect();
                for c in 0..d {
                    let total: f64 = s.iter().map(|sij| sij[c]).sum();
                    let mut v = (1.0 - total / deg[i]) * xw[i][c];
                    for (k, &j) in nbhd[i].iter().enumerate() {
                        v += s[k][c] * xw[j][c] / (deg[i] * deg[j]).sqrt();
                    }
                    out[i][c] = v;
                }
                scores.extend(s);
            }
        }
        _ => unreachable!(),
    }
    (out, scores)
}

fn run_layer(
    layer: &LayerParams,
    g: &Graph,
    h: &Matrix,
    score_override: Option<&Matrix>,
) -> (Matrix, Option<Matrix>) {
    let ctx = GraphContext::new(g);
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let params: Vec<_> = layer.matrices().map(|m| tape.leaf(m.clone(), true)).collect();
    let (out, s) = layer
        .forward(&mut tape, Some(&ctx), x, &params, score_override)
        .unwrap();
    (
        tape.value(out).clone(),
        s.map(|s| tape.value(s).clone()),
    )
}

fn layer(variant: Variant, d_in: usize, d_out: usize, heads: usize, lambda: f64, seed: u64) -> LayerParams {
    LayerParams::init(
        variant,
        d_in,
        d_out,
        heads,
        lambda,
        Activation::Relu,
        rng::derive_seed(seed, &[1]),
        rng::derive_seed(seed, &[2]),
    )
    .unwrap()
}

#[test]
fn gated_layers_match_dense_reference() {
    for variant in [Variant::GfgnGraph, Variant::GfgnNeighbor, Variant::GfgnPair] {
        for (seed, heads) in [(1u64, 1usize), (2, 2), (3, 3)] {
            let g = random_graph(5 + seed as usize, 0.4, seed);
            let h = random_matrix(g.n(), 4, seed + 10);
            let lp = layer(variant, 4, 6, heads, 1.5, seed);
            let (out, scores) = run_layer(&lp, &g, &h, None);

            let mut expected_cols: Vec<Vec<Vec<f64>>> = Vec::new();
            let mut expected_scores: Vec<Vec<Vec<f64>>> = Vec::new();
            for head in &lp.heads {
                let (o, s) = dense_head(&g, variant, &h, &head.w, head.w_s.as_ref().unwrap(), 1.5);
                expected_cols.push(o);
                expected_scores.push(s);
            }
            let expected = dense::hcat(&expected_cols).map(|v| v.max(0.0));
            assert!(
                out.max_abs_diff(&expected) < 1e-12,
                "{variant} K={heads}: {}",
                out.max_abs_diff(&expected)
            );
            let scores = scores.unwrap();
            assert!(scores.max_abs_diff(&dense::hcat(&expected_scores)) < 1e-12);
        }
    }
}

#[test]
fn gcn_matches_dense_reference_on_path() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let ctx = GraphContext::new(&g);
    let h = random_matrix(3, 4, 5);
    let w = random_matrix(4, 2, 6);
    // Â for the path with self-loops: degrees 2, 3, 2.
    let r6 = 1.0 / 6f64.sqrt();
    let a = vec![
        vec![0.5, r6, 0.0],
        vec![r6, 1.0 / 3.0, r6],
        vec![0.0, r6, 0.5],
    ];
    let expected = dense::mul(&dense::mul(&a, &dense::rows(&h)), &dense::rows(&w));
    let mut tape = Tape::new();
    let (hv, wv) = (tape.constant(h), tape.constant(w));
    let out = gcn_forward(&mut tape, &ctx, hv, wv, Activation::Identity).unwrap();
    assert!(tape.value(out).max_abs_diff(&dense::matrix(&expected)) < 1e-12);
}

#[test]
fn gcn_identical_isolated_nodes_match() {
    let g = Graph::from_edges(2, &[]).unwrap();
    let ctx = GraphContext::new(&g);
    let h = Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0]]).unwrap();
    let mut tape = Tape::new();
    let (hv, wv) = (tape.constant(h.clone()), tape.constant(Matrix::identity(2)));
    let out = gcn_forward(&mut tape, &ctx, hv, wv, Activation::Identity).unwrap();
    assert!(tape.value(out).bit_eq(&h));
}

#[test]
fn zero_lambda_reduces_to_mlp_bitwise() {
    for variant in [Variant::GfgnGraph, Variant::GfgnNeighbor, Variant::GfgnPair] {
        for heads in [1, 2, 4] {
            let g = random_graph(9, 0.35, heads as u64);
            let h = random_matrix(9, 5, 77);
            let gated = layer(variant, 5, 8, heads, 0.0, 4);
            let mlp = layer(Variant::Mlp, 5, 8, heads, 0.0, 4);
            let (a, _) = run_layer(&gated, &g, &h, None);
            let mut tape = Tape::new();
            let (hv, wv) = (tape.constant(h.clone()), tape.constant(mlp.heads[0].w.clone()));
            let b = mlp_forward(&mut tape, hv, wv, Activation::Relu).unwrap();
            assert!(a.bit_eq(tape.value(b)), "{variant} K={heads}");
        }
    }
}

#[test]
fn unit_graph_scores_reduce_to_gcn_bitwise() {
    for heads in [1, 2] {
        let g = random_graph(10, 0.3, 8 + heads as u64);
        let h = random_matrix(10, 5, 3);
        let gated = layer(Variant::GfgnGraph, 5, 6, heads, 1.0, 9);
        let gcn = layer(Variant::Gcn, 5, 6, heads, 1.0, 9);
        let (a, _) = run_layer(&gated, &g, &h, Some(&Matrix::filled(1, 6, 1.0)));
        let (b, _) = run_layer(&gcn, &g, &h, None);
        assert!(a.bit_eq(&b), "K={heads}");
    }
}

#[test]
fn uniform_overrides_collapse_to_graph_variant_bitwise() {
    let g = random_graph(8, 0.4, 21);
    let ctx = GraphContext::new(&g);
    let h = random_matrix(8, 4, 22);
    let s = random_matrix(1, 6, 23).map(|v| v.abs().min(1.0));
    let graph = layer(Variant::GfgnGraph, 4, 6, 2, 1.0, 5);
    let (base, _) = run_layer(&graph, &g, &h, Some(&s));

    let per_node = Matrix::from_vec(8, 6, s.as_slice().repeat(8)).unwrap();
    let neighbor = layer(Variant::GfgnNeighbor, 4, 6, 2, 1.0, 5);
    let (nb, _) = run_layer(&neighbor, &g, &h, Some(&per_node));
    assert!(nb.bit_eq(&base));

    let e = ctx.num_entries();
    let per_pair = Matrix::from_vec(e, 6, s.as_slice().repeat(e)).unwrap();
    let pair = layer(Variant::GfgnPair, 4, 6, 2, 1.0, 5);
    let (pr, _) = run_layer(&pair, &g, &h, Some(&per_pair));
    assert!(pr.bit_eq(&base));
}

#[test]
fn zero_gate_weights_give_half_lambda() {
    for variant in [Variant::GfgnGraph, Variant::GfgnNeighbor, Variant::GfgnPair] {
        let g = random_graph(6, 0.5, 2);
        let h = random_matrix(6, 3, 4);
        let mut lp = layer(variant, 3, 4, 2, 1.6, 1);
        for head in &mut lp.heads {
            let ws = head.w_s.as_mut().unwrap();
            *ws = Matrix::zeros(ws.rows(), ws.cols());
        }
        let (_, s) = run_layer(&lp, &g, &h, None);
        assert!(s.unwrap().as_slice().iter().all(|&v| v == 0.8));
    }
}

#[test]
fn scores_stay_inside_open_interval() {
    for variant in [Variant::GfgnGraph, Variant::GfgnNeighbor, Variant::GfgnPair] {
        let g = random_graph(12, 0.3, 31);
        let h = random_matrix(12, 6, 32);
        let lp = layer(variant, 6, 8, 4, 2.0, 33);
        let (_, s) = run_layer(&lp, &g, &h, None);
        assert!(s.unwrap().as_slice().iter().all(|&v| v > 0.0 && v < 2.0));
    }
}

#[test]
fn symmetric_inputs_give_symmetric_scores() {
    let g = random_graph(7, 0.5, 41);
    let ctx = GraphContext::new(&g);
    let h = Matrix::from_vec(7, 3, [0.4, -0.2, 1.1].repeat(7)).unwrap();
    let pair = layer(Variant::GfgnPair, 3, 4, 1, 1.0, 42);
    let (_, s) = run_layer(&pair, &g, &h, None);
    let s = s.unwrap();
    let pairs: Vec<_> = ctx.pairs().collect();
    for (e, &(i, j)) in pairs.iter().enumerate() {
        let back = pairs.iter().position(|&p| p == (j, i)).unwrap();
        assert_eq!(s.row(e), s.row(back));
    }
    let neighbor = layer(Variant::GfgnNeighbor, 3, 4, 1, 1.0, 42);
    let (_, s) = run_layer(&neighbor, &g, &h, None);
    let s = s.unwrap();
    for i in 1..7 {
        assert_eq!(s.row(i), s.row(0));
    }
}

#[test]
fn outputs_are_permutation_equivariant() {
    let g = random_graph(9, 0.35, 51);
    let h = random_matrix(9, 4, 52);
    let perm = [3, 7, 0, 8, 1, 5, 2, 6, 4];
    let gp = g.permute(&perm);
    let mut hp = Matrix::zeros(9, 4);
    for i in 0..9 {
        hp.row_mut(perm[i]).copy_from_slice(h.row(i));
    }
    for variant in Variant::ALL {
        let lp = layer(variant, 4, 4, 2, 1.0, 53);
        let (a, sa) = run_layer(&lp, &g, &h, None);
        let (b, sb) = run_layer(&lp, &gp, &hp, None);
        for i in 0..9 {
            for c in 0..4 {
                assert!((a.get(i, c) - b.get(perm[i], c)).abs() < 1e-12, "{variant}");
            }
        }
        match variant {
            Variant::GfgnGraph => {
                assert!(sa.unwrap().max_abs_diff(&sb.unwrap()) < 1e-12);
            }
            Variant::GfgnNeighbor => {
                let (sa, sb) = (sa.unwrap(), sb.unwrap());
                for i in 0..9 {
                    for c in 0..4 {
                        assert!((sa.get(i, c) - sb.get(perm[i], c)).abs() < 1e-12);
                    }
                }
            }
            Variant::GfgnPair => {
                let (sa, sb) = (sa.unwrap(), sb.unwrap());
                let pa: Vec<_> = GraphContext::new(&g).pairs().collect();
                let pb: Vec<_> = GraphContext::new(&gp).pairs().collect();
                for (e, &(i, j)) in pa.iter().enumerate() {
                    let f = pb.iter().position(|&p| p == (perm[i], perm[j])).unwrap();
                    for c in 0..4 {
                        assert!((sa.get(e, c) - sb.get(f, c)).abs() < 1e-12);
                    }
                }
            }
            _ => assert!(sa.is_none() && sb.is_none()),
        }
    }
}

#[test]
fn hidden_layer_parameter_count_matches_closed_form() {
    for variant in Variant::ALL {
        for heads in [1, 2, 4, 8] {
            let d_in = 13;
            let d_out = 8 * heads;
            let lp = layer(variant, d_in, d_out, heads, 1.0, 0);
            let m = variant.gate_inputs().unwrap_or(0);
            assert_eq!(lp.parameter_count(), d_in * d_out + m * (d_out / heads) * d_out);
        }
    }
}

#[test]
fn model_matches_layer_count_oracle() {
    let cfg = ModelConfig {
        variant: Variant::GfgnNeighbor,
        in_features: 7,
        classes: 3,
        heads: 1,
        units_per_head: 8,
        lambda: 1.0,
        dropout: 0.5,
    };
    let m = Model::new(cfg, 0).unwrap();
    // 7·8 + 2·8·8 for the hidden layer, 8·3 + 2·3·3 for the output layer.
    assert_eq!(m.parameter_count(), 56 + 128 + 24 + 18);
}

#[test]
fn mlp_model_needs_no_graph() {
    let cfg = ModelConfig {
        variant: Variant::Mlp,
        in_features: 3,
        classes: 2,
        heads: 2,
        units_per_head: 2,
        lambda: 1.0,
        dropout: 0.5,
    };
    let m = Model::new(cfg, 0).unwrap();
    let mut tape = Tape::new();
    let x = Arc::new(random_matrix(4, 3, 1));
    let fwd = m
        .forward(&mut tape, None, &x, true, &mut rng::seeded(0))
        .unwrap();
    assert_eq!(tape.value(fwd.logits).shape(), (4, 2));
    let gcn = Model::new(ModelConfig { variant: Variant::Gcn, ..cfg }, 0).unwrap();
    assert!(gcn
        .forward(&mut Tape::new(), None, &x, true, &mut rng::seeded(0))
        .is_err());
}

#[test]
fn score_csv_layouts() {
    let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
    let ctx = GraphContext::new(&g);
    let mut buf = Vec::new();
    ScoreRecord::Graph(Matrix::from_rows(&[[0.25, 0.5]]).unwrap())
        .write_csv(&mut buf)
        .unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "dim,score\n0,0.25\n1,0.5\n");

    let pair = LayerParams::init(Variant::GfgnPair, 2, 1, 1, 1.0, Activation::Relu, 0, 1).unwrap();
    let rec = pair
        .score_record(&ctx, Matrix::from_rows(&[[0.1], [0.2], [0.3], [0.4]]).unwrap())
        .unwrap();
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "src,dst,dim,score\n0,0,0,0.1\n0,1,0,0.2\n1,0,0,0.3\n1,1,0,0.4\n"
    );
}
