mod common;

use std::sync::Arc;

use common::{random_graph, random_matrix};
use gfgn::gradcheck::{check, Corruption, GradcheckReport};
use gfgn::graph::{mean_aggregator, normalized_adjacency};
use gfgn::{rng, Error, Matrix, Tape, Var};
use proptest::prelude::*;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("p{i}")).collect()
}

fn assert_passes(report: GradcheckReport, tol: f64) {
    assert!(report.max_rel_err() < tol, "{report:?}");
}

#[test]
fn matmul_examples() {
    let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    let mut t = Tape::new();
    let (i, bv, z) = (
        t.constant(Matrix::identity(2)),
        t.constant(b.clone()),
        t.constant(Matrix::zeros(2, 2)),
    );
    let ib = t.matmul(i, bv).unwrap();
    assert!(t.value(ib).bit_eq(&b));
    let zb = t.matmul(z, bv).unwrap();
    assert_eq!(t.value(zb).as_slice(), &[0.0; 4]);
    let bad = t.constant(Matrix::zeros(3, 1));
    match t.matmul(bv, bad) {
        Err(Error::Shape { left, right, .. }) => assert_eq!((left, right), ((2, 2), (3, 1))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn elementwise_examples() {
    let mut t = Tape::new();
    let x = t.constant(Matrix::from_rows(&[[0.0, -3.0, 3.0]]).unwrap());
    let s = t.sigmoid(x);
    assert_eq!(t.value(s).get(0, 0), 0.5);
    let r = t.relu(x);
    assert_eq!(t.value(r).as_slice(), &[0.0, 0.0, 3.0]);
}

#[test]
fn broadcast_mul_gradient() {
    let a = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap().transpose();
    let b = Matrix::filled(1, 1, 2.0);
    let report = check(&[a, b], &names(2), Corruption::None, |t, v| {
        let m = t.mul(v[0], v[1])?;
        let sq = t.mul(m, m)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert_passes(report, 1e-6);
}

#[test]
fn concat_examples_and_gradient() {
    let mut t = Tape::new();
    let (a, b) = (
        t.constant(Matrix::filled(1, 1, 4.0)),
        t.constant(Matrix::filled(1, 1, 5.0)),
    );
    let c = t.concat_cols(a, b).unwrap();
    assert_eq!(t.value(c).as_slice(), &[4.0, 5.0]);
    let wide = t.constant(random_matrix(3, 2, 1));
    let empty = t.constant(Matrix::zeros(3, 0));
    let same = t.concat_cols(wide, empty).unwrap();
    assert!(t.value(same).bit_eq(t.value(wide)));

    let mut t = Tape::new();
    let a = t.leaf(random_matrix(2, 3, 2), true);
    let b = t.leaf(random_matrix(2, 1, 3), true);
    let c = t.concat_cols(a, b).unwrap();
    let s = t.sum(c);
    t.backward(s).unwrap();
    assert_eq!(t.grad(a).unwrap().as_slice(), &[1.0; 6]);
    assert_eq!(t.grad(b).unwrap().as_slice(), &[1.0; 2]);
}

#[test]
fn row_mean_examples_and_gradient() {
    let mut t = Tape::new();
    let x = t.constant(Matrix::from_rows(&[[1.0, 3.0], [3.0, 1.0]]).unwrap());
    let m = t.row_mean(x).unwrap();
    assert_eq!(t.value(m).as_slice(), &[2.0, 2.0]);
    let e = t.constant(Matrix::zeros(0, 2));
    assert!(matches!(t.row_mean(e), Err(Error::Empty(_))));

    let report = check(&[random_matrix(4, 3, 5)], &names(1), Corruption::None, |t, v| {
        let m = t.row_mean(v[0])?;
        let s = t.sigmoid(m);
        let sq = t.mul(s, s)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert_passes(report, 1e-6);
}

#[test]
fn dropout_examples() {
    let x = random_matrix(3, 4, 7);
    let mut t = Tape::new();
    let v = t.leaf(x.clone(), true);
    let mut r = rng::seeded(0);
    assert_eq!(t.dropout(v, 0.0, true, &mut r).unwrap(), v);
    assert_eq!(t.dropout(v, 0.5, false, &mut r).unwrap(), v);
    assert!(matches!(t.dropout(v, 1.0, true, &mut r), Err(Error::Config(_))));
    assert!(matches!(t.dropout(v, -0.1, true, &mut r), Err(Error::Config(_))));
}

#[test]
fn dropout_is_unbiased() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::filled(1, 100_000, 1.0), true);
    let d = t.dropout(x, 0.5, true, &mut rng::seeded(3)).unwrap();
    let mean = t.value(d).sum() / 100_000.0;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn dropout_backward_uses_the_mask() {
    let report = check(&[random_matrix(3, 3, 8)], &names(1), Corruption::None, |t, v| {
        let d = t.dropout(v[0], 0.4, true, &mut rng::seeded(5))?;
        let sq = t.mul(d, d)?;
        Ok(t.sum(sq))
    })
    .unwrap();
    assert_passes(report, 1e-6);
}

#[test]
fn softmax_cross_entropy_examples() {
    let mut t = Tape::new();
    let u = t.constant(Matrix::filled(2, 4, 0.7));
    let l = t.softmax_cross_entropy(u, &[0, 3], &[0, 1]).unwrap();
    assert!((t.value(l).get(0, 0) - 4f64.ln()).abs() < 1e-15);
    let sat = t.constant(Matrix::from_rows(&[[10.0, -10.0]]).unwrap());
    let l = t.softmax_cross_entropy(sat, &[0], &[0]).unwrap();
    assert!(t.value(l).get(0, 0) < 1e-4);
    assert!(t.softmax_cross_entropy(sat, &[0], &[]).is_err());
    assert!(t.softmax_cross_entropy(sat, &[2], &[0]).is_err());

    let labels = [0, 2, 1, 1, 0];
    let report = check(&[random_matrix(5, 3, 9)], &names(1), Corruption::None, |t, v| {
        t.softmax_cross_entropy(v[0], &labels, &[0, 2, 3])
    })
    .unwrap();
    assert_passes(report, 1e-5);
}

#[test]
fn backward_examples() {
    let w = random_matrix(2, 3, 10);
    let mut t = Tape::new();
    let v = t.leaf(w.clone(), true);
    let s = t.sum(v);
    t.backward(s).unwrap();
    assert_eq!(t.grad(v).unwrap().as_slice(), &[1.0; 6]);

    let mut t = Tape::new();
    let v = t.leaf(w.clone(), true);
    let sq = t.mul(v, v).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    assert!(t.grad(v).unwrap().bit_eq(&w.map(|x| 2.0 * x)));
    // A second call without zeroing accumulates.
    t.backward(s).unwrap();
    assert!(t.grad(v).unwrap().bit_eq(&w.map(|x| 4.0 * x)));
    t.zero_grad();
    assert!(t.grad(v).is_none_or(|g| g.as_slice().iter().all(|&x| x == 0.0)));

    assert!(t.backward(v).is_err());
}

#[test]
fn graph_ops_gradients() {
    let g = random_graph(7, 0.4, 12);
    let adj = Arc::new(normalized_adjacency(&g));
    let mean = Arc::new(mean_aggregator(&g));
    let (offsets, targets) = gfgn::graph::augmented_csr(&g);
    let src: Arc<[usize]> = (0..7)
        .flat_map(|i| std::iter::repeat_n(i, offsets[i + 1] - offsets[i]))
        .collect();
    let dst: Arc<[usize]> = targets.into();
    let offsets: Arc<[usize]> = offsets.into();
    let weights: Arc<[f64]> = adj.weights().into();
    let report = check(
        &[random_matrix(7, 3, 13), random_matrix(3, 3, 14)],
        &names(2),
        Corruption::None,
        |t, v| {
            let a = t.spmm(&adj, v[0])?;
            let m = t.spmm(&mean, a)?;
            let xs = t.gather_rows(m, &src)?;
            let xd = t.gather_rows(v[0], &dst)?;
            let e = t.mul(xs, xd)?;
            let e = t.scale_rows(e, &weights)?;
            let seg = t.segment_sum(e, &offsets)?;
            let p = t.matmul(seg, v[1])?;
            let s = t.sigmoid(p);
            let r = t.relu(a);
            let aff = t.affine(s, -1.0, 1.0);
            let out = t.mul(aff, r)?;
            let sq = t.mul(out, out)?;
            Ok(t.sum(sq))
        },
    )
    .unwrap();
    assert_passes(report, 1e-5);
}

fn replay(seed: u64) -> (Matrix, Matrix) {
    let mut t = Tape::new();
    let x = t.leaf(random_matrix(6, 4, seed), true);
    let w = t.leaf(random_matrix(4, 3, seed + 1), true);
    let d = t.dropout(x, 0.5, true, &mut rng::seeded(seed)).unwrap();
    let p = t.matmul(d, w).unwrap();
    let l = t.softmax_cross_entropy(p, &[0, 1, 2, 0, 1, 2], &[0, 1, 2, 3]).unwrap();
    t.backward(l).unwrap();
    (t.grad(x).unwrap().clone(), t.grad(w).unwrap().clone())
}

proptest! {
    #[test]
    fn tape_replay_is_bitwise_identical(seed in 0u64..10_000) {
        let (a, b) = (replay(seed), replay(seed));
        prop_assert!(a.0.bit_eq(&b.0) && a.1.bit_eq(&b.1));
    }

    #[test]
    fn composed_programs_pass_gradcheck(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..5) {
        let report = check(
            &[random_matrix(rows, cols, seed), random_matrix(cols, 2, seed + 1)],
            &names(2),
            Corruption::None,
            |t: &mut Tape, v: &[Var]| {
                let p = t.matmul(v[0], v[1])?;
                let s = t.sigmoid(p);
                let m = t.row_mean(s)?;
                let c = t.concat_cols(m, m)?;
                let sq = t.mul(c, c)?;
                Ok(t.sum(sq))
            },
        )
        .unwrap();
        prop_assert!(report.max_rel_err() < 1e-4);
    }

    #[test]
    fn softmax_loss_is_nonnegative(seed in 0u64..10_000) {
        let mut t = Tape::new();
        let l = t.constant(random_matrix(4, 3, seed).map(|x| 30.0 * x));
        let loss = t.softmax_cross_entropy(l, &[0, 1, 2, 1], &[0, 1, 2, 3]).unwrap();
        let v = t.value(loss).get(0, 0);
        prop_assert!(v.is_finite() && v >= 0.0);
    }
}
