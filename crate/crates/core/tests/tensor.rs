use nalgebra::DMatrix;
use proptest::prelude::*;
use rce_core::tensor::{Tape, Var};
use rce_core::{Tensor, TensorError};

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

fn close(a: &DMatrix<f64>, b: &Tensor, tol: f64) -> bool {
    a.nrows() == b.rows() && a.ncols() == b.cols() && a.iter().zip(to_na(b).iter()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn matmul_agrees_with_nalgebra((a, b) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))) {
        let got = a.matmul(&b).unwrap();
        prop_assert!(close(&(to_na(&a) * to_na(&b)), &got, 1e-12));
        let v: Vec<f64> = b.data()[..b.rows()].to_vec();
        let mv = a.matvec(&v).unwrap();
        let want = to_na(&a) * nalgebra::DVector::from_vec(v);
        for (x, y) in mv.iter().zip(want.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_an_involution(a in (1usize..6, 1usize..6).prop_flat_map(|(m, n)| matrix(m, n))) {
        prop_assert!(close(&to_na(&a).transpose(), &a.transpose(), 0.0));
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn spd_solve_agrees_with_nalgebra(g in (1usize..6).prop_flat_map(|n| matrix(n, n)), rhs in matrix(5, 2)) {
        let n = g.rows();
        let spd = g.transpose().matmul(&g).unwrap().add(&Tensor::eye(n)).unwrap();
        let b = Tensor::matrix(n, 2, rhs.data()[..2 * n].to_vec());
        let x = spd.solve_spd(&b).unwrap();
        let want = to_na(&spd).cholesky().unwrap().solve(&to_na(&b));
        prop_assert!(close(&want, &x, 1e-9));
        let l = spd.cholesky().unwrap();
        prop_assert!(close(&to_na(&spd), &l.matmul(&l.transpose()).unwrap(), 1e-9));
    }
}

#[test]
fn indefinite_matrix_is_rejected() {
    let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(m.cholesky(), Err(TensorError::NotPositiveDefinite)));
}

#[test]
fn shape_mismatch_is_reported() {
    let a = Tensor::zeros(2, 3);
    assert!(matches!(a.matmul(&a), Err(TensorError::Shape { .. })));
    assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    let mut tape = Tape::new();
    let x = tape.constant(&a);
    assert!(tape.matmul(x, x).is_err());
    assert!(tape.slice_cols(x, 2, 2).is_err());
    assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
}

/// Builds a scalar from every differentiable tape primitive.
fn composite(tape: &mut Tape, a: &Tensor, b: &Tensor) -> (Var, Var, Var) {
    let va = tape.param(a);
    let vb = tape.param(b);
    let ab = tape.matmul(va, vb).unwrap(); // 3x2
    let s = tape.sigmoid(ab);
    let sp = tape.softplus(ab);
    let r = tape.relu(ab);
    let e = tape.exp(s);
    let l = tape.log(e).unwrap();
    let m = tape.mul(sp, l).unwrap();
    let d = tape.sub(m, r).unwrap();
    let sc = tape.scale(d, 1.7);
    let off = tape.offset(sc, -0.3);
    let c = tape.clamp(off, -2.0, 2.0);
    let left = tape.slice_cols(c, 0, 1).unwrap();
    let cat = tape.concat_cols(&[c, left]).unwrap(); // 3x3
    let bias = tape.param(&Tensor::row(vec![0.1, -0.2, 0.3]));
    let cb = tape.add_bias(cat, bias).unwrap();
    let outer = tape.row_outer(left, left).unwrap(); // 3x1
    let rowmv = tape.row_matvec(cb, outer).unwrap(); // 3x3
    let rs = tape.row_sum(rowmv).unwrap();
    let sum = tape.sum(rs);
    let mean = tape.mean(cb);
    let n = tape.neg(mean);
    let loss = tape.add(sum, n).unwrap();
    (loss, va, vb)
}

#[test]
fn tape_gradients_match_central_differences() {
    let a = Tensor::matrix(3, 4, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13).collect());
    let b = Tensor::matrix(4, 2, (0..8).map(|i| ((i * 5 % 7) as f64 - 2.9) * 0.21).collect());
    let mut tape = Tape::new();
    let (loss, va, vb) = composite(&mut tape, &a, &b);
    let grads = tape.backward(loss).unwrap();
    let value = |a: &Tensor, b: &Tensor| {
        let mut t = Tape::new();
        let (l, _, _) = composite(&mut t, a, b);
        t.value(l).data()[0]
    };
    let h = 1e-6;
    for (which, var) in [(0, va), (1, vb)] {
        let g = grads.wrt(var).unwrap();
        let n = if which == 0 { a.numel() } else { b.numel() };
        for i in 0..n {
            let (mut ap, mut bp, mut am, mut bm) = (a.clone(), b.clone(), a.clone(), b.clone());
            if which == 0 {
                ap.data_mut()[i] += h;
                am.data_mut()[i] -= h;
            } else {
                bp.data_mut()[i] += h;
                bm.data_mut()[i] -= h;
            }
            let fd = (value(&ap, &bp) - value(&am, &bm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{which}/{i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(&Tensor::scalar(2.0));
    let p = tape.param(&Tensor::scalar(3.0));
    let y = tape.mul(c, p).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.wrt(c).is_none());
    assert_eq!(g.wrt(p).unwrap(), &[2.0]);
}
