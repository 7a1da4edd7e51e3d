use rand::Rng;

use super::checkpoint::Checkpoint;
use super::graph::{Graph, Padding, VarId};
use super::{adam_step, AdamState, Tensor};
use crate::rng;

fn rand_tensor(shape: &[usize], r: &mut rng::Stream, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data)
}

/// Central finite differences of a scalar function of one tensor.
fn fd_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        out.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    out
}

fn assert_grad_close(analytic: &[f64], fd: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), fd.len());
    for (i, (&a, &n)) in analytic.iter().zip(fd).enumerate() {
        let denom = a.abs().max(n.abs());
        if denom < 1e-7 {
            continue;
        }
        let rel = (a - n).abs() / denom;
        assert!(rel < tol, "{what}[{i}]: analytic {a} vs fd {n} (rel {rel:.2e})");
    }
}

/// Generic gradient check: builds the graph twice per coordinate for the
/// FD probe and once for the analytic gradient.
fn check_input_grad(
    build: &dyn Fn(&mut Graph, VarId) -> VarId,
    x0: &Tensor,
    tol: f64,
    what: &str,
) {
    let mut g = Graph::new();
    let x = g.leaf(x0.clone(), true);
    let loss = build(&mut g, x);
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get_or_zeros(x, x0.shape());
    let mut f = |t: &Tensor| {
        let mut g = Graph::new();
        let x = g.leaf(t.clone(), false);
        let loss = build(&mut g, x);
        g.value(loss).item()
    };
    let fd = fd_grad(&mut f, x0, 1e-5);
    assert_grad_close(analytic.data(), &fd, tol, what);
}

#[test]
fn mlp_matches_scalar_reference() {
    // Independent reference: plain nested loops, no shared code with the
    // graph implementation.
    let mut r = rng::stream(1);
    let x0 = rand_tensor(&[5, 4], &mut r, 1.0);
    let w1 = rand_tensor(&[4, 6], &mut r, 1.0);
    let b1 = rand_tensor(&[6], &mut r, 1.0);
    let w2 = rand_tensor(&[6, 3], &mut r, 1.0);
    let b2 = rand_tensor(&[3], &mut r, 1.0);

    let mut g = Graph::new();
    let x = g.constant(x0.clone());
    let vw1 = g.constant(w1.clone());
    let vb1 = g.constant(b1.clone());
    let vw2 = g.constant(w2.clone());
    let vb2 = g.constant(b2.clone());
    let y = g.mlp(x, &[(vw1, vb1), (vw2, vb2)], true).unwrap();

    let mut want = vec![0.0; 5 * 3];
    for n in 0..5 {
        let mut hidden = [0.0; 6];
        for (j, hj) in hidden.iter_mut().enumerate() {
            let mut acc = b1.data()[j];
            for i in 0..4 {
                acc += x0.data()[n * 4 + i] * w1.data()[i * 6 + j];
            }
            *hj = acc.max(0.0);
        }
        for k in 0..3 {
            let mut acc = b2.data()[k];
            for (j, hj) in hidden.iter().enumerate() {
                acc += hj * w2.data()[j * 3 + k];
            }
            want[n * 3 + k] = acc;
        }
    }
    for (a, b) in g.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mlp_identity_and_zero_layers() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 3], vec![0.3, -0.4, 0.9]));
    let eye = g.constant(Tensor::from_vec(
        &[3, 3],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    ));
    let zb = g.constant(Tensor::zeros(&[3]));
    let y = g.mlp(x, &[(eye, zb)], true).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let zw = g.constant(Tensor::zeros(&[3, 3]));
    let y0 = g.mlp(x, &[(zw, zb)], true).unwrap();
    assert!(g.value(y0).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv3d_matches_six_nested_loop_reference() {
    let mut r = rng::stream(2);
    let (d, h, w, ci, co) = (4usize, 3usize, 5usize, 2usize, 3usize);
    let x0 = rand_tensor(&[d, h, w, ci], &mut r, 1.0);
    let k0 = rand_tensor(&[3, 3, 3, ci, co], &mut r, 1.0);

    for (pad, off, dd, hh, ww) in [
        (Padding::Same, 1i64, d, h, w),
        (Padding::Valid, 0i64, d - 2, h - 2, w - 2),
    ] {
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let k = g.constant(k0.clone());
        let y = g.conv3d(x, k, pad).unwrap();
        // Reference: six nested loops straight from the definition.
        for od in 0..dd {
            for oh in 0..hh {
                for ow in 0..ww {
                    for c in 0..co {
                        let mut acc = 0.0;
                        for kd in 0..3usize {
                            for kh in 0..3usize {
                                for kw in 0..3usize {
                                    let id = od as i64 + kd as i64 - off;
                                    let ih = oh as i64 + kh as i64 - off;
                                    let iw = ow as i64 + kw as i64 - off;
                                    if id < 0
                                        || ih < 0
                                        || iw < 0
                                        || id >= d as i64
                                        || ih >= h as i64
                                        || iw >= w as i64
                                    {
                                        continue;
                                    }
                                    for c_in in 0..ci {
                                        let xi = ((id as usize * h + ih as usize) * w
                                            + iw as usize)
                                            * ci
                                            + c_in;
                                        let ki = (((kd * 3 + kh) * 3 + kw) * ci + c_in) * co + c;
                                        acc += x0.data()[xi] * k0.data()[ki];
                                    }
                                }
                            }
                        }
                        let yi = ((od * hh + oh) * ww + ow) * co + c;
                        assert!(
                            (g.value(y).data()[yi] - acc).abs() < 1e-12,
                            "mismatch at {od},{oh},{ow},{c} ({pad:?})"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn conv3d_delta_kernel_is_identity_under_same_padding() {
    let mut r = rng::stream(3);
    let x0 = rand_tensor(&[3, 3, 3, 2], &mut r, 1.0);
    // Kernel with 1 at the center tap, identity across channels.
    let mut k = Tensor::zeros(&[3, 3, 3, 2, 2]);
    for c in 0..2 {
        let idx = (((1 * 3 + 1) * 3 + 1) * 2 + c) * 2 + c;
        k.data_mut()[idx] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.constant(x0.clone());
    let kv = g.constant(k.clone());
    let y = g.conv3d(x, kv, Padding::Same).unwrap();
    for (a, b) in g.value(y).data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    // Same property for the transposed direction.
    let y2 = g.deconv3d(x, kv, Padding::Same).unwrap();
    for (a, b) in g.value(y2).data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn valid_conv_shrinks_and_deconv_restores_shape() {
    let mut r = rng::stream(4);
    let x0 = rand_tensor(&[6, 6, 6, 2], &mut r, 1.0);
    let k0 = rand_tensor(&[3, 3, 3, 2, 4], &mut r, 1.0);
    let mut g = Graph::new();
    let x = g.constant(x0);
    let k = g.constant(k0);
    let y = g.conv3d(x, k, Padding::Valid).unwrap();
    assert_eq!(g.value(y).shape(), &[4, 4, 4, 4]);
    let back = g.deconv3d(y, k, Padding::Valid).unwrap();
    assert_eq!(g.value(back).shape(), &[6, 6, 6, 2]);
}

#[test]
fn conv_deconv_adjoint_identity() {
    // ⟨conv(x), y⟩ = ⟨x, deconv(y)⟩ with a shared kernel.
    let mut r = rng::stream(5);
    for pad in [Padding::Same, Padding::Valid] {
        let x0 = rand_tensor(&[5, 4, 4, 3], &mut r, 1.0);
        let k0 = rand_tensor(&[3, 3, 3, 3, 2], &mut r, 1.0);
        let yshape = match pad {
            Padding::Same => [5, 4, 4, 2],
            Padding::Valid => [3, 2, 2, 2],
        };
        let y0 = rand_tensor(&yshape, &mut r, 1.0);

        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let k = g.constant(k0.clone());
        let y = g.constant(y0.clone());
        let cx = g.conv3d(x, k, pad).unwrap();
        let dy = g.deconv3d(y, k, pad).unwrap();

        let lhs: f64 = g
            .value(cx)
            .data()
            .iter()
            .zip(y0.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x0
            .data()
            .iter()
            .zip(g.value(dy).data())
            .map(|(a, b)| a * b)
            .sum();
        assert!(
            (lhs - rhs).abs() < 1e-10,
            "adjoint violated ({pad:?}): {lhs} vs {rhs}"
        );
    }
}

#[test]
fn pooling_basics() {
    let mut g = Graph::new();
    // Constant grid: average and max both return the constant.
    let c = g.constant(Tensor::from_vec(&[2, 2, 2, 3], vec![0.7; 24]));
    let mean = g.grid_mean(c).unwrap();
    let max = g.grid_max(c).unwrap();
    assert!(g.value(mean).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    assert!(g.value(max).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

    // Known grid: arithmetic mean.
    let vals: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let t = g.constant(Tensor::from_vec(&[2, 2, 2, 1], vals));
    let m = g.grid_mean(t).unwrap();
    assert!((g.value(m).data()[0] - 3.5).abs() < 1e-15);
}

#[test]
fn scatter_max_pool_routes_gradient_to_argmax() {
    let mut r = rng::stream(6);
    let x0 = rand_tensor(&[6, 3], &mut r, 1.0);
    let cells = vec![0usize, 1, 1, 3, 3, 3];
    check_input_grad(
        &|g, x| {
            let pooled = g.scatter_max_pool(x, &cells, 4).unwrap();
            g.sum_squares_scaled(pooled, 0.5).unwrap()
        },
        &x0,
        1e-4,
        "scatter_max_pool",
    );
    // Empty cell contributes zeros.
    let mut g = Graph::new();
    let x = g.constant(x0);
    let pooled = g.scatter_max_pool(x, &cells, 4).unwrap();
    let row2 = &g.value(pooled).data()[2 * 3..3 * 3];
    assert!(row2.iter().all(|&v| v == 0.0));
}

#[test]
fn bce_values_and_gradient() {
    let mut g = Graph::new();
    let half = g.constant(Tensor::scalar(0.5));
    let l = g.bce(half, 1.0).unwrap();
    assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

    let close = g.constant(Tensor::scalar(0.999999));
    let l1 = g.bce(close, 1.0).unwrap();
    assert!(g.value(l1).item() < 1e-5);

    for label in [0.0, 1.0] {
        let x0 = Tensor::scalar(0.37);
        check_input_grad(
            &|g, x| g.bce(x, label).unwrap(),
            &x0,
            1e-6,
            "bce",
        );
    }
}

#[test]
fn every_op_passes_finite_difference() {
    let mut r = rng::stream(7);

    let x0 = rand_tensor(&[3, 4], &mut r, 1.0);
    let w0 = rand_tensor(&[4, 2], &mut r, 1.0);
    check_input_grad(
        &|g, x| {
            let w = g.constant(w0.clone());
            let y = g.matmul(x, w).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &x0,
        1e-4,
        "matmul-x",
    );
    let x1 = rand_tensor(&[3, 4], &mut r, 1.0);
    check_input_grad(
        &|g, w| {
            let x = g.constant(x1.clone());
            let y = g.matmul(x, w).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &w0,
        1e-4,
        "matmul-w",
    );
    check_input_grad(
        &|g, b| {
            let x = g.constant(x1.clone());
            let y = g.add_bias(x, b).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[4], &mut r, 1.0),
        1e-4,
        "add_bias",
    );
    check_input_grad(
        &|g, x| {
            let y = g.relu(x).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[2, 5], &mut r, 1.0),
        1e-4,
        "relu",
    );
    check_input_grad(
        &|g, x| {
            let y = g.sigmoid(x).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[2, 3], &mut r, 1.0),
        1e-4,
        "sigmoid",
    );

    let k0 = rand_tensor(&[3, 3, 3, 2, 3], &mut r, 0.5);
    let xg = rand_tensor(&[4, 4, 4, 2], &mut r, 1.0);
    for pad in [Padding::Same, Padding::Valid] {
        check_input_grad(
            &|g, x| {
                let k = g.constant(k0.clone());
                let y = g.conv3d(x, k, pad).unwrap();
                g.sum_squares_scaled(y, 1.0).unwrap()
            },
            &xg,
            1e-4,
            "conv3d-x",
        );
        check_input_grad(
            &|g, k| {
                let x = g.constant(xg.clone());
                let y = g.conv3d(x, k, pad).unwrap();
                g.sum_squares_scaled(y, 1.0).unwrap()
            },
            &k0,
            1e-4,
            "conv3d-k",
        );
        let xd = rand_tensor(&[3, 3, 3, 3], &mut r, 1.0);
        check_input_grad(
            &|g, x| {
                let k = g.constant(k0.clone());
                let y = g.deconv3d(x, k, pad).unwrap();
                g.sum_squares_scaled(y, 1.0).unwrap()
            },
            &xd,
            1e-4,
            "deconv3d-x",
        );
        check_input_grad(
            &|g, k| {
                let x = g.constant(xd.clone());
                let y = g.deconv3d(x, k, pad).unwrap();
                g.sum_squares_scaled(y, 1.0).unwrap()
            },
            &k0,
            1e-4,
            "deconv3d-k",
        );
    }

    check_input_grad(
        &|g, x| {
            let y = g.grid_mean(x).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[2, 3, 2, 4], &mut r, 1.0),
        1e-4,
        "grid_mean",
    );
    check_input_grad(
        &|g, x| {
            let y = g.grid_max(x).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[2, 3, 2, 4], &mut r, 1.0),
        1e-4,
        "grid_max",
    );
    check_input_grad(
        &|g, x| {
            let y = g.rows_mean(x, &[0, 2, 3]).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[5, 3], &mut r, 1.0),
        1e-4,
        "rows_mean",
    );
    let b0 = rand_tensor(&[4], &mut r, 1.0);
    check_input_grad(
        &|g, a| {
            let b = g.constant(b0.clone());
            let y = g.concat_vec(a, b).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[3], &mut r, 1.0),
        1e-4,
        "concat_vec",
    );
    let grid0 = rand_tensor(&[2, 2, 2, 3], &mut r, 1.0);
    check_input_grad(
        &|g, v| {
            let grid = g.constant(grid0.clone());
            let y = g.broadcast_concat(grid, v).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[2], &mut r, 1.0),
        1e-4,
        "broadcast_concat-vec",
    );
    check_input_grad(
        &|g, grid| {
            let v = g.constant(rand_tensor(&[2], &mut rng::stream(8), 1.0));
            let y = g.broadcast_concat(grid, v).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &grid0,
        1e-4,
        "broadcast_concat-grid",
    );
    let m0 = rand_tensor(&[6], &mut r, 1.0);
    check_input_grad(
        &|g, a| {
            let b = g.constant(m0.clone());
            let y = g.max_elem(a, b).unwrap();
            g.sum_squares_scaled(y, 1.0).unwrap()
        },
        &rand_tensor(&[6], &mut r, 1.0),
        1e-4,
        "max_elem",
    );
}

#[test]
fn chained_network_gradient_matches_fd() {
    // conv → pool → mlp chain, FD-checked on all input coordinates.
    let mut r = rng::stream(9);
    let x0 = rand_tensor(&[4, 4, 4, 2], &mut r, 0.8);
    let k0 = rand_tensor(&[3, 3, 3, 2, 3], &mut r, 0.4);
    let w0 = rand_tensor(&[3, 4], &mut r, 0.7);
    let b0 = rand_tensor(&[4], &mut r, 0.2);
    let w1 = rand_tensor(&[4, 1], &mut r, 0.7);
    let b1 = rand_tensor(&[1], &mut r, 0.1);
    check_input_grad(
        &|g, x| {
            let k = g.constant(k0.clone());
            let c = g.conv3d(x, k, Padding::Valid).unwrap();
            let pooled = g.grid_mean(c).unwrap();
            let row = g.reshape(pooled, &[1, 3]).unwrap();
            let vw0 = g.constant(w0.clone());
            let vb0 = g.constant(b0.clone());
            let vw1 = g.constant(w1.clone());
            let vb1 = g.constant(b1.clone());
            let y = g.mlp(row, &[(vw0, vb0), (vw1, vb1)], true).unwrap();
            let s = g.sigmoid(y).unwrap();
            let flat = g.reshape(s, &[1]).unwrap();
            g.bce(flat, 1.0).unwrap()
        },
        &x0,
        1e-4,
        "chain",
    );
}

#[test]
fn sum_gradient_is_ones_and_constant_gradient_is_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(&[1, 4], vec![0.2, -0.3, 0.5, 0.9]), true);
    let ones = g.constant(Tensor::from_vec(&[4, 1], vec![1.0; 4]));
    let y = g.matmul(x, ones).unwrap();
    let s = g.reshape(y, &[1]).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);

    // A leaf never touched by the loss gets no gradient (treated as zero).
    let mut g2 = Graph::new();
    let a = g2.leaf(Tensor::scalar(1.0), true);
    let unused = g2.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]), true);
    let l = g2.sum_squares_scaled(a, 1.0).unwrap();
    let grads = g2.backward(l).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zeros(unused, &[2]).data(), &[0.0, 0.0]);
}

#[test]
fn adam_basics() {
    // Zero gradient leaves parameters unchanged.
    let mut params = vec![Tensor::from_vec(&[2], vec![1.0, -2.0])];
    let mut st = AdamState::new(&params, 1e-3);
    adam_step(&mut params, &[Tensor::zeros(&[2])], &mut st).unwrap();
    assert_eq!(params[0].data(), &[1.0, -2.0]);

    // One step on f(w) = w² from w=1 moves toward 0.
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = AdamState::new(&params, 1e-2);
    let g = Tensor::scalar(2.0 * params[0].item());
    adam_step(&mut params, &[g], &mut st).unwrap();
    assert!(params[0].item() < 1.0 && params[0].item() > 0.0);

    // 200 steps on the quadratic reach |w| < 1e-2 (lr 0.02 settles at
    // ~2e-5; lr 0.01 stalls just above the bound).
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = AdamState::new(&params, 2e-2);
    for _ in 0..200 {
        let g = Tensor::scalar(2.0 * params[0].item());
        adam_step(&mut params, &[g], &mut st).unwrap();
    }
    assert!(params[0].item().abs() < 1e-2, "w = {}", params[0].item());

    // NaN gradient is an error.
    let mut params = vec![Tensor::scalar(1.0)];
    let mut st = AdamState::new(&params, 1e-2);
    let err = adam_step(&mut params, &[Tensor::scalar(f64::NAN)], &mut st);
    assert!(err.is_err());
}

#[test]
fn nonfinite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(&[1, 1], vec![1e308]));
    let w = g.constant(Tensor::from_vec(&[1, 1], vec![1e308]));
    assert!(g.matmul(x, w).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut r = rng::stream(10);
    let mut ck = Checkpoint::default();
    ck.meta.push(("variant".into(), "local".into()));
    ck.meta.push(("m".into(), "6".into()));
    ck.params
        .push(("enc.w0".into(), rand_tensor(&[3, 16], &mut r, 1.0)));
    ck.params
        .push(("enc.b0".into(), rand_tensor(&[16], &mut r, 1.0)));
    ck.params.push((
        "conv.k1".into(),
        rand_tensor(&[3, 3, 3, 4, 4], &mut r, 1.0),
    ));
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck, back);
    assert_eq!(bytes, back.to_bytes());
    assert_eq!(back.meta_value("variant"), Some("local"));
}

#[test]
fn checkpoint_rejects_corrupt_input() {
    assert!(Checkpoint::from_bytes(b"").is_err());
    assert!(Checkpoint::from_bytes(b"garbage\nDATA\n").is_err());
    // Param extends past payload.
    let text = b"LOCC-CKPT 1\nparam w 1 100 0\nDATA\n\x00\x00";
    assert!(Checkpoint::from_bytes(text).is_err());
    // Shape overflow attempt must not allocate.
    let text = b"LOCC-CKPT 1\nparam w 2 4294967295 4294967295 0\nDATA\n";
    assert!(Checkpoint::from_bytes(text).is_err());
}
