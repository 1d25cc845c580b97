//! Every op gets two kinds of scrutiny: values against a naive reference
//! where one exists, and analytic gradients against central differences.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vseg_autograd::check::assert_gradcheck;
use vseg_autograd::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn arr(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

/// Reduces to a scalar through fixed random weights so that gradients are
/// position-dependent; a plain sum would let index-permutation bugs slip by.
fn spot(t: &Tensor, seed: u64) -> Tensor {
    let mut r = rng(seed ^ 0x5eed);
    let w = Tensor::constant(arr(t.shape(), &mut r, -1.0, 1.0));
    t.mul(&w).sum_all()
}

#[test]
fn elementwise_binary_ops() {
    let mut r = rng(1);
    let a = arr(&[3, 4], &mut r, -2.0, 2.0);
    let b = arr(&[3, 4], &mut r, 0.5, 2.5); // positive so div is safe
    for op in ["add", "sub", "mul", "div"] {
        assert_gradcheck(
            |xs| {
                let y = match op {
                    "add" => xs[0].add(&xs[1]),
                    "sub" => xs[0].sub(&xs[1]),
                    "mul" => xs[0].mul(&xs[1]),
                    _ => xs[0].div(&xs[1]),
                };
                spot(&y, 2)
            },
            &[a.clone(), b.clone()],
            H,
            TOL,
        );
    }
}

#[test]
fn scalar_and_unary_ops() {
    let mut r = rng(3);
    let a = arr(&[2, 5], &mut r, -1.5, 1.5);
    assert_gradcheck(|xs| spot(&xs[0].neg(), 4), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].add_scalar(0.7), 5), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].mul_scalar(-1.3), 6), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].exp(), 7), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].sigmoid(), 8), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].tanh(), 9), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].silu(), 10), &[a.clone()], H, TOL);

    let pos = arr(&[2, 5], &mut r, 0.2, 3.0);
    assert_gradcheck(|xs| spot(&xs[0].ln(), 11), &[pos], H, TOL);

    // Shift away from the relu kink and the clamp boundaries so the central
    // difference probes stay on one side.
    let off = arr(&[2, 5], &mut r, 0.1, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].relu(), 12), &[off.clone()], H, TOL);
    assert_gradcheck(
        |xs| spot(&xs[0].clamp(0.25, 0.75), 13),
        &[off.clone()],
        H,
        TOL,
    );
}

#[test]
fn reductions() {
    let mut r = rng(20);
    let a = arr(&[4, 3], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| xs[0].sum_all(), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| xs[0].mean_all(), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].global_avg_pool(), 21), &[arr(&[3, 4, 4], &mut r, -1.0, 1.0)], H, TOL);
}

#[test]
fn shape_ops() {
    let mut r = rng(30);
    let a = arr(&[2, 3, 4], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].reshape(&[6, 4]), 31), &[a.clone()], H, TOL);
    assert_gradcheck(|xs| spot(&xs[0].narrow(1, 1, 2), 32), &[a.clone()], H, TOL);

    let m = arr(&[3, 5], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].transpose2d(), 33), &[m.clone()], H, TOL);

    let p = arr(&[2, 2, 4], &mut r, -1.0, 1.0);
    let q = arr(&[3, 2, 4], &mut r, -1.0, 1.0);
    assert_gradcheck(
        |xs| spot(&Tensor::concat(0, &[xs[0].clone(), xs[1].clone()]), 34),
        &[p, q],
        H,
        TOL,
    );
}

#[test]
fn matmul_matches_manual_product_and_gradchecks() {
    let mut r = rng(40);
    let a = arr(&[3, 4], &mut r, -1.0, 1.0);
    let b = arr(&[4, 2], &mut r, -1.0, 1.0);

    let y = Tensor::constant(a.clone()).matmul(&Tensor::constant(b.clone()));
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a[[i, k]] * b[[k, j]];
            }
            approx::assert_relative_eq!(y.value()[[i, j]], acc, max_relative = 1e-12);
        }
    }

    assert_gradcheck(|xs| spot(&xs[0].matmul(&xs[1]), 41), &[a, b], H, TOL);
}

#[test]
fn bias_additions() {
    let mut r = rng(50);
    let x = arr(&[3, 4, 4], &mut r, -1.0, 1.0);
    let b = arr(&[3], &mut r, -1.0, 1.0);
    assert_gradcheck(
        |xs| spot(&xs[0].add_bias_channel(&xs[1]), 51),
        &[x, b],
        H,
        TOL,
    );

    let m = arr(&[5, 3], &mut r, -1.0, 1.0);
    let c = arr(&[3], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].add_bias_row(&xs[1]), 52), &[m, c], H, TOL);
}

/// Direct six-loop convolution used as the value reference.
fn naive_conv(x: &ArrayD<f64>, w: &ArrayD<f64>, stride: usize, pad: usize) -> ArrayD<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut y = ArrayD::<f64>::zeros(IxDyn(&[co, ho, wo]));
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for di in 0..kh {
                        for dj in 0..kw {
                            let iy = (oy * stride + di) as isize - pad as isize;
                            let ix = (ox * stride + dj) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                acc += x[[c, iy as usize, ix as usize]] * w[[o, c, di, dj]];
                            }
                        }
                    }
                }
                y[[o, oy, ox]] = acc;
            }
        }
    }
    y
}

#[test]
fn conv2d_matches_naive_reference() {
    let mut r = rng(60);
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
        let x = arr(&[3, 6, 5], &mut r, -1.0, 1.0);
        let w = arr(&[4, 3, 3, 3], &mut r, -1.0, 1.0);
        let got = Tensor::constant(x.clone()).conv2d(&Tensor::constant(w.clone()), stride, pad);
        let want = naive_conv(&x, &w, stride, pad);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.value().iter().zip(want.iter()) {
            approx::assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-12);
        }
    }
}

#[test]
fn conv2d_gradchecks() {
    let mut r = rng(61);
    for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
        let x = arr(&[2, 6, 6], &mut r, -1.0, 1.0);
        let w = arr(&[3, 2, 3, 3], &mut r, -1.0, 1.0);
        assert_gradcheck(
            |xs| spot(&xs[0].conv2d(&xs[1], stride, pad), 62),
            &[x, w],
            H,
            TOL,
        );
    }
}

#[test]
fn avg_pool_values_and_gradient() {
    let x = ArrayD::from_shape_vec(
        IxDyn(&[1, 2, 4]),
        vec![1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0],
    )
    .unwrap();
    let y = Tensor::constant(x.clone()).avg_pool2d(2);
    assert_eq!(y.shape(), &[1, 1, 2]);
    approx::assert_relative_eq!(y.value()[[0, 0, 0]], 2.5);
    approx::assert_relative_eq!(y.value()[[0, 0, 1]], 6.5);

    let mut r = rng(70);
    let a = arr(&[2, 4, 4], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].avg_pool2d(2), 71), &[a], H, TOL);
}

#[test]
fn upsample_bilinear_interpolates_midpoints() {
    // Doubling a 1x2 row with half-pixel centers: outer samples clamp to the
    // nearest source, inner samples blend 3:1.
    let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2]), vec![0.0, 4.0]).unwrap();
    let y = Tensor::constant(x).upsample_bilinear(1, 4);
    let want = [0.0, 1.0, 3.0, 4.0];
    for (i, w) in want.iter().enumerate() {
        approx::assert_relative_eq!(y.value()[[0, 0, i]], *w, epsilon = 1e-12);
    }

    let mut r = rng(80);
    let a = arr(&[2, 3, 3], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].upsample_bilinear(6, 6), 81), &[a.clone()], H, TOL);
    // Downscale path used when fusing maps of mixed resolution.
    let b = arr(&[2, 6, 6], &mut r, -1.0, 1.0);
    assert_gradcheck(|xs| spot(&xs[0].upsample_bilinear(3, 3), 82), &[b], H, TOL);
}

#[test]
fn normalization_ops_gradcheck() {
    let mut r = rng(90);
    let x = arr(&[4, 6], &mut r, -2.0, 2.0);
    let gamma = arr(&[6], &mut r, 0.5, 1.5);
    let beta = arr(&[6], &mut r, -0.5, 0.5);
    assert_gradcheck(
        |xs| spot(&xs[0].layer_norm_rows(&xs[1], &xs[2], 1e-5), 91),
        &[x.clone(), gamma, beta],
        H,
        1e-4,
    );
    assert_gradcheck(|xs| spot(&xs[0].softmax_rows(), 92), &[x.clone()], H, TOL);

    let v = arr(&[7], &mut r, -2.0, 2.0);
    assert_gradcheck(|xs| spot(&xs[0].log_softmax_1d(), 93), &[v], H, TOL);
}

#[test]
fn layer_norm_standardizes_rows() {
    let mut r = rng(95);
    let x = arr(&[3, 8], &mut r, -3.0, 3.0);
    let gamma = ArrayD::from_elem(IxDyn(&[8]), 1.0);
    let beta = ArrayD::zeros(IxDyn(&[8]));
    let y = Tensor::constant(x).layer_norm_rows(
        &Tensor::constant(gamma),
        &Tensor::constant(beta),
        1e-8,
    );
    for i in 0..3 {
        let row: Vec<f64> = (0..8).map(|j| y.value()[[i, j]]).collect();
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        approx::assert_relative_eq!(mean, 0.0, epsilon = 1e-9);
        approx::assert_relative_eq!(var, 1.0, max_relative = 1e-6);
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut r = rng(96);
    let x = arr(&[5, 9], &mut r, -4.0, 4.0);
    let y = Tensor::constant(x).softmax_rows();
    for i in 0..5 {
        let s: f64 = (0..9).map(|j| y.value()[[i, j]]).sum();
        approx::assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn shared_parent_accumulates_both_paths() {
    // d/dx (x*x) = 2x must come out of two accumulations into one node.
    let x = Tensor::leaf(ArrayD::from_elem(IxDyn(&[3]), 1.5));
    let y = x.mul(&x).sum_all();
    y.backward();
    let g = x.grad().unwrap();
    for v in g.iter() {
        approx::assert_relative_eq!(*v, 3.0, epsilon = 1e-12);
    }
}

#[test]
fn detach_blocks_gradient_flow() {
    let x = Tensor::leaf(ArrayD::from_elem(IxDyn(&[2]), 0.3));
    let y = x.detach().mul(&x).sum_all();
    y.backward();
    let g = x.grad().unwrap();
    // Only the non-detached factor contributes, so the gradient is x.detach().
    for v in g.iter() {
        approx::assert_relative_eq!(*v, 0.3, epsilon = 1e-12);
    }
}

/// The same graph built twice from the same bits must produce bit-identical
/// values and gradients — reproducible training depends on it.
#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut r = rng(1234);
        let x = Tensor::leaf(arr(&[2, 8, 8], &mut r, -1.0, 1.0));
        let w = Tensor::leaf(arr(&[4, 2, 3, 3], &mut r, -0.5, 0.5));
        let b = Tensor::leaf(arr(&[4], &mut r, -0.1, 0.1));
        let y = x
            .conv2d(&w, 2, 1)
            .add_bias_channel(&b)
            .silu()
            .global_avg_pool()
            .reshape(&[1, 4])
            .softmax_rows()
            .sum_all();
        y.backward();
        let mut bits = vec![y.item().to_bits()];
        for t in [&x, &w, &b] {
            bits.extend(t.grad().unwrap().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

/// mean_stack must not care about the order of its inputs, bit for bit, and
/// must route 1/n of the gradient to every addend.
#[test]
fn mean_stack_is_permutation_invariant_and_gradchecks() {
    let mut r = rng(77);
    let parts: Vec<ArrayD<f64>> = (0..4).map(|_| arr(&[3, 5], &mut r, -2.0, 2.0)).collect();
    let forward = |order: [usize; 4]| {
        let ts: Vec<Tensor> = order
            .iter()
            .map(|&i| Tensor::constant(parts[i].clone()))
            .collect();
        Tensor::mean_stack(&ts)
            .value()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(forward([0, 1, 2, 3]), forward([3, 1, 0, 2]));
    assert_eq!(forward([0, 1, 2, 3]), forward([2, 3, 1, 0]));

    assert_gradcheck(
        |xs| spot(&Tensor::mean_stack(xs), 9),
        &parts,
        1e-5,
        1e-6,
    );

    let single = Tensor::constant(parts[0].clone());
    let collapsed = Tensor::mean_stack(&[single.clone(), single.clone(), single.clone()]);
    for (a, b) in collapsed.value().iter().zip(parts[0].iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
