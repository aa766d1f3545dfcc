//! Kernels and the optimizer checked against independent reference
//! implementations written here from the definitions.

use dronenet_core::net::{init_weights, SelfOnnLayer};
use dronenet_core::tensor::{power_conv2d_backward, power_conv2d_forward};
use dronenet_core::training::{mse_loss, AdamConfig, AdamState};
use dronenet_core::{ConvAlgo, ConvSpec, DroneNet, DroneNetConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook Self-ONN layer: zero-pad, then for every output accumulate the
/// bias followed by `w_q[o,c,u,v] · xpad[c, i·s+u, j·s+v]^q` over q, c, u, v.
fn oracle_selfonn(
    x: &Tensor<f64>,
    banks: &[Tensor<f64>],
    bias: &Tensor<f64>,
    spec: &ConvSpec,
) -> Tensor<f64> {
    let s = x.shape();
    let p = spec.padding;
    let (ph, pw) = (s.h + 2 * p, s.w + 2 * p);
    let mut xpad = vec![0.0f64; s.n * s.c * ph * pw];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    xpad[((n * s.c + c) * ph + y + p) * pw + xx + p] = x.get(n, c, y, xx);
                }
            }
        }
    }
    let oh = (ph - spec.kernel_h) / spec.stride + 1;
    let ow = (pw - spec.kernel_w) / spec.stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, oh, ow));
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.get(0, o, 0, 0);
                    for (qi, w) in banks.iter().enumerate() {
                        for c in 0..s.c {
                            for u in 0..spec.kernel_h {
                                for v in 0..spec.kernel_w {
                                    let (y, xx) = (i * spec.stride + u, j * spec.stride + v);
                                    if y < p || y >= s.h + p || xx < p || xx >= s.w + p {
                                        continue;
                                    }
                                    let xv = xpad[((n * s.c + c) * ph + y) * pw + xx];
                                    acc += w.get(o, c, u, v) * xv.powi(qi as i32 + 1);
                                }
                            }
                        }
                    }
                    out.set(n, o, i, j, acc);
                }
            }
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, a: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-a..a))
}

fn random_case(
    rng: &mut ChaCha8Rng,
    q: usize,
) -> (Tensor<f64>, Vec<Tensor<f64>>, Tensor<f64>, ConvSpec) {
    let k = rng.random_range(1..=5usize);
    let padding = rng.random_range(0..k);
    let stride = rng.random_range(1..=2);
    // Input extents are derived from a drawn output extent.
    let mut extent = || loop {
        let out = rng.random_range(1..=8usize);
        let size = ((out - 1) * stride + k) as isize - 2 * padding as isize;
        if size >= 1 {
            break size as usize;
        }
    };
    let (h, w) = (extent(), extent());
    let spec = ConvSpec::new(
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        k,
        k,
        padding,
        stride,
    )
    .unwrap();
    let n = rng.random_range(1..=2);
    let x = uniform(rng, Shape::new(n, spec.in_channels, h, w), 1.0);
    let banks = (0..q)
        .map(|_| uniform(rng, spec.weight_shape(), 0.5))
        .collect();
    let bias = uniform(rng, spec.bias_shape(), 0.5);
    (x, banks, bias, spec)
}

#[test]
fn q1_layer_is_bitwise_equal_to_plain_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..150 {
        let (x, banks, bias, spec) = random_case(&mut rng, 1);
        let layer = SelfOnnLayer::from_parts(spec, banks.clone(), bias.clone()).unwrap();
        let got = layer.forward_with(ConvAlgo::Direct, &x).unwrap();
        let want = oracle_selfonn(&x, &banks, &bias, &spec);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{spec:?}");
        }
    }
}

#[test]
fn higher_q_matches_oracle_for_both_algorithms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for q in [2, 3, 5] {
        for _ in 0..20 {
            let (x, banks, bias, spec) = random_case(&mut rng, q);
            let want = oracle_selfonn(&x, &banks, &bias, &spec);
            for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
                let got = power_conv2d_forward(algo, &x, &banks, &bias, &spec).unwrap();
                for (a, b) in got.data().iter().zip(want.data()) {
                    assert!(
                        (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
                        "{algo:?} q={q}: {a} vs {b}"
                    );
                }
            }
        }
    }
}

#[test]
fn all_ones_two_bank_example() {
    let spec = ConvSpec::new(1, 1, 3, 3, 0, 1).unwrap();
    let x = Tensor::full(Shape::new(1, 1, 5, 5), 0.5);
    let banks = vec![Tensor::full(spec.weight_shape(), 1.0); 2];
    let out = power_conv2d_forward(
        ConvAlgo::Direct,
        &x,
        &banks,
        &Tensor::zeros(spec.bias_shape()),
        &spec,
    )
    .unwrap();
    assert_eq!(out.shape(), Shape::new(1, 1, 3, 3));
    assert!(out.data().iter().all(|&v| v == 6.75));
}

/// Central differences of `L = Σ y ⊙ r` for a fixed random `r`.
#[test]
fn layer_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for q in [1, 2, 3, 5] {
        let (x, banks, bias, spec) = random_case(&mut rng, q);
        let out_shape = spec.output_shape(x.shape()).unwrap();
        let r = uniform(&mut rng, out_shape, 1.0);
        let loss = |x: &Tensor<f64>, banks: &[Tensor<f64>], bias: &Tensor<f64>| -> f64 {
            let y = oracle_selfonn(x, banks, bias, &spec);
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(a.abs()).max(1e-6);
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let g = power_conv2d_backward(algo, &x, &banks, &spec, &r, true).unwrap();
            let gx = g.grad_x.unwrap();
            for idx in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[idx] += h;
                xm.data_mut()[idx] -= h;
                let n = (loss(&xp, &banks, &bias) - loss(&xm, &banks, &bias)) / (2.0 * h);
                assert!(rel(gx.data()[idx], n) < 1e-6, "{algo:?} q={q} x[{idx}]");
            }
            for (b, gw) in g.grad_weights.iter().enumerate() {
                for idx in 0..gw.len() {
                    let (mut bp, mut bm) = (banks.clone(), banks.clone());
                    bp[b].data_mut()[idx] += h;
                    bm[b].data_mut()[idx] -= h;
                    let n = (loss(&x, &bp, &bias) - loss(&x, &bm, &bias)) / (2.0 * h);
                    assert!(rel(gw.data()[idx], n) < 1e-6, "{algo:?} q={q} w{b}[{idx}]");
                }
            }
            for o in 0..spec.out_channels {
                let n: f64 = (0..out_shape.n)
                    .flat_map(|nn| {
                        (0..out_shape.h)
                            .flat_map(move |i| (0..out_shape.w).map(move |j| (nn, i, j)))
                    })
                    .map(|(nn, i, j)| r.get(nn, o, i, j))
                    .sum();
                assert!(rel(g.grad_bias.data()[o], n) < 1e-9);
            }
        }
    }
}

#[test]
fn model_gradient_matches_finite_differences_on_16x16() {
    let cfg = DroneNetConfig::tiny(2);
    let mut model = DroneNet::<f64>::build(cfg.clone()).unwrap();
    init_weights(&mut model, 5);
    model.params_mut().pop().unwrap().data_mut().fill(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = uniform(&mut rng, Shape::new(1, 3, 16, 16), 1.0);
    let gt = Tensor::from_fn(model.output_shape(x.shape()), |_, _, _, _| {
        rng.random_range(0.0..0.5)
    });
    let loss = |m: &DroneNet<f64>| mse_loss(&m.forward(&x).unwrap(), &gt).unwrap().value;

    let (pred, cache) = model.forward_cached(&x).unwrap();
    assert!(
        pred.data().iter().all(|&v| v > 0.0),
        "every output must be on the active side"
    );
    let grads = model
        .backward(&cache, &mse_loss(&pred, &gt).unwrap().grad)
        .unwrap();
    let names = model.param_names();
    let h = 1e-5;
    for (pi, g) in grads.tensors.iter().enumerate() {
        // A handful of entries per tensor keeps the run short.
        for idx in (0..g.len()).step_by((g.len() / 4).max(1)) {
            let mut plus = model.clone();
            plus.params_mut()[pi].data_mut()[idx] += h;
            let mut minus = model.clone();
            minus.params_mut()[pi].data_mut()[idx] -= h;
            let n = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = g.data()[idx];
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
            assert!(
                err < 1e-5,
                "{}[{idx}]: analytic {a}, numeric {n}",
                names[pi]
            );
        }
    }
}

/// Scalar Adam written out from the update rule.
fn scalar_adam(theta0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    let mut path = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        path.push(theta);
    }
    path
}

#[test]
fn adam_follows_the_scalar_reference_on_a_quadratic() {
    // f(θ) = Σ a_i (θ_i − c_i)², minimised elementwise.
    let a = [0.5, 2.0, 10.0, 0.1];
    let c = [1.0, -3.0, 0.25, 4.0];
    let start = [0.0, 0.0, 1.0, -2.0];
    let lr = 0.05;
    let shape = Shape::new(1, 1, 1, 4);
    let mut theta = Tensor::from_vec(shape, start.to_vec()).unwrap();
    let mut adam = AdamState::new([&theta], AdamConfig::default());
    let mut paths = vec![Vec::new(); 4];
    for _ in 0..200 {
        let g = Tensor::from_fn(shape, |_, _, _, i| {
            2.0 * a[i] * (theta.get(0, 0, 0, i) - c[i])
        });
        adam.step(&mut [&mut theta], &[g], lr).unwrap();
        for (i, p) in paths.iter_mut().enumerate() {
            p.push(theta.get(0, 0, 0, i));
        }
    }
    for i in 0..4 {
        let reference = scalar_adam(start[i], |t| 2.0 * a[i] * (t - c[i]), lr, 200);
        for (step, (got, want)) in paths[i].iter().zip(&reference).enumerate() {
            assert!(
                (got - want).abs() < 1e-3,
                "coordinate {i} step {step}: {got} vs {want}"
            );
        }
    }
    assert_eq!(adam.steps(), 200);
}
