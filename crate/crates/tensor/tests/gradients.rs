use camnoise_tensor::{backward, grad, Adam, AdamConfig, Conv2d, ConvGeom, Init, Module, Param, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of a scalar function of one flat input.
fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn composite(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let y = x.conv2d(w, geom).leaky_relu(0.2);
    let z = y.square().add(&y.exp().scale(0.1)).sum_to(&[1, y.shape()[1], 1, 1]);
    z.sqrt().mean()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_composite_matches_finite_differences(
        seed in any::<u64>(), h in 3usize..7, w in 3usize..7, stride in 1usize..3, k in prop::sample::select(vec![1usize, 3])
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [2, 2, h, w];
        let ws = [3, 2, k, k];
        let geom = ConvGeom { stride, pad: k / 2 };
        let xv = random(&xs, &mut rng);
        let wv = random(&ws, &mut rng);
        let x = Tensor::leaf(xv.clone(), &xs);
        let wt = Tensor::leaf(wv.clone(), &ws);
        let g = backward(&composite(&x, &wt, geom));
        let fx = |v: &[f64]| composite(&Tensor::from_vec(v.to_vec(), &xs), &Tensor::from_vec(wv.clone(), &ws), geom).item();
        let fw = |v: &[f64]| composite(&Tensor::from_vec(xv.clone(), &xs), &Tensor::from_vec(v.to_vec(), &ws), geom).item();
        prop_assert!(close(g.get(&x).unwrap().data(), &numeric_grad(&fx, &xv), 1e-5));
        prop_assert!(close(g.get(&wt).unwrap().data(), &numeric_grad(&fw, &wv), 1e-5));
    }

    #[test]
    fn conv_input_grad_is_the_adjoint(seed in any::<u64>(), h in 2usize..8, w in 2usize..8, stride in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = ConvGeom { stride, pad: 1 };
        let x = Tensor::from_vec(random(&[1, 2, h, w], &mut rng), &[1, 2, h, w]);
        let k = Tensor::from_vec(random(&[3, 2, 3, 3], &mut rng), &[3, 2, 3, 3]);
        let y = x.conv2d(&k, geom);
        let g = Tensor::from_vec(random(y.shape(), &mut rng), y.shape());
        let back = g.conv2d_input_grad(&k, x.shape(), geom);
        let lhs = dot(y.data(), g.data());
        let rhs = dot(x.data(), back.data());
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        let wg = x.conv2d_weight_grad(&g, k.shape(), geom);
        prop_assert!((dot(wg.data(), k.data()) - lhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn second_order_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = [2, 1, 4, 4];
        let ws = [2, 1, 3, 3];
        let geom = ConvGeom { stride: 1, pad: 1 };
        let xv = random(&xs, &mut rng);
        let wv = random(&ws, &mut rng);
        // penalty(w) = mean over samples of (|d/dx sum D(x)| - 1)^2
        let penalty = |w: &Tensor| {
            let x = Tensor::leaf(xv.clone(), &xs);
            let d = x.conv2d(w, geom).leaky_relu(0.2).square().sum();
            let gx = grad(&d, &[&x], true).remove(0).unwrap();
            gx.square().sum_to(&[2, 1, 1, 1]).sqrt().add_scalar(-1.0).square().mean()
        };
        let w = Tensor::leaf(wv.clone(), &ws);
        let g = backward(&penalty(&w));
        let f = |v: &[f64]| penalty(&Tensor::leaf(v.to_vec(), &ws)).item();
        prop_assert!(close(g.get(&w).unwrap().data(), &numeric_grad(&f, &wv), 1e-5));
    }

    #[test]
    fn broadcasting_ops_reduce_back_to_input_shape(seed in any::<u64>(), c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::leaf(random(&[2, c, 3, 3], &mut rng), &[2, c, 3, 3]);
        let b = Tensor::leaf(random(&[1, c, 1, 1], &mut rng), &[1, c, 1, 1]);
        let g = backward(&a.mul(&b).add(&b).sum());
        prop_assert_eq!(g.get(&b).unwrap().shape(), b.shape());
        let expect: Vec<f64> = (0..c)
            .map(|ch| (0..2).flat_map(|n| (0..9).map(move |i| (n, i))).map(|(n, i)| a.data()[(n * c + ch) * 9 + i]).sum::<f64>() + 18.0)
            .collect();
        prop_assert!(close(g.get(&b).unwrap().data(), &expect, 1e-12));
    }
}

#[test]
fn zero_initialized_conv_outputs_bias_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = Conv2d::new("c", 2, 3, 3, 1, Init::Zeros, &mut rng);
    let x = Tensor::from_vec(random(&[1, 2, 5, 5], &mut rng), &[1, 2, 5, 5]);
    assert!(c.forward(&x).data().iter().all(|&v| v == 0.0));
    assert_eq!(c.params().len(), 2);
}

#[test]
fn adam_minimizes_a_quadratic_and_restores_state() {
    let p = Param::new("p", vec![3.0, -2.0, 0.5], &[3]);
    let target = Tensor::from_vec(vec![1.0, 1.0, 1.0], &[3]);
    let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let mut opt = Adam::new(cfg, &[p.clone()]);
    for _ in 0..400 {
        let g = backward(&p.get().sub(&target).square().sum());
        opt.step(&[p.clone()], &g);
    }
    assert!(p.get().max_abs_diff(&target) < 1e-2);

    let q = Param::new("q", p.get().to_vec(), &[3]);
    let mut opt2 = Adam::new(cfg, &[q.clone()]);
    opt2.restore(opt.state().clone());
    let g = backward(&p.get().sub(&target).square().sum());
    opt.step(&[p.clone()], &g);
    let g2 = backward(&q.get().sub(&target).square().sum());
    opt2.step(&[q.clone()], &g2);
    assert_eq!(p.get().to_vec(), q.get().to_vec());
}
