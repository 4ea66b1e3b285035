use camnoise::data_io::{CameraCondition, ConditionRegistry};
use camnoise::flow::{
    dequantize, one_hot, quantize, substream, FlowConfig, FlowStack, LayerToggles, LOG_SCALE_BOUND,
};
use camnoise::Error;
use camnoise_tensor::{no_grad, Module, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn small_config() -> FlowConfig {
    FlowConfig {
        num_blocks: 2,
        hidden_width: 6,
        embed_dim: 4,
        encoder_blocks: 1,
    }
}

fn registry() -> ConditionRegistry {
    ConditionRegistry::new(vec!["A".into(), "B".into()], vec![100, 400, 1600])
}

fn batch(seed: u64, n: usize, h: usize, w: usize) -> (Tensor, Tensor) {
    let mut rng = substream(seed, 99);
    let clean: Vec<f64> = (0..n * 3 * h * w).map(|_| rng.random_range(0..=255) as f64).collect();
    let noise: Vec<f64> = (0..n * 3 * h * w).map(|_| rng.random_range(-30..=30) as f64).collect();
    (Tensor::from_vec(clean, &[n, 3, h, w]), Tensor::from_vec(noise, &[n, 3, h, w]))
}

fn perturbed_stack(seed: u64) -> FlowStack {
    let mut rng = substream(seed, 1);
    let s = FlowStack::new(&small_config(), LayerToggles::default(), &registry(), &mut rng);
    for p in s.params() {
        let v: Vec<f64> = (0..p.numel()).map(|_| rng.random_range(-0.3..0.3)).collect();
        p.set_data(v);
    }
    s
}

#[test]
fn fresh_stack_is_identity_with_zero_log_det() {
    let s = FlowStack::new(&small_config(), LayerToggles::default(), &registry(), &mut substream(0, 1));
    let (clean, noise) = batch(1, 2, 5, 4);
    let ctx = s.context(&clean, &[CameraCondition { camera: 0, iso: 2 }; 2]).unwrap();
    let out = s.forward(&noise, &ctx).unwrap();
    assert_eq!(out.z.to_vec(), noise.to_vec());
    assert!(out.log_det.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn unknown_condition_is_rejected() {
    assert!(matches!(
        one_hot(CameraCondition { camera: 2, iso: 0 }, 2, 3),
        Err(Error::UnknownCondition(_))
    ));
    let s = perturbed_stack(3);
    let (clean, _) = batch(2, 1, 3, 3);
    assert!(matches!(
        s.context(&clean, &[CameraCondition { camera: 0, iso: 3 }]),
        Err(Error::UnknownCondition(_))
    ));
}

#[test]
fn log_det_is_sum_of_layer_log_dets() {
    let s = perturbed_stack(11);
    let (clean, noise) = batch(4, 2, 4, 6);
    let ctx = s.context(&clean, &[CameraCondition { camera: 1, iso: 0 }; 2]).unwrap();
    let total = s.forward(&noise, &ctx).unwrap().log_det;
    let mut z = noise.clone();
    let mut sum = vec![0.0; 2];
    for l in &s.layers {
        let (next, ld) = l.forward(&z, &ctx).unwrap();
        for (a, b) in sum.iter_mut().zip(ld.data()) {
            *a += b;
        }
        z = next;
    }
    for (a, b) in sum.iter().zip(total.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn log_scale_stays_inside_the_bound() {
    let mut rng = substream(5, 1);
    let s = FlowStack::new(&small_config(), LayerToggles::default(), &registry(), &mut rng);
    for p in s.params() {
        p.set_data(vec![40.0; p.numel()]);
    }
    let (clean, _) = batch(6, 1, 3, 3);
    let ctx = s.context(&clean, &[CameraCondition { camera: 0, iso: 0 }]).unwrap();
    for l in &s.layers {
        let (ls, _) = l.factors(&ctx).unwrap();
        assert!(ls.data().iter().all(|v| v.abs() <= LOG_SCALE_BOUND));
    }
}

#[test]
fn sampling_records_a_graph_only_when_enabled() {
    let s = perturbed_stack(8);
    let (clean, _) = batch(7, 1, 4, 4);
    let conds = [CameraCondition { camera: 0, iso: 1 }];
    let with = s.sample(&clean, &conds, &mut substream(1, 2)).unwrap();
    let without = no_grad(|| s.sample(&clean, &conds, &mut substream(1, 2))).unwrap();
    assert!(with.requires_grad());
    assert!(!without.requires_grad());
    assert_eq!(with.to_vec(), without.to_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dequantize_then_quantize_is_identity(values in prop::collection::vec(-255i32..=255, 1..64), seed in any::<u64>()) {
        let n = values.len();
        let t = Tensor::from_vec(values.iter().map(|&v| v as f64).collect(), &[n]);
        let back = quantize(&dequantize(&t, &mut substream(seed, 12)));
        prop_assert_eq!(back.to_vec(), t.to_vec());
    }

    #[test]
    fn stack_round_trip(seed in any::<u64>(), h in 1usize..7, w in 1usize..7, cam in 0usize..2, iso in 0usize..3) {
        let s = perturbed_stack(seed);
        let (clean, noise) = batch(seed ^ 1, 2, h, w);
        let ctx = s.context(&clean, &[CameraCondition { camera: cam, iso }; 2]).unwrap();
        let z = s.forward(&noise, &ctx).unwrap().z;
        let back = s.inverse(&z, &ctx).unwrap();
        prop_assert!(back.max_abs_diff(&noise) < 1e-9);
    }

    #[test]
    fn nll_is_finite_and_matches_per_sample_mean(seed in any::<u64>()) {
        let s = perturbed_stack(seed);
        let (clean, noise) = batch(seed, 3, 4, 4);
        let ctx = s.context(&clean, &[CameraCondition { camera: 1, iso: 2 }; 3]).unwrap();
        let per = s.nll_per_sample(&noise, &ctx).unwrap();
        let mean = s.nll(&noise, &ctx).unwrap().item();
        prop_assert!(mean.is_finite());
        prop_assert!((per.data().iter().sum::<f64>() / 3.0 - mean).abs() < 1e-9);
    }
}
