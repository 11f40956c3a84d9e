//! Round-trip and injectivity properties of every layer and of whole models.

use irae_core::check::round_trip_error;
use irae_core::degrade::DegradationSpec;
use irae_core::flow::{ActNorm, Conv1x1, Coupling, Flow, FlowStep, Squeeze};
use irae_core::model::{IraeConfig, IraeModel};
use irae_core::train::{train, TrainConfig};
use irae_core::{Eager, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 50;

fn random_model<T: irae_core::Real>(k: usize, levels: usize, hidden: usize, seed: u64) -> IraeModel<T> {
    let mut m = IraeModel::build(IraeConfig::new(k, levels, hidden, 1).with_seed(seed)).unwrap();
    m.randomize(&mut ChaCha8Rng::seed_from_u64(seed + 100));
    m
}

#[test]
fn layers_round_trip_in_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = [4, 6, 6];
    for trial in 0..TRIALS as u64 {
        let an = ActNorm::with_params(
            Tensor::from_fn(vec![4], |_| rng.gen_range(0.2..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }),
            Tensor::from_fn(vec![4], |_| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let conv = Conv1x1::<f64>::random_orthogonal(4, &mut rng).unwrap();
        let mut cp = Coupling::<f64>::new(4, 6, &mut rng).unwrap();
        for p in [&mut cp.w3, &mut cp.b3] {
            p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
        assert!(round_trip_error(&an, shape, 1, trial).unwrap() < 1e-10);
        assert!(round_trip_error(&conv, shape, 1, trial).unwrap() < 1e-10);
        assert!(round_trip_error(&cp, shape, 1, trial).unwrap() < 1e-10);
        assert_eq!(round_trip_error::<f64, _>(&Squeeze, shape, 1, trial).unwrap(), 0.0);
    }
}

#[test]
fn coupling_keeps_first_half_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cp = Coupling::<f64>::new(6, 4, &mut rng).unwrap();
    cp.w3.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let x = Tensor::from_fn(vec![2, 6, 4, 4], |_| rng.gen::<f64>());
    let y = cp.forward(&Eager, &x).unwrap();
    let half = 3 * 16;
    for n in 0..2 {
        let (a, b) = (&x.data()[n * 96..n * 96 + half], &y.data()[n * 96..n * 96 + half]);
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn log_dets_are_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut step = FlowStep::<f64>::new(4, 3, &mut rng).unwrap();
    let x = Tensor::from_fn(vec![3, 4, 4, 4], |_| rng.gen::<f64>());
    step.actnorm.initialize(&x).unwrap();
    assert!(step.log_det(&x).unwrap().is_finite());
    let m = random_model::<f64>(2, 2, 4, 3);
    assert!(m.log_det(&Tensor::full(vec![1, 1, 8, 8], 0.5)).unwrap().is_finite());
}

#[test]
fn model_round_trip_64_and_32_bit() {
    for (k, levels) in [(1, 1), (4, 2)] {
        let m64 = random_model::<f64>(k, levels, 16, 4);
        let e64 = round_trip_error(&m64, [1, 16, 16], TRIALS, 5).unwrap();
        assert!(e64 < 1e-8, "K={k} L={levels} f64: {e64:e}");
        let m32: IraeModel<f32> = m64.cast();
        let e32 = round_trip_error(&m32, [1, 16, 16], TRIALS, 5).unwrap();
        assert!(e32 < 1e-4, "K={k} L={levels} f32: {e32:e}");
    }
}

#[test]
fn trained_model_round_trip() {
    // 22 images: 2 held out, 20 in batches of 2, so one epoch is 10 steps
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let imgs: Vec<Tensor<f64>> = (0..22)
        .map(|_| Tensor::from_fn(vec![1, 1, 8, 8], |_| rng.gen::<f64>()))
        .collect();
    let model = IraeModel::<f64>::build(IraeConfig::new(2, 2, 8, 1).with_seed(7)).unwrap();
    let cfg = TrainConfig::new(DegradationSpec::Awgn { sigma: 25.0 }, 1).with_batch_size(2);
    let out = train(model, &imgs, &cfg).unwrap();
    let e = round_trip_error(&out.model, [1, 8, 8], TRIALS, 8).unwrap();
    assert!(e < 1e-8, "{e:e}");
}

#[test]
fn forward_is_injective_on_random_pairs() {
    let m = random_model::<f64>(2, 2, 8, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let a = Tensor::from_fn(vec![1, 1, 8, 8], |_| rng.gen::<f64>());
        let mut b = a.clone();
        let i = rng.gen_range(0..64);
        b.data_mut()[i] += if rng.gen_bool(0.5) { 1e-3 } else { -1e-3 };
        let d = m.forward(&a).unwrap().max_abs_diff(&m.forward(&b).unwrap()).unwrap();
        assert!(d > 1e-6, "outputs {d:e} apart");
    }
}

#[test]
fn batch_items_are_independent() {
    let m = random_model::<f64>(1, 2, 4, 11);
    let a = Tensor::from_fn(vec![1, 1, 8, 8], |i| (i % 7) as f64 / 7.0);
    let both = Tensor::stack_batch(&[a.clone(), a.clone()]).unwrap();
    let out = m.forward(&both).unwrap();
    let single = m.forward(&a).unwrap();
    assert_eq!(out.batch_item(0).unwrap(), single);
    assert_eq!(out.batch_item(1).unwrap(), single);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn squeeze_preserves_multiset(h in 1usize..5, w in 1usize..5, c in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_fn(vec![1, c, 2 * h, 2 * w], |_| rng.gen());
        let y = Squeeze.forward(&Eager, &x).unwrap();
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert_eq!(Squeeze.inverse(&Eager, &y).unwrap(), x);
    }

    #[test]
    fn random_models_invert(seed in any::<u64>(), k in 1usize..3, hidden in 1usize..6) {
        let m = random_model::<f64>(k, 2, hidden, seed % 1000);
        let e = round_trip_error(&m, [1, 8, 8], 4, seed).unwrap();
        prop_assert!(e < 1e-8);
    }
}
