//! Acceptance run: every criterion prints one PASS/FAIL line and the process
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use irae_core::check::{check_flow_gradients, round_trip_error, worst};
use irae_core::degrade::{make_inpaint_mask, DegradationSpec, BLIND_SIGMA_RANGE};
use irae_core::flow::{ActNorm, Conv1x1, Coupling, FlowStep, Squeeze};
use irae_core::info::{self, FiniteMap};
use irae_core::metrics::{evaluate_pair, psnr_from_mse, ssim};
use irae_core::model::{search_hidden_width, IraeConfig, IraeModel};
use irae_core::synth::synthetic_dataset;
use irae_core::train::{train, LrSchedule, TrainConfig};
use irae_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_SEED: u64 = 100;
const TEST_SEED: u64 = 200;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

/// Starts from the identity map so training begins at the degraded PSNR.
fn desk_model(seed: u64) -> IraeModel<f32> {
    let mut m = IraeModel::build(IraeConfig::new(4, 2, 32, 1).with_seed(seed)).unwrap();
    m.reset_to_identity();
    m
}

fn desk_train(spec: DegradationSpec, n: usize, size: usize, epochs: usize) -> Result<IraeModel<f32>> {
    let images: Vec<Tensor<f32>> = synthetic_dataset(n, 1, size, size, TRAIN_SEED);
    let cfg = TrainConfig::new(spec, epochs).with_seed(TRAIN_SEED);
    Ok(train(desk_model(TRAIN_SEED), &images, &cfg)?.model)
}

/// Mean PSNR of the degraded and of the restored test images.
fn test_psnr(model: &IraeModel<f32>, spec: &DegradationSpec, n: usize, size: usize) -> Result<(f64, f64)> {
    let clean: Vec<Tensor<f32>> = synthetic_dataset(n, 1, size, size, TEST_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(TEST_SEED);
    let (mut before, mut after) = (0.0, 0.0);
    for x in &clean {
        let y = spec.apply(x, &mut rng)?.y;
        before += evaluate_pair(&y, x)?.0;
        after += evaluate_pair(&model.forward(&y)?, x)?.0;
    }
    Ok((before / n as f64, after / n as f64))
}

fn invertibility() -> Result<Verdict> {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (k, levels) in [(1, 1), (4, 2), (16, 2)] {
        let mut m = IraeModel::<f64>::build(IraeConfig::new(k, levels, 64, 1).with_seed(k as u64))?;
        m.randomize(&mut ChaCha8Rng::seed_from_u64(levels as u64));
        let e64 = round_trip_error(&m, [1, 16, 16], 50, 7)?;
        let e32 = round_trip_error(&m.cast::<f32>(), [1, 16, 16], 50, 7)?;
        pass &= e64 < 1e-8 && e32 < 1e-4;
        parts.push(format!("K={k} L={levels}: f64 {e64:.2e}, f32 {e32:.2e}"));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(120);
    verdict(pass, format!("{} over 50 trials each ({:.1} s)", parts.join("; "), t.as_secs_f64()))
}

fn gradients() -> Result<Verdict> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut input = |shape: &[usize]| Tensor::<f64>::from_fn(shape.to_vec(), |_| rng.gen_range(0.0..1.0));
    let (x4, x_step, x_model) = (input(&[2, 4, 3, 3]), input(&[1, 4, 2, 2]), input(&[2, 1, 4, 4]));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let actnorm = ActNorm::with_params(
        Tensor::from_fn(vec![4], |_| rng.gen_range(0.5..2.0)),
        Tensor::from_fn(vec![4], |_| rng.gen_range(-1.0..1.0)),
    )?;
    let conv = Conv1x1::<f64>::random_orthogonal(4, &mut rng)?;
    let mut coupling = Coupling::<f64>::new(4, 5, &mut rng)?;
    for p in [&mut coupling.w3, &mut coupling.b3, &mut coupling.b1, &mut coupling.b2] {
        p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    let mut step = FlowStep::<f64>::new(4, 3, &mut rng)?;
    step.actnorm = actnorm.clone();
    step.coupling = Coupling::new(4, 3, &mut rng)?;
    for p in [&mut step.coupling.w3, &mut step.coupling.b3] {
        p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
    }
    let mut model = IraeModel::<f64>::build(IraeConfig::new(1, 1, 4, 1).with_seed(3))?;
    model.randomize(&mut rng);
    let results = [
        ("actnorm", check_flow_gradients(&actnorm, &x4, STEP, 4)?),
        ("conv1x1", check_flow_gradients(&conv, &x4, STEP, 5)?),
        ("coupling", check_flow_gradients(&coupling, &x4, STEP, 6)?),
        ("squeeze", check_flow_gradients(&Squeeze, &input_squeeze(), STEP, 7)?),
        ("flow step", check_flow_gradients(&step, &x_step, STEP, 8)?),
        ("model K=1 L=1", check_flow_gradients(&model, &x_model, STEP, 9)?),
    ];
    let worst_all = results.iter().map(|(_, c)| worst(c)).fold(0.0, f64::max);
    let checked: usize = results.iter().map(|(_, c)| c.len()).sum();
    let parts: Vec<String> = results.iter().map(|(n, c)| format!("{n} {:.1e}", worst(c))).collect();
    verdict(
        worst_all < 1e-4,
        format!("{checked} tensors, worst relative error {worst_all:.2e} ({})", parts.join(", ")),
    )
}

fn input_squeeze() -> Tensor<f64> {
    Tensor::from_fn(vec![1, 2, 4, 4], |i| (i as f64 * 0.37).sin())
}

fn desk_denoising() -> Result<Verdict> {
    let start = Instant::now();
    let spec = DegradationSpec::Awgn { sigma: 25.0 };
    let model = desk_train(spec, 200, 16, 50)?;
    let (noisy, restored) = test_psnr(&model, &spec, 50, 16)?;
    let t = start.elapsed();
    verdict(
        restored - noisy >= 3.0 && t < Duration::from_secs(15 * 60),
        format!(
            "noisy {noisy:.2} dB, restored {restored:.2} dB, gain {:.2} dB on 50 test images ({:.1} s)",
            restored - noisy,
            t.as_secs_f64()
        ),
    )
}

fn blind_denoising() -> Result<Verdict> {
    let (lo, hi) = BLIND_SIGMA_RANGE;
    let spec = DegradationSpec::BlindAwgn { lo, hi };
    let model = desk_train(spec, 200, 16, 30)?;
    let (noisy, restored) = test_psnr(&model, &spec, 50, 16)?;
    verdict(
        restored > noisy,
        format!("sigma ~ U[{lo}, {hi}]: noisy {noisy:.2} dB, restored {restored:.2} dB"),
    )
}

fn jpeg_monotonicity() -> Result<Verdict> {
    let mut degraded = Vec::new();
    let mut restored = Vec::new();
    for quality in [10u8, 20, 30, 40] {
        let spec = DegradationSpec::Jpeg { quality };
        let model = desk_train(spec, 150, 16, 20)?;
        let (d, r) = test_psnr(&model, &spec, 50, 16)?;
        degraded.push(d);
        restored.push(r);
    }
    let nondecreasing = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" <= ");
    verdict(
        nondecreasing(&degraded) && nondecreasing(&restored),
        format!("QF 10/20/30/40 degraded {} dB; restored {} dB", fmt(&degraded), fmt(&restored)),
    )
}

fn inpainting() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fractions_ok = true;
    for _ in 0..20 {
        fractions_ok &= make_inpaint_mask((256, 256), (128, 128), &mut rng)?.area_fraction() == 0.25;
        fractions_ok &= make_inpaint_mask((32, 32), (16, 16), &mut rng)?.area_fraction() == 0.25;
    }
    let spec = DegradationSpec::Inpaint { mask_h: 16, mask_w: 16 };
    let model = desk_train(spec, 100, 32, 20)?;
    let clean: Vec<Tensor<f32>> = synthetic_dataset(30, 1, 32, 32, TEST_SEED);
    let (mut model_l1, mut zero_l1) = (0.0, 0.0);
    for x in &clean {
        let d = spec.apply(x, &mut rng)?;
        let mask = d.mask.expect("inpaint mask");
        let xhat = model.forward(&d.y)?.clamp(0.0, 1.0);
        let (mut a, mut b, mut n) = (0.0, 0.0, 0.0);
        for yy in 0..32 {
            for xx in 0..32 {
                if mask.contains(yy, xx) {
                    let i = yy * 32 + xx;
                    a += f64::from((xhat.data()[i] - x.data()[i]).abs());
                    b += f64::from((d.y.data()[i] - x.data()[i]).abs());
                    n += 1.0;
                }
            }
        }
        model_l1 += a / n;
        zero_l1 += b / n;
    }
    let (model_l1, zero_l1) = (model_l1 / 30.0, zero_l1 / 30.0);
    verdict(
        fractions_ok && model_l1 < zero_l1,
        format!(
            "area 0.25 at 256/128 and 32/16: {fractions_ok}; masked L1 restored {model_l1:.4} vs zero-fill {zero_l1:.4}"
        ),
    )
}

fn information() -> Result<Verdict> {
    let start = Instant::now();
    let px = info::uniform(4);
    let (mut ok, mut injective, mut min_loss) = (true, 0, f64::INFINITY);
    for f in FiniteMap::enumerate_all(4, 4) {
        let r = info::proposition1_check(&px, &f)?;
        let mut seen = [false; 4];
        let distinct = f.table().iter().all(|&z| !std::mem::replace(&mut seen[z], true));
        let full = (r.mi - 2.0).abs() <= 1e-12 && (r.h_x - 2.0).abs() <= 1e-12;
        ok &= full == distinct && distinct == r.injective;
        if distinct {
            injective += 1;
        } else {
            ok &= r.loss > 1e-12;
            min_loss = min_loss.min(r.loss);
        }
    }
    let t = start.elapsed();
    verdict(
        ok && injective == 24 && t < Duration::from_secs(1),
        format!(
            "256 maps, {injective} injective with I = H = 2 bits, min loss otherwise {min_loss:.3} bits ({:.1} ms)",
            t.as_secs_f64() * 1e3
        ),
    )
}

fn metric_goldens() -> Result<Verdict> {
    let p = psnr_from_mse(0.01, 1.0);
    let x: Tensor<f64> = synthetic_dataset(1, 1, 32, 32, 9).remove(0);
    let s = ssim(&x, &x)?;
    let mut sched = LrSchedule::default();
    let mut rates = Vec::new();
    let mut epoch = 1;
    let stopped_at = loop {
        // improves through the warm phase, then never again
        let (lr, stop) = sched.step(epoch, if epoch <= 51 { epoch as f64 } else { 0.0 });
        if epoch > 50 && rates.last() != Some(&lr) {
            rates.push(lr);
        }
        if stop {
            break epoch;
        }
        epoch += 1;
    };
    ensure!(stopped_at < 1000, "schedule never stopped");
    let chain_ok = rates == [2e-4, 4e-5, 8e-6, 1.6e-6, 3.2e-7];
    verdict(
        p == 20.0 && (s - 1.0).abs() <= 1e-9 && chain_ok,
        format!("PSNR(0.01) = {p} dB, SSIM(x,x) = {s}, rates {rates:?} then stop at epoch {stopped_at}"),
    )
}

fn parameter_count() -> Result<Verdict> {
    let cfg = IraeConfig::new(1, 1, 8, 1);
    let model = IraeModel::<f64>::build(cfg)?;
    let enumerated: usize = model.params().iter().map(|t| t.data().len()).sum();
    // per step on 4 channels: actnorm 8, 1x1 conv 16, coupling 2->8->8->4 3x3 convs with biases
    let by_hand = 2 * (8 + 16 + (2 * 8 * 9 + 8) + (8 * 8 * 9 + 8) + (8 * 4 * 9 + 4));
    let closed = cfg.param_count();
    let (h, n) = search_hidden_width(16, 2, 3, 1_330_000, 512);
    let within = (n as f64 - 1.33e6).abs() <= 0.1 * 1.33e6;
    verdict(
        closed == 2104 && enumerated == 2104 && by_hand == 2104 && within,
        format!("K=1 L=1 C=1 h=8: closed form {closed}, enumerated {enumerated}; K=16 L=2 C=3 h={h}: {n} params"),
    )
}

fn run_cli(args: &[&str]) -> Result<()> {
    let mut out = Vec::new();
    let code = irae_cli::run_with(std::iter::once("irae").chain(args.iter().copied()), &mut out);
    ensure!(code == 0, "irae {args:?} exited {code}: {}", String::from_utf8_lossy(&out));
    Ok(())
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = dir.path().join("data");
    run_cli(&["gen-data", "--output", &s(&data), "--count", "30", "--size", "16", "--seed", "4"])?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_cli(&[
            "train", "--set", "k=2", "--set", "hidden=8", "--set", "batch_size=4", "--seed", "11",
            "--dataset", &s(&data), "--output-dir", &s(&out), "--epochs", "3",
        ])?;
        outputs.push((fs::read(out.join("model.irae"))?, fs::read(out.join("history.jsonl"))?));
    }
    let same_ckpt = outputs[0].0 == outputs[1].0;
    let same_hist = outputs[0].1 == outputs[1].1;
    verdict(
        same_ckpt && same_hist,
        format!(
            "checkpoint identical: {same_ckpt} ({} bytes); history identical: {same_hist} ({} bytes)",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Verdict>); 10] = [
        ("invertibility", invertibility),
        ("gradients", gradients),
        ("desk denoising", desk_denoising),
        ("blind denoising", blind_denoising),
        ("jpeg monotonicity", jpeg_monotonicity),
        ("inpainting", inpainting),
        ("information preservation", information),
        ("metric goldens", metric_goldens),
        ("parameter count", parameter_count),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = match f() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!("criterion {:2} {} {name}: {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
