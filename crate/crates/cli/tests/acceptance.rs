//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL line each and exits
//! non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrestore::analysis::{fusion_params, mae, parse_key_values, psnr, ssim, ssim_direct};
use mrestore::blocks::{ContextModule, FusionKind, Model, ModelConfig, Skff};
use mrestore::data::{add_gaussian_noise, synthetic_scene, Dataset, DatasetSpec, Degradation};
use mrestore::nn::Activation;
use mrestore::train::{check_gradients, cosine_lr, progressive_patch, train_loop, CharbonnierMode, TrainConfig};
use mrestore::{DType, ParamStore, Tape, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn analyze_full() -> Result<(std::collections::BTreeMap<String, String>, Duration), String> {
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_mrestore"))
        .args(["analyze", "--size", "256x256"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let kv = parse_key_values(&String::from_utf8_lossy(&o.stdout)).map_err(|e| e.to_string())?;
    Ok((kv, elapsed))
}

fn num(kv: &std::collections::BTreeMap<String, String>, key: &str) -> f64 {
    kv.get(key).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn c1_params() -> Outcome {
    match analyze_full() {
        Ok((kv, t)) => {
            let p = num(&kv, "params");
            let ok = (5.3e6..=6.5e6).contains(&p) && t < Duration::from_secs(5);
            outcome(ok, format!("params {:.3}M (target 5.9M, range [5.3, 6.5]M), {:.2?}", p / 1e6, t))
        }
        Err(e) => outcome(false, e),
    }
}

fn c2_flops() -> Outcome {
    match analyze_full() {
        Ok((kv, _)) => {
            let f = num(&kv, "flops");
            outcome(
                (115e9..=165e9).contains(&f),
                format!(
                    "FLOPs {:.1}B at 256x256 (range [115, 165]B; 2xMAC count {:.1}B); convs {} (ref 406), activations {:.0}M (ref 390M)",
                    f / 1e9,
                    num(&kv, "flops_2mac") / 1e9,
                    kv.get("convs").map_or("?", String::as_str),
                    num(&kv, "activations") / 1e6
                ),
            )
        }
        Err(e) => outcome(false, e),
    }
}

fn c3_fusion_fixture() -> Outcome {
    let got = [FusionKind::Skff, FusionKind::Concat, FusionKind::Sum].map(|k| fusion_params(k, 64, 2).ok());
    outcome(
        got == [Some(1536), Some(8192), Some(0)],
        format!("skff {:?}, concat {:?}, sum {:?} (want 1536, 8192, 0)", got[0], got[1], got[2]),
    )
}

fn c4_gradients() -> Outcome {
    let t = Instant::now();
    let model = match Model::he_uniform(&ModelConfig::tiny(), DType::F64, 3) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let clean = synthetic_scene(16, 16, 1).to_dtype(DType::F64);
    let noisy = add_gaussian_noise(&clean, 25.0, 2).expect("noise");
    match check_gradients(&model, &noisy, &clean, CharbonnierMode::PerPixelMean, 1e-5, 1e-6) {
        Ok(r) => {
            let (rel, name) = r.max_tensor_rel();
            outcome(
                rel < 1e-4 && t.elapsed() < Duration::from_secs(300),
                format!(
                    "{} scalars in {} tensors; max per-tensor rel err {rel:.2e} ({name}); elementwise max abs {:.2e}; {:.1?}",
                    r.checked,
                    r.tensors.len(),
                    r.max_abs,
                    t.elapsed()
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &v, DType::F64).expect("shape")
}

fn c5_identity() -> Outcome {
    mrestore::parallel::set_sequential(true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = String::new();
    let mut ok = true;
    for (cfg, dtype) in [
        (ModelConfig::tiny(), DType::F32),
        (ModelConfig::tiny(), DType::F64),
        (ModelConfig { share_rcb: false, fusion: FusionKind::Concat, ..ModelConfig::tiny() }, DType::F32),
        (ModelConfig { n_rrg: 2, n_mrb: 2, ..ModelConfig::tiny() }, DType::F32),
    ] {
        let model = Model::zeroed(&cfg, dtype).expect("model");
        for _ in 0..3 {
            let x = random_tensor(&[2, 3, 16, 24], &mut rng, 2.0).to_dtype(dtype);
            if !model.infer(&x).map(|y| y.bitwise_eq(&x)).unwrap_or(false) {
                ok = false;
                worst = format!("{cfg:?}");
            }
        }
    }
    mrestore::parallel::set_sequential(false);
    outcome(ok, if ok { "bitwise identity on 12 random inputs over 4 configurations".to_string() } else { worst })
}

fn c6_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut skff_err, mut cm_err) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let n = rng.random_range(1..=3);
        let c = rng.random_range(1..=8) * 4;
        let k = rng.random_range(2..=3);
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let mut store = ParamStore::new(DType::F64);
        let skff = Skff::register(&mut store, "s", c, k).expect("skff");
        let act = if trial % 2 == 0 { Activation::Relu } else { Activation::LeakyRelu };
        let cm = ContextModule::register(&mut store, "cm", c, trial % 3 != 0, act).expect("cm");
        store.init_uniform(trial as u64);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let inputs: Vec<_> = (0..k)
            .map(|_| tape.leaf(random_tensor(&[n, c, h, w], &mut rng, 3.0), false))
            .collect();
        let (_, weights) = skff.forward_with_weights(&p, &inputs).expect("skff forward");
        // weights are [N, k, C]: sum over the stream axis
        let wv = weights.value().to_f64_vec();
        for b in 0..n {
            for ch in 0..c {
                let s: f64 = (0..k).map(|i| wv[(b * k + i) * c + ch]).sum();
                skff_err = skff_err.max((s - 1.0).abs());
            }
        }
        let (_, att) = cm.forward_with_attention(&p, inputs[0]).expect("cm forward");
        let av = att.value().to_f64_vec();
        for row in av.chunks(h * w) {
            cm_err = cm_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        skff_err <= 1e-6 && cm_err <= 1e-6,
        format!("1000 trials; max |sum - 1|: SKFF {skff_err:.1e}, CM {cm_err:.1e}"),
    )
}

struct TrainRun {
    psnr: f64,
    elapsed: Duration,
}

fn desk_data() -> Dataset {
    Dataset::from_spec(&DatasetSpec {
        scenes: 24,
        scene_size: 64,
        val_count: 4,
        synth: Some(Degradation::GaussianNoise { sigma: 25.0 }),
        seed: 0,
        ..Default::default()
    })
    .expect("dataset")
}

fn desk_train(data: &Dataset, schedule: Vec<(f64, usize)>) -> Result<TrainRun, String> {
    let mut model = Model::new(&ModelConfig::tiny(), DType::F32, 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        total_iters: 2000,
        batch_size: 8,
        patch_schedule: schedule,
        seed: 0,
        ..Default::default()
    };
    let t = Instant::now();
    let out = train_loop(&mut model, &cfg, data, None, &mut |_| {}).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let psnr = out.records.last().and_then(|r| r.val_psnr).ok_or("no final validation")?;
    Ok(TrainRun { psnr, elapsed })
}

fn noisy_psnr(data: &Dataset) -> f64 {
    data.val.iter().map(|p| psnr(&p.degraded, &p.clean, 1.0).expect("psnr")).sum::<f64>() / data.val.len() as f64
}

fn c7_c8_training() -> (Outcome, Outcome) {
    let data = desk_data();
    let base = noisy_psnr(&data);
    let progressive = desk_train(&data, vec![(0.0, 32), (0.25, 36), (0.5, 40), (0.75, 48)]);
    let c7 = match &progressive {
        Ok(r) => outcome(
            r.psnr - base >= 3.0 && r.elapsed < Duration::from_secs(1800),
            format!(
                "{} train / {} held-out images, noisy {base:.2} dB -> {:.2} dB (gain {:+.2} dB, need +3), {:.0?}",
                data.train.len(),
                data.val.len(),
                r.psnr,
                r.psnr - base,
                r.elapsed
            ),
        ),
        Err(e) => outcome(false, e.clone()),
    };
    let constant = desk_train(&data, vec![(0.0, 48)]);
    let c8 = match (&progressive, &constant) {
        (Ok(p), Ok(c)) => outcome(
            p.elapsed < c.elapsed && p.psnr >= c.psnr - 0.3,
            format!(
                "progressive {:.2} dB in {:.0?} vs constant-48 {:.2} dB in {:.0?} (diff {:+.2} dB, allowed -0.3)",
                p.psnr,
                p.elapsed,
                c.psnr,
                c.elapsed,
                p.psnr - c.psnr
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.clone()),
    };
    (c7, c8)
}

fn c9_schedule() -> Outcome {
    let total = 300_000;
    let lr = |t| cosine_lr(t, total, 2e-4, 1e-6).unwrap_or(f64::NAN);
    let (start, mid, end) = (lr(0), lr(total / 2), lr(total));
    let default = TrainConfig::default().patch_schedule;
    let probe: Vec<usize> = [0, 75_000, 150_000, 225_000, total - 1]
        .iter()
        .map(|&t| progressive_patch(t, total, &default))
        .collect();
    let mut seen: Vec<usize> = (0..total).step_by(1000).map(|t| progressive_patch(t, total, &default)).collect();
    seen.dedup();
    let ok = start == 2e-4
        && end == 1e-6
        && (mid - 1.005e-4).abs() <= 4.0 * f64::EPSILON * 1.005e-4
        && seen == [128, 144, 192, 224]
        && probe == [128, 144, 192, 224, 224]
        && progressive_patch(180_000, total, &default) == 192;
    outcome(
        ok,
        format!("lr(0) {start:e}, lr(T/2) {mid:e}, lr(T) {end:e}; patches in order {seen:?}"),
    )
}

fn c10_metrics() -> Outcome {
    let a = Tensor::from_f64(vec![1, 3, 4, 4], &(0..48).map(|i| (i * 5) as f64).collect::<Vec<_>>(), DType::F64).unwrap();
    let b = a.map(|v| v + 10.0);
    let p = psnr(&a, &b, 255.0).unwrap_or(f64::NAN);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut self_one = true;
    let mut agree = 0.0f64;
    let mut mae_ok = true;
    for i in 0..100 {
        let c = if i % 2 == 0 { 3 } else { 1 };
        let x = random_tensor(&[1, c, 32, 32], &mut rng, 1.0).map(|v| 0.5 + 0.5 * v);
        let y = random_tensor(&[1, c, 32, 32], &mut rng, 1.0).map(|v| 0.5 + 0.5 * v);
        let y = Tensor::from_f64(
            vec![1, c, 32, 32],
            &x.to_f64_vec().iter().zip(y.to_f64_vec()).map(|(p, q)| 0.7 * p + 0.3 * q).collect::<Vec<_>>(),
            DType::F64,
        )
        .unwrap();
        self_one &= ssim(&x, &x).unwrap() == 1.0;
        agree = agree.max((ssim(&x, &y).unwrap() - ssim_direct(&x, &y).unwrap()).abs());
        mae_ok &= mae(&x, &y).unwrap() == mae(&y, &x).unwrap() && mae(&x, &x).unwrap() == 0.0;
    }
    outcome(
        (p - 28.1308).abs() <= 1e-3 && self_one && agree <= 1e-6 && mae_ok,
        format!(
            "PSNR {p:.4} dB (want 28.1308); SSIM self = 1: {self_one}; SSIM fast vs direct max diff {agree:.1e} over 100 pairs; MAE symmetric/zero: {mae_ok}"
        ),
    )
}

fn c11_determinism() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return outcome(false, e.to_string()),
    };
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut results = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_mrestore"))
            .args(["--sequential", "--seed", "11", "train", "-q"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output();
        match o {
            Ok(o) if o.status.success() => {}
            Ok(o) => return outcome(false, String::from_utf8_lossy(&o.stderr).into_owned()),
            Err(e) => return outcome(false, e.to_string()),
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap_or_default();
        results.push((read("metrics.tsv"), read("checkpoint.erck")));
    }
    let (log_eq, ckpt_eq) = (results[0].0 == results[1].0, results[0].1 == results[1].1);
    outcome(
        log_eq && ckpt_eq && !results[0].0.is_empty() && !results[0].1.is_empty(),
        format!(
            "metrics logs identical: {log_eq}; checkpoints bitwise identical: {ckpt_eq} ({} bytes)",
            results[0].1.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id, name, o: Outcome| {
        println!("[{}] criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "parameter accounting", c1_params());
    record(2, "FLOP accounting", c2_flops());
    record(3, "fusion parameter fixture", c3_fusion_fixture());
    record(4, "gradient correctness", c4_gradients());
    record(5, "residual identity", c5_identity());
    record(6, "attention normalisation", c6_attention());
    let (c7, c8) = c7_c8_training();
    record(7, "desk-scale denoising", c7);
    record(8, "progressive patches", c8);
    record(9, "schedules", c9_schedule());
    record(10, "metric oracles", c10_metrics());
    record(11, "determinism", c11_determinism());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
