//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gating criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npnet::data::{synthetic_rectangles, write_generic_dataset, Size};
use npnet::metrics::{confusion, iou_dice};
use npnet::model::{read_checkpoint, write_checkpoint, DOWNSAMPLE};
use npnet::train::{gradcheck, train, Gradcheck, TrainConfig};
use npnet::{AttentionKind, CheckpointError, LabelMap, Model, ModelConfig, Tensor};

type Outcome = Result<String, String>;
type Criterion = Box<dyn Fn() -> Outcome>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn npnet(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_npnet"))
        .args(args)
        .output()
        .expect("spawn npnet");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn analyze_totals(extra: &[&str], size: &str) -> Result<(u64, u64), String> {
    let mut args = vec!["analyze", "--format", "tsv", "--input-size", size];
    args.extend_from_slice(extra);
    let (code, out, err) = npnet(&args);
    ensure!(code == 0, "analyze {size} exited {code}: {err}");
    let total = out
        .lines()
        .find(|l| l.starts_with("TOTAL"))
        .ok_or("no TOTAL row")?;
    let f: Vec<&str> = total.split('\t').collect();
    let n = f.len();
    Ok((
        f[n - 2].parse().map_err(|e| format!("{e}"))?,
        f[n - 1].parse().map_err(|e| format!("{e}"))?,
    ))
}

fn within(value: f64, target: f64, frac: f64) -> bool {
    (value - target).abs() <= frac * target
}

fn efficiency_table() -> Outcome {
    let (params, macs224) = analyze_totals(&[], "224x224")?;
    let (_, macs_cvc) = analyze_totals(&[], "384x288")?;
    let (_, macs_luna) = analyze_totals(&[], "512x512")?;
    ensure!(
        within(params as f64, 0.71e6, 0.2),
        "params {params} outside 0.71 M +-20%"
    );
    for (macs, published) in [(macs224, 0.99e9), (macs_cvc, 2.17e9), (macs_luna, 5.15e9)] {
        ensure!(
            within(macs as f64, published, 0.2),
            "MACs {macs} outside {published:e} +-20%"
        );
    }
    let area = (384.0 * 288.0) / (224.0 * 224.0);
    for widths in [None, Some("8,16,32"), Some("16,32,64"), Some("64,128,256")] {
        let extra: Vec<&str> = widths
            .map(|w| vec!["--widths", w, "--reduction", "4"])
            .unwrap_or_default();
        let (_, a) = analyze_totals(&extra, "224x224")?;
        let (_, b) = analyze_totals(&extra, "384x288")?;
        let ratio = b as f64 / a as f64;
        ensure!(
            within(ratio, 2.204, 0.005) && within(ratio, area, 0.005),
            "ratio {ratio:.5} for widths {widths:?}"
        );
    }
    Ok(format!(
        "params {:.3} M, MACs {:.3}/{:.3}/{:.3} G, ratio {:.4}",
        params as f64 / 1e6,
        macs224 as f64 / 1e9,
        macs_cvc as f64 / 1e9,
        macs_luna as f64 / 1e9,
        macs_cvc as f64 / macs224 as f64
    ))
}

/// One convolution in the network as an independent description.
struct ConvDesc {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    bias: bool,
    batchnorm: bool,
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize, dilation: usize) -> ConvDesc {
    ConvDesc {
        cin,
        cout,
        k,
        stride,
        dilation,
        bias: false,
        batchnorm: true,
    }
}

/// Walks the topology; returns (params, MACs) with MACs counted by looping over
/// every output pixel and every kernel tap.
fn brute_force_counts(cfg: &ModelConfig, h: usize, w: usize) -> (usize, u64) {
    let (mut params, mut macs) = (0usize, 0u64);
    let mut run = |d: &ConvDesc, h: usize, w: usize| -> (usize, usize) {
        let pad = d.dilation * (d.k - 1) / 2;
        let extent = d.dilation * (d.k - 1) + 1;
        let oh = (h + 2 * pad - extent) / d.stride + 1;
        let ow = (w + 2 * pad - extent) / d.stride + 1;
        for _y in 0..oh {
            for _x in 0..ow {
                for _tap in 0..d.k * d.k {
                    macs += (d.cin * d.cout) as u64;
                }
            }
        }
        for _ in 0..d.cout {
            for _ in 0..d.cin * d.k * d.k {
                params += 1;
            }
        }
        params += if d.bias { d.cout } else { 0 } + if d.batchnorm { 2 * d.cout } else { 0 };
        (oh, ow)
    };
    let [c1, c2, c3] = cfg.widths;
    let (mut hh, mut ww) = (h, w);
    for (cin, c) in [(cfg.in_channels, c1), (c1, c2), (c2, c3)] {
        (hh, ww) = run(&conv(cin, c, 3, 2, 1), hh, ww);
        (hh, ww) = run(&conv(c, c, 3, 1, 1), hh, ww);
        (hh, ww) = run(&conv(c, c, 3, 1, 1), hh, ww);
        if cfg.attention != AttentionKind::None {
            let r = c / cfg.reduction;
            for (i, o) in [(c, r), (r, c)] {
                let d = ConvDesc {
                    bias: true,
                    batchnorm: false,
                    ..conv(i, o, 1, 1, 1)
                };
                run(&d, 1, 1);
            }
        }
    }
    let half = c3 / 2;
    for rate in cfg.dilation_rates {
        run(&conv(c3, half, 3, 1, rate), hh, ww);
    }
    run(&conv(4 * half, c3, 1, 1, 1), hh, ww);
    run(&conv(2 * c3, c3, 1, 1, 1), hh, ww);
    let classifier = ConvDesc {
        bias: true,
        batchnorm: false,
        ..conv(c3, cfg.num_classes, 1, 1, 1)
    };
    run(&classifier, hh, ww);
    (params, macs)
}

fn counting_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let configs = 8;
    for _ in 0..configs {
        let reduction = [1, 2, 4][rng.gen_range(0..3)];
        let mut widths = [0; 3];
        for w in &mut widths {
            *w = 4 * rng.gen_range(1..=6);
        }
        let attention = AttentionKind::ALL[rng.gen_range(0..3)];
        let mut cfg = ModelConfig::default()
            .with_widths(widths)
            .with_reduction(reduction)
            .with_attention(attention);
        cfg.num_classes = rng.gen_range(2..=4);
        cfg.dilation_rates = std::array::from_fn(|_| rng.gen_range(1..=5));
        let (h, w) = (8 * rng.gen_range(1..=8), 8 * rng.gen_range(1..=8));
        let model = Model::new(cfg.clone(), rng.gen()).map_err(|e| e.to_string())?;
        let walked: usize = model
            .store()
            .params()
            .iter()
            .map(|p| p.dims.iter().product::<usize>())
            .sum();
        let (params, macs) = brute_force_counts(&cfg, h, w);
        ensure!(
            model.count_params() == walked,
            "{cfg:?}: count_params {} vs tensor walk {walked}",
            model.count_params()
        );
        ensure!(
            model.count_params() == params,
            "{cfg:?}: count_params {} vs topology {params}",
            model.count_params()
        );
        let counted = model.count_macs(h, w).map_err(|e| e.to_string())?;
        ensure!(
            counted == macs,
            "{cfg:?} at {h}x{w}: count_macs {counted} vs loop {macs}"
        );
    }
    let default = ModelConfig::default();
    let (params, macs) = brute_force_counts(&default, 224, 224);
    let model = Model::new(default, 0).map_err(|e| e.to_string())?;
    ensure!(
        model.count_params() == params && model.count_macs(224, 224).unwrap() == macs,
        "default config mismatch"
    );
    Ok(format!(
        "{configs} random configs plus default agree exactly"
    ))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = gradcheck(&Gradcheck::new(0)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(report.passed(), "gradcheck failed:\n{}", report.to_text());
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    let (code, out, _) = npnet(&["gradcheck"]);
    ensure!(code == 0, "npnet gradcheck exited {code}:\n{out}");
    Ok(format!(
        "{} checks pass in {:.1} s",
        report.checks.len(),
        elapsed.as_secs_f64()
    ))
}

fn overfit_run() -> Result<(f64, Vec<u8>, Duration), String> {
    let samples = synthetic_rectangles(4, Size::new(64, 64), 1, 7);
    let cfg = ModelConfig::default()
        .with_widths([8, 16, 32])
        .with_reduction(4);
    let mut model = Model::new(cfg, 0).map_err(|e| e.to_string())?;
    let train_cfg = TrainConfig {
        epochs: 200,
        learning_rate: 3e-3,
        batch_size: 4,
        seed: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    train(&mut model, &samples, &train_cfg, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let report = npnet::metrics::evaluate(&model, &samples).map_err(|e| e.to_string())?;
    Ok((report.mean_dice, write_checkpoint(&model), elapsed))
}

fn overfit() -> Outcome {
    let (dice, bytes, elapsed) = overfit_run()?;
    ensure!(dice >= 0.95, "training-set mean Dice {dice:.4} < 0.95");
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    let (dice2, bytes2, _) = overfit_run()?;
    ensure!(dice2 == dice && bytes2 == bytes, "second run differs");
    Ok(format!(
        "mean Dice {dice:.4} after 200 epochs in {:.1} s, rerun identical",
        elapsed.as_secs_f64()
    ))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for pair in 0..100 {
        let density = rng.gen_range(0.0..1.0);
        let a: Vec<u32> = (0..64).map(|_| u32::from(rng.gen_bool(density))).collect();
        let b: Vec<u32> = (0..64).map(|_| u32::from(rng.gen_bool(density))).collect();
        let (mut inter, mut union, mut size_a, mut size_b) = (0u32, 0u32, 0u32, 0u32);
        for y in 0..8 {
            for x in 0..8 {
                let (p, t) = (a[y * 8 + x] == 1, b[y * 8 + x] == 1);
                inter += u32::from(p && t);
                union += u32::from(p || t);
                size_a += u32::from(p);
                size_b += u32::from(t);
            }
        }
        let (iou_ref, dice_ref) = if union == 0 {
            (1.0, 1.0)
        } else {
            (
                inter as f64 / union as f64,
                2.0 * inter as f64 / (size_a + size_b) as f64,
            )
        };
        let pred = LabelMap::new(1, 8, 8, a).unwrap();
        let truth = LabelMap::new(1, 8, 8, b).unwrap();
        let (iou, dice) = iou_dice(&confusion(&pred, &truth).map_err(|e| e.to_string())?);
        ensure!(
            iou == iou_ref && dice == dice_ref,
            "pair {pair}: ({iou}, {dice}) vs ({iou_ref}, {dice_ref})"
        );
        let identity = 2.0 * iou / (1.0 + iou);
        ensure!(
            (dice - identity).abs() <= 1e-12,
            "pair {pair}: dice {dice} vs 2iou/(1+iou) {identity}"
        );
    }
    Ok("100 random 8x8 pairs exact, identity holds".into())
}

fn shapes() -> Outcome {
    let model = Model::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (n, h, w) in [(2, 224, 224), (1, 288, 384), (1, 512, 512)] {
        let x = Tensor::from_vec(
            [n, 3, h, w],
            (0..n * 3 * h * w)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
        )
        .unwrap();
        let logits = model.forward(&x).map_err(|e| e.to_string())?;
        ensure!(
            logits.shape() == [n, 2, h, w],
            "{h}x{w}: logits {:?}",
            logits.shape()
        );
        let bottleneck = model.bottleneck(&x).map_err(|e| e.to_string())?;
        ensure!(
            bottleneck.shape() == [n, 128, h / DOWNSAMPLE, w / DOWNSAMPLE],
            "{h}x{w}: bottleneck {:?}",
            bottleneck.shape()
        );
    }
    Ok("224x224, 384x288, 512x512 logits full size, bottleneck 1/8".into())
}

fn checkpoint() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ModelConfig::default()
        .with_widths([8, 16, 32])
        .with_reduction(4);
    let mut model = Model::new(cfg, 3).map_err(|e| e.to_string())?;
    let samples = synthetic_rectangles(2, Size::new(16, 16), 1, 3);
    let train_cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    train(&mut model, &samples, &train_cfg, None).map_err(|e| e.to_string())?;
    let path = dir.path().join("a.npnt");
    npnet::model::save_checkpoint(&model, &path).map_err(|e| e.to_string())?;
    let loaded = npnet::model::load_checkpoint(&path).map_err(|e| e.to_string())?;
    let again = dir.path().join("b.npnt");
    npnet::model::save_checkpoint(&loaded, &again).map_err(|e| e.to_string())?;
    let (a, b) = (
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap(),
    );
    ensure!(a == b, "save -> load -> save differs");

    let mut magic = a.clone();
    magic[..4].copy_from_slice(b"XXXX");
    let mut version = a.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    let truncated = &a[..a.len() / 2];
    let errors = [
        read_checkpoint(&magic).err(),
        read_checkpoint(&version).err(),
        read_checkpoint(truncated).err(),
    ];
    ensure!(
        matches!(errors[0], Some(CheckpointError::BadMagic(_))),
        "bad magic gave {:?}",
        errors[0]
    );
    ensure!(
        matches!(errors[1], Some(CheckpointError::UnsupportedVersion(2))),
        "bad version gave {:?}",
        errors[1]
    );
    ensure!(
        matches!(errors[2], Some(CheckpointError::Truncated(_))),
        "truncation gave {:?}",
        errors[2]
    );
    Ok(format!(
        "{} bytes round trip identical; magic/version/truncation errors distinct",
        a.len()
    ))
}

fn ablation(root: &Path) -> Outcome {
    write_generic_dataset(&synthetic_rectangles(6, Size::new(16, 16), 1, 11), root)
        .map_err(|e| e.to_string())?;
    let root_str = root.to_str().unwrap();
    let args = [
        "ablate",
        "--data-dir",
        root_str,
        "--layout",
        "generic",
        "--widths",
        "8,8,16",
        "--reduction",
        "4",
        "--epochs",
        "3",
        "--split-fraction",
        "0.5",
    ];
    let (code, out, err) = npnet(&args);
    ensure!(code == 0, "ablate exited {code}: {err}");
    let lines: Vec<&str> = out.lines().collect();
    ensure!(
        lines.len() == 4 && lines[0] == "attention\tIOU\tDice",
        "unexpected table:\n{out}"
    );
    for (line, label) in lines[1..].iter().zip(["no", "senet", "cam"]) {
        let f: Vec<&str> = line.split('\t').collect();
        ensure!(
            f.len() == 3 && f[0] == label,
            "row {line:?} should be {label}"
        );
        for v in &f[1..] {
            let v: f64 = v.parse().map_err(|e| format!("{line}: {e}"))?;
            ensure!((0.0..=1.0).contains(&v), "{line}: score out of range");
        }
    }

    let cfg = ModelConfig::default()
        .with_widths([8, 16, 32])
        .with_reduction(4);
    let se =
        Model::new(cfg.clone().with_attention(AttentionKind::Se), 1).map_err(|e| e.to_string())?;
    let mut cam =
        Model::new(cfg.with_attention(AttentionKind::Cam), 2).map_err(|e| e.to_string())?;
    for (dst, src) in cam
        .store_mut()
        .params_mut()
        .iter_mut()
        .zip(se.store().params())
    {
        ensure!(
            dst.name == src.name && dst.numel() == src.numel(),
            "layout differs at {}",
            dst.name
        );
        dst.value.data_mut().copy_from_slice(src.value.data());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::from_vec(
        [2, 3, 32, 32],
        (0..6144).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let diff = se
        .forward(&x)
        .unwrap()
        .max_abs_diff(&cam.forward(&x).unwrap());
    ensure!(diff <= 1e-6, "se vs cam max abs diff {diff:e}");
    Ok(format!(
        "three-row table emitted; se/cam max abs diff {diff:e}"
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let fixture = dir.path().join("fixture");
    let criteria: Vec<(&str, Criterion)> = vec![
        ("efficiency table", Box::new(efficiency_table)),
        ("counting oracle", Box::new(counting_oracle)),
        ("gradient suite", Box::new(gradient_suite)),
        ("overfit", Box::new(overfit)),
        ("metric oracle", Box::new(metric_oracle)),
        ("shape invariants", Box::new(shapes)),
        ("checkpoint round trip", Box::new(checkpoint)),
        ("ablation harness", Box::new(move || ablation(&fixture))),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("criterion 9: SKIP  dataset-level IoU/Dice (non-gating; needs the real datasets and full-length runs)");
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
