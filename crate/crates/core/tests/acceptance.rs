//! End-to-end acceptance checks. Runs without the libtest harness so that the
//! one-line verdict of every criterion is always printed.

mod common;

use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use coralgen::dataio::{read_manifest, save_image, write_manifest, ManifestRecord};
use coralgen::losses::{coral_loss, coral_loss_against, covariance, feature_loss, CoralTargets};
use coralgen::metrics::{coral_distances, MetricsConfig};
use coralgen::synth::{SynthesisTrace, Synthesizer};
use coralgen::weights::{random_weights, ScaleRule, WeightFile};
use coralgen::{CovNormalizer, LossConfig, Network, NetworkSpec, Shape, Tensor, WeightError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

/// Channel divisor for the 64x64 end-to-end runs.
const DESCENT_DIVISOR: usize = 4;
const DESCENT_SIZE: usize = 64;
const DESCENT_STEPS: usize = 300;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// gradient exactness

fn fd_gradient(net: &Network<f64>, cfg: &LossConfig, c: &Tensor<f64>, r: &Tensor<f64>, d: &Tensor<f64>) -> Vec<f64> {
    let synth = Synthesizer::new(net, preset_like(cfg.clone())).unwrap();
    let ct = synth.content_targets(c).unwrap();
    let st = synth.style_targets(r).unwrap();
    let h = 1e-5;
    (0..d.data().len())
        .map(|i| {
            let mut plus = d.clone();
            plus.data_mut()[i] += h;
            let mut minus = d.clone();
            minus.data_mut()[i] -= h;
            let fp = synth.evaluate(&plus, &ct, &st).unwrap().total;
            let fm = synth.evaluate(&minus, &ct, &st).unwrap().total;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn preset_like(loss: LossConfig) -> coralgen::synth::SynthesisConfig {
    coralgen::synth::SynthesisConfig {
        loss,
        ..Default::default()
    }
}

fn analytic_gradient<T: coralgen::Element>(
    net: &Network<T>,
    cfg: &LossConfig,
    c: &Tensor<T>,
    r: &Tensor<T>,
    d: &Tensor<T>,
) -> Vec<f64> {
    let synth = Synthesizer::new(net, preset_like(cfg.clone())).unwrap();
    let ct = synth.content_targets(c).unwrap();
    let st = synth.style_targets(r).unwrap();
    let (_, g) = synth.pixel_gradient(d, &ct, &st).unwrap();
    g.data().iter().map(|v| v.as_f64()).collect()
}

fn gradient_exactness() -> Verdict {
    let started = Instant::now();
    let shape = Shape::image(3, 8, 8);
    let cfg = three_conv_loss(2.0);
    let c = random_tensor::<f64>(shape, 1, 1.0);
    let r = random_tensor::<f64>(shape, 2, 1.0);
    let d = random_tensor::<f64>(shape, 3, 1.0);

    let net64 = three_conv_net::<f64>(11);
    let oracle = fd_gradient(&net64, &cfg, &c, &r, &d);
    let err64 = rel_error(&analytic_gradient(&net64, &cfg, &c, &r, &d), &oracle);

    let net32 = three_conv_net::<f32>(11);
    let (c32, r32, d32) = (c.cast::<f32>(), r.cast::<f32>(), d.cast::<f32>());
    let oracle32 = fd_gradient(&net32.cast::<f64>(), &cfg, &c32.cast(), &r32.cast(), &d32.cast());
    let err32 = rel_error(&analytic_gradient(&net32, &cfg, &c32, &r32, &d32), &oracle32);

    let elapsed = started.elapsed();
    verdict(
        err64 <= 1e-6 && err32 <= 1e-3 && elapsed < Duration::from_secs(10),
        format!("rel err f64 {err64:.2e} (<= 1e-6), f32 {err32:.2e} (<= 1e-3), {elapsed:.2?} (< 10s)"),
    )
}

// ---------------------------------------------------------------------------
// stationary fixed points

fn stationary_points() -> Verdict {
    let net = narrow_vgg(0);
    let cfg = LossConfig::default();
    let c = object_scene(32);
    let r = textured_scene(32, 4);
    let tapped = cfg.tapped_layers(net.spec()).unwrap();
    let cache_c = net.forward_covering(&c, tapped.iter().copied()).unwrap();
    let cache_r = net.forward_covering(&r, tapped.iter().copied()).unwrap();

    let feat_cc = feature_loss(&cache_c, &cache_c, &cfg).unwrap();
    let coral_same = coral_loss(&cache_r, &cache_r, &cfg).unwrap();

    // Spatially permuted activations share the covariance of the originals.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut permuted = std::collections::BTreeMap::new();
    for lw in &cfg.coral_layers {
        let act = cache_r.feature(&lw.layer, cfg.tap).unwrap();
        let s = act.shape();
        let mut order: Vec<usize> = (0..s.plane()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p = Tensor::from_fn(s, |_, ch, y, x| act.plane(0, ch)[order[y * s.w + x]]).unwrap();
        permuted.insert(lw.layer.clone(), covariance(&p, cfg.normalizer).unwrap());
    }
    let coral_perm = coral_loss_against(&cache_r, &CoralTargets::from_covariances(permuted), &cfg).unwrap();
    let coral_cr = coral_loss(&cache_c, &cache_r, &cfg).unwrap();

    let mut scfg = preset_config(20, cfg.lambda);
    scfg.noise.sigma = 0.0;
    let (out, _) = Synthesizer::new(&net, scfg).unwrap().synthesize(&c, &c).unwrap();
    let unchanged = out == c;

    let perm_rel = coral_perm / coral_cr;
    verdict(
        feat_cc == 0.0 && coral_same == 0.0 && perm_rel < 1e-12 && unchanged,
        format!(
            "feat(C,C) = {feat_cc}, coral(R,R) = {coral_same}, coral(permuted)/coral(C,R) = {perm_rel:.1e}, \
             synth(C,C,sigma=0) unchanged: {unchanged}"
        ),
    )
}

// ---------------------------------------------------------------------------
// covariance oracle

fn covariance_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let (h, w) = loop {
            let h = rng.random_range(1..=16usize);
            let w = rng.random_range(1..=16usize);
            if h * w <= 16 {
                break (h, w);
            }
        };
        let act = random_tensor::<f64>(Shape::image(n, h, w), rng.random(), 1.0);
        let rows: Vec<Vec<f64>> = (0..h * w)
            .map(|p| (0..n).map(|c| act.plane(0, c)[p]).collect())
            .collect();
        for (norm, k) in [(CovNormalizer::Channels, n), (CovNormalizer::Samples, h * w)] {
            let a = 1.0 / k as f64;
            let oracle = dense_covariance(&rows, a, a);
            let got = covariance(&act, norm).unwrap();
            for (x, y) in got.values().iter().zip(&oracle) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("20 instances, max abs deviation {worst:.1e} (<= 1e-12)"))
}

// ---------------------------------------------------------------------------
// descent, alignment

struct PresetRun {
    net: Network<f32>,
    content: Tensor<f32>,
    style: Tensor<f32>,
    image: Tensor<f32>,
    trace: SynthesisTrace,
    elapsed: Duration,
}

fn descent_net() -> Network<f32> {
    random_weights(NetworkSpec::vgg16_narrow(DESCENT_DIVISOR), 0, ScaleRule::FanIn)
}

fn preset_run() -> &'static PresetRun {
    static RUN: OnceLock<PresetRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let net = descent_net();
        let content = object_scene(DESCENT_SIZE);
        let style = textured_scene(DESCENT_SIZE, 1);
        let started = Instant::now();
        let cfg = preset_config(DESCENT_STEPS, LossConfig::default().lambda);
        let (image, trace) = Synthesizer::new(&net, cfg).unwrap().synthesize(&content, &style).unwrap();
        let elapsed = started.elapsed();
        PresetRun {
            net,
            content,
            style,
            image,
            trace,
            elapsed,
        }
    })
}

fn descent() -> Verdict {
    let run = preset_run();
    let ratio = run.trace.last().total / run.trace.initial().total;

    let content = object_scene(DESCENT_SIZE);
    let started = Instant::now();
    let (_, trace0) = Synthesizer::new(&run.net, preset_config(DESCENT_STEPS, 0.0))
        .unwrap()
        .synthesize(&content, &content)
        .unwrap();
    let elapsed = run.elapsed + started.elapsed();
    let feat_ratio = trace0.last().feat / trace0.initial().feat;
    verdict(
        ratio < 0.5 && feat_ratio < 0.01 && elapsed < Duration::from_secs(120),
        format!(
            "total final/initial {ratio:.2e} (< 0.5), lambda=0 feat final/initial {feat_ratio:.2e} (< 0.01), \
             {elapsed:.2?} (< 120s)"
        ),
    )
}

fn alignment() -> Verdict {
    let run = preset_run();
    let cfg = MetricsConfig::default();
    let before = coral_distances(&run.net, &[run.content.clone()], &[run.style.clone()], &cfg).unwrap();
    let after = coral_distances(&run.net, &[run.image.clone()], &[run.style.clone()], &cfg).unwrap();
    let mut closer = 0;
    let mut halved = 0;
    let mut parts = Vec::new();
    for (b, a) in before.iter().zip(&after) {
        let reduction = 1.0 - a.distance / b.distance;
        closer += usize::from(a.distance < b.distance);
        halved += usize::from(reduction >= 0.5);
        parts.push(format!("{} {:.0}%", b.layer, 100.0 * reduction));
    }
    verdict(
        closer == before.len() && halved >= 3,
        format!("{closer}/{} layers closer, {halved} halved (>= 3): {}", before.len(), parts.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// lambda monotonicity

fn lambda_monotonicity() -> Verdict {
    let net = descent_net();
    let content = object_scene(DESCENT_SIZE);
    let style = textured_scene(DESCENT_SIZE, 1);
    let lambdas = [1e-2, 1.0, 1e2, 1e4];
    let points = Synthesizer::new(&net, preset_config(DESCENT_STEPS, 1.0))
        .unwrap()
        .sweep_lambda(&content, &style, &lambdas)
        .unwrap();
    let ok = points
        .windows(2)
        .all(|w| w[1].coral <= 1.05 * w[0].coral && w[1].feat >= 0.95 * w[0].feat);
    let table: Vec<String> = points
        .iter()
        .map(|p| format!("{:e}: feat {:.3e} coral {:.3e}", p.lambda, p.feat, p.coral))
        .collect();
    verdict(ok, table.join("; "))
}

// ---------------------------------------------------------------------------
// receptive fields

fn receptive_fields() -> Verdict {
    let spec = NetworkSpec::vgg16();
    let want = [("conv1_2", 5), ("conv2_2", 14), ("conv3_2", 32), ("conv4_2", 76), ("conv5_2", 164)];
    let got: Vec<usize> = want.iter().map(|(l, _)| spec.receptive_field(l).unwrap()).collect();
    verdict(
        want.iter().zip(&got).all(|((_, w), g)| w == g),
        format!("conv1_2..conv5_2 = {got:?}"),
    )
}

// ---------------------------------------------------------------------------
// serialization

fn malformed_cases(good: &[u8]) -> Vec<(&'static str, Vec<u8>, fn(&WeightError) -> bool)> {
    let mut cases: Vec<(&'static str, Vec<u8>, fn(&WeightError) -> bool)> = Vec::new();
    let mut b = good.to_vec();
    b[0] = b'X';
    cases.push(("magic", b, |e| matches!(e, WeightError::BadMagic(_))));
    let mut b = good.to_vec();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    cases.push(("version", b, |e| matches!(e, WeightError::VersionMismatch { found: 2, .. })));
    cases.push(("truncated", good[..good.len() - 3].to_vec(), |e| matches!(e, WeightError::Truncated(_))));
    let mut b = good.to_vec();
    b.push(0);
    cases.push(("trailing", b, |e| matches!(e, WeightError::TrailingBytes(1))));
    // First entry header starts after magic, version, means and count.
    let name_len = u16::from_le_bytes([good[36], good[37]]) as usize;
    let ndim = good[38 + name_len] as usize;
    let mut b = good.to_vec();
    b[38 + name_len + 1 + 4 * ndim] = 7;
    cases.push(("dtype", b, |e| matches!(e, WeightError::UnsupportedDtype { code: 7, .. })));
    let mut b = good.to_vec();
    b[38] = 0xff;
    cases.push(("name", b, |e| matches!(e, WeightError::InvalidName)));
    cases
}

fn serialization() -> Verdict {
    let net = random_weights(NetworkSpec::vgg16_narrow(16), 5, ScaleRule::FanIn);
    let file = WeightFile::from_network(&net);
    let bytes = file.encode().unwrap();
    let decoded = WeightFile::decode(&bytes).unwrap();
    let weights_ok = decoded == file && decoded.encode().unwrap() == bytes;
    let rebound = decoded.into_network(NetworkSpec::vgg16_narrow(16)).unwrap();
    let bind_ok = rebound.weights() == net.weights();

    let mut rejected = Vec::new();
    let mut all_rejected = true;
    for (name, b, expected) in malformed_cases(&bytes) {
        let ok = WeightFile::decode(&b).as_ref().err().is_some_and(expected);
        all_rejected &= ok;
        rejected.push(format!("{name}:{}", if ok { "ok" } else { "WRONG" }));
    }
    let mut wrong_dims = file.clone();
    wrong_dims.entries[0].dims = vec![4, 4, 3, 3];
    wrong_dims.entries[0].values.resize(4 * 4 * 9, 0.0);
    let dims_ok = matches!(
        wrong_dims.into_network(NetworkSpec::vgg16_narrow(16)),
        Err(coralgen::Error::Weights(WeightError::DimMismatch { .. }))
    );
    let mut missing = file.clone();
    missing.entries.pop();
    let missing_ok = matches!(
        missing.into_network(NetworkSpec::vgg16_narrow(16)),
        Err(coralgen::Error::Weights(WeightError::MissingEntry(_)))
    );

    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    save_image(&object_scene(8), &img).unwrap();
    let records: Vec<ManifestRecord> = (0..3)
        .map(|i| ManifestRecord {
            output_path: img.clone(),
            content_path: img.clone(),
            style_path: img.clone(),
            label: format!("label{i}"),
            lambda: 1e3,
            seed: i,
            iterations: 500,
            final_feat: 0.1 + i as f64 / 3.0,
            final_coral: 1.0 / 7.0,
            feat_layers: vec!["conv3_2".into()],
            coral_layers: coralgen::losses::PRESET_CORAL_LAYERS.map(String::from).to_vec(),
        })
        .collect();
    let path = dir.path().join("m.jsonl");
    write_manifest(&path, &records).unwrap();
    let manifest_ok = read_manifest(&path).unwrap() == records;

    verdict(
        weights_ok && bind_ok && all_rejected && dims_ok && missing_ok && manifest_ok,
        format!(
            "weights byte-identical {weights_ok}, rebind {bind_ok}, manifest field-identical {manifest_ok}, \
             rejections [{} dims:{} missing:{}]",
            rejected.join(" "),
            if dims_ok { "ok" } else { "WRONG" },
            if missing_ok { "ok" } else { "WRONG" },
        ),
    )
}

// ---------------------------------------------------------------------------
// CLI determinism

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let content = dir.path().join("c.png");
    let style = dir.path().join("r.png");
    save_image(&object_scene(32), &content).unwrap();
    save_image(&textured_scene(32, 2), &style).unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub).join("d.png");
        std::fs::create_dir_all(out.parent().unwrap()).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_coralgen"))
            .args(["synth", "--random-weights", "3", "--width-divisor", "8", "--iterations", "30", "--seed", "42"])
            .arg("--content")
            .arg(&content)
            .arg("--style")
            .arg(&style)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        (status.status.success(), std::fs::read(&out).unwrap_or_default())
    };
    let (ok1, a) = run("first");
    let (ok2, b) = run("second");
    verdict(
        ok1 && ok2 && !a.is_empty() && a == b,
        format!("two runs exit ok {}, {} bytes, identical {}", ok1 && ok2, a.len(), a == b),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient exactness", gradient_exactness),
        ("stationary fixed points", stationary_points),
        ("covariance oracle", covariance_oracle),
        ("descent", descent),
        ("alignment surrogate", alignment),
        ("lambda monotonicity", lambda_monotonicity),
        ("receptive fields", receptive_fields),
        ("serialization", serialization),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
