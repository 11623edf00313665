//! Acceptance checks, one line per criterion. Runs sequentially (no libtest
//! harness) so the timed criteria are not sharing the CPU with each other.

#![allow(clippy::field_reassign_with_default)]

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use aad_cli::{cmd_band_sweep, cmd_evaluate, cmd_synth_pseudo, cmd_train, Session};
use aad_core::anomaly::{
    decide, euclidean_distance, fit_gamma, fit_reference, gamma_quantile, Decision, GammaParams,
    Metric, ReferenceModel,
};
use aad_core::augment::{
    draw_lambda, mixup_with, pitch_shift, spec_augment, AugmentConfig, LabeledBatch,
};
use aad_core::corpus::{generate_synthetic_corpus, AudioClip, SynthConfig, SynthCounts};
use aad_core::dsp::{band_crop, segment_clip, stft, FrequencyBand, MelSpectrogram, N_MELS};
use aad_core::metrics::{auc, pauc, ReportFormat, ScoredSet, StratumDomain};
use aad_core::net::{gradient_check, LayerKind};
use aad_core::pipeline::PipelineConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn identity_reference(d: usize) -> ReferenceModel {
    ReferenceModel::from_parts(
        Metric::Mahalanobis,
        vec![0.0; d],
        DMatrix::identity(d, d),
        0.0,
        GammaParams {
            shape: 1.0,
            scale: 1.0,
        },
    )
    .unwrap()
}

fn distance_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0f64;
    for d in [2, 4, 64] {
        let mut r = identity_reference(d);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let m: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            r.mean = m.clone();
            let e = euclidean_distance(&x, &m).unwrap().sqrt();
            worst = worst.max((r.mahalanobis(&x).unwrap() - e).abs());
        }
    }
    outcome(
        worst < 1e-9,
        format!("max |mahalanobis - sqrt(euclidean)| = {worst:.2e} over 3000 pairs"),
    )
}

fn gamma_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Gamma::new(2.0, 1.5).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
    let p = fit_gamma(&xs).unwrap();
    let e = Exp::new(1.0 / 1.5).unwrap();
    let ys: Vec<f64> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
    let pe = fit_gamma(&ys).unwrap();
    let ok = (p.shape / 2.0 - 1.0).abs() <= 0.05
        && (p.scale / 1.5 - 1.0).abs() <= 0.05
        && (pe.shape - 1.0).abs() <= 0.05;
    outcome(
        ok,
        format!(
            "Gamma(2, 1.5) -> k {:.4}, theta {:.4}; exponential -> k {:.4}",
            p.shape, p.scale, pe.shape
        ),
    )
}

fn quantile_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_cdf, mut worst_exp) = (0f64, 0f64);
    for _ in 0..50 {
        let p = GammaParams::new(rng.gen_range(0.2..20.0), rng.gen_range(0.01..10.0)).unwrap();
        let theta = rng.gen_range(0.01..10.0);
        let exp = GammaParams::new(1.0, theta).unwrap();
        for q in [0.85, 0.9, 0.95] {
            let x = gamma_quantile(&p, q).unwrap();
            worst_cdf = worst_cdf.max((p.cdf(x) - q).abs());
            let closed = -theta * (1.0 - q).ln();
            worst_exp = worst_exp.max((gamma_quantile(&exp, q).unwrap() - closed).abs());
        }
    }
    outcome(
        worst_cdf < 1e-8 && worst_exp < 1e-9,
        format!(
            "max |cdf(quantile) - q| = {worst_cdf:.2e}; max exponential error = {worst_exp:.2e}"
        ),
    )
}

fn pair_count_auc(set: &ScoredSet) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &la) in set.scores.iter().zip(&set.labels) {
        for (n, &ln) in set.scores.iter().zip(&set.labels) {
            if la && !ln {
                den += 1.0;
                num += if a > n {
                    1.0
                } else if a == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut worst_p1) = (0f64, 0f64);
    for _ in 0..500 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores = (0..n)
            .map(|_| f64::from(rng.gen_range(0..levels)) * 0.1)
            .collect();
        let set = ScoredSet::new(scores, labels).unwrap();
        let a = auc(&set).unwrap();
        worst = worst.max((a - pair_count_auc(&set)).abs());
        worst_p1 = worst_p1.max((pauc(&set, 1.0).unwrap() - a).abs());
    }
    outcome(
        worst < 1e-12 && worst_p1 < 1e-12,
        format!("max |auc - pair count| = {worst:.2e}; max |pauc(1) - auc| = {worst_p1:.2e} over 500 sets"),
    )
}

fn gradient_checks() -> (Outcome, Duration) {
    let t = Instant::now();
    let mut worst = (0f64, String::new());
    for (i, kind) in LayerKind::ALL.iter().enumerate() {
        let err = gradient_check(*kind, &kind.default_shape(), 100 + i as u64);
        if err > worst.0 || err.is_nan() {
            worst = (err, format!("{kind:?}"));
        }
    }
    let elapsed = t.elapsed();
    let ok = worst.0 < 1e-4 && elapsed < Duration::from_secs(30);
    (
        outcome(
            ok,
            format!(
                "{} layer kinds, worst {} at {:.2e}",
                LayerKind::ALL.len(),
                worst.1,
                worst.0
            ),
        ),
        elapsed,
    )
}

fn tone(freq: f64, seconds: f64) -> AudioClip {
    let n = (seconds * 16_000.0) as usize;
    AudioClip::new(
        (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
            .collect(),
        16_000,
    )
    .unwrap()
}

fn dsp_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = AudioClip::new(
        (0..160_000).map(|_| rng.gen_range(-0.5f32..0.5)).collect(),
        16_000,
    )
    .unwrap();
    let spec = stft(&noise).unwrap();
    let segments = segment_clip(&noise).unwrap().len();
    let cropped = band_crop(&spec, &FrequencyBand::new(3000.0, 6000.0)).unwrap();
    let kept: Vec<usize> = (0..cropped.n_bins())
        .filter(|&k| cropped.bin(k).iter().any(|&v| v != 0.0))
        .collect();
    let in_band_intact = (384..=768).all(|k| cropped.bin(k) == spec.bin(k));
    let out_energy: f64 = (0..cropped.n_bins())
        .filter(|k| !(384..=768).contains(k))
        .flat_map(|k| cropped.bin(k).iter().map(|&v| f64::from(v) * f64::from(v)))
        .sum();
    let ok = spec.n_frames() == 155
        && segments == 7
        && kept.first() == Some(&384)
        && kept.last() == Some(&768)
        && kept.len() == 385
        && in_band_intact
        && out_energy == 0.0;
    outcome(
        ok,
        format!(
            "{} frames, {segments} segments, kept bins {}..={}, out-of-band energy {out_energy}",
            spec.n_frames(),
            kept.first().unwrap_or(&0),
            kept.last().unwrap_or(&0)
        ),
    )
}

fn augmentation_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = AugmentConfig::default();
    let frames = 38;
    let spec = MelSpectrogram::new(
        (0..N_MELS * frames)
            .map(|_| rng.gen_range(-5.0..5.0))
            .collect(),
        frames,
    )
    .unwrap();
    let (masked, at) = spec_augment(&spec, &cfg, &mut rng).unwrap();
    let floor = MelSpectrogram::floor();
    let mut mask_ok = true;
    for m in 0..N_MELS {
        for f in 0..frames {
            let in_mask = (at.freq_start..at.freq_start + 10).contains(&m)
                || (at.time_start..at.time_start + 10).contains(&f);
            let v = masked.get(m, f);
            mask_ok &= if in_mask {
                v == floor
            } else {
                v == spec.get(m, f)
            };
        }
    }

    let specs: Vec<MelSpectrogram> = (0..6)
        .map(|_| {
            MelSpectrogram::new(
                (0..N_MELS * frames)
                    .map(|_| rng.gen_range(-5.0..5.0))
                    .collect(),
                frames,
            )
            .unwrap()
        })
        .collect();
    let batch = LabeledBatch::one_hot(specs, &[0, 1, 2, 0, 1, 2], 3);
    let mut drawn = Vec::new();
    let mixed = mixup_with(&batch, &mut rng, |r| {
        let l = draw_lambda(&cfg, r);
        drawn.push(l);
        l
    })
    .unwrap();
    let simplex = mixed
        .labels
        .iter()
        .all(|l| l.iter().all(|&p| p >= -1e-6) && (l.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    // Each output must be lambda * x_i + (1 - lambda) * x_j for some partner j.
    let convex = mixed
        .specs
        .iter()
        .zip(&mixed.labels)
        .enumerate()
        .all(|(i, (s, y))| {
            let lam = drawn[i];
            (0..batch.len()).any(|j| {
                s.values.iter().enumerate().all(|(c, &v)| {
                    let want = lam * f64::from(batch.specs[i].values[c])
                        + (1.0 - lam) * f64::from(batch.specs[j].values[c]);
                    v == want as f32
                }) && y.iter().enumerate().all(|(c, &v)| {
                    (v - (lam * batch.labels[i][c] + (1.0 - lam) * batch.labels[j][c])).abs()
                        <= 1e-12
                })
            })
        });

    let shifted = pitch_shift(&tone(1000.0, 2.0), 12.0).unwrap();
    let sp = stft(&shifted).unwrap();
    let peaks: Vec<usize> = (2..sp.n_frames() - 2).map(|f| sp.argmax_bin(f)).collect();
    let target = 256; // 2 kHz at 7.8125 Hz per bin
    let pitch_ok = peaks.iter().all(|&k| k.abs_diff(target) <= 1);

    outcome(
        mask_ok && simplex && convex && pitch_ok,
        format!(
            "mask exact: {mask_ok}; mixup convex: {convex}, simplex: {simplex}; +12 st peak bins {}..{} (2 kHz = {target})",
            peaks.iter().min().unwrap_or(&0),
            peaks.iter().max().unwrap_or(&0)
        ),
    )
}

fn experiment_config(dataset: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.dataset_root = dataset.to_path_buf();
    cfg.model.width_mult = 0.25;
    cfg.train.epochs = 20;
    cfg.train.seed = 0;
    cfg.augment.pseudo_audio = false;
    cfg
}

fn end_to_end(root: &Path) -> (Outcome, Duration) {
    let t = Instant::now();
    let synth = SynthConfig::default();
    let manifest = generate_synthetic_corpus(&synth, 7, root.join("data")).unwrap();
    let train = manifest.split(aad_core::corpus::Split::Train).count();
    let test = manifest.split(aad_core::corpus::Split::Test).count();
    let cfg = experiment_config(&root.join("data"));
    let mut s = Session::open(cfg, &root.join("out"), ReportFormat::Csv).unwrap();
    let focus = FrequencyBand::new(2000.0, 5000.0);
    let report = cmd_band_sweep(&mut s, &[focus]).unwrap();
    let full = FrequencyBand::full(16_000);
    let a_band = report
        .get(focus, StratumDomain::All, "auc")
        .unwrap_or(f64::NAN);
    let a_full = report
        .get(full, StratumDomain::All, "auc")
        .unwrap_or(f64::NAN);
    let elapsed = t.elapsed();
    let ok = train == 200
        && test == 40
        && a_band >= 0.90
        && a_band - a_full >= 0.05
        && elapsed < Duration::from_secs(600);
    (
        outcome(
            ok,
            format!(
                "{train} train / {test} test clips; AUC 2-5 kHz {a_band:.4} vs full band {a_full:.4} (margin {:.4})",
                a_band - a_full
            ),
        ),
        elapsed,
    )
}

fn thresholding() -> Outcome {
    // Softmax-like segment embeddings from three noisy logit clusters.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let logits: Vec<f64> = (0..3)
                .map(|c| if c == 0 { 3.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            logits.iter().map(|l| l.exp() / z).collect()
        })
        .collect();
    let r = fit_reference(&data, Metric::Mahalanobis).unwrap();
    let flagged = data
        .iter()
        .filter(|x| decide(r.distance(x).unwrap(), &r, 0.9).unwrap().0 == Decision::Anomaly)
        .count();
    let rate = flagged as f64 / data.len() as f64;
    outcome(
        (rate - 0.1).abs() <= 0.03,
        format!("{flagged} of 1000 train segments flagged at q = 0.9 ({rate:.3})"),
    )
}

fn run_once(dataset: &Path, out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut cfg = PipelineConfig::default();
    cfg.dataset_root = dataset.to_path_buf();
    cfg.model.width_mult = 0.25;
    cfg.train.epochs = 2;
    cfg.train.checkpoint_every = 1;
    cfg.train.seed = 3;
    let mut s = Session::open(cfg.clone(), out, ReportFormat::Csv).unwrap();
    cmd_train(&mut s).unwrap();
    cmd_evaluate(&mut s).unwrap();
    drop(s);
    let mut s = Session::open(cfg, out, ReportFormat::Markdown).unwrap();
    cmd_evaluate(&mut s).unwrap();
    let mut files = Vec::new();
    for name in [
        "report.csv",
        "report.md",
        "scores.csv",
        "references/section_00.json",
        "references/section_01.json",
    ] {
        files.push((name.to_string(), fs::read(out.join(name)).unwrap()));
    }
    files
}

fn determinism(root: &Path) -> Outcome {
    let synth = SynthConfig {
        counts: SynthCounts {
            train_source: 8,
            train_target: 2,
            test_normal: 2,
            test_anomaly: 2,
        },
        ..SynthConfig::default()
    };
    let data = root.join("data");
    generate_synthetic_corpus(&synth, 11, &data).unwrap();
    {
        let mut cfg = PipelineConfig::default();
        cfg.dataset_root = data.clone();
        let s = Session::open(cfg, &root.join("pseudo_out"), ReportFormat::Csv).unwrap();
        cmd_synth_pseudo(&s).unwrap();
    }
    let a = run_once(&data, &root.join("run_a"));
    let b = run_once(&data, &root.join("run_b"));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} artifacts ({bytes} bytes) identical across two train + evaluate runs",
                a.len()
            )
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn main() {
    aad_core::alloc::tune_allocator();
    std::env::remove_var("AAD_CACHE_DIR");
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut timed =
        |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome, limit: Option<Duration>| {
            let t = Instant::now();
            let mut o = f();
            let d = t.elapsed();
            if let Some(l) = limit {
                if d >= l {
                    o.pass = false;
                    o.detail
                        .push_str(&format!("; over the {:.0} s limit", l.as_secs_f64()));
                }
            }
            results.push((n, name, o, d));
        };
    timed(
        1,
        "distance identities",
        &mut distance_identities,
        Some(Duration::from_secs(1)),
    );
    timed(
        2,
        "gamma recovery",
        &mut gamma_recovery,
        Some(Duration::from_secs(5)),
    );
    timed(3, "quantile consistency", &mut quantile_consistency, None);
    timed(4, "auc oracle", &mut auc_oracle, None);
    timed(
        5,
        "gradient checks",
        &mut || gradient_checks().0,
        Some(Duration::from_secs(30)),
    );
    timed(6, "dsp arithmetic", &mut dsp_arithmetic, None);
    timed(
        7,
        "augmentation contracts",
        &mut augmentation_contracts,
        None,
    );
    let e2e = tmp.path().join("e2e");
    timed(
        8,
        "end-to-end synthetic band experiment",
        &mut || end_to_end(&e2e).0,
        Some(Duration::from_secs(600)),
    );
    timed(9, "thresholding behaviour", &mut thresholding, None);
    let det = tmp.path().join("det");
    timed(10, "determinism", &mut || determinism(&det), None);

    let mut failed = 0;
    for (n, name, o, d) in &results {
        println!(
            "criterion {n:>2} {} {name}: {} [{:.2} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            d.as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
