// Scratch calibration harness; removed before release.

use std::time::Instant;

use gaitstr::eval::{evaluate_retrieval, mpjpe, FeatureIndex};
use gaitstr::refine::{CmaMode, GaitStrModel, ModelConfig, ModelVariant};
use gaitstr::skeleton::{inject_jitter, smooth_average, smooth_gaussian, GaitSample};
use gaitstr::synth::{generate_dataset, DatasetSpec};
use gaitstr::train::{
    embed_features, prepare_sample, MetricsLog, TrainConfig, TrainDataset, Trainer,
};

fn index_of(model: &GaitStrModel, samples: &[GaitSample], frames: usize) -> FeatureIndex {
    let features = embed_features(model, samples, frames).unwrap();
    FeatureIndex {
        features,
        labels: samples.iter().map(|s| s.identity).collect(),
        views: samples.iter().map(|s| s.view.clone()).collect(),
        conditions: samples.iter().map(|s| s.condition.clone()).collect(),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iterations: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let variant = match args.get(3).map(String::as_str) {
        Some("sil") => ModelVariant::SilhouetteOnly,
        Some("siljoints") => ModelVariant::SilhouetteJoints,
        _ => ModelVariant::Full,
    };
    let lambda_triplet: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let jitter: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let ref_scale: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let ref_start: u64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lr: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let wd: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let train_jitter_mag: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(jitter);
    let train_jitter_rate: f64 = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let spec = DatasetSpec {
        n_ids: 16,
        seqs_per_id: 4,
        frames: 60,
        views: vec!["090".into()],
        conditions: vec!["clean".into(), "carried".into(), "widened".into()],
        seed: 77,
    };
    let ds = generate_dataset(&spec).unwrap();
    let train_samples: Vec<GaitSample> = ds
        .samples
        .iter()
        .zip(ds.is_train.iter())
        .filter(|(_, &tr)| tr)
        .map(|(s, _)| s.clone())
        .collect();
    let test_samples: Vec<GaitSample> = ds
        .samples
        .iter()
        .zip(ds.is_train.iter())
        .filter(|(_, &tr)| !tr)
        .map(|(s, _)| s.clone())
        .collect();
    let data = TrainDataset::from_samples(train_samples).unwrap();

    let model_config = ModelConfig {
        variant,
        conv_channels: [6, 12, 24],
        feature_dim: 16,
        stgcn_hidden: vec![8, 8, 16, 16],
        decoder_channels: vec![16, 8, 8],
        cma_layers: 3,
        cma_hidden: 8,
        cma_mode: CmaMode::Both,
        num_classes: data.num_identities(),
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        lambda_triplet,
        iterations,
        seed,
        jitter_rate: train_jitter_rate,
        jitter_magnitude: train_jitter_mag,
        refinement_lr_scale: ref_scale,
        refinement_start: ref_start,
        refinement_weight_decay: wd,
        learning_rate: lr,
        log_interval: 25,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model_config, train_config).unwrap();
    println!(
        "params: {} tensors, {} elements",
        trainer.model.params.len(),
        trainer.model.params.total_elements()
    );

    let t0 = Instant::now();
    let mut log = MetricsLog::default();
    trainer.run(&data, &mut log).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "trained {iterations} iters in {dt:.1}s ({:.3}s/iter)",
        dt / iterations as f64
    );
    for r in &log.rows {
        println!(
            "iter {:4}  tri {:.4}  cls {:.4}  total {:.4}  train_r1 {:.3}",
            r.iteration, r.loss_triplet, r.loss_cls, r.loss_total, r.train_rank1
        );
    }

    // Clean test protocol: gallery = clean, probe = rest.
    let frames = trainer.train_config.frames;
    let prepared: Vec<GaitSample> = test_samples
        .iter()
        .map(|s| prepare_sample(s, frames, 0.0, 0.0, 0).unwrap())
        .collect();
    let idx = index_of(&trainer.model, &prepared, frames);
    let gallery_rows: Vec<usize> = (0..idx.len())
        .filter(|&i| idx.conditions[i] == "clean")
        .collect();
    let probe_rows: Vec<usize> = (0..idx.len())
        .filter(|&i| idx.conditions[i] != "clean")
        .collect();
    let report = evaluate_retrieval(&idx.select(&probe_rows), &idx.select(&gallery_rows)).unwrap();
    println!(
        "clean test rank1 {:.3} map {:.3} minp {:.3}",
        report.rank1(),
        report.map,
        report.minp
    );

    // Jittered probe skeletons.
    let jittered: Vec<GaitSample> = prepared
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (j, _) = inject_jitter(&s.joints, 0.1, 0.1, 1000 + i as u64).unwrap();
            GaitSample {
                joints: j,
                ..s.clone()
            }
        })
        .collect();
    let idx_j = index_of(&trainer.model, &jittered, frames);
    let report_j =
        evaluate_retrieval(&idx_j.select(&probe_rows), &idx_j.select(&gallery_rows)).unwrap();
    println!("jitter test rank1 {:.3}", report_j.rank1());

    // Refinement quality versus smoothing baselines, split into the
    // corrupted and untouched coordinate subsets.
    if variant == ModelVariant::Full {
        let mut m_raw = 0.0;
        let mut m_ref = 0.0;
        let mut m_avg = 0.0;
        let mut m_gau = 0.0;
        let mut corr_raw = 0.0;
        let mut corr_ref = 0.0;
        let mut clean_ref = 0.0;
        let mut n_corr = 0usize;
        let mut n_clean = 0usize;
        for (i, (clean, jit)) in prepared.iter().zip(jittered.iter()).enumerate() {
            m_raw += mpjpe(&jit.joints, &clean.joints).unwrap();
            let (refined, _) = trainer.model.refine(jit).unwrap();
            m_ref += mpjpe(&refined, &clean.joints).unwrap();
            m_avg += mpjpe(&smooth_average(&jit.joints, 3).unwrap(), &clean.joints).unwrap();
            m_gau +=
                mpjpe(&smooth_gaussian(&jit.joints, 3, 1.0).unwrap(), &clean.joints).unwrap();

            let (_, mask) = inject_jitter(&clean.joints, 0.1, 0.1, 1000 + i as u64).unwrap();
            let corrupted: std::collections::HashSet<(usize, usize)> =
                mask.pairs.iter().copied().collect();
            for f in 0..clean.joints.frames() {
                for j in 0..13 {
                    let d = |a: &gaitstr::skeleton::JointSequence| {
                        let dx = a.data[[f, j, 0]] - clean.joints.data[[f, j, 0]];
                        let dy = a.data[[f, j, 1]] - clean.joints.data[[f, j, 1]];
                        (dx * dx + dy * dy).sqrt()
                    };
                    if corrupted.contains(&(f, j)) {
                        corr_raw += d(&jit.joints);
                        corr_ref += d(&refined);
                        n_corr += 1;
                    } else {
                        clean_ref += d(&refined);
                        n_clean += 1;
                    }
                }
            }
        }
        let n = prepared.len() as f64;
        println!(
            "mpjpe raw {:.5} refined {:.5} avg {:.5} gauss {:.5}",
            m_raw / n,
            m_ref / n,
            m_avg / n,
            m_gau / n
        );
        println!(
            "split: corrupted raw {:.5} -> refined {:.5} ({} pts); untouched refined drift {:.5} ({} pts)",
            corr_raw / n_corr as f64,
            corr_ref / n_corr as f64,
            n_corr,
            clean_ref / n_clean as f64,
            n_clean
        );
    }
}
