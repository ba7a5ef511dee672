//! Acceptance gate: every release-blocking behavior as one test each,
//! printing a `criterion N: PASS` line with the measured values.
//!
//! Criteria 4-8 share trained models (three seeds each of the full model,
//! the silhouette-only model and the silhouette+joints model); the first
//! test to need them trains the lot once.
//!
//! Run with `cargo test -p gaitstr --test acceptance -- --nocapture` to see
//! the lines.

use std::collections::HashSet;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use gaitstr::eval::{
    evaluate_retrieval, l2_retrieve, map_minp, mpjpe, rank_k, view_matrix_eval, FeatureIndex,
};
use gaitstr::nn::params::Session;
use gaitstr::nn::{arr, fd, Arr, Tape};
use gaitstr::refine::{CmaMode, GaitStrModel, ModelConfig, ModelVariant};
use gaitstr::skeleton::{
    bones_to_joints, inject_jitter, joints_to_bones, normalize_skeleton, smooth_average,
    smooth_gaussian, GaitSample, JointSequence, SilhouetteSequence,
};
use gaitstr::synth::{generate_dataset, DatasetSpec};
use gaitstr::topology::synth13;
use gaitstr::train::{
    classification_loss, embed_features, evaluate_batch, prepare_sample, sample_batch,
    triplet_loss, BatchEvaluation, GradMode, MetricsLog, TrainConfig, TrainDataset, Trainer,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// Shared desk-scale experiment recipe (criteria 4-8).
// ---------------------------------------------------------------------

const RUN_SEEDS: [u64; 3] = [11, 12, 13];
const FRAMES: usize = 30;
const TEST_JITTER_RATE: f64 = 0.1;
const TEST_JITTER_MAGNITUDE: f64 = 0.1;

fn desk_dataset_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_ids: 16,
        seqs_per_id: 4,
        frames: 60,
        views: vec!["090".into()],
        conditions: vec!["clean".into(), "carried".into(), "widened".into()],
        seed,
    }
}

fn desk_model_config(variant: ModelVariant, num_classes: usize) -> ModelConfig {
    ModelConfig {
        variant,
        conv_channels: [6, 12, 24],
        feature_dim: 16,
        hpp_scale: 5,
        stgcn_hidden: vec![8, 8, 16, 16],
        decoder_channels: vec![16, 8, 8],
        cma_layers: 3,
        cma_hidden: 8,
        cma_mode: CmaMode::Both,
        include_prerefine_bone: true,
        num_classes,
        ..ModelConfig::default()
    }
}

fn desk_train_config(seed: u64, lambda_triplet: f64) -> TrainConfig {
    TrainConfig {
        lambda_triplet,
        lambda_cls: 1.0,
        margin: 0.2,
        batch_p: 4,
        batch_k: 2,
        frames: FRAMES,
        learning_rate: 3e-3,
        decay_steps: vec![],
        decay_factor: 0.1,
        iterations: 500,
        seed,
        jitter_rate: TEST_JITTER_RATE,
        jitter_magnitude: TEST_JITTER_MAGNITUDE,
        refinement_lr_scale: 0.05,
        refinement_start: 350,
        refinement_weight_decay: 2e-3,
        log_interval: 100,
        ..TrainConfig::default()
    }
}

struct SeedRun {
    trainer: Trainer,
    log: MetricsLog,
    test_samples: Vec<GaitSample>,
}

struct SharedRuns {
    full: Vec<SeedRun>,
    sil_only: Vec<SeedRun>,
    sil_joints: Vec<SeedRun>,
    lambda_small: Vec<SeedRun>,
    full_wall_seconds: f64,
}

fn split_dataset(seed: u64) -> (TrainDataset, Vec<GaitSample>) {
    let ds = generate_dataset(&desk_dataset_spec(seed)).expect("dataset");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, &tr) in ds.samples.iter().zip(ds.is_train.iter()) {
        if tr {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    (TrainDataset::from_samples(train).expect("train split"), test)
}

fn train_run(seed: u64, variant: ModelVariant, lambda_triplet: f64) -> SeedRun {
    let (train_data, test_samples) = split_dataset(seed);
    let model_config = desk_model_config(variant, train_data.num_identities());
    let mut trainer =
        Trainer::new(model_config, desk_train_config(seed, lambda_triplet)).expect("trainer");
    let mut log = MetricsLog::default();
    trainer.run(&train_data, &mut log).expect("training");
    SeedRun {
        trainer,
        log,
        test_samples,
    }
}

fn runs() -> &'static SharedRuns {
    static RUNS: OnceLock<SharedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t0 = Instant::now();
        let full: Vec<SeedRun> = RUN_SEEDS
            .iter()
            .map(|&s| train_run(s, ModelVariant::Full, 1.0))
            .collect();
        let full_wall_seconds = t0.elapsed().as_secs_f64();
        let sil_only: Vec<SeedRun> = RUN_SEEDS
            .iter()
            .map(|&s| train_run(s, ModelVariant::SilhouetteOnly, 1.0))
            .collect();
        let sil_joints: Vec<SeedRun> = RUN_SEEDS
            .iter()
            .map(|&s| train_run(s, ModelVariant::SilhouetteJoints, 1.0))
            .collect();
        let lambda_small: Vec<SeedRun> = RUN_SEEDS
            .iter()
            .map(|&s| train_run(s, ModelVariant::Full, 0.01))
            .collect();
        SharedRuns {
            full,
            sil_only,
            sil_joints,
            lambda_small,
            full_wall_seconds,
        }
    })
}

fn feature_index(run: &SeedRun, samples: &[GaitSample]) -> FeatureIndex {
    let features = embed_features(&run.trainer.model, samples, FRAMES).expect("embedding");
    FeatureIndex {
        features,
        labels: samples.iter().map(|s| s.identity).collect(),
        views: samples.iter().map(|s| s.view.clone()).collect(),
        conditions: samples.iter().map(|s| s.condition.clone()).collect(),
    }
}

/// Clean-gallery protocol rank-1 on the unseen test identities.
fn test_rank1(run: &SeedRun, jitter_seed: Option<u64>) -> f64 {
    let samples: Vec<GaitSample> = match jitter_seed {
        None => run.test_samples.clone(),
        Some(seed) => jittered_test_samples(run, seed),
    };
    let idx = feature_index(run, &samples);
    let gallery: Vec<usize> = (0..idx.len())
        .filter(|&i| idx.conditions[i] == "clean")
        .collect();
    let probe: Vec<usize> = (0..idx.len())
        .filter(|&i| idx.conditions[i] != "clean")
        .collect();
    let report = evaluate_retrieval(&idx.select(&probe), &idx.select(&gallery)).expect("eval");
    report.rank1()
}

fn jittered_test_samples(run: &SeedRun, seed: u64) -> Vec<GaitSample> {
    run.test_samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (j, _) = inject_jitter(
                &s.joints,
                TEST_JITTER_RATE,
                TEST_JITTER_MAGNITUDE,
                gaitstr::seed::mix(seed, &[i as u64]),
            )
            .expect("jitter");
            GaitSample {
                joints: j,
                ..s.clone()
            }
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------
// Criterion 1: structural identities.
// ---------------------------------------------------------------------

#[test]
fn criterion_1_structural_identities() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    // Joints <-> bones round trip within 1e-9.
    for _ in 0..20 {
        let mut data = Array3::zeros((5, 13, 2));
        for v in data.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let j = JointSequence::new(data, synth13()).unwrap();
        let b = joints_to_bones(&j);
        let back = bones_to_joints(&b, &j.root_positions()).unwrap();
        for (a, e) in back.data.iter().zip(j.data.iter()) {
            assert!((a - e).abs() <= 1e-9, "round trip exceeded 1e-9");
        }
    }

    // Normalization idempotence within 1e-9.
    for _ in 0..20 {
        let mut data = Array3::zeros((4, 13, 2));
        for v in data.iter_mut() {
            *v = rng.random_range(-3.0..3.0);
        }
        let j = JointSequence::new(data, synth13()).unwrap();
        let n1 = normalize_skeleton(&j).unwrap();
        let n2 = normalize_skeleton(&n1).unwrap();
        for (a, b) in n2.data.iter().zip(n1.data.iter()) {
            assert!((a - b).abs() <= 1e-9, "normalization not idempotent");
        }
    }

    // Silhouette encoding ignores frame order and duplication exactly.
    let mut store = gaitstr::nn::params::ParamStore::new();
    let mut prng = ChaCha8Rng::seed_from_u64(5);
    let enc = gaitstr::encoders::SilhouetteEncoder::new(
        &mut store, &mut prng, [3, 4, 6], 5, 8, "sil",
    )
    .unwrap();
    let mut mask = Array3::zeros((4, 64, 44));
    for v in mask.iter_mut() {
        *v = u8::from(rng.random_bool(0.35));
    }
    let sil = SilhouetteSequence::new(mask).unwrap();
    let encode = |frames: &[usize]| {
        let mut data = Array3::zeros((frames.len(), 64, 44));
        for (i, &f) in frames.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), i)
                .assign(&sil.data.index_axis(ndarray::Axis(0), f));
        }
        let s = SilhouetteSequence::new(data).unwrap();
        let mut sess = Session::new(&store);
        let input = sess.input(gaitstr::encoders::SilhouetteEncoder::to_input(&s));
        let out = enc.forward(&mut sess, input).unwrap();
        sess.tape.value(out).clone()
    };
    let base = encode(&[0, 1, 2, 3]);
    assert_eq!(base, encode(&[2, 0, 3, 1]), "permutation changed encoding");
    assert_eq!(
        base,
        encode(&[0, 0, 1, 1, 2, 2, 3, 3]),
        "duplication changed encoding"
    );

    // Zero-initialized refinement degenerates to the baseline bit-for-bit.
    let mut model = GaitStrModel::new(
        ModelConfig {
            variant: ModelVariant::Full,
            conv_channels: [2, 3, 4],
            feature_dim: 6,
            stgcn_hidden: vec![4],
            decoder_channels: vec![4, 4, 4],
            cma_layers: 3,
            cma_hidden: 4,
            num_classes: 2,
            ..ModelConfig::default()
        },
        77,
    )
    .unwrap();
    model.zero_refinement();
    let params = gaitstr::synth::identity_params(42, 0);
    let mut sample = gaitstr::synth::generate_walk(&params, 8, "090", "clean", 3).unwrap();
    sample.identity = 0;
    let (j_refined, b_refined) = model.refine(&sample).unwrap();
    assert_eq!(j_refined.data, sample.joints.data, "X' must equal X exactly");
    let bones = joints_to_bones(&sample.joints);
    for (a, e) in b_refined.iter().zip(bones.data.iter()) {
        assert_eq!(*a, *e, "B' must equal B exactly");
    }
    let bundle = model.embed(&sample).unwrap();
    let f_j = bundle.joints.unwrap();
    let f_b = bundle.bones.unwrap();
    for ch in 0..6 {
        for row in 0..16 {
            assert_eq!(bundle.feature[[row, ch]], bundle.silhouette[[row, ch]]);
        }
        assert_eq!(bundle.feature[[16, ch]], f_j[[0, ch]]);
        assert_eq!(bundle.feature[[17, ch]], f_b[[0, ch]]);
        assert_eq!(bundle.feature[[18, ch]], f_j[[0, ch]]);
        assert_eq!(bundle.feature[[19, ch]], f_b[[0, ch]]);
    }

    let dt = started.elapsed().as_secs_f64();
    assert!(dt < 30.0, "criterion 1 took {dt:.1}s, budget 30s");
    println!("criterion 1: PASS — structural identities hold ({dt:.1}s)");
}

// ---------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite.
// ---------------------------------------------------------------------

fn micro_batch(t: usize, n: usize) -> (Vec<GaitSample>, Vec<u32>, Vec<usize>) {
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    for i in 0..n {
        let id = (i / 2) as u32;
        let params = gaitstr::synth::identity_params(900, id);
        let mut s =
            gaitstr::synth::generate_walk(&params, t, "090", "clean", 50 + i as u64).unwrap();
        s.identity = id;
        samples.push(s);
        ids.push(id);
    }
    let classes: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    (samples, ids, classes)
}

fn micro_model_config() -> ModelConfig {
    ModelConfig {
        variant: ModelVariant::Full,
        conv_channels: [2, 3, 4],
        feature_dim: 8,
        hpp_scale: 5,
        stgcn_hidden: vec![4, 4],
        decoder_channels: vec![6, 4, 4],
        cma_layers: 3,
        cma_hidden: 4,
        cma_mode: CmaMode::Both,
        include_prerefine_bone: true,
        num_classes: 2,
        ..ModelConfig::default()
    }
}

/// Randomize every parameter so zero-initialized tensors also get checked
/// at a generic point.
fn randomize_params(model: &mut GaitStrModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in model.params.ids().collect::<Vec<_>>() {
        model
            .params
            .get_mut(id)
            .mapv_inplace(|v| if v == 0.0 { rng.random_range(-0.05..0.05) } else { v });
    }
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();

    // Every tape operation against full-coordinate finite differences.
    op_gradient_suite();

    // End-to-end: combined loss on a micro model (t=4, K_J=13, C=8).
    let (samples, ids, classes) = micro_batch(4, 4);
    let mut model = GaitStrModel::new(micro_model_config(), 7).unwrap();
    randomize_params(&mut model, 8);

    let eval = evaluate_batch(
        &model,
        &samples,
        &ids,
        &classes,
        1.0,
        1.0,
        0.2,
        GradMode::ParamsAndInputs,
    )
    .unwrap();
    let analytic = eval.param_grads.as_ref().unwrap();
    let loss_of = |m: &GaitStrModel| -> f64 {
        evaluate_batch(m, &samples, &ids, &classes, 1.0, 1.0, 0.2, GradMode::None)
            .unwrap()
            .stats
            .total
    };

    let mut worst: (f64, String) = (0.0, String::new());
    let mut checked = 0usize;
    for id in model.params.ids().collect::<Vec<_>>() {
        let len = model.params.get(id).len();
        let name = model.params.name(id).to_string();
        for idx in fd::sample_coords(len, 6) {
            let x0 = model.params.get(id).as_slice().unwrap()[idx];
            let h = fd::step_for(x0);
            model.params.get_mut(id).as_slice_mut().unwrap()[idx] = x0 + h;
            let fp = loss_of(&model);
            model.params.get_mut(id).as_slice_mut().unwrap()[idx] = x0 - h;
            let fm = loss_of(&model);
            model.params.get_mut(id).as_slice_mut().unwrap()[idx] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let ana = analytic[id.0]
                .as_ref()
                .map_or(0.0, |g| g.as_slice().unwrap()[idx]);
            let rel = fd::relative_error(ana, numeric);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{idx}]"));
            }
            assert!(
                rel < 1e-4,
                "{name}[{idx}]: analytic {ana} vs numeric {numeric} (rel {rel})"
            );
            checked += 1;
        }
    }

    // Input gradients on the first sample's joints.
    let input_grads = eval.input_grads.as_ref().unwrap();
    let joints_grad = input_grads[0].1.as_ref().expect("joint input gradient");
    let mut batch_fd = samples.clone();
    for idx in fd::sample_coords(joints_grad.len(), 10) {
        let (f, rest) = (idx / 26, idx % 26);
        let (j, d) = (rest / 2, rest % 2);
        let x0 = batch_fd[0].joints.data[[f, j, d]];
        let h = fd::step_for(x0);
        batch_fd[0].joints.data[[f, j, d]] = x0 + h;
        let fp = evaluate_batch(&model, &batch_fd, &ids, &classes, 1.0, 1.0, 0.2, GradMode::None)
            .unwrap()
            .stats
            .total;
        batch_fd[0].joints.data[[f, j, d]] = x0 - h;
        let fm = evaluate_batch(&model, &batch_fd, &ids, &classes, 1.0, 1.0, 0.2, GradMode::None)
            .unwrap()
            .stats
            .total;
        batch_fd[0].joints.data[[f, j, d]] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let ana = joints_grad.as_slice().unwrap()[idx];
        let rel = fd::relative_error(ana, numeric);
        assert!(rel < 1e-4, "joints[{idx}]: {ana} vs {numeric} (rel {rel})");
        checked += 1;
    }

    let dt = started.elapsed().as_secs_f64();
    assert!(dt < 300.0, "criterion 2 took {dt:.1}s, budget 300s");
    println!(
        "criterion 2: PASS — {checked} coordinates checked, worst rel err {:.2e} at {} ({dt:.1}s)",
        worst.0, worst.1
    );
}

/// Full-coordinate finite-difference checks of each tape operation.
fn op_gradient_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut rand_arr = |shape: &[usize]| -> Arr {
        let n: usize = shape.iter().product();
        arr(
            shape,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };

    fn check(
        name: &str,
        build: impl Fn(&mut Tape, &[gaitstr::nn::Var]) -> gaitstr::nn::Var,
        inputs: &[Arr],
    ) {
        let weights = {
            let mut t = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            let mut wrng = ChaCha8Rng::seed_from_u64(1717);
            let n = t.value(out).len();
            let shape = t.value(out).shape().to_vec();
            Arc::new(arr(
                &shape,
                (0..n).map(|_| wrng.random_range(-1.0..1.0)).collect(),
            ))
        };
        let eval = |inputs: &[Arr]| -> f64 {
            let mut t = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            let s = t.weighted_sum(out, weights.clone());
            t.scalar(s)
        };
        let mut t = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vars);
        let s = t.weighted_sum(out, weights.clone());
        let grads = t.backward_scalar(s);
        for (vi, var) in vars.iter().enumerate() {
            let analytic = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Arr::zeros(inputs[vi].raw_dim()));
            let mut work: Vec<Arr> = inputs.to_vec();
            for idx in 0..inputs[vi].len() {
                let x0 = work[vi].as_slice().unwrap()[idx];
                let h = fd::step_for(x0);
                work[vi].as_slice_mut().unwrap()[idx] = x0 + h;
                let fp = eval(&work);
                work[vi].as_slice_mut().unwrap()[idx] = x0 - h;
                let fm = eval(&work);
                work[vi].as_slice_mut().unwrap()[idx] = x0;
                let numeric = (fp - fm) / (2.0 * h);
                let ana = analytic.as_slice().unwrap()[idx];
                let rel = fd::relative_error(ana, numeric);
                assert!(
                    rel < 1e-4,
                    "{name}: input {vi} coord {idx}: {ana} vs {numeric} (rel {rel})"
                );
            }
        }
    }

    let a34 = rand_arr(&[3, 4]);
    let b34 = rand_arr(&[3, 4]);
    check("add", |t, v| t.add(v[0], v[1]), &[a34.clone(), b34]);
    check("scale", |t, v| t.scale(v[0], -1.7), &[a34.clone()]);
    check("relu", |t, v| t.relu(v[0]), &[a34.clone()]);
    check("sum_all", |t, v| t.sum_all(v[0]), &[a34.clone()]);
    check("reshape", |t, v| t.reshape(v[0], &[2, 6]), &[a34.clone()]);
    check(
        "matmul",
        |t, v| t.matmul(v[0], v[1]),
        &[rand_arr(&[3, 5]), rand_arr(&[5, 2])],
    );
    check(
        "add_rowvec",
        |t, v| t.add_rowvec(v[0], v[1]),
        &[a34, rand_arr(&[4])],
    );
    check(
        "conv2d",
        |t, v| t.conv2d(v[0], v[1], v[2]),
        &[rand_arr(&[2, 4, 6, 3]), rand_arr(&[3, 3, 3, 2]), rand_arr(&[2])],
    );
    check(
        "maxpool2",
        |t, v| t.maxpool2(v[0]),
        &[rand_arr(&[2, 4, 6, 3])],
    );
    check(
        "max_frames",
        |t, v| t.max_frames(v[0]),
        &[rand_arr(&[3, 4, 2, 2])],
    );
    check(
        "strip_pool",
        |t, v| t.strip_pool(v[0], 2),
        &[rand_arr(&[4, 3, 2])],
    );
    check(
        "hpp_project",
        |t, v| t.hpp_project(v[0], v[1]),
        &[rand_arr(&[4, 3]), rand_arr(&[4, 3, 2])],
    );
    let adj = Arc::new(Array2::from_shape_fn((3, 3), |(i, j)| {
        0.15 + 0.07 * (i * 3 + j) as f64
    }));
    check(
        "graph_mix",
        move |t, v| t.graph_mix(v[0], adj.clone()),
        &[rand_arr(&[4, 3, 2])],
    );
    check(
        "temporal_conv",
        |t, v| t.temporal_conv(v[0], v[1], v[2], 9),
        &[rand_arr(&[5, 3, 2]), rand_arr(&[9, 2, 3]), rand_arr(&[3])],
    );
    check("mean_tk", |t, v| t.mean_tk(v[0]), &[rand_arr(&[4, 2, 3])]);
    check(
        "mean_nodes",
        |t, v| t.mean_nodes(v[0]),
        &[rand_arr(&[4, 2, 3])],
    );
    check(
        "tile_to_nodes",
        |t, v| t.tile_to_nodes(v[0], 2, 3),
        &[rand_arr(&[5])],
    );
    check(
        "broadcast_add_nodes",
        |t, v| t.broadcast_add_nodes(v[0], v[1]),
        &[rand_arr(&[4, 3, 2]), rand_arr(&[4, 2])],
    );
    check(
        "concat_last",
        |t, v| t.concat_last(&[v[0], v[1]]),
        &[rand_arr(&[2, 3, 2]), rand_arr(&[2, 3, 3])],
    );
    check(
        "concat_rows",
        |t, v| t.concat_rows(&[v[0], v[1]]),
        &[rand_arr(&[2, 3]), rand_arr(&[4, 3])],
    );
    check(
        "stack0",
        |t, v| t.stack0(&[v[0], v[1]]),
        &[rand_arr(&[3, 2]), rand_arr(&[3, 2])],
    );
    let labels = Arc::new(vec![0usize, 2, 1]);
    check(
        "softmax_cross_entropy",
        move |t, v| t.softmax_cross_entropy(v[0], labels.clone()),
        &[rand_arr(&[3, 3])],
    );
    let tlabels = Arc::new(vec![0u32, 0, 1, 1]);
    check(
        "batch_all_triplet",
        move |t, v| t.batch_all_triplet(v[0], tlabels.clone(), 0.3),
        &[rand_arr(&[4, 2, 3])],
    );
}

// ---------------------------------------------------------------------
// Criterion 3: metric oracles on random instances.
// ---------------------------------------------------------------------

#[test]
fn criterion_3_metric_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cases = 100;

    // Triplet loss against three nested loops.
    for case in 0..cases {
        let bsz = rng.random_range(4..7);
        let parts = rng.random_range(1..4);
        let c = rng.random_range(1..4);
        let labels: Vec<u32> = {
            // Two identities with at least two members each.
            let mut l: Vec<u32> = (0..bsz).map(|i| (i % 2) as u32).collect();
            for v in l.iter_mut().skip(4) {
                *v = rng.random_range(0..3);
            }
            l
        };
        let data: Vec<f64> = (0..bsz * parts * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let margin = rng.random_range(0.05..0.5);
        let got = triplet_loss(&arr(&[bsz, parts, c], data.clone()), &labels, margin).unwrap();
        let dist = |p: usize, a: usize, b: usize| -> f64 {
            (0..c)
                .map(|ch| {
                    let x = data[(a * parts + p) * c + ch];
                    let y = data[(b * parts + p) * c + ch];
                    (x - y) * (x - y)
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut expect = 0.0;
        for p in 0..parts {
            let mut sum = 0.0;
            let mut n = 0usize;
            for i in 0..bsz {
                for j in 0..bsz {
                    if i == j || labels[i] != labels[j] {
                        continue;
                    }
                    for k in 0..bsz {
                        if labels[k] == labels[i] {
                            continue;
                        }
                        let h = dist(p, i, j) - dist(p, i, k) + margin;
                        if h > 0.0 {
                            sum += h;
                            n += 1;
                        }
                    }
                }
            }
            if n > 0 {
                expect += sum / n as f64;
            }
        }
        expect /= parts as f64;
        assert!((got - expect).abs() <= 1e-9, "triplet case {case}");
    }

    // Classification loss against a direct log-sum-exp oracle.
    for case in 0..cases {
        let b = rng.random_range(2..6);
        let n = rng.random_range(2..6);
        let data: Vec<f64> = (0..b * n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let got = classification_loss(&arr(&[b, n], data.clone()), &labels).unwrap();
        let mut expect = 0.0;
        for i in 0..b {
            let row = &data[i * n..(i + 1) * n];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            expect += lse - row[labels[i]];
        }
        expect /= b as f64;
        assert!((got - expect).abs() <= 1e-9, "classification case {case}");
    }

    // Retrieval ranking against an exhaustive pairwise sort.
    for case in 0..cases {
        let d = rng.random_range(1..5);
        let ng = rng.random_range(1..9);
        let np = rng.random_range(1..6);
        let make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let g_rows = make(ng, &mut rng);
        let p_rows = make(np, &mut rng);
        let to_index = |rows: &[Vec<f64>], labels: Vec<u32>| -> FeatureIndex {
            let mut features = Array2::zeros((rows.len(), d));
            for (i, r) in rows.iter().enumerate() {
                features
                    .row_mut(i)
                    .assign(&ndarray::Array1::from_vec(r.clone()));
            }
            FeatureIndex {
                features,
                views: vec!["090".into(); rows.len()],
                conditions: vec!["clean".into(); rows.len()],
                labels,
            }
        };
        let g_labels: Vec<u32> = (0..ng).map(|_| rng.random_range(0..3)).collect();
        let p_labels: Vec<u32> = (0..np).map(|_| rng.random_range(0..3)).collect();
        let gallery = to_index(&g_rows, g_labels.clone());
        let probe = to_index(&p_rows, p_labels.clone());
        let rankings = l2_retrieve(&probe, &gallery).unwrap();
        for (p, ranking) in rankings.iter().enumerate() {
            let mut expect: Vec<(f64, usize)> = g_rows
                .iter()
                .enumerate()
                .map(|(g, row)| {
                    let dd: f64 = row
                        .iter()
                        .zip(p_rows[p].iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (dd, g)
                })
                .collect();
            expect.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            assert_eq!(
                *ranking,
                expect.into_iter().map(|(_, g)| g).collect::<Vec<_>>(),
                "retrieval case {case}"
            );
        }

        // Rank-k against a counting oracle, exact.
        for k in [1usize, 2, 5] {
            let got = rank_k(&rankings, &p_labels, &g_labels, k);
            let hits = (0..np)
                .filter(|&p| {
                    rankings[p]
                        .iter()
                        .take(k)
                        .any(|&g| g_labels[g] == p_labels[p])
                })
                .count();
            assert_eq!(got, hits as f64 / np as f64, "rank_k case {case}");
        }

        // mAP and mINP against the direct formulas, within 1e-12.
        let has_match = (0..np)
            .any(|p| g_labels.iter().any(|&g| g == p_labels[p]));
        if has_match {
            let got = map_minp(&rankings, &p_labels, &g_labels).unwrap();
            let mut ap_sum = 0.0;
            let mut inp_sum = 0.0;
            let mut included = 0usize;
            for p in 0..np {
                let matches: Vec<usize> = rankings[p]
                    .iter()
                    .enumerate()
                    .filter(|(_, &g)| g_labels[g] == p_labels[p])
                    .map(|(pos, _)| pos + 1)
                    .collect();
                if matches.is_empty() {
                    continue;
                }
                let ap: f64 = matches
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| (i + 1) as f64 / r as f64)
                    .sum::<f64>()
                    / matches.len() as f64;
                ap_sum += ap;
                inp_sum += matches.len() as f64 / *matches.last().unwrap() as f64;
                included += 1;
            }
            assert!((got.map - ap_sum / included as f64).abs() <= 1e-12);
            assert!((got.minp - inp_sum / included as f64).abs() <= 1e-12);
        }
    }

    // View matrix against per-cell brute force plus the hand fixture.
    for case in 0..30 {
        let views = ["000", "090", "180"];
        let n = rng.random_range(9..15);
        let d = 2;
        let mut features = Array2::zeros((n, d));
        for mut row in features.rows_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let idx = FeatureIndex {
            features,
            labels: (0..n as u32).map(|i| i % 3).collect(),
            views: (0..n).map(|i| views[i % 3].to_string()).collect(),
            conditions: vec!["clean".into(); n],
        };
        let vm = view_matrix_eval(&idx, &idx).unwrap();
        for (pi, pv) in vm.views.iter().enumerate() {
            for (gi, gv) in vm.views.iter().enumerate() {
                if pi == gi {
                    assert!(vm.matrix[pi][gi].is_none());
                    continue;
                }
                let probe_rows: Vec<usize> =
                    (0..n).filter(|&i| &idx.views[i] == pv).collect();
                let gallery_rows: Vec<usize> =
                    (0..n).filter(|&i| &idx.views[i] == gv).collect();
                let p = idx.select(&probe_rows);
                let g = idx.select(&gallery_rows);
                let rankings = l2_retrieve(&p, &g).unwrap();
                let expect = rank_k(&rankings, &p.labels, &g.labels, 1);
                let got = vm.matrix[pi][gi].unwrap();
                assert!((got - expect).abs() <= 1e-12, "view cell case {case}");
            }
        }
        let cells: Vec<f64> = vm
            .matrix
            .iter()
            .flat_map(|r| r.iter().flatten().copied())
            .collect();
        let grand = cells.iter().sum::<f64>() / cells.len() as f64;
        assert!((vm.grand_mean - grand).abs() <= 1e-12);
    }

    // Hand-built two-view fixture collapses to one gallery view per probe.
    let fixture = FeatureIndex {
        features: {
            let mut f = Array2::zeros((4, 1));
            f[[0, 0]] = 0.0;
            f[[1, 0]] = 1.0;
            f[[2, 0]] = 0.1;
            f[[3, 0]] = 0.9;
            f
        },
        labels: vec![0, 1, 0, 1],
        views: vec!["000".into(), "000".into(), "090".into(), "090".into()],
        conditions: vec!["clean".into(); 4],
    };
    let vm = view_matrix_eval(&fixture, &fixture).unwrap();
    assert_eq!(vm.matrix[0][1], Some(1.0));
    assert_eq!(vm.matrix[1][0], Some(1.0));
    assert_eq!(vm.grand_mean, 1.0);

    // Skeleton error metric against a double loop.
    for _ in 0..cases {
        let mut a = Array3::zeros((3, 13, 2));
        let mut b = Array3::zeros((3, 13, 2));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in b.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let ja = JointSequence::new(a.clone(), synth13()).unwrap();
        let jb = JointSequence::new(b.clone(), synth13()).unwrap();
        let got = mpjpe(&ja, &jb).unwrap();
        let mut expect = 0.0;
        for f in 0..3 {
            for j in 0..13 {
                let dx = a[[f, j, 0]] - b[[f, j, 0]];
                let dy = a[[f, j, 1]] - b[[f, j, 1]];
                expect += (dx * dx + dy * dy).sqrt();
            }
        }
        expect /= 39.0;
        assert!((got - expect).abs() <= 1e-12);
    }

    let dt = started.elapsed().as_secs_f64();
    assert!(dt < 120.0, "criterion 3 took {dt:.1}s, budget 120s");
    println!("criterion 3: PASS — {cases}+ random instances per metric match oracles ({dt:.1}s)");
}

// ---------------------------------------------------------------------
// Criterion 4: desk-scale learnability.
// ---------------------------------------------------------------------

#[test]
fn criterion_4_learnability() {
    let shared = runs();
    let rank1s: Vec<f64> = shared.full.iter().map(|r| test_rank1(r, None)).collect();
    let m = mean(&rank1s);
    let budget = 20.0 * 60.0;
    assert!(
        shared.full_wall_seconds < budget,
        "full-model training took {:.0}s, budget {budget:.0}s",
        shared.full_wall_seconds
    );
    assert!(
        m >= 0.90,
        "mean clean test rank-1 {m:.4} below 0.90 (per seed: {rank1s:?})"
    );
    println!(
        "criterion 4: PASS — clean test rank-1 {rank1s:?}, mean {m:.4} >= 0.90 ({:.0}s for {} runs)",
        shared.full_wall_seconds,
        RUN_SEEDS.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 5: refinement beats raw jitter and smoothing baselines.
// ---------------------------------------------------------------------

#[test]
fn criterion_5_refinement_trend() {
    let shared = runs();
    let mut raw = Vec::new();
    let mut avg = Vec::new();
    let mut gau = Vec::new();
    let mut refined = Vec::new();
    for (si, run) in shared.full.iter().enumerate() {
        let jittered = jittered_test_samples(run, 700 + si as u64);
        let mut sums = [0.0f64; 4];
        for (clean, jit) in run.test_samples.iter().zip(jittered.iter()) {
            let clean_cut = prepare_sample(clean, FRAMES, 0.0, 0.0, 0).unwrap();
            let jit_cut = prepare_sample(jit, FRAMES, 0.0, 0.0, 0).unwrap();
            sums[0] += mpjpe(&jit_cut.joints, &clean_cut.joints).unwrap();
            sums[1] += mpjpe(
                &smooth_average(&jit_cut.joints, 3).unwrap(),
                &clean_cut.joints,
            )
            .unwrap();
            sums[2] += mpjpe(
                &smooth_gaussian(&jit_cut.joints, 3, 1.0).unwrap(),
                &clean_cut.joints,
            )
            .unwrap();
            let (j_refined, _) = run.trainer.model.refine(&jit_cut).unwrap();
            sums[3] += mpjpe(&j_refined, &clean_cut.joints).unwrap();
        }
        let n = run.test_samples.len() as f64;
        raw.push(sums[0] / n);
        avg.push(sums[1] / n);
        gau.push(sums[2] / n);
        refined.push(sums[3] / n);
    }
    let (m_raw, m_avg, m_gau, m_ref) = (mean(&raw), mean(&avg), mean(&gau), mean(&refined));
    assert!(
        m_ref < m_raw,
        "refined MPJPE {m_ref:.5} not strictly below raw {m_raw:.5} (per seed refined {refined:?} raw {raw:?})"
    );
    assert!(m_ref <= m_avg, "refined {m_ref:.5} above average-smoothing {m_avg:.5}");
    assert!(m_ref <= m_gau, "refined {m_ref:.5} above gaussian-smoothing {m_gau:.5}");
    println!(
        "criterion 5: PASS — MPJPE raw {m_raw:.5} / avg {m_avg:.5} / gauss {m_gau:.5} / refined {m_ref:.5}"
    );
}

// ---------------------------------------------------------------------
// Criterion 6: fusion ordering under jitter.
// ---------------------------------------------------------------------

#[test]
fn criterion_6_fusion_trend() {
    let shared = runs();
    let eval_with_jitter = |runs: &[SeedRun]| -> Vec<f64> {
        runs.iter()
            .enumerate()
            .map(|(si, r)| test_rank1(r, Some(800 + si as u64)))
            .collect()
    };
    let sil = eval_with_jitter(&shared.sil_only);
    let silj = eval_with_jitter(&shared.sil_joints);
    let full = eval_with_jitter(&shared.full);
    let (m_sil, m_silj, m_full) = (mean(&sil), mean(&silj), mean(&full));
    assert!(
        m_sil <= m_silj + 1e-12,
        "silhouette-only {m_sil:.4} above silhouette+joints {m_silj:.4}"
    );
    assert!(
        m_silj <= m_full + 1e-12,
        "silhouette+joints {m_silj:.4} above full {m_full:.4}"
    );
    assert!(
        m_full > m_sil,
        "full model {m_full:.4} not strictly above silhouette-only {m_sil:.4}"
    );
    println!(
        "criterion 6: PASS — jittered rank-1 silhouette {m_sil:.4} <= +joints {m_silj:.4} <= full {m_full:.4}"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: triplet-weight ablation direction.
// ---------------------------------------------------------------------

#[test]
fn criterion_7_lambda_ablation() {
    let shared = runs();
    let full: Vec<f64> = shared.full.iter().map(|r| test_rank1(r, None)).collect();
    let small: Vec<f64> = shared
        .lambda_small
        .iter()
        .map(|r| test_rank1(r, None))
        .collect();
    let (m_full, m_small) = (mean(&full), mean(&small));
    let drop = m_full - m_small;
    assert!(
        drop >= 0.05,
        "lambda_triplet=0.01 dropped rank-1 by {drop:.4} (<0.05): {m_full:.4} -> {m_small:.4}"
    );
    println!(
        "criterion 7: PASS — rank-1 {m_full:.4} (lambda=1) vs {m_small:.4} (lambda=0.01), drop {drop:.4} >= 0.05"
    );
}

// ---------------------------------------------------------------------
// Criterion 8: bitwise reproducibility and resume equivalence.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_reproducibility() {
    let shared = runs();
    let seed = RUN_SEEDS[0];

    // Fresh retraining with the same seed reproduces the metrics CSV.
    let rerun = train_run(seed, ModelVariant::Full, 1.0);
    assert_eq!(
        rerun.log.to_csv(),
        shared.full[0].log.to_csv(),
        "metrics CSVs differ between identical runs"
    );
    for id in rerun.trainer.model.params.ids() {
        assert_eq!(
            rerun.trainer.model.params.get(id),
            shared.full[0].trainer.model.params.get(id),
            "parameter {} differs between identical runs",
            rerun.trainer.model.params.name(id)
        );
    }

    // Checkpoint at the midpoint, resume, and compare with the
    // uninterrupted run.
    let dir = std::env::temp_dir().join(format!("gaitstr_accept_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt = dir.join("mid.gck");
    let (train_data, _) = split_dataset(seed);
    let cfg = desk_train_config(seed, 1.0);
    let half_iterations = cfg.iterations / 2;
    let mut half_cfg = cfg.clone();
    half_cfg.iterations = half_iterations;
    let mut half = Trainer::new(
        desk_model_config(ModelVariant::Full, train_data.num_identities()),
        half_cfg,
    )
    .unwrap();
    let mut log = MetricsLog::default();
    half.run(&train_data, &mut log).unwrap();
    half.save_checkpoint(&ckpt, &train_data.class_of_identity)
        .unwrap();
    let (mut resumed, _) = Trainer::load_checkpoint(&ckpt).unwrap();
    resumed.set_train_config(cfg).unwrap();
    let mut log2 = MetricsLog::default();
    resumed.run(&train_data, &mut log2).unwrap();
    for id in resumed.model.params.ids() {
        assert_eq!(
            resumed.model.params.get(id),
            shared.full[0].trainer.model.params.get(id),
            "parameter {} differs after resume",
            resumed.model.params.name(id)
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
    println!(
        "criterion 8: PASS — identical metrics across reruns and resume at iteration {half_iterations} matches"
    );
}

// ---------------------------------------------------------------------
// Sanity: the shared recipe stays within the batch contract.
// ---------------------------------------------------------------------

#[test]
fn shared_recipe_is_feasible() {
    let (train_data, test) = split_dataset(RUN_SEEDS[0]);
    assert_eq!(train_data.num_identities(), 8);
    assert_eq!(test.len(), 32);
    let cfg = desk_train_config(RUN_SEEDS[0], 1.0);
    cfg.validate().unwrap();
    let batch = sample_batch(&train_data, cfg.batch_p, cfg.batch_k, cfg.seed, 0).unwrap();
    assert_eq!(batch.len(), cfg.batch_p * cfg.batch_k);
    let ids: HashSet<u32> = batch.iter().map(|&i| train_data.samples[i].identity).collect();
    assert_eq!(ids.len(), cfg.batch_p);
    // Unused-signal guard: evaluate_batch runs on a tiny prepared batch.
    let prepared: Vec<GaitSample> = batch
        .iter()
        .take(4)
        .map(|&i| prepare_sample(&train_data.samples[i], FRAMES, 0.0, 0.0, 0).unwrap())
        .collect();
    let ids: Vec<u32> = prepared.iter().map(|s| s.identity).collect();
    let classes: Vec<usize> = prepared
        .iter()
        .map(|s| train_data.class_of_identity[&s.identity])
        .collect();
    let BatchEvaluation { stats, .. } = evaluate_batch(
        &Trainer::new(
            desk_model_config(ModelVariant::Full, train_data.num_identities()),
            desk_train_config(RUN_SEEDS[0], 1.0),
        )
        .unwrap()
        .model,
        &prepared,
        &ids,
        &classes,
        1.0,
        1.0,
        0.2,
        GradMode::None,
    )
    .unwrap();
    assert!(stats.total.is_finite());
}
