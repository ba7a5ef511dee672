//! Procedural walking-sequence generator.
//!
//! Identities are parameterized by limb lengths, gait frequency, stride and
//! arm-swing amplitudes, posture lean and per-limb rendering widths. A crude
//! three-dimensional walker is animated from sinusoidal limb oscillation,
//! projected at a view azimuth, normalized per frame and rasterized to
//! binary 64x44 silhouettes. Conditions only change rendering (a carried
//! blob or widened limb contours), never the joints, so the skeleton stream
//! stays clean while the appearance stream varies.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GaitError, Result};
use crate::seed;
use crate::skeleton::{
    normalize_skeleton, GaitSample, JointSequence, SilhouetteSequence, SIL_HEIGHT, SIL_WIDTH,
};
use crate::topology::{synth13, synth13_joints as sj};

/// Rendering condition tags.
pub const CONDITION_CLEAN: &str = "clean";
pub const CONDITION_CARRIED: &str = "carried";
pub const CONDITION_WIDENED: &str = "widened";

/// Identity-specific gait parameters on the `synth13` topology.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityParams {
    /// Length per topology edge, in units of body height.
    pub limb_lengths: Vec<f64>,
    /// Gait frequency in cycles per frame.
    pub frequency: f64,
    /// Thigh swing amplitude, radians.
    pub stride_amplitude: f64,
    /// Upper-arm swing amplitude, radians.
    pub arm_amplitude: f64,
    /// Forward posture lean, radians.
    pub posture_lean: f64,
    /// Base gait phase, radians.
    pub phase_offset: f64,
    /// Rendering half-width per topology edge, pixels.
    pub body_widths: Vec<f64>,
}

/// Edge groups of `synth13` in edge order: torso, head, l/r shoulder,
/// l/r upper arm, l/r forearm, l/r thigh, l/r shank.
const BASE_LENGTHS: [f64; 12] = [
    0.30, 0.16, 0.11, 0.11, 0.17, 0.17, 0.16, 0.16, 0.26, 0.26, 0.26, 0.26,
];
const BASE_WIDTHS: [f64; 12] = [
    3.2, 3.6, 2.2, 2.2, 1.8, 1.8, 1.5, 1.5, 2.6, 2.6, 2.0, 2.0,
];
/// Symmetric group index per edge (left/right pairs share a group).
const EDGE_GROUP: [usize; 12] = [0, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6];

impl IdentityParams {
    pub fn validate(&self) -> Result<()> {
        if self.limb_lengths.len() != 12 || self.body_widths.len() != 12 {
            return Err(GaitError::InvalidInput(
                "identity params must carry one length and one width per synth13 edge".into(),
            ));
        }
        if self.limb_lengths.iter().any(|&l| l <= 0.0) {
            return Err(GaitError::InvalidInput("limb lengths must be > 0".into()));
        }
        if !(0.0 < self.frequency && self.frequency < 0.5) {
            return Err(GaitError::InvalidInput(format!(
                "frequency must be in (0, 0.5), got {}",
                self.frequency
            )));
        }
        for (name, a) in [
            ("stride", self.stride_amplitude),
            ("arm", self.arm_amplitude),
        ] {
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&a) {
                return Err(GaitError::InvalidInput(format!(
                    "{name} amplitude must be in [0, pi/2), got {a}"
                )));
            }
        }
        Ok(())
    }

    /// Draw one identity from the given stream.
    ///
    /// Ranges are deliberately narrow: identities overlap enough that
    /// recognition needs learned features rather than trivial geometry.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut group_scale = [0.0f64; 7];
        for g in &mut group_scale {
            *g = rng.random_range(0.92..1.08);
        }
        let limb_lengths = BASE_LENGTHS
            .iter()
            .enumerate()
            .map(|(e, &b)| b * group_scale[EDGE_GROUP[e]])
            .collect();
        let mut width_scale = [0.0f64; 7];
        for g in &mut width_scale {
            *g = rng.random_range(0.9..1.1);
        }
        let body_widths = BASE_WIDTHS
            .iter()
            .enumerate()
            .map(|(e, &b)| b * width_scale[EDGE_GROUP[e]])
            .collect();
        Self {
            limb_lengths,
            frequency: rng.random_range(0.07..0.10),
            stride_amplitude: rng.random_range(0.42..0.58),
            arm_amplitude: rng.random_range(0.30..0.50),
            posture_lean: rng.random_range(-0.03..0.05),
            phase_offset: rng.random_range(0.0..std::f64::consts::TAU),
            body_widths,
        }
    }
}

/// Lateral (out-of-plane) offsets, units of body height.
const SHOULDER_Z: f64 = 0.011;
const HIP_Z: f64 = 0.06;
const PELVIS_HEIGHT: f64 = 0.52;
const BOB_AMPLITUDE: f64 = 0.015;
const SWAY_AMPLITUDE: f64 = 0.02;

/// Raw (unnormalized) 3-D joint positions for one frame at gait phase theta.
fn walker_frame(params: &IdentityParams, theta: f64, out: &mut [[f64; 3]; 13]) {
    let l = &params.limb_lengths;
    let lean = params.posture_lean;
    let bob = BOB_AMPLITUDE * (2.0 * theta).sin();
    let sway = SWAY_AMPLITUDE * theta.sin();

    let pelvis = [0.0, PELVIS_HEIGHT + bob, sway];
    let neck = [
        pelvis[0] + l[0] * lean.sin(),
        pelvis[1] + l[0] * lean.cos(),
        pelvis[2],
    ];
    let head = [
        neck[0] + l[1] * lean.sin(),
        neck[1] + l[1] * lean.cos(),
        neck[2],
    ];
    // Shoulders droop slightly from the neck and sit off-plane.
    let sh_dir = [0.15, -0.2, 0.0];
    let sh_norm = (sh_dir[0] * sh_dir[0] + sh_dir[1] * sh_dir[1] + 1.0f64).sqrt();
    let l_shoulder = [
        neck[0] + l[2] * sh_dir[0] / sh_norm,
        neck[1] + l[2] * sh_dir[1] / sh_norm,
        neck[2] + l[2] / sh_norm + SHOULDER_Z,
    ];
    let r_shoulder = [
        neck[0] + l[3] * sh_dir[0] / sh_norm,
        neck[1] + l[3] * sh_dir[1] / sh_norm,
        neck[2] - l[3] / sh_norm - SHOULDER_Z,
    ];

    // Left arm swings in phase with the right leg.
    let arm_l = params.arm_amplitude * (theta + std::f64::consts::PI).sin();
    let arm_r = params.arm_amplitude * theta.sin();
    let elbow = |sh: [f64; 3], len: f64, a: f64| [sh[0] + len * a.sin(), sh[1] - len * a.cos(), sh[2]];
    let l_elbow = elbow(l_shoulder, l[4], arm_l);
    let r_elbow = elbow(r_shoulder, l[5], arm_r);
    // Constant elbow flexion plus a swing-coupled component.
    let fore_l = arm_l + 0.35 + 0.25 * params.arm_amplitude * (1.0 - theta.cos());
    let fore_r = arm_r + 0.35 + 0.25 * params.arm_amplitude * (1.0 + theta.cos());
    let l_wrist = elbow(l_elbow, l[6], fore_l);
    let r_wrist = elbow(r_elbow, l[7], fore_r);

    let thigh_l = params.stride_amplitude * theta.sin();
    let thigh_r = params.stride_amplitude * (theta + std::f64::consts::PI).sin();
    let l_knee = [
        pelvis[0] + l[8] * thigh_l.sin(),
        pelvis[1] - l[8] * thigh_l.cos(),
        pelvis[2] + HIP_Z,
    ];
    let r_knee = [
        pelvis[0] + l[9] * thigh_r.sin(),
        pelvis[1] - l[9] * thigh_r.cos(),
        pelvis[2] - HIP_Z,
    ];
    // The knee flexes most during the swing half of the cycle.
    let bend_l = 0.55 * params.stride_amplitude * (1.0 - theta.cos());
    let bend_r = 0.55 * params.stride_amplitude * (1.0 + theta.cos());
    let shank_l = thigh_l - bend_l;
    let shank_r = thigh_r - bend_r;
    let l_ankle = [
        l_knee[0] + l[10] * shank_l.sin(),
        l_knee[1] - l[10] * shank_l.cos(),
        l_knee[2],
    ];
    let r_ankle = [
        r_knee[0] + l[11] * shank_r.sin(),
        r_knee[1] - l[11] * shank_r.cos(),
        r_knee[2],
    ];

    out[sj::HEAD] = head;
    out[sj::NECK] = neck;
    out[sj::L_SHOULDER] = l_shoulder;
    out[sj::R_SHOULDER] = r_shoulder;
    out[sj::L_ELBOW] = l_elbow;
    out[sj::R_ELBOW] = r_elbow;
    out[sj::L_WRIST] = l_wrist;
    out[sj::R_WRIST] = r_wrist;
    out[sj::PELVIS] = pelvis;
    out[sj::L_KNEE] = l_knee;
    out[sj::R_KNEE] = r_knee;
    out[sj::L_ANKLE] = l_ankle;
    out[sj::R_ANKLE] = r_ankle;
}

fn parse_view(view: &str) -> Result<f64> {
    view.parse::<f64>()
        .map(f64::to_radians)
        .map_err(|_| GaitError::InvalidInput(format!("unknown view tag '{view}' (expect degrees)")))
}

fn check_condition(condition: &str) -> Result<()> {
    match condition {
        CONDITION_CLEAN | CONDITION_CARRIED | CONDITION_WIDENED => Ok(()),
        other => Err(GaitError::InvalidInput(format!(
            "unknown condition tag '{other}'"
        ))),
    }
}

/// Pixels per world unit on the 64x44 canvas; leaves a margin for limb widths.
const CANVAS_SCALE: f64 = 27.0;

fn to_canvas(x: f64, y: f64) -> (f64, f64) {
    let col = (SIL_WIDTH as f64 - 1.0) / 2.0 + x * CANVAS_SCALE;
    let row = (SIL_HEIGHT as f64 - 1.0) / 2.0 - y * CANVAS_SCALE;
    (col, row)
}

fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Ellipse attached to the body for the carried condition, world units.
#[derive(Debug, Clone, Copy)]
struct CarriedBlob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

/// Rasterize one normalized frame as a union of capsules per edge.
///
/// A pixel is set when its center lies within `half_width + 0.5` pixels of
/// an edge segment (mapped to canvas coordinates), so zero-width edges still
/// produce a connected one-pixel run.
pub fn render_silhouette(
    joints: &ndarray::ArrayView2<f64>,
    widths: &[f64],
    edges: &[(usize, usize)],
) -> ndarray::Array2<u8> {
    render_silhouette_with_blob(joints, widths, edges, None)
}

fn render_silhouette_with_blob(
    joints: &ndarray::ArrayView2<f64>,
    widths: &[f64],
    edges: &[(usize, usize)],
    blob: Option<CarriedBlob>,
) -> ndarray::Array2<u8> {
    let mut mask = ndarray::Array2::<u8>::zeros((SIL_HEIGHT, SIL_WIDTH));
    for (e, &(p, c)) in edges.iter().enumerate() {
        let (ax, ay) = to_canvas(joints[[p, 0]], joints[[p, 1]]);
        let (bx, by) = to_canvas(joints[[c, 0]], joints[[c, 1]]);
        let reach = widths[e] + 0.5;
        let min_r = ((ay.min(by) - reach).floor().max(0.0)) as usize;
        let max_r = ((ay.max(by) + reach).ceil().min(SIL_HEIGHT as f64 - 1.0)) as usize;
        let min_c = ((ax.min(bx) - reach).floor().max(0.0)) as usize;
        let max_c = ((ax.max(bx) + reach).ceil().min(SIL_WIDTH as f64 - 1.0)) as usize;
        for r in min_r..=max_r {
            for cc in min_c..=max_c {
                if dist_to_segment(cc as f64, r as f64, ax, ay, bx, by) <= reach {
                    mask[[r, cc]] = 1;
                }
            }
        }
    }
    if let Some(b) = blob {
        let (cx, cy) = to_canvas(b.cx, b.cy);
        let rx = b.rx * CANVAS_SCALE;
        let ry = b.ry * CANVAS_SCALE;
        for r in 0..SIL_HEIGHT {
            for cc in 0..SIL_WIDTH {
                let nx = (cc as f64 - cx) / rx;
                let ny = (r as f64 - cy) / ry;
                if nx * nx + ny * ny <= 1.0 {
                    mask[[r, cc]] = 1;
                }
            }
        }
    }
    mask
}

/// Generate one labeled walking sample.
///
/// Joints depend only on `(params, t, view, seed)`; the condition changes
/// rendering alone. The per-sequence seed adds a phase shift on top of the
/// identity's base phase so repeated sequences of one identity differ.
pub fn generate_walk(
    params: &IdentityParams,
    t: usize,
    view: &str,
    condition: &str,
    seed_value: u64,
) -> Result<GaitSample> {
    params.validate()?;
    if t < 8 {
        return Err(GaitError::InvalidInput(format!(
            "need at least 8 frames, got {t}"
        )));
    }
    let azimuth = parse_view(view)?;
    check_condition(condition)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed_value, &[seed::label("walk")]));
    let phase = params.phase_offset + rng.random_range(0.0..std::f64::consts::TAU);

    let topo = synth13();
    let mut joints3 = [[0.0f64; 3]; 13];
    let mut data = Array3::zeros((t, 13, 2));
    let (sin_a, cos_a) = azimuth.sin_cos();
    for f in 0..t {
        let theta = std::f64::consts::TAU * params.frequency * f as f64 + phase;
        walker_frame(params, theta, &mut joints3);
        for (j, p) in joints3.iter().enumerate() {
            data[[f, j, 0]] = p[0] * sin_a + p[2] * cos_a;
            data[[f, j, 1]] = p[1];
        }
    }
    let joints = normalize_skeleton(&JointSequence::new(data, topo.clone())?)?;

    let widths: Vec<f64> = match condition {
        CONDITION_WIDENED => params.body_widths.iter().map(|w| w * 2.0 + 1.4).collect(),
        _ => params.body_widths.clone(),
    };
    let mut sil = Array3::zeros((t, SIL_HEIGHT, SIL_WIDTH));
    for f in 0..t {
        let frame = joints.data.index_axis(ndarray::Axis(0), f);
        let blob = (condition == CONDITION_CARRIED).then(|| {
            let px = frame[[sj::PELVIS, 0]];
            let py = frame[[sj::PELVIS, 1]];
            let nx = frame[[sj::NECK, 0]];
            let ny = frame[[sj::NECK, 1]];
            CarriedBlob {
                cx: 0.5 * (px + nx) + 0.28,
                cy: 0.5 * (py + ny) - 0.05,
                rx: 0.20,
                ry: 0.30,
            }
        });
        let mask = render_silhouette_with_blob(&frame, &widths, &topo.edges, blob);
        sil.index_axis_mut(ndarray::Axis(0), f).assign(&mask);
    }

    let sample = GaitSample {
        identity: 0,
        view: view.to_string(),
        condition: condition.to_string(),
        silhouettes: SilhouetteSequence::new(sil)?,
        joints,
    };
    sample.validate()?;
    Ok(sample)
}

/// Dataset generation request.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n_ids: usize,
    pub seqs_per_id: usize,
    pub frames: usize,
    pub views: Vec<String>,
    pub conditions: Vec<String>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_ids == 0 || self.seqs_per_id == 0 || self.frames == 0 {
            return Err(GaitError::InvalidInput(
                "dataset counts must all be >= 1".into(),
            ));
        }
        if self.views.is_empty() || self.conditions.is_empty() {
            return Err(GaitError::InvalidInput(
                "dataset needs at least one view and one condition".into(),
            ));
        }
        Ok(())
    }
}

/// In-memory dataset: samples plus their sequence indices and split tags.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub samples: Vec<GaitSample>,
    pub seq_index: Vec<usize>,
    /// True where the sample belongs to the training split (even identity).
    pub is_train: Vec<bool>,
}

/// Identity parameters for one identity index under a dataset seed.
pub fn identity_params(dataset_seed: u64, identity: u32) -> IdentityParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(
        dataset_seed,
        &[seed::label("identity"), u64::from(identity)],
    ));
    IdentityParams::sample(&mut rng)
}

/// Generate every sample of a dataset deterministically from its spec.
///
/// Views and conditions are assigned by cycling each list over the sequence
/// index; identities split train/test by index parity (even = train).
pub fn generate_dataset(spec: &DatasetSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.n_ids * spec.seqs_per_id);
    let mut seq_index = Vec::new();
    let mut is_train = Vec::new();
    for id in 0..spec.n_ids as u32 {
        let params = identity_params(spec.seed, id);
        for s in 0..spec.seqs_per_id {
            let view = &spec.views[s % spec.views.len()];
            let condition = &spec.conditions[s % spec.conditions.len()];
            let seq_seed = seed::mix(
                spec.seed,
                &[seed::label("sequence"), u64::from(id), s as u64],
            );
            let mut sample = generate_walk(&params, spec.frames, view, condition, seq_seed)?;
            sample.identity = id;
            samples.push(sample);
            seq_index.push(s);
            is_train.push(id % 2 == 0);
        }
    }
    Ok(GeneratedDataset {
        samples,
        seq_index,
        is_train,
    })
}
