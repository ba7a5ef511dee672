//! Skeleton sequence data model and frame-level operations.
//!
//! Joint sequences are dense `[t, K_J, 2]` coordinate arrays tied to a
//! [`SkeletonTopology`]; bone sequences are the `[t, K_B, 2]` edge-vector
//! view of the same motion. Operations here are pure functions: conversion
//! between the two streams, per-frame normalization, frame selection,
//! synthetic jitter corruption and the temporal-smoothing baselines.

use ndarray::{Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GaitError, Result};
use crate::seed;
use crate::topology::SkeletonTopology;

/// Per-frame 2-D joint coordinates, `[t, num_joints, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    pub data: Array3<f64>,
    pub topology: SkeletonTopology,
}

/// Per-frame bone vectors (child minus parent), `[t, num_bones, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneSequence {
    pub data: Array3<f64>,
    pub topology: SkeletonTopology,
}

/// Per-frame binary masks, `[t, 64, 44]` with values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    pub data: Array3<u8>,
}

/// Canvas height of a silhouette frame.
pub const SIL_HEIGHT: usize = 64;
/// Canvas width of a silhouette frame.
pub const SIL_WIDTH: usize = 44;

impl JointSequence {
    pub fn new(data: Array3<f64>, topology: SkeletonTopology) -> Result<Self> {
        if data.shape()[1] != topology.num_joints {
            return Err(GaitError::InvalidInput(format!(
                "joint sequence has {} joints, topology {} expects {}",
                data.shape()[1],
                topology.name,
                topology.num_joints
            )));
        }
        if data.shape()[2] != 2 {
            return Err(GaitError::InvalidInput(
                "joint coordinates must be 2-D".into(),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GaitError::InvalidInput(
                "joint sequence contains non-finite values".into(),
            ));
        }
        Ok(Self { data, topology })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.data.shape()[1]
    }

    /// Per-frame root joint positions.
    pub fn root_positions(&self) -> Vec<[f64; 2]> {
        let r = self.topology.root;
        (0..self.frames())
            .map(|f| [self.data[[f, r, 0]], self.data[[f, r, 1]]])
            .collect()
    }
}

impl BoneSequence {
    pub fn new(data: Array3<f64>, topology: SkeletonTopology) -> Result<Self> {
        if data.shape()[1] != topology.num_bones() {
            return Err(GaitError::InvalidInput(format!(
                "bone sequence has {} bones, topology {} expects {}",
                data.shape()[1],
                topology.name,
                topology.num_bones()
            )));
        }
        if data.shape()[2] != 2 {
            return Err(GaitError::InvalidInput(
                "bone coordinates must be 2-D".into(),
            ));
        }
        Ok(Self { data, topology })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }
}

impl SilhouetteSequence {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        let s = data.shape();
        if s[1] != SIL_HEIGHT || s[2] != SIL_WIDTH {
            return Err(GaitError::InvalidInput(format!(
                "silhouette frames must be {SIL_HEIGHT}x{SIL_WIDTH}, got {}x{}",
                s[1], s[2]
            )));
        }
        if !data.iter().all(|&v| v <= 1) {
            return Err(GaitError::InvalidInput(
                "silhouette values must be 0 or 1".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    /// Foreground pixel count of one frame.
    pub fn foreground(&self, frame: usize) -> usize {
        self.data
            .index_axis(ndarray::Axis(0), frame)
            .iter()
            .filter(|&&v| v == 1)
            .count()
    }
}

/// One labeled sample: silhouettes plus joints for the same walking sequence.
#[derive(Debug, Clone)]
pub struct GaitSample {
    pub identity: u32,
    pub view: String,
    pub condition: String,
    pub silhouettes: SilhouetteSequence,
    pub joints: JointSequence,
}

impl GaitSample {
    pub fn validate(&self) -> Result<()> {
        if self.silhouettes.frames() != self.joints.frames() {
            return Err(GaitError::InvalidInput(format!(
                "sample has {} silhouette frames but {} joint frames",
                self.silhouettes.frames(),
                self.joints.frames()
            )));
        }
        Ok(())
    }
}

/// Convert joints to bone vectors: `bone[e] = child(e) - parent(e)` per frame.
pub fn joints_to_bones(joints: &JointSequence) -> BoneSequence {
    let t = joints.frames();
    let topo = &joints.topology;
    let mut data = Array3::zeros((t, topo.num_bones(), 2));
    for f in 0..t {
        for (e, &(p, c)) in topo.edges.iter().enumerate() {
            data[[f, e, 0]] = joints.data[[f, c, 0]] - joints.data[[f, p, 0]];
            data[[f, e, 1]] = joints.data[[f, c, 1]] - joints.data[[f, p, 1]];
        }
    }
    BoneSequence {
        data,
        topology: topo.clone(),
    }
}

/// Reconstruct joints from bone vectors and per-frame root positions by
/// summing bones along the tree from the root outward.
pub fn bones_to_joints(bones: &BoneSequence, root_positions: &[[f64; 2]]) -> Result<JointSequence> {
    let t = bones.frames();
    if root_positions.len() != t {
        return Err(GaitError::InvalidInput(format!(
            "got {} root positions for {} frames",
            root_positions.len(),
            t
        )));
    }
    let topo = &bones.topology;
    // Order edges so a parent is always placed before its children.
    let order = edge_order_from_root(topo);
    let mut data = Array3::zeros((t, topo.num_joints, 2));
    for f in 0..t {
        data[[f, topo.root, 0]] = root_positions[f][0];
        data[[f, topo.root, 1]] = root_positions[f][1];
        for &e in &order {
            let (p, c) = topo.edges[e];
            data[[f, c, 0]] = data[[f, p, 0]] + bones.data[[f, e, 0]];
            data[[f, c, 1]] = data[[f, p, 1]] + bones.data[[f, e, 1]];
        }
    }
    JointSequence::new(data, topo.clone())
}

/// Edge indices in root-outward placement order.
fn edge_order_from_root(topo: &SkeletonTopology) -> Vec<usize> {
    let mut placed = vec![false; topo.num_joints];
    placed[topo.root] = true;
    let mut order = Vec::with_capacity(topo.edges.len());
    while order.len() < topo.edges.len() {
        let before = order.len();
        for (e, &(p, c)) in topo.edges.iter().enumerate() {
            if placed[p] && !placed[c] {
                placed[c] = true;
                order.push(e);
            }
        }
        assert!(order.len() > before, "topology validated as a tree");
    }
    order
}

/// Bounding box of one frame as `(min_x, max_x, min_y, max_y)`.
fn frame_bbox(frame: ArrayView2<f64>) -> (f64, f64, f64, f64) {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for j in 0..frame.shape()[0] {
        min_x = min_x.min(frame[[j, 0]]);
        max_x = max_x.max(frame[[j, 0]]);
        min_y = min_y.min(frame[[j, 1]]);
        max_y = max_y.max(frame[[j, 1]]);
    }
    (min_x, max_x, min_y, max_y)
}

/// Normalize every frame: translate the bounding-box center to the origin,
/// then scale uniformly so the vertical extent equals 2.
pub fn normalize_skeleton(joints: &JointSequence) -> Result<JointSequence> {
    let mut data = joints.data.clone();
    for f in 0..joints.frames() {
        let (min_x, max_x, min_y, max_y) = frame_bbox(joints.data.index_axis(ndarray::Axis(0), f));
        let height = max_y - min_y;
        if height <= 0.0 {
            return Err(GaitError::DegeneratePose { frame: f });
        }
        let cx = 0.5 * (min_x + max_x);
        let cy = 0.5 * (min_y + max_y);
        let s = 2.0 / height;
        for j in 0..joints.num_joints() {
            data[[f, j, 0]] = (joints.data[[f, j, 0]] - cx) * s;
            data[[f, j, 1]] = (joints.data[[f, j, 1]] - cy) * s;
        }
    }
    Ok(JointSequence {
        data,
        topology: joints.topology.clone(),
    })
}

/// Frame-selection mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Contiguous `n` frames centered in the sequence; requires `t >= n`.
    Center,
    /// First `n` frames, cyclically repeating the sequence when `t < n`.
    Repeat,
}

/// Frame indices chosen by [`select_frames`]; shared with callers that must
/// cut paired streams (silhouettes and joints) identically.
pub fn select_indices(t: usize, n: usize, mode: SelectMode) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(GaitError::InsufficientFrames { have: 0, need: 1 });
    }
    match mode {
        SelectMode::Center => {
            if t < n {
                return Err(GaitError::InsufficientFrames { have: t, need: n });
            }
            // Left-biased on odd leftovers.
            let start = (t - n) / 2;
            Ok((start..start + n).collect())
        }
        SelectMode::Repeat => Ok((0..n).map(|i| i % t).collect()),
    }
}

/// Cut or repeat a joint sequence to exactly `n` frames.
pub fn select_frames(joints: &JointSequence, n: usize, mode: SelectMode) -> Result<JointSequence> {
    let idx = select_indices(joints.frames(), n, mode)?;
    let k = joints.num_joints();
    let mut data = Array3::zeros((n, k, 2));
    for (out_f, &src_f) in idx.iter().enumerate() {
        for j in 0..k {
            data[[out_f, j, 0]] = joints.data[[src_f, j, 0]];
            data[[out_f, j, 1]] = joints.data[[src_f, j, 1]];
        }
    }
    Ok(JointSequence {
        data,
        topology: joints.topology.clone(),
    })
}

/// Corrupted `(frame, joint)` pairs recorded by [`inject_jitter`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JitterMask {
    pub pairs: Vec<(usize, usize)>,
}

/// Displace a random subset of joints in round(frame_rate * t) randomly
/// chosen frames by uniform noise in `[-magnitude, magnitude]^2`.
pub fn inject_jitter(
    joints: &JointSequence,
    frame_rate: f64,
    magnitude: f64,
    seed_value: u64,
) -> Result<(JointSequence, JitterMask)> {
    if !(0.0..=1.0).contains(&frame_rate) {
        return Err(GaitError::InvalidInput(format!(
            "frame_rate must be in [0, 1], got {frame_rate}"
        )));
    }
    if magnitude < 0.0 {
        return Err(GaitError::InvalidInput(format!(
            "magnitude must be >= 0, got {magnitude}"
        )));
    }
    let t = joints.frames();
    let k = joints.num_joints();
    let n_frames = (frame_rate * t as f64).round() as usize;
    let mut out = joints.clone();
    let mut mask = JitterMask::default();
    if n_frames == 0 {
        return Ok((out, mask));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(seed_value, &[seed::label("jitter")]));
    let mut frames: Vec<usize> = (0..t).collect();
    frames.shuffle(&mut rng);
    let mut chosen: Vec<usize> = frames.into_iter().take(n_frames).collect();
    chosen.sort_unstable();
    for f in chosen {
        let n_joints = rng.random_range(1..=k);
        let mut joints_idx: Vec<usize> = (0..k).collect();
        joints_idx.shuffle(&mut rng);
        let mut hit: Vec<usize> = joints_idx.into_iter().take(n_joints).collect();
        hit.sort_unstable();
        for j in hit {
            let dx = rng.random_range(-magnitude..=magnitude);
            let dy = rng.random_range(-magnitude..=magnitude);
            out.data[[f, j, 0]] += dx;
            out.data[[f, j, 1]] += dy;
            mask.pairs.push((f, j));
        }
    }
    Ok((out, mask))
}

/// Temporal convolution of each joint coordinate with a normalized kernel,
/// edge frames replicated at the boundaries.
fn smooth_with_kernel(joints: &JointSequence, kernel: &[f64]) -> JointSequence {
    let t = joints.frames() as isize;
    let k = joints.num_joints();
    let half = (kernel.len() / 2) as isize;
    let mut data = Array3::zeros((joints.frames(), k, 2));
    for f in 0..t {
        for j in 0..k {
            for c in 0..2 {
                let mut acc = 0.0;
                for (w, coeff) in kernel.iter().enumerate() {
                    let src = (f + w as isize - half).clamp(0, t - 1) as usize;
                    acc += coeff * joints.data[[src, j, c]];
                }
                data[[f as usize, j, c]] = acc;
            }
        }
    }
    JointSequence {
        data,
        topology: joints.topology.clone(),
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(GaitError::InvalidInput(format!(
            "smoothing window must be odd and >= 1, got {window}"
        )));
    }
    Ok(())
}

/// Box-filter temporal smoothing.
pub fn smooth_average(joints: &JointSequence, window: usize) -> Result<JointSequence> {
    check_window(window)?;
    let kernel = vec![1.0 / window as f64; window];
    Ok(smooth_with_kernel(joints, &kernel))
}

/// Gaussian-window temporal smoothing; the kernel is normalized to sum 1.
pub fn smooth_gaussian(joints: &JointSequence, window: usize, sigma: f64) -> Result<JointSequence> {
    check_window(window)?;
    if sigma <= 0.0 {
        return Err(GaitError::InvalidInput(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let half = (window / 2) as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    Ok(smooth_with_kernel(joints, &kernel))
}
