//! Feature encoders: the silhouette stack (framewise convolution, temporal
//! max pooling, horizontal pyramid pooling) and the spatial-temporal graph
//! encoder applied separately to joint and bone streams.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::error::{GaitError, Result};
use crate::nn::params::{he_uniform, zeros_init, ParamId, ParamStore, Session};
use crate::nn::{Arr, Var};
use crate::skeleton::{SilhouetteSequence, SIL_HEIGHT, SIL_WIDTH};
use crate::topology::SkeletonTopology;

/// Which graph a [`GraphAdjacency`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyMode {
    /// Joints connected by topology edges.
    Joint,
    /// Bones connected when they share a joint (line graph).
    Bone,
}

/// Symmetrically normalized adjacency with self-loops,
/// `D^{-1/2} (A + I) D^{-1/2}`.
#[derive(Debug, Clone)]
pub struct GraphAdjacency {
    pub matrix: Arc<Array2<f64>>,
    pub mode: AdjacencyMode,
    pub nodes: usize,
}

/// Build the normalized adjacency of a topology's joint graph or its bone
/// line graph.
pub fn build_adjacency(topology: &SkeletonTopology, mode: AdjacencyMode) -> GraphAdjacency {
    let n = match mode {
        AdjacencyMode::Joint => topology.num_joints,
        AdjacencyMode::Bone => topology.num_bones(),
    };
    let mut a = Array2::<f64>::zeros((n, n));
    match mode {
        AdjacencyMode::Joint => {
            for &(p, c) in &topology.edges {
                a[[p, c]] = 1.0;
                a[[c, p]] = 1.0;
            }
        }
        AdjacencyMode::Bone => {
            for (e, &(pe, ce)) in topology.edges.iter().enumerate() {
                for (f, &(pf, cf)) in topology.edges.iter().enumerate() {
                    if e != f && (pe == pf || pe == cf || ce == pf || ce == cf) {
                        a[[e, f]] = 1.0;
                    }
                }
            }
        }
    }
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] /= (deg[i] * deg[j]).sqrt();
        }
    }
    GraphAdjacency {
        matrix: Arc::new(a),
        mode,
        nodes: n,
    }
}

/// Silhouette feature encoder.
///
/// Three (3x3 convolution, rectifier) stages with 2x2 max pooling after the
/// first two bring 64x44 frames to a 16x11 map, the frame axis collapses by
/// elementwise max, and horizontal pyramid pooling emits the finest level:
/// `2^(P-1)` strips, each max+mean pooled and projected to the feature dim
/// by its own linear map.
#[derive(Debug, Clone)]
pub struct SilhouetteEncoder {
    conv_w: [ParamId; 3],
    conv_b: [ParamId; 3],
    hpp_w: ParamId,
    pub channels: [usize; 3],
    pub strips: usize,
    pub out_dim: usize,
}

/// Final map height after the two poolings.
const FINAL_MAP_HEIGHT: usize = SIL_HEIGHT / 4;

impl SilhouetteEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        channels: [usize; 3],
        hpp_scale: usize,
        out_dim: usize,
        prefix: &str,
    ) -> Result<Self> {
        if hpp_scale == 0 {
            return Err(GaitError::Geometry("pyramid scale must be >= 1".into()));
        }
        let strips = 1usize << (hpp_scale - 1);
        if FINAL_MAP_HEIGHT % strips != 0 {
            return Err(GaitError::Geometry(format!(
                "map height {FINAL_MAP_HEIGHT} is not divisible into {strips} strips"
            )));
        }
        let dims = [
            (1, channels[0]),
            (channels[0], channels[1]),
            (channels[1], channels[2]),
        ];
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for (i, (ic, oc)) in dims.into_iter().enumerate() {
            conv_w.push(store.add(
                &format!("{prefix}.conv{i}.w"),
                he_uniform(rng, &[3, 3, ic, oc], 9 * ic),
            ));
            conv_b.push(store.add(&format!("{prefix}.conv{i}.b"), zeros_init(&[oc])));
        }
        let hpp_w = store.add(
            &format!("{prefix}.hpp.w"),
            he_uniform(rng, &[strips, channels[2], out_dim], channels[2]),
        );
        Ok(Self {
            conv_w: [conv_w[0], conv_w[1], conv_w[2]],
            conv_b: [conv_b[0], conv_b[1], conv_b[2]],
            hpp_w,
            channels,
            strips,
            out_dim,
        })
    }

    /// Parameter ids of this encoder, in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for i in 0..3 {
            ids.push(self.conv_w[i]);
            ids.push(self.conv_b[i]);
        }
        ids.push(self.hpp_w);
        ids
    }

    /// Convert a mask sequence to the `[t, 64, 44, 1]` input tensor.
    pub fn to_input(sil: &SilhouetteSequence) -> Arr {
        let t = sil.frames();
        let data: Vec<f64> = sil.data.iter().map(|&v| f64::from(v)).collect();
        Arr::from_shape_vec(ndarray::IxDyn(&[t, SIL_HEIGHT, SIL_WIDTH, 1]), data).unwrap()
    }

    /// Forward to the `[strips, out_dim]` silhouette feature.
    pub fn forward(&self, sess: &mut Session, input: Var) -> Result<Var> {
        let shape = sess.tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != SIL_HEIGHT || shape[2] != SIL_WIDTH || shape[3] != 1 {
            return Err(GaitError::InvalidInput(format!(
                "silhouette input must be [t, {SIL_HEIGHT}, {SIL_WIDTH}, 1], got {shape:?}"
            )));
        }
        let mut x = input;
        for stage in 0..3 {
            let w = sess.param(self.conv_w[stage]);
            let b = sess.param(self.conv_b[stage]);
            x = sess.tape.conv2d(x, w, b);
            x = sess.tape.relu(x);
            if stage < 2 {
                x = sess.tape.maxpool2(x);
            }
        }
        let pooled = sess.tape.max_frames(x);
        let strips = sess.tape.strip_pool(pooled, self.strips);
        let w = sess.param(self.hpp_w);
        Ok(sess.tape.hpp_project(strips, w))
    }
}

/// One spatial-temporal graph block: adjacency mixing with a pointwise
/// linear map, then a same-padded temporal convolution, with an identity
/// residual when the channel counts match.
#[derive(Debug, Clone)]
struct StgcnBlock {
    w_spatial: ParamId,
    b_spatial: ParamId,
    w_temporal: ParamId,
    b_temporal: ParamId,
    in_c: usize,
    out_c: usize,
}

/// Temporal kernel width of every graph block.
pub const TEMPORAL_KERNEL: usize = 9;

impl StgcnBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        prefix: &str,
    ) -> Self {
        Self {
            w_spatial: store.add(&format!("{prefix}.sp.w"), he_uniform(rng, &[in_c, out_c], in_c)),
            b_spatial: store.add(&format!("{prefix}.sp.b"), zeros_init(&[out_c])),
            w_temporal: store.add(
                &format!("{prefix}.tc.w"),
                he_uniform(rng, &[TEMPORAL_KERNEL, out_c, out_c], TEMPORAL_KERNEL * out_c),
            ),
            b_temporal: store.add(&format!("{prefix}.tc.b"), zeros_init(&[out_c])),
            in_c,
            out_c,
        }
    }

    fn forward(&self, sess: &mut Session, x: Var, adj: &Arc<Array2<f64>>) -> Var {
        let (t, k) = {
            let s = sess.tape.value(x).shape();
            (s[0], s[1])
        };
        let mixed = sess.tape.graph_mix(x, adj.clone());
        let flat = sess.tape.reshape(mixed, &[t * k, self.in_c]);
        let w = sess.param(self.w_spatial);
        let b = sess.param(self.b_spatial);
        let lin = sess.tape.matmul(flat, w);
        let lin = sess.tape.add_rowvec(lin, b);
        let spatial = sess.tape.reshape(lin, &[t, k, self.out_c]);
        let wt = sess.param(self.w_temporal);
        let bt = sess.param(self.b_temporal);
        let temporal = sess.tape.temporal_conv(spatial, wt, bt, TEMPORAL_KERNEL);
        let pre = if self.in_c == self.out_c {
            sess.tape.add(temporal, x)
        } else {
            temporal
        };
        sess.tape.relu(pre)
    }
}

/// Multi-block spatial-temporal graph encoder for one skeleton stream.
#[derive(Debug, Clone)]
pub struct StgcnEncoder {
    blocks: Vec<StgcnBlock>,
    pub adjacency: GraphAdjacency,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Per-node features plus the temporally and spatially pooled vector.
pub struct SkeletonFeature {
    /// `[t, K, out_dim]`
    pub per_node: Var,
    /// `[out_dim]`, mean over frames and nodes of `per_node`.
    pub pooled: Var,
}

impl StgcnEncoder {
    /// `channels` is the full schedule, e.g. `[64, 64, 128, 128, n_out]`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        adjacency: GraphAdjacency,
        in_dim: usize,
        channels: &[usize],
        prefix: &str,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut prev = in_dim;
        for (i, &c) in channels.iter().enumerate() {
            blocks.push(StgcnBlock::new(store, rng, prev, c, &format!("{prefix}.block{i}")));
            prev = c;
        }
        Self {
            blocks,
            adjacency,
            in_dim,
            out_dim: prev,
        }
    }

    /// Parameter ids of this encoder, in declaration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| [b.w_spatial, b.b_spatial, b.w_temporal, b.b_temporal])
            .collect()
    }

    pub fn forward(&self, sess: &mut Session, input: Var) -> Result<SkeletonFeature> {
        let shape = sess.tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.adjacency.nodes || shape[2] != self.in_dim {
            return Err(GaitError::InvalidInput(format!(
                "stream input must be [t, {}, {}], got {shape:?}",
                self.adjacency.nodes, self.in_dim
            )));
        }
        if !sess.tape.value(input).iter().all(|v| v.is_finite()) {
            return Err(GaitError::InvalidInput(
                "stream input contains non-finite values".into(),
            ));
        }
        let mut x = input;
        for block in &self.blocks {
            x = block.forward(sess, x, &self.adjacency.matrix);
        }
        let pooled = sess.tape.mean_tk(x);
        Ok(SkeletonFeature {
            per_node: x,
            pooled,
        })
    }
}
