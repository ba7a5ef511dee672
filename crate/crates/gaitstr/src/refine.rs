//! Two-stream skeleton refinement and the full recognition model.
//!
//! Each skeleton stream (joints, bones) gets a correction decoder: the
//! flattened silhouette feature is tiled per node, concatenated with the
//! stream's per-node encoder features and raw coordinates, and pushed
//! through a reversed graph-convolution stack whose zero-initialized head
//! emits a residual coordinate adjustment. Cross-modal adapters exchange
//! per-frame summaries between the two decoder stacks after each layer,
//! both directions reading the pre-update peer features. Refined streams
//! are re-encoded with the original encoders (shared parameters) and the
//! silhouette, raw-stream and refined-stream features concatenate into the
//! recognition feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    build_adjacency, AdjacencyMode, GraphAdjacency, SilhouetteEncoder, SkeletonFeature,
    StgcnEncoder, TEMPORAL_KERNEL,
};
use crate::error::{GaitError, Result};
use crate::nn::params::{he_uniform, zeros_init, ParamId, ParamStore, Session};
use crate::nn::{Arr, Var};
use crate::seed;
use crate::skeleton::{joints_to_bones, GaitSample, JointSequence};
use crate::topology::SkeletonTopology;

/// Which feature combination the model produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Silhouette encoder only: `2^(P-1)` feature rows.
    SilhouetteOnly,
    /// Silhouette plus raw joint feature, no refinement.
    SilhouetteJoints,
    /// Both skeleton streams with correction and cross-modal adapters.
    Full,
}

/// Which adapter directions are wired between the two decoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmaMode {
    Both,
    BoneToJointOnly,
    JointToBoneOnly,
    None,
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub topology: String,
    /// Silhouette convolution channels per stage.
    pub conv_channels: [usize; 3],
    /// Shared feature width C of every fused part.
    pub feature_dim: usize,
    /// Horizontal pyramid scale P; the feature has `2^(P-1)` silhouette rows.
    pub hpp_scale: usize,
    /// Hidden channels of the skeleton encoders; the `feature_dim` output
    /// layer is appended internally.
    pub stgcn_hidden: Vec<usize>,
    /// Correction decoder channels before the 2-channel head.
    pub decoder_channels: Vec<usize>,
    /// Number of decoder layers bridged by cross-modal adapters.
    pub cma_layers: usize,
    /// Hidden width of each adapter perceptron.
    pub cma_hidden: usize,
    pub cma_mode: CmaMode,
    /// Keep the pre-refinement bone feature in the final concatenation.
    pub include_prerefine_bone: bool,
    /// Classifier width: number of training identities.
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::Full,
            topology: "synth13".into(),
            conv_channels: [32, 64, 128],
            feature_dim: 64,
            hpp_scale: 5,
            stgcn_hidden: vec![64, 64, 128, 128],
            decoder_channels: vec![128, 64, 64],
            cma_layers: 3,
            cma_hidden: 64,
            cma_mode: CmaMode::Both,
            include_prerefine_bone: true,
            num_classes: 8,
        }
    }
}

impl ModelConfig {
    /// Number of rows in the recognition feature.
    pub fn feature_rows(&self) -> usize {
        let strips = 1usize << (self.hpp_scale - 1);
        match self.variant {
            ModelVariant::SilhouetteOnly => strips,
            ModelVariant::SilhouetteJoints => strips + 1,
            ModelVariant::Full => strips + 3 + usize::from(self.include_prerefine_bone),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cma_layers > self.decoder_channels.len() {
            return Err(GaitError::Config(format!(
                "cma_layers {} exceeds decoder depth {}",
                self.cma_layers,
                self.decoder_channels.len()
            )));
        }
        if self.num_classes == 0 {
            return Err(GaitError::Config("num_classes must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(GaitError::Config("feature_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// A two-layer perceptron bridging decoder layers across streams.
///
/// The peer's per-node features are mean-pooled over its node axis, pushed
/// through the perceptron per frame and broadcast-added over the target's
/// nodes, which bridges the differing joint and bone node counts. The
/// output layer starts at zero so a fresh adapter is an identity residual.
#[derive(Debug, Clone)]
struct CrossModalAdapter {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl CrossModalAdapter {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        channels: usize,
        hidden: usize,
        prefix: &str,
    ) -> Self {
        Self {
            w1: store.add(
                &format!("{prefix}.w1"),
                he_uniform(rng, &[channels, hidden], channels),
            ),
            b1: store.add(&format!("{prefix}.b1"), zeros_init(&[hidden])),
            w2: store.add(&format!("{prefix}.w2"), zeros_init(&[hidden, channels])),
            b2: store.add(&format!("{prefix}.b2"), zeros_init(&[channels])),
        }
    }

    /// Project peer features `[t, K_peer, c]` to a per-frame message `[t, c]`.
    fn message(&self, sess: &mut Session, peer: Var) -> Var {
        let pooled = sess.tape.mean_nodes(peer);
        let w1 = sess.param(self.w1);
        let b1 = sess.param(self.b1);
        let h = sess.tape.matmul(pooled, w1);
        let h = sess.tape.add_rowvec(h, b1);
        let h = sess.tape.relu(h);
        let w2 = sess.param(self.w2);
        let b2 = sess.param(self.b2);
        let out = sess.tape.matmul(h, w2);
        sess.tape.add_rowvec(out, b2)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

/// Reversed graph-convolution stack decoding per-node residual adjustments.
#[derive(Debug, Clone)]
struct CorrectionDecoder {
    layers: Vec<DecoderLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    w_spatial: ParamId,
    b_spatial: ParamId,
    w_temporal: ParamId,
    b_temporal: ParamId,
    in_c: usize,
    out_c: usize,
}

impl CorrectionDecoder {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        in_dim: usize,
        channels: &[usize],
        prefix: &str,
    ) -> Self {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for (i, &c) in channels.iter().enumerate() {
            layers.push(DecoderLayer {
                w_spatial: store.add(
                    &format!("{prefix}.layer{i}.sp.w"),
                    he_uniform(rng, &[prev, c], prev),
                ),
                b_spatial: store.add(&format!("{prefix}.layer{i}.sp.b"), zeros_init(&[c])),
                w_temporal: store.add(
                    &format!("{prefix}.layer{i}.tc.w"),
                    he_uniform(rng, &[TEMPORAL_KERNEL, c, c], TEMPORAL_KERNEL * c),
                ),
                b_temporal: store.add(&format!("{prefix}.layer{i}.tc.b"), zeros_init(&[c])),
                in_c: prev,
                out_c: c,
            });
            prev = c;
        }
        // Zero-initialized head: a fresh decoder outputs a zero adjustment.
        let head_w = store.add(&format!("{prefix}.head.w"), zeros_init(&[prev, 2]));
        let head_b = store.add(&format!("{prefix}.head.b"), zeros_init(&[2]));
        Self {
            layers,
            head_w,
            head_b,
        }
    }

    fn layer_forward(
        &self,
        sess: &mut Session,
        layer_index: usize,
        x: Var,
        adj: &GraphAdjacency,
    ) -> Var {
        let l = &self.layers[layer_index];
        let (t, k) = {
            let s = sess.tape.value(x).shape();
            (s[0], s[1])
        };
        let mixed = sess.tape.graph_mix(x, adj.matrix.clone());
        let flat = sess.tape.reshape(mixed, &[t * k, l.in_c]);
        let w = sess.param(l.w_spatial);
        let b = sess.param(l.b_spatial);
        let lin = sess.tape.matmul(flat, w);
        let lin = sess.tape.add_rowvec(lin, b);
        let spatial = sess.tape.reshape(lin, &[t, k, l.out_c]);
        let wt = sess.param(l.w_temporal);
        let bt = sess.param(l.b_temporal);
        let temporal = sess.tape.temporal_conv(spatial, wt, bt, TEMPORAL_KERNEL);
        let pre = if l.in_c == l.out_c {
            sess.tape.add(temporal, x)
        } else {
            temporal
        };
        sess.tape.relu(pre)
    }

    fn head(&self, sess: &mut Session, x: Var) -> Var {
        let (t, k, c) = {
            let s = sess.tape.value(x).shape();
            (s[0], s[1], s[2])
        };
        let flat = sess.tape.reshape(x, &[t * k, c]);
        let w = sess.param(self.head_w);
        let b = sess.param(self.head_b);
        let lin = sess.tape.matmul(flat, w);
        let lin = sess.tape.add_rowvec(lin, b);
        sess.tape.reshape(lin, &[t, k, 2])
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .layers
            .iter()
            .flat_map(|l| [l.w_spatial, l.b_spatial, l.w_temporal, l.b_temporal])
            .collect();
        ids.push(self.head_w);
        ids.push(self.head_b);
        ids
    }
}

/// The assembled recognition model.
pub struct GaitStrModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub topology: SkeletonTopology,
    silhouette: SilhouetteEncoder,
    joint_encoder: Option<StgcnEncoder>,
    bone_encoder: Option<StgcnEncoder>,
    joint_decoder: Option<CorrectionDecoder>,
    bone_decoder: Option<CorrectionDecoder>,
    adapters_j2b: Vec<CrossModalAdapter>,
    adapters_b2j: Vec<CrossModalAdapter>,
    classifier_w: ParamId,
    classifier_b: ParamId,
}

/// Tape handles of one sample's forward pass.
pub struct SampleForward {
    /// `[rows, C]` recognition feature.
    pub feature: Var,
    /// `[1, num_classes]` classification logits.
    pub logits: Var,
    pub silhouette_feature: Var,
    pub joint_feature: Option<Var>,
    pub bone_feature: Option<Var>,
    pub refined_joint_feature: Option<Var>,
    pub refined_bone_feature: Option<Var>,
    /// `[t, K_J, 2]` refined joint coordinates.
    pub refined_joints: Option<Var>,
    /// `[t, K_B, 2]` refined bone vectors.
    pub refined_bones: Option<Var>,
    /// Input leaves, for gradient checks against the inputs.
    pub silhouette_input: Var,
    pub joint_input: Option<Var>,
    pub bone_input: Option<Var>,
}

/// Plain-value embedding bundle extracted from a forward pass.
#[derive(Debug, Clone)]
pub struct EmbeddingBundle {
    pub silhouette: Arr,
    pub joints: Option<Arr>,
    pub bones: Option<Arr>,
    pub refined_joints_feature: Option<Arr>,
    pub refined_bones_feature: Option<Arr>,
    /// `[rows, C]` concatenated recognition feature.
    pub feature: Arr,
    pub logits: Arr,
}

impl GaitStrModel {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let topology = SkeletonTopology::builtin(&config.topology)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(init_seed, &[seed::label("init")]));
        let c = config.feature_dim;

        let silhouette = SilhouetteEncoder::new(
            &mut store,
            &mut rng,
            config.conv_channels,
            config.hpp_scale,
            c,
            "sil",
        )?;

        let mut stgcn_channels = config.stgcn_hidden.clone();
        stgcn_channels.push(c);

        let needs_joints = config.variant != ModelVariant::SilhouetteOnly;
        let needs_bones = config.variant == ModelVariant::Full;

        let joint_encoder = needs_joints.then(|| {
            let adj = build_adjacency(&topology, AdjacencyMode::Joint);
            StgcnEncoder::new(&mut store, &mut rng, adj, 2, &stgcn_channels, "joint_enc")
        });
        let bone_encoder = needs_bones.then(|| {
            let adj = build_adjacency(&topology, AdjacencyMode::Bone);
            StgcnEncoder::new(&mut store, &mut rng, adj, 2, &stgcn_channels, "bone_enc")
        });

        let strips = 1usize << (config.hpp_scale - 1);
        let decoder_in = strips * c + c + 2;
        let joint_decoder = needs_bones.then(|| {
            CorrectionDecoder::new(
                &mut store,
                &mut rng,
                decoder_in,
                &config.decoder_channels,
                "joint_dec",
            )
        });
        let bone_decoder = needs_bones.then(|| {
            CorrectionDecoder::new(
                &mut store,
                &mut rng,
                decoder_in,
                &config.decoder_channels,
                "bone_dec",
            )
        });

        let mut adapters_j2b = Vec::new();
        let mut adapters_b2j = Vec::new();
        if needs_bones {
            for layer in 0..config.cma_layers {
                let ch = config.decoder_channels[layer];
                adapters_j2b.push(CrossModalAdapter::new(
                    &mut store,
                    &mut rng,
                    ch,
                    config.cma_hidden,
                    &format!("cma_j2b.layer{layer}"),
                ));
                adapters_b2j.push(CrossModalAdapter::new(
                    &mut store,
                    &mut rng,
                    ch,
                    config.cma_hidden,
                    &format!("cma_b2j.layer{layer}"),
                ));
            }
        }

        let flat_dim = config.feature_rows() * c;
        let classifier_w = store.add(
            "cls.w",
            he_uniform(&mut rng, &[flat_dim, config.num_classes], flat_dim),
        );
        let classifier_b = store.add("cls.b", zeros_init(&[config.num_classes]));

        Ok(Self {
            config,
            params: store,
            topology,
            silhouette,
            joint_encoder,
            bone_encoder,
            joint_decoder,
            bone_decoder,
            adapters_j2b,
            adapters_b2j,
            classifier_w,
            classifier_b,
        })
    }

    /// Ids of the joint-encoder parameters (shared across raw and refined
    /// passes by construction).
    pub fn joint_encoder_param_ids(&self) -> Vec<ParamId> {
        self.joint_encoder
            .as_ref()
            .map(|e| e.param_ids())
            .unwrap_or_default()
    }

    pub fn silhouette_param_ids(&self) -> Vec<ParamId> {
        self.silhouette.param_ids()
    }

    pub fn joint_decoder_param_ids(&self) -> Vec<ParamId> {
        self.joint_decoder
            .as_ref()
            .map(|d| d.param_ids())
            .unwrap_or_default()
    }

    pub fn adapter_param_ids(&self) -> Vec<ParamId> {
        self.adapters_j2b
            .iter()
            .chain(self.adapters_b2j.iter())
            .flat_map(|a| a.param_ids())
            .collect()
    }

    /// All correction-decoder and adapter parameters.
    pub fn refinement_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for d in [&self.joint_decoder, &self.bone_decoder]
            .into_iter()
            .flatten()
        {
            ids.extend(d.param_ids());
        }
        ids.extend(self.adapter_param_ids());
        ids
    }

    pub fn decoder_head_and_adapter_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for d in [&self.joint_decoder, &self.bone_decoder]
            .into_iter()
            .flatten()
        {
            ids.push(d.head_w);
            ids.push(d.head_b);
        }
        ids.extend(self.adapter_param_ids());
        ids
    }

    /// Zero the refinement outputs: decoder heads and adapter output layers.
    pub fn zero_refinement(&mut self) {
        for id in self.decoder_head_and_adapter_ids() {
            let shape = self.params.get(id).shape().to_vec();
            *self.params.get_mut(id) = crate::nn::zeros(&shape);
        }
    }

    /// Joint coordinates as a `[t, K, 2]` tensor.
    pub fn joints_input(joints: &JointSequence) -> Arr {
        let t = joints.frames();
        let k = joints.num_joints();
        Arr::from_shape_vec(
            ndarray::IxDyn(&[t, k, 2]),
            joints.data.iter().copied().collect(),
        )
        .unwrap()
    }

    /// Run both correction decoders with cross-modal exchange.
    ///
    /// Both streams advance one layer at a time; at adapter layers each
    /// stream receives the projection of the other's pre-update features.
    fn decode_pair(&self, sess: &mut Session, joint_in: Var, bone_in: Var) -> (Var, Var) {
        let jd = self.joint_decoder.as_ref().expect("full variant");
        let bd = self.bone_decoder.as_ref().expect("full variant");
        let j_adj = &self.joint_encoder.as_ref().expect("full variant").adjacency;
        let b_adj = &self.bone_encoder.as_ref().expect("full variant").adjacency;

        let mut j = joint_in;
        let mut b = bone_in;
        for layer in 0..jd.layers.len() {
            let j_hidden = jd.layer_forward(sess, layer, j, j_adj);
            let b_hidden = bd.layer_forward(sess, layer, b, b_adj);
            if layer < self.config.cma_layers {
                let to_j =
                    matches!(self.config.cma_mode, CmaMode::Both | CmaMode::BoneToJointOnly)
                        .then(|| self.adapters_b2j[layer].message(sess, b_hidden));
                let to_b =
                    matches!(self.config.cma_mode, CmaMode::Both | CmaMode::JointToBoneOnly)
                        .then(|| self.adapters_j2b[layer].message(sess, j_hidden));
                j = match to_j {
                    Some(m) => sess.tape.broadcast_add_nodes(j_hidden, m),
                    None => j_hidden,
                };
                b = match to_b {
                    Some(m) => sess.tape.broadcast_add_nodes(b_hidden, m),
                    None => b_hidden,
                };
            } else {
                j = j_hidden;
                b = b_hidden;
            }
        }
        (jd.head(sess, j), bd.head(sess, b))
    }

    /// Assemble the per-node decoder input `[t, K, strips*C + C + 2]`.
    fn decoder_input(
        &self,
        sess: &mut Session,
        silhouette_feature: Var,
        stream_feature: &SkeletonFeature,
        raw: Var,
    ) -> Var {
        let (t, k) = {
            let s = sess.tape.value(raw).shape();
            (s[0], s[1])
        };
        let strips = self.silhouette.strips;
        let c = self.config.feature_dim;
        let flat = sess.tape.reshape(silhouette_feature, &[strips * c]);
        let tiled = sess.tape.tile_to_nodes(flat, t, k);
        sess.tape
            .concat_last(&[tiled, stream_feature.per_node, raw])
    }

    /// Full forward pass for one sample already cut to the training length.
    pub fn forward(&self, sess: &mut Session, sample: &GaitSample) -> Result<SampleForward> {
        sample.validate()?;
        if sample.joints.topology != self.topology {
            return Err(GaitError::InvalidInput(format!(
                "sample uses topology {}, model expects {}",
                sample.joints.topology.name, self.topology.name
            )));
        }
        let sil_input = sess.input(SilhouetteEncoder::to_input(&sample.silhouettes));
        let f_s = self.silhouette.forward(sess, sil_input)?;
        let c = self.config.feature_dim;

        let mut rows: Vec<Var> = vec![f_s];
        let mut out = SampleForward {
            feature: f_s,
            logits: f_s,
            silhouette_feature: f_s,
            joint_feature: None,
            bone_feature: None,
            refined_joint_feature: None,
            refined_bone_feature: None,
            refined_joints: None,
            refined_bones: None,
            silhouette_input: sil_input,
            joint_input: None,
            bone_input: None,
        };

        if let Some(joint_encoder) = &self.joint_encoder {
            let j_in = sess.input(Self::joints_input(&sample.joints));
            out.joint_input = Some(j_in);
            let j_feat = joint_encoder.forward(sess, j_in)?;
            let f_j = sess.tape.reshape(j_feat.pooled, &[1, c]);
            out.joint_feature = Some(f_j);

            match (&self.bone_encoder, self.config.variant) {
                (Some(bone_encoder), ModelVariant::Full) => {
                    let bones = joints_to_bones(&sample.joints);
                    let b_in = sess.input(
                        Arr::from_shape_vec(
                            ndarray::IxDyn(&[bones.frames(), self.topology.num_bones(), 2]),
                            bones.data.iter().copied().collect(),
                        )
                        .unwrap(),
                    );
                    out.bone_input = Some(b_in);
                    let b_feat = bone_encoder.forward(sess, b_in)?;
                    let f_b = sess.tape.reshape(b_feat.pooled, &[1, c]);
                    out.bone_feature = Some(f_b);

                    let j_dec_in = self.decoder_input(sess, f_s, &j_feat, j_in);
                    let b_dec_in = self.decoder_input(sess, f_s, &b_feat, b_in);
                    let (dj, db) = self.decode_pair(sess, j_dec_in, b_dec_in);
                    let j_refined = sess.tape.add(j_in, dj);
                    let b_refined = sess.tape.add(b_in, db);
                    out.refined_joints = Some(j_refined);
                    out.refined_bones = Some(b_refined);

                    let j2 = joint_encoder.forward(sess, j_refined)?;
                    let b2 = bone_encoder.forward(sess, b_refined)?;
                    let f_j2 = sess.tape.reshape(j2.pooled, &[1, c]);
                    let f_b2 = sess.tape.reshape(b2.pooled, &[1, c]);
                    out.refined_joint_feature = Some(f_j2);
                    out.refined_bone_feature = Some(f_b2);

                    rows.push(f_j);
                    if self.config.include_prerefine_bone {
                        rows.push(f_b);
                    }
                    rows.push(f_j2);
                    rows.push(f_b2);
                }
                _ => {
                    rows.push(f_j);
                }
            }
        }

        let feature = if rows.len() == 1 {
            rows[0]
        } else {
            sess.tape.concat_rows(&rows)
        };
        let flat_dim = self.config.feature_rows() * c;
        let flat = sess.tape.reshape(feature, &[1, flat_dim]);
        let w = sess.param(self.classifier_w);
        let b = sess.param(self.classifier_b);
        let lin = sess.tape.matmul(flat, w);
        let logits = sess.tape.add_rowvec(lin, b);

        out.feature = feature;
        out.logits = logits;
        Ok(out)
    }

    /// Forward one sample and extract plain values.
    pub fn embed(&self, sample: &GaitSample) -> Result<EmbeddingBundle> {
        let mut sess = Session::new(&self.params);
        let fwd = self.forward(&mut sess, sample)?;
        let take = |v: Option<Var>| v.map(|v| sess.tape.value(v).clone());
        Ok(EmbeddingBundle {
            silhouette: sess.tape.value(fwd.silhouette_feature).clone(),
            joints: take(fwd.joint_feature),
            bones: take(fwd.bone_feature),
            refined_joints_feature: take(fwd.refined_joint_feature),
            refined_bones_feature: take(fwd.refined_bone_feature),
            feature: sess.tape.value(fwd.feature).clone(),
            logits: sess.tape.value(fwd.logits).clone(),
        })
    }

    /// Refine a sample's skeleton streams, returning `J'` and the raw `B'`
    /// tensor.
    pub fn refine(&self, sample: &GaitSample) -> Result<(JointSequence, Arr)> {
        if self.config.variant != ModelVariant::Full {
            return Err(GaitError::InvalidInput(
                "refinement requires the full model variant".into(),
            ));
        }
        let mut sess = Session::new(&self.params);
        let fwd = self.forward(&mut sess, sample)?;
        let j = sess
            .tape
            .value(fwd.refined_joints.expect("full variant"))
            .clone();
        let b = sess
            .tape
            .value(fwd.refined_bones.expect("full variant"))
            .clone();
        let t = sample.joints.frames();
        let k = sample.joints.num_joints();
        let data = ndarray::Array3::from_shape_vec((t, k, 2), j.iter().copied().collect())
            .expect("refined joints shape");
        Ok((JointSequence::new(data, sample.joints.topology.clone())?, b))
    }

    pub fn classifier_param_ids(&self) -> (ParamId, ParamId) {
        (self.classifier_w, self.classifier_b)
    }
}
