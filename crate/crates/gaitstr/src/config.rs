//! Flat `key = value` configuration files with line-numbered errors.
//!
//! Lines are `key = value`, `#` starts a comment, blank lines are ignored.
//! Command-line `--set key=value` overrides stack on top of file values.
//! Unknown keys are rejected by name so a typo never silently falls back
//! to a default.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{GaitError, Result};
use crate::refine::{CmaMode, ModelConfig, ModelVariant};
use crate::train::{OptimizerKind, TrainConfig};

/// Parsed key/value pairs with the line each came from (0 = override).
#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    pairs: BTreeMap<String, (String, usize)>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(GaitError::ConfigLine {
                    line: line_no,
                    msg: format!("expected 'key = value', got '{raw}'"),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(GaitError::ConfigLine {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            pairs.insert(key, (value.trim().to_string(), line_no));
        }
        Ok(Self { pairs })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides (line number 0).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                return Err(GaitError::Config(format!(
                    "override '{o}' must look like key=value"
                )));
            };
            self.pairs
                .insert(key.trim().to_string(), (value.trim().to_string(), 0));
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.pairs.remove(key)
    }
}

fn bad(key: &str, line: usize, value: &str, expect: &str) -> GaitError {
    GaitError::ConfigLine {
        line,
        msg: format!("key '{key}': cannot parse '{value}' as {expect}"),
    }
}

struct Reader {
    cfg: FlatConfig,
}

impl Reader {
    fn parse<T: std::str::FromStr>(&mut self, key: &str, expect: &str, into: &mut T) -> Result<()> {
        if let Some((v, line)) = self.cfg.take(key) {
            *into = v.parse().map_err(|_| bad(key, line, &v, expect))?;
        }
        Ok(())
    }

    fn parse_list(&mut self, key: &str, into: &mut Vec<usize>) -> Result<()> {
        if let Some((v, line)) = self.cfg.take(key) {
            *into = v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(key, line, &v, "a comma-separated list of integers"))?;
        }
        Ok(())
    }

    fn parse_u64_list(&mut self, key: &str, into: &mut Vec<u64>) -> Result<()> {
        if let Some((v, line)) = self.cfg.take(key) {
            if v.trim().is_empty() {
                *into = vec![];
                return Ok(());
            }
            *into = v
                .split(',')
                .map(|p| p.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(key, line, &v, "a comma-separated list of integers"))?;
        }
        Ok(())
    }
}

/// Resolve model and training configuration from flat keys, starting from
/// the given defaults. Every key must be known.
pub fn resolve_configs(
    cfg: FlatConfig,
    mut model: ModelConfig,
    mut train: TrainConfig,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut r = Reader { cfg };

    if let Some((v, line)) = r.cfg.take("model.variant") {
        model.variant = match v.as_str() {
            "silhouette" => ModelVariant::SilhouetteOnly,
            "silhouette_joints" => ModelVariant::SilhouetteJoints,
            "full" => ModelVariant::Full,
            _ => {
                return Err(bad(
                    "model.variant",
                    line,
                    &v,
                    "one of silhouette | silhouette_joints | full",
                ))
            }
        };
    }
    r.parse("model.topology", "a topology name", &mut model.topology)?;
    {
        let mut channels: Vec<usize> = model.conv_channels.to_vec();
        r.parse_list("model.conv_channels", &mut channels)?;
        if channels.len() != 3 {
            return Err(GaitError::Config(format!(
                "model.conv_channels needs exactly 3 entries, got {}",
                channels.len()
            )));
        }
        model.conv_channels = [channels[0], channels[1], channels[2]];
    }
    r.parse("model.feature_dim", "an integer", &mut model.feature_dim)?;
    r.parse("model.hpp_scale", "an integer", &mut model.hpp_scale)?;
    r.parse_list("model.stgcn_hidden", &mut model.stgcn_hidden)?;
    r.parse_list("model.decoder_channels", &mut model.decoder_channels)?;
    r.parse("model.cma_layers", "an integer", &mut model.cma_layers)?;
    r.parse("model.cma_hidden", "an integer", &mut model.cma_hidden)?;
    if let Some((v, line)) = r.cfg.take("model.cma_mode") {
        model.cma_mode = match v.as_str() {
            "both" => CmaMode::Both,
            "b2j" => CmaMode::BoneToJointOnly,
            "j2b" => CmaMode::JointToBoneOnly,
            "none" => CmaMode::None,
            _ => return Err(bad("model.cma_mode", line, &v, "one of both | b2j | j2b | none")),
        };
    }
    r.parse(
        "model.include_prerefine_bone",
        "true or false",
        &mut model.include_prerefine_bone,
    )?;

    r.parse("train.lambda_triplet", "a number", &mut train.lambda_triplet)?;
    r.parse("train.lambda_cls", "a number", &mut train.lambda_cls)?;
    r.parse("train.margin", "a number", &mut train.margin)?;
    r.parse("train.batch_p", "an integer", &mut train.batch_p)?;
    r.parse("train.batch_k", "an integer", &mut train.batch_k)?;
    r.parse("train.frames", "an integer", &mut train.frames)?;
    r.parse("train.learning_rate", "a number", &mut train.learning_rate)?;
    r.parse_u64_list("train.decay_steps", &mut train.decay_steps)?;
    r.parse("train.decay_factor", "a number", &mut train.decay_factor)?;
    r.parse("train.iterations", "an integer", &mut train.iterations)?;
    r.parse("train.seed", "an integer", &mut train.seed)?;
    if let Some((v, line)) = r.cfg.take("train.optimizer") {
        train.optimizer = match v.as_str() {
            "sgd" => OptimizerKind::Sgd { momentum: 0.9 },
            "adam" => OptimizerKind::default(),
            _ => return Err(bad("train.optimizer", line, &v, "sgd or adam")),
        };
    }
    if let Some((v, line)) = r.cfg.take("train.momentum") {
        let m: f64 = v.parse().map_err(|_| bad("train.momentum", line, &v, "a number"))?;
        if let OptimizerKind::Sgd { momentum } = &mut train.optimizer {
            *momentum = m;
        }
    }
    r.parse("train.jitter_rate", "a number", &mut train.jitter_rate)?;
    r.parse(
        "train.refinement_lr_scale",
        "a number",
        &mut train.refinement_lr_scale,
    )?;
    r.parse(
        "train.refinement_start",
        "an integer",
        &mut train.refinement_start,
    )?;
    r.parse(
        "train.refinement_weight_decay",
        "a number",
        &mut train.refinement_weight_decay,
    )?;
    r.parse(
        "train.jitter_magnitude",
        "a number",
        &mut train.jitter_magnitude,
    )?;
    r.parse("train.log_interval", "an integer", &mut train.log_interval)?;

    if let Some(key) = r.cfg.keys().next() {
        let line = r.cfg.pairs[key].1;
        return Err(GaitError::ConfigLine {
            line,
            msg: format!("unknown key '{key}'"),
        });
    }
    Ok((model, train))
}
