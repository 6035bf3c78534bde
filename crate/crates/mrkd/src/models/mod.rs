//! Small CNN families for time-frequency inputs.
//!
//! A model is a flat parameter store plus a forward plan interpreted
//! against an autodiff graph. Parameter ids are assigned in creation
//! order, so a (config, seed) pair rebuilds bit-identically and
//! checkpoints match by name. Feature maps are treated as images:
//! time is height, frequency is width.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{
    load_checkpoint, save_checkpoint, AutodiffError, BnStats, Graph, Mode, Padding, ParamId,
    Tensor, Var,
};
use crate::autodiff::Element;

/// Momentum for running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;
/// Variance floor inside batch-norm.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Stacked 3x3 conv-bn-relu blocks with max pooling between stages.
    VggSmall,
    /// Strided stem plus residual blocks with identity or 1x1-projection
    /// shortcuts.
    ResnetSmall,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::VggSmall => "vgg_small",
            Family::ResnetSmall => "resnet_small",
        })
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vgg_small" => Ok(Family::VggSmall),
            "resnet_small" => Ok(Family::ResnetSmall),
            other => Err(ModelError::Config(format!(
                "unknown model family {other:?}, expected vgg_small or resnet_small"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub family: Family,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub input_channels: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Default widths: three stages of 16/32/64 channels, two blocks each.
    pub fn new(family: Family, input_channels: usize, n_classes: usize) -> Self {
        Self {
            family,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: 2,
            input_channels,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_classes < 2 {
            return Err(ModelError::Config(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        if self.stage_channels.is_empty() {
            return Err(ModelError::Config("stage_channels must be non-empty".into()));
        }
        if let Some(&bad) = self.stage_channels.iter().find(|&&c| c == 0) {
            return Err(ModelError::Config(format!(
                "stage_channels entries must be positive, got {bad}"
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(ModelError::Config("blocks_per_stage must be >= 1".into()));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(ModelError::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NamedParam<E: Element> {
    name: String,
    id: ParamId,
    tensor: Tensor<E>,
}

#[derive(Debug, Clone)]
pub(crate) struct ProjSpec {
    w: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
    stride: usize,
}

/// One instruction of the forward program. Indices address the model's
/// parameter and statistics stores.
#[derive(Debug, Clone)]
pub(crate) enum Step {
    Conv { w: usize, stride: usize },
    Bn { gamma: usize, beta: usize, stats: usize },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    SaveInput,
    MergeShortcut { proj: Option<ProjSpec> },
    GlobalAvgPool,
    Linear { w: usize, b: usize },
}

#[derive(Debug, Clone)]
pub struct Model<E: Element> {
    config: ModelConfig,
    params: Vec<NamedParam<E>>,
    bn_stats: Vec<BnStats<E>>,
    bn_names: Vec<String>,
    pub(crate) plan: Vec<Step>,
}

struct Builder<E: Element> {
    rng: ChaCha8Rng,
    params: Vec<NamedParam<E>>,
    bn_stats: Vec<BnStats<E>>,
    bn_names: Vec<String>,
    plan: Vec<Step>,
}

impl<E: Element> Builder<E> {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            bn_stats: Vec::new(),
            bn_names: Vec::new(),
            plan: Vec::new(),
        }
    }

    fn push_param(&mut self, name: String, tensor: Tensor<E>) -> usize {
        let idx = self.params.len();
        self.params.push(NamedParam { name, id: ParamId(idx as u64), tensor });
        idx
    }

    /// He initialization: N(0, 2 / fan_in), fan_in counted per output unit.
    fn he_tensor(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<E> {
        let std = (2.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            E::from_f64(z * std)
        })
    }

    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize) {
        let w = self.he_tensor(vec![out_c, in_c, k, k], in_c * k * k);
        let idx = self.push_param(format!("{name}.weight"), w);
        self.plan.push(Step::Conv { w: idx, stride });
    }

    fn bn_params(&mut self, name: &str, channels: usize) -> (usize, usize, usize) {
        let gamma = self.push_param(format!("{name}.gamma"), Tensor::filled(vec![channels], E::ONE));
        let beta = self.push_param(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let stats = self.bn_stats.len();
        self.bn_stats.push(BnStats::new(channels));
        self.bn_names.push(name.to_string());
        (gamma, beta, stats)
    }

    fn bn(&mut self, name: &str, channels: usize) {
        let (gamma, beta, stats) = self.bn_params(name, channels);
        self.plan.push(Step::Bn { gamma, beta, stats });
    }

    fn projection(&mut self, name: &str, in_c: usize, out_c: usize, stride: usize) -> ProjSpec {
        let w = self.he_tensor(vec![out_c, in_c, 1, 1], in_c);
        let w = self.push_param(format!("{name}.conv.weight"), w);
        let (gamma, beta, stats) = self.bn_params(&format!("{name}.bn"), out_c);
        ProjSpec { w, gamma, beta, stats, stride }
    }

    fn linear(&mut self, name: &str, in_f: usize, out_f: usize) {
        let w = self.he_tensor(vec![out_f, in_f], in_f);
        let w = self.push_param(format!("{name}.weight"), w);
        let b = self.push_param(format!("{name}.bias"), Tensor::zeros(vec![out_f]));
        self.plan.push(Step::Linear { w, b });
    }
}

/// Build an initialized network. The same (config, seed) pair always
/// yields bit-identical parameters.
pub fn build<E: Element>(cfg: &ModelConfig, seed: u64) -> Result<Model<E>, ModelError> {
    cfg.validate()?;
    let mut b: Builder<E> = Builder::new(seed);
    match cfg.family {
        Family::VggSmall => {
            let mut in_c = cfg.input_channels;
            for (s, &ch) in cfg.stage_channels.iter().enumerate() {
                for blk in 0..cfg.blocks_per_stage {
                    let name = format!("stage{s}.block{blk}");
                    b.conv(&format!("{name}.conv"), in_c, ch, 3, 1);
                    b.bn(&format!("{name}.bn"), ch);
                    b.plan.push(Step::Relu);
                    in_c = ch;
                }
                b.plan.push(Step::MaxPool { kernel: 2, stride: 2 });
            }
        }
        Family::ResnetSmall => {
            let ch0 = cfg.stage_channels[0];
            b.conv("stem.conv", cfg.input_channels, ch0, 3, 2);
            b.bn("stem.bn", ch0);
            b.plan.push(Step::Relu);
            b.plan.push(Step::MaxPool { kernel: 2, stride: 2 });
            let mut in_c = ch0;
            for (s, &ch) in cfg.stage_channels.iter().enumerate() {
                for blk in 0..cfg.blocks_per_stage {
                    let stride = if s > 0 && blk == 0 { 2 } else { 1 };
                    let name = format!("stage{s}.block{blk}");
                    b.plan.push(Step::SaveInput);
                    b.conv(&format!("{name}.conv1"), in_c, ch, 3, stride);
                    b.bn(&format!("{name}.bn1"), ch);
                    b.plan.push(Step::Relu);
                    b.conv(&format!("{name}.conv2"), ch, ch, 3, 1);
                    b.bn(&format!("{name}.bn2"), ch);
                    let proj = (stride != 1 || in_c != ch)
                        .then(|| b.projection(&format!("{name}.shortcut"), in_c, ch, stride));
                    b.plan.push(Step::MergeShortcut { proj });
                    b.plan.push(Step::Relu);
                    in_c = ch;
                }
            }
        }
    }
    b.plan.push(Step::GlobalAvgPool);
    let last = *cfg.stage_channels.last().expect("validated non-empty");
    b.linear("head", last, cfg.n_classes);

    Ok(Model {
        config: cfg.clone(),
        params: b.params,
        bn_stats: b.bn_stats,
        bn_names: b.bn_names,
        plan: b.plan,
    })
}

impl<E: Element> Model<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Total scalar parameter count (batch-norm statistics excluded).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, ParamId, &Tensor<E>)> {
        self.params.iter().map(|p| (p.name.as_str(), p.id, &p.tensor))
    }

    /// Mutable (id, tensor) view for the optimizer.
    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<E>)> {
        self.params.iter_mut().map(|p| (p.id, &mut p.tensor))
    }

    pub fn param_tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Run the forward plan. Train mode updates batch-norm running
    /// statistics; eval mode reads them and mutates nothing.
    pub fn forward(
        &mut self,
        g: &mut Graph<E>,
        input: Var,
        mode: Mode,
    ) -> Result<Var, AutodiffError> {
        let leaves: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), p.id))
            .collect();
        let mut cur = input;
        let mut saved: Vec<Var> = Vec::new();
        for i in 0..self.plan.len() {
            let step = self.plan[i].clone();
            cur = match step {
                Step::Conv { w, stride } => {
                    g.conv2d(cur, leaves[w], stride, Padding::Same)?
                }
                Step::Bn { gamma, beta, stats } => g.batch_norm(
                    cur,
                    leaves[gamma],
                    leaves[beta],
                    &mut self.bn_stats[stats],
                    mode,
                    BN_MOMENTUM,
                    BN_EPS,
                )?,
                Step::Relu => g.relu(cur)?,
                Step::MaxPool { kernel, stride } => g.max_pool2d(cur, kernel, stride)?,
                Step::SaveInput => {
                    saved.push(cur);
                    cur
                }
                Step::MergeShortcut { proj } => {
                    let block_input = saved.pop().expect("plan saves before it merges");
                    let shortcut = match proj {
                        None => block_input,
                        Some(p) => {
                            let c = g.conv2d(block_input, leaves[p.w], p.stride, Padding::Same)?;
                            g.batch_norm(
                                c,
                                leaves[p.gamma],
                                leaves[p.beta],
                                &mut self.bn_stats[p.stats],
                                mode,
                                BN_MOMENTUM,
                                BN_EPS,
                            )?
                        }
                    };
                    g.add(cur, shortcut)?
                }
                Step::GlobalAvgPool => g.global_avg_pool(cur)?,
                Step::Linear { w, b } => g.linear(cur, leaves[w], leaves[b])?,
            };
        }
        Ok(cur)
    }
}

impl Model<f32> {
    /// Named tensors for checkpointing: parameters plus running
    /// batch-norm statistics.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect();
        for (name, stats) in self.bn_names.iter().zip(&self.bn_stats) {
            out.push((format!("{name}.running_mean"), stats.running_mean.clone()));
            out.push((format!("{name}.running_var"), stats.running_var.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path, epoch: u32) -> Result<(), AutodiffError> {
        save_checkpoint(path, &self.named_tensors(), epoch)
    }

    /// Restore parameters and batch-norm statistics from a checkpoint.
    /// Every stored entry must match a slot by name and shape, and every
    /// slot must be filled. Returns the stored epoch.
    pub fn load_into(&mut self, path: &Path) -> Result<u32, ModelError> {
        let (entries, epoch) = load_checkpoint(path)?;
        let mut by_name: HashMap<String, Tensor<f32>> = entries.into_iter().collect();
        let mut fill = |name: &str, slot: &mut Tensor<f32>| -> Result<(), ModelError> {
            let tensor = by_name.remove(name).ok_or_else(|| {
                ModelError::CheckpointMismatch(format!("checkpoint is missing entry {name}"))
            })?;
            if tensor.shape() != slot.shape() {
                return Err(ModelError::CheckpointMismatch(format!(
                    "entry {name} has shape {:?}, the model expects {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor;
            Ok(())
        };
        for p in &mut self.params {
            fill(&p.name, &mut p.tensor)?;
        }
        for (name, stats) in self.bn_names.iter().zip(self.bn_stats.iter_mut()) {
            fill(&format!("{name}.running_mean"), &mut stats.running_mean)?;
            fill(&format!("{name}.running_var"), &mut stats.running_var)?;
        }
        if !by_name.is_empty() {
            let mut extra: Vec<&str> = by_name.keys().map(|s| s.as_str()).collect();
            extra.sort_unstable();
            return Err(ModelError::CheckpointMismatch(format!(
                "checkpoint has entries the model does not: {}",
                extra.join(", ")
            )));
        }
        Ok(epoch)
    }
}
