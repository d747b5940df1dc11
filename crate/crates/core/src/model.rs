//! Full network assembly: a spectrally re-filtered convolutional embedding,
//! alternating downsample stages and attention/feedforward blocks, and a
//! two-layer classifier head.
//!
//! An input window `[B, 1, L]` is lifted to `embed_channels` by a wide
//! length-preserving convolution whose output is adaptively re-weighted in
//! the frequency domain. Each subsequent stage halves the sequence roughly
//! twice over (strided convolution or padding-free pooling) while doubling
//! channels, then runs a pre-normalized pair of layer stacks: multiscale
//! convolutional attention followed by feedforwards that detour through a
//! learnable spectral filter. The surviving feature map flattens into
//! `fc1 → GELU → fc2` logits. Sub-layers are plain structs with public
//! fields; [`Model`] wires them together and owns the stable parameter
//! naming that checkpoints rely on.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv_output_length, gelu, maxpool1d, softmax, BatchNorm1d, Conv1d, Linear, Mode,
};
use crate::spectral::{far_reconstruct, SpectralWeight};
use crate::tensor::Tensor;
use crate::Real;

/// First downsample stage: strided wide convolution, channels held.
const FIRST_DOWN_KERNEL: usize = 64;
const FIRST_DOWN_STRIDE: usize = 2;
/// Later downsample stages: length-preserving convolution, channels doubled.
const DOWN_KERNEL: usize = 5;
const DOWN_PADDING: usize = 2;
/// Pooling applied after every downsample convolution.
const POOL_KERNEL: usize = 3;
const POOL_STRIDE: usize = 2;
/// Depthwise kernel inside the feedforward.
const FFN_DW_KERNEL: usize = 3;

/// Structural variant switch: which of the three signature pieces are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// The full architecture.
    None,
    /// Attention layers keep only their channel-mixing convolutions; the
    /// multiscale branches and softmax gate are dropped.
    NonMsa,
    /// Feedforwards skip the spectral filter and squeeze the depthwise
    /// output directly.
    NonFft,
    /// The embedding is the plain convolution, with no spectral residual.
    NonFarel,
}

impl Ablation {
    const TAGS: [(&'static str, Ablation); 4] = [
        ("none", Ablation::None),
        ("non_msa", Ablation::NonMsa),
        ("non_fft", Ablation::NonFft),
        ("non_farel", Ablation::NonFarel),
    ];
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, _) = Ablation::TAGS
            .iter()
            .find(|(_, a)| a == self)
            .expect("every variant is tabled");
        f.write_str(tag)
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Ablation> {
        Ablation::TAGS
            .iter()
            .find(|(tag, _)| *tag == s)
            .map(|&(_, a)| a)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown ablation `{s}`; expected one of none, non_msa, non_fft, non_farel"
                ))
            })
    }
}

/// Axis the attention softmax normalizes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAxis {
    /// Across time positions, separately per channel (the default).
    Time,
    /// Across channels, separately per time position.
    Channel,
}

impl AttentionAxis {
    fn index(self) -> usize {
        match self {
            AttentionAxis::Time => 2,
            AttentionAxis::Channel => 1,
        }
    }
}

impl fmt::Display for AttentionAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionAxis::Time => "time",
            AttentionAxis::Channel => "channel",
        })
    }
}

impl FromStr for AttentionAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<AttentionAxis> {
        match s {
            "time" => Ok(AttentionAxis::Time),
            "channel" => Ok(AttentionAxis::Channel),
            other => Err(Error::config(format!(
                "unknown attention axis `{other}`; expected time or channel"
            ))),
        }
    }
}

/// Everything that determines the architecture. Two models built from equal
/// configs have identical parameter names, shapes, and counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Length of one input window, in samples.
    pub input_length: usize,
    /// Channels produced by the embedding convolution.
    pub embed_channels: usize,
    /// Kernel of the embedding convolution; odd, length-preserving.
    pub embed_kernel: usize,
    /// Number of downsample + block stages.
    pub num_blocks: usize,
    /// Attention layers per block.
    pub attention_per_block: usize,
    /// Feedforward layers per block.
    pub feedforward_per_block: usize,
    /// Kernels of the parallel attention branches; each odd.
    pub branch_kernels: Vec<usize>,
    /// Channel expansion factor inside the feedforward.
    pub feedforward_expansion: usize,
    /// Scale applied to every spectral reconstruction path.
    pub gamma: Real,
    /// Output classes.
    pub num_classes: usize,
    /// Width of the penultimate linear layer.
    pub classifier_hidden: usize,
    /// Structural variant switch.
    pub ablation: Ablation,
    /// Softmax axis inside the attention layers.
    pub attention_axis: AttentionAxis,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            input_length: 2048,
            embed_channels: 32,
            embed_kernel: 63,
            num_blocks: 4,
            attention_per_block: 2,
            feedforward_per_block: 2,
            branch_kernels: vec![3, 5],
            feedforward_expansion: 2,
            gamma: 0.1,
            num_classes: 4,
            classifier_hidden: 256,
            ablation: Ablation::None,
            attention_axis: AttentionAxis::Time,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_length < 2 {
            return Err(Error::config("input_length must be ≥ 2"));
        }
        if self.embed_channels == 0
            || self.num_classes == 0
            || self.classifier_hidden == 0
            || self.feedforward_expansion == 0
        {
            return Err(Error::config(
                "embed_channels, num_classes, classifier_hidden, and feedforward_expansion must be ≥ 1",
            ));
        }
        if self.num_blocks == 0 || self.attention_per_block == 0 || self.feedforward_per_block == 0
        {
            return Err(Error::config(
                "num_blocks, attention_per_block, and feedforward_per_block must be ≥ 1",
            ));
        }
        if self.embed_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "embed_kernel must be odd to preserve length, got {}",
                self.embed_kernel
            )));
        }
        if self.branch_kernels.is_empty() {
            return Err(Error::config("branch_kernels must name at least one kernel"));
        }
        if let Some(&k) = self.branch_kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::config(format!(
                "branch kernels must be odd to preserve length, got {k}"
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config(format!(
                "gamma must be finite and ≥ 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// `(channels, length)` of the feature map entering each block.
    pub fn stage_plan(&self) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let mut stages = Vec::with_capacity(self.num_blocks);
        let mut channels = self.embed_channels;
        let mut length = self.input_length;
        for i in 0..self.num_blocks {
            let conv_out = if i == 0 {
                conv_output_length(length, FIRST_DOWN_KERNEL, FIRST_DOWN_STRIDE, 0)?
            } else {
                channels *= 2;
                conv_output_length(length, DOWN_KERNEL, 1, DOWN_PADDING)?
            };
            length = conv_output_length(conv_out, POOL_KERNEL, POOL_STRIDE, 0)?;
            if length < 2 {
                return Err(Error::config(format!(
                    "sequence length collapses to {length} entering block {i}; \
                     the spectral feedforward needs length ≥ 2"
                )));
            }
            stages.push((channels, length));
        }
        Ok(stages)
    }

    /// Flattened feature width entering the classifier.
    pub fn flattened_size(&self) -> Result<usize> {
        let (c, l) = *self.stage_plan()?.last().expect("num_blocks ≥ 1");
        Ok(c * l)
    }

    /// Serializes as `key = value` lines, one per field.
    pub fn to_kv_string(&self) -> String {
        let branches: Vec<String> = self.branch_kernels.iter().map(|k| k.to_string()).collect();
        format!(
            "input_length = {}\n\
             embed_channels = {}\n\
             embed_kernel = {}\n\
             num_blocks = {}\n\
             attention_per_block = {}\n\
             feedforward_per_block = {}\n\
             branch_kernels = {}\n\
             feedforward_expansion = {}\n\
             gamma = {}\n\
             num_classes = {}\n\
             classifier_hidden = {}\n\
             ablation = {}\n\
             attention_axis = {}\n",
            self.input_length,
            self.embed_channels,
            self.embed_kernel,
            self.num_blocks,
            self.attention_per_block,
            self.feedforward_per_block,
            branches.join(","),
            self.feedforward_expansion,
            self.gamma,
            self.num_classes,
            self.classifier_hidden,
            self.ablation,
            self.attention_axis,
        )
    }

    /// Parses `key = value` lines; keys not present keep their defaults.
    /// Blank lines and `#` comments are skipped; unknown keys are errors.
    pub fn from_kv_str(text: &str) -> Result<ModelConfig> {
        let mut config = ModelConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            config.apply_kv(line, key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Applies a single `key = value` assignment; shared with config-file
    /// parsing in the command-line tool.
    pub fn apply_kv(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "input_length" => self.input_length = parse_kv(line, key, value)?,
            "embed_channels" => self.embed_channels = parse_kv(line, key, value)?,
            "embed_kernel" => self.embed_kernel = parse_kv(line, key, value)?,
            "num_blocks" => self.num_blocks = parse_kv(line, key, value)?,
            "attention_per_block" => self.attention_per_block = parse_kv(line, key, value)?,
            "feedforward_per_block" => self.feedforward_per_block = parse_kv(line, key, value)?,
            "branch_kernels" => {
                self.branch_kernels = value
                    .split(',')
                    .map(|part| parse_kv(line, key, part.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            "feedforward_expansion" => self.feedforward_expansion = parse_kv(line, key, value)?,
            "gamma" => self.gamma = parse_kv(line, key, value)?,
            "num_classes" => self.num_classes = parse_kv(line, key, value)?,
            "classifier_hidden" => self.classifier_hidden = parse_kv(line, key, value)?,
            "ablation" => {
                self.ablation = value.parse().map_err(|e| Error::Parse {
                    line,
                    msg: format!("{e}"),
                })?;
            }
            "attention_axis" => {
                self.attention_axis = value.parse().map_err(|e| Error::Parse {
                    line,
                    msg: format!("{e}"),
                })?;
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }
}

fn parse_kv<T>(line: usize, key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("bad value `{value}` for `{key}`: {e}"),
    })
}

/// Wide convolution from the raw single-channel window, plus an adaptive
/// frequency-domain residual: `conv(x) + γ·irdft(W ⊗ rdft(conv(x)))`.
pub struct SpectralEmbedding {
    pub conv: Conv1d,
    pub filter: Option<SpectralWeight>,
    pub gamma: Real,
}

impl SpectralEmbedding {
    fn new(config: &ModelConfig, rng: &mut impl Rng) -> Result<SpectralEmbedding> {
        let conv = Conv1d::new(
            1,
            config.embed_channels,
            config.embed_kernel,
            1,
            (config.embed_kernel - 1) / 2,
            rng,
        )?;
        let filter = match config.ablation {
            Ablation::NonFarel => None,
            _ => Some(SpectralWeight::identity(
                config.embed_channels,
                config.input_length / 2 + 1,
            )?),
        };
        Ok(SpectralEmbedding {
            conv,
            filter,
            gamma: config.gamma,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mapped = self.conv.forward(x)?;
        match &self.filter {
            Some(w) => mapped.add(&far_reconstruct(&mapped, w, self.gamma)?),
            None => Ok(mapped),
        }
    }
}

/// The multiscale branches and softmax gate of an attention layer.
pub struct AttentionGate {
    /// Parallel length-preserving convolutions, summed.
    pub branches: Vec<Conv1d>,
    /// 1×1 convolution fusing the softmax map before it gates the features.
    pub project: Conv1d,
}

/// Multiscale convolutional attention. The input is channel-mixed, run
/// through parallel branches whose summed response is softmax-normalized and
/// projected into a multiplicative gate, then channel-mixed again around two
/// residual connections.
pub struct MultiscaleAttention {
    pub reduce: Conv1d,
    pub gate: Option<AttentionGate>,
    pub out: Conv1d,
    pub axis: AttentionAxis,
}

impl MultiscaleAttention {
    fn new(channels: usize, config: &ModelConfig, rng: &mut impl Rng) -> Result<MultiscaleAttention> {
        let reduce = Conv1d::new(channels, channels, 1, 1, 0, rng)?;
        let gate = match config.ablation {
            Ablation::NonMsa => None,
            _ => {
                let mut branches = Vec::with_capacity(config.branch_kernels.len());
                for &k in &config.branch_kernels {
                    branches.push(Conv1d::new(channels, channels, k, 1, (k - 1) / 2, rng)?);
                }
                let project = Conv1d::new(channels, channels, 1, 1, 0, rng)?;
                Some(AttentionGate { branches, project })
            }
        };
        let out = Conv1d::new(channels, channels, 1, 1, 0, rng)?;
        Ok(MultiscaleAttention {
            reduce,
            gate,
            out,
            axis: config.attention_axis,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_attention(x)?.0)
    }

    /// Forward pass that also hands back the softmax attention map
    /// `[B, C, L]`, when the gate exists.
    pub fn forward_with_attention(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let y1 = self.reduce.forward(x)?;
        let (y3, attention) = match &self.gate {
            Some(gate) => {
                let mut summed = gate.branches[0].forward(&y1)?;
                for branch in &gate.branches[1..] {
                    summed = summed.add(&branch.forward(&y1)?)?;
                }
                let attention = softmax(&summed, self.axis.index())?;
                let gated = gate.project.forward(&attention)?.mul(&y1)?.add(&y1)?;
                (gated, Some(attention))
            }
            None => (y1.clone(), None),
        };
        let y4 = self.out.forward(&gelu(&y3))?.add(x)?;
        Ok((y4, attention))
    }
}

/// Feedforward with a learnable spectral detour: expand channels, depthwise
/// convolve, GELU, re-weight the spectrum by `W` scaled with `γ`, squeeze
/// back, and add to the input.
pub struct SpectralFfn {
    pub expand: Conv1d,
    pub depthwise: Conv1d,
    pub filter: Option<SpectralWeight>,
    pub gamma: Real,
    pub squeeze: Conv1d,
}

impl SpectralFfn {
    fn new(
        channels: usize,
        length: usize,
        config: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<SpectralFfn> {
        let wide = channels * config.feedforward_expansion;
        let expand = Conv1d::new(channels, wide, 1, 1, 0, rng)?;
        let depthwise = Conv1d::new_depthwise(wide, FFN_DW_KERNEL, rng)?;
        let filter = match config.ablation {
            Ablation::NonFft => None,
            _ => Some(SpectralWeight::identity(wide, length / 2 + 1)?),
        };
        let squeeze = Conv1d::new(wide, channels, 1, 1, 0, rng)?;
        Ok(SpectralFfn {
            expand,
            depthwise,
            filter,
            gamma: config.gamma,
            squeeze,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let inner = gelu(&self.depthwise.forward(&self.expand.forward(x)?)?);
        let routed = match &self.filter {
            Some(w) => far_reconstruct(&inner, w, self.gamma)?,
            None => inner,
        };
        x.add(&self.squeeze.forward(&routed)?)
    }
}

/// Strided convolution (first stage) or channel-doubling convolution (later
/// stages), GELU, then max pooling. Trims the time axis sharply so the next
/// block works on a focused map.
pub struct Downsample {
    pub conv: Conv1d,
}

impl Downsample {
    fn new(in_channels: usize, first: bool, rng: &mut impl Rng) -> Result<Downsample> {
        let conv = if first {
            Conv1d::new(in_channels, in_channels, FIRST_DOWN_KERNEL, FIRST_DOWN_STRIDE, 0, rng)?
        } else {
            Conv1d::new(in_channels, in_channels * 2, DOWN_KERNEL, 1, DOWN_PADDING, rng)?
        };
        Ok(Downsample { conv })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        maxpool1d(&gelu(&self.conv.forward(x)?), POOL_KERNEL, POOL_STRIDE)
    }
}

/// One processing block: pre-normalized attention stack, then a
/// pre-normalized feedforward stack.
pub struct Block {
    pub norm_attn: BatchNorm1d,
    pub attention: Vec<MultiscaleAttention>,
    pub norm_ffn: BatchNorm1d,
    pub feedforward: Vec<SpectralFfn>,
}

impl Block {
    fn new(
        channels: usize,
        length: usize,
        config: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Block> {
        let norm_attn = BatchNorm1d::new(channels)?;
        let mut attention = Vec::with_capacity(config.attention_per_block);
        for _ in 0..config.attention_per_block {
            attention.push(MultiscaleAttention::new(channels, config, rng)?);
        }
        let norm_ffn = BatchNorm1d::new(channels)?;
        let mut feedforward = Vec::with_capacity(config.feedforward_per_block);
        for _ in 0..config.feedforward_per_block {
            feedforward.push(SpectralFfn::new(channels, length, config, rng)?);
        }
        Ok(Block {
            norm_attn,
            attention,
            norm_ffn,
            feedforward,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_capture(x, mode, None)?.0)
    }

    fn forward_capture(
        &self,
        x: &Tensor,
        mode: Mode,
        capture_layer: Option<usize>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let mut h = self.norm_attn.forward(x, mode)?;
        let mut captured = None;
        for (j, layer) in self.attention.iter().enumerate() {
            let (next, attention) = layer.forward_with_attention(&h)?;
            h = next;
            if capture_layer == Some(j) {
                captured = attention;
            }
        }
        h = self.norm_ffn.forward(&h, mode)?;
        for ffn in &self.feedforward {
            h = ffn.forward(&h)?;
        }
        Ok((h, captured))
    }
}

/// The assembled network. Parameter initialization is a deterministic
/// function of `(config, seed)`.
pub struct Model {
    config: ModelConfig,
    pub embedding: SpectralEmbedding,
    pub downsamples: Vec<Downsample>,
    pub blocks: Vec<Block>,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Model> {
        let plan = config.stage_plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = SpectralEmbedding::new(config, &mut rng)?;
        let mut downsamples = Vec::with_capacity(config.num_blocks);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut channels = config.embed_channels;
        for (i, &(stage_channels, stage_length)) in plan.iter().enumerate() {
            downsamples.push(Downsample::new(channels, i == 0, &mut rng)?);
            channels = stage_channels;
            blocks.push(Block::new(stage_channels, stage_length, config, &mut rng)?);
        }
        let (last_channels, last_length) = *plan.last().expect("num_blocks ≥ 1");
        let fc1 = Linear::new(last_channels * last_length, config.classifier_hidden, &mut rng)?;
        let fc2 = Linear::new(config.classifier_hidden, config.num_classes, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            embedding,
            downsamples,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Raw class logits `[B, num_classes]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.run(x, mode, None)?.0)
    }

    /// Logits plus the `[B, classifier_hidden]` output of the penultimate
    /// linear layer, before its activation.
    pub fn forward_with_features(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let (logits, features, _) = self.run(x, mode, None)?;
        Ok((logits, features))
    }

    /// Logits plus the channel-averaged attention map `[B, L_block]` of the
    /// chosen attention layer. The map is detached from the tape.
    pub fn forward_with_attention(
        &self,
        x: &Tensor,
        mode: Mode,
        block: usize,
        layer: usize,
    ) -> Result<(Tensor, Tensor)> {
        if self.config.ablation == Ablation::NonMsa {
            return Err(Error::config("the non_msa variant has no attention maps"));
        }
        if block >= self.config.num_blocks || layer >= self.config.attention_per_block {
            return Err(Error::config(format!(
                "attention site (block {block}, layer {layer}) out of range: {} blocks with {} attention layers each",
                self.config.num_blocks, self.config.attention_per_block
            )));
        }
        let (logits, _, attention) = self.run(x, mode, Some((block, layer)))?;
        let attention = attention.expect("capture site was validated");
        Ok((logits, channel_mean(&attention)?))
    }

    /// The attention site visualized by default: first attention layer of
    /// the last block.
    pub fn default_attention_site(&self) -> (usize, usize) {
        (self.config.num_blocks - 1, 0)
    }

    /// Predicted class index per sample, by largest logit (softmax is
    /// monotone, so it is skipped).
    pub fn predict(&self, x: &Tensor, mode: Mode) -> Result<Vec<usize>> {
        self.forward(x, mode)?.argmax_rows()
    }

    fn run(
        &self,
        x: &Tensor,
        mode: Mode,
        capture: Option<(usize, usize)>,
    ) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        if x.rank() != 3 || x.shape()[1] != 1 || x.shape()[2] != self.config.input_length {
            return Err(Error::dim(format!(
                "model input must be [batch, 1, {}], got {:?}",
                self.config.input_length,
                x.shape()
            )));
        }
        let mut h = self.embedding.forward(x)?;
        let mut attention = None;
        for (i, (down, block)) in self.downsamples.iter().zip(&self.blocks).enumerate() {
            h = down.forward(&h)?;
            let wanted = capture.and_then(|(b, l)| (b == i).then_some(l));
            let (next, captured) = block.forward_capture(&h, mode, wanted)?;
            h = next;
            if captured.is_some() {
                attention = captured;
            }
        }
        let batch = h.shape()[0];
        let flat = h.reshape(&[batch, h.len() / batch])?;
        let features = self.fc1.forward(&flat)?;
        let logits = self.fc2.forward(&gelu(&features))?;
        Ok((logits, features, attention))
    }

    /// Every learnable tensor under a stable dotted name, in construction
    /// order. The names are the checkpoint format's record keys.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params = Vec::new();
        push_conv(&mut params, "embed.conv", &self.embedding.conv);
        if let Some(w) = &self.embedding.filter {
            params.push(("embed.filter".into(), w.packed().clone()));
        }
        for (i, down) in self.downsamples.iter().enumerate() {
            push_conv(&mut params, &format!("down{i}.conv"), &down.conv);
        }
        for (b, block) in self.blocks.iter().enumerate() {
            params.push((format!("block{b}.norm_attn.scale"), block.norm_attn.scale.clone()));
            params.push((format!("block{b}.norm_attn.shift"), block.norm_attn.shift.clone()));
            for (j, layer) in block.attention.iter().enumerate() {
                let base = format!("block{b}.attn{j}");
                push_conv(&mut params, &format!("{base}.reduce"), &layer.reduce);
                if let Some(gate) = &layer.gate {
                    for (k, branch) in gate.branches.iter().enumerate() {
                        push_conv(&mut params, &format!("{base}.branch{k}"), branch);
                    }
                    push_conv(&mut params, &format!("{base}.project"), &gate.project);
                }
                push_conv(&mut params, &format!("{base}.out"), &layer.out);
            }
            params.push((format!("block{b}.norm_ffn.scale"), block.norm_ffn.scale.clone()));
            params.push((format!("block{b}.norm_ffn.shift"), block.norm_ffn.shift.clone()));
            for (j, ffn) in block.feedforward.iter().enumerate() {
                let base = format!("block{b}.ffn{j}");
                push_conv(&mut params, &format!("{base}.expand"), &ffn.expand);
                push_conv(&mut params, &format!("{base}.depthwise"), &ffn.depthwise);
                if let Some(w) = &ffn.filter {
                    params.push((format!("{base}.filter"), w.packed().clone()));
                }
                push_conv(&mut params, &format!("{base}.squeeze"), &ffn.squeeze);
            }
        }
        params.push(("fc1.weight".into(), self.fc1.weights.clone()));
        params.push(("fc1.bias".into(), self.fc1.bias.clone()));
        params.push(("fc2.weight".into(), self.fc2.weights.clone()));
        params.push(("fc2.bias".into(), self.fc2.bias.clone()));
        params
    }

    /// The normalization layers under their stable names; their running
    /// statistics ride along in checkpoints next to the parameters.
    pub fn named_norms(&self) -> Vec<(String, &BatchNorm1d)> {
        let mut norms = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            norms.push((format!("block{b}.norm_attn"), &block.norm_attn));
            norms.push((format!("block{b}.norm_ffn"), &block.norm_ffn));
        }
        norms
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

fn push_conv(params: &mut Vec<(String, Tensor)>, base: &str, conv: &Conv1d) {
    params.push((format!("{base}.weight"), conv.weights.clone()));
    params.push((format!("{base}.bias"), conv.bias.clone()));
}

/// `[B, C, L]` → `[B, L]` mean over channels, as a fresh constant tensor.
fn channel_mean(attention: &Tensor) -> Result<Tensor> {
    if attention.rank() != 3 {
        return Err(Error::dim(format!(
            "channel mean needs [batch, channels, length], got {:?}",
            attention.shape()
        )));
    }
    let (b, c, l) = (
        attention.shape()[0],
        attention.shape()[1],
        attention.shape()[2],
    );
    let data = attention.to_vec();
    let mut averaged = vec![0.0; b * l];
    for bi in 0..b {
        for ci in 0..c {
            let row = &data[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            for (dst, &v) in averaged[bi * l..(bi + 1) * l].iter_mut().zip(row) {
                *dst += v;
            }
        }
    }
    let scale = 1.0 / c as Real;
    for v in &mut averaged {
        *v *= scale;
    }
    Tensor::from_vec(averaged, &[b, l])
}
