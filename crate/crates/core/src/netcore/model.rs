//! Residual 1-D CNN for IQ classification.
//!
//! ```text
//! stem:   conv(k=7, stride 2) -> BN -> ReLU
//! stage:  num_res_blocks x [sep -> BN -> ReLU -> sep -> BN, + identity] -> ReLU
//!         then a downsampling block [sep/2 -> BN -> ReLU -> sep -> BN,
//!                                    + 1-tap conv/2 -> BN] -> ReLU
//! head:   global average pool -> dense -> softmax
//! ```
//!
//! `sep` is a separable convolution: depthwise 3-tap followed by pointwise.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::IqVector;
use crate::rng::Rng;

use super::params::{ParamId, ParamKind, ParamSet, Params};
use super::tape::{apply_bn_updates, Mode, NodeId, Tape};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemConfig {
    pub kernels: usize,
    pub size: usize,
    pub stride: usize,
}

impl Default for StemConfig {
    fn default() -> Self {
        StemConfig {
            kernels: 64,
            size: 7,
            stride: 2,
        }
    }
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_len: usize,
    #[serde(default = "two")]
    pub input_channels: usize,
    #[serde(default)]
    pub stem: StemConfig,
    pub num_res_blocks: usize,
    pub channels_per_stage: Vec<usize>,
    pub num_classes: usize,
}

impl ArchConfig {
    /// Three stages at widths 32, 64, 64 behind a 64-kernel stem.
    pub fn desk(input_len: usize, num_classes: usize) -> Self {
        ArchConfig {
            input_len,
            input_channels: 2,
            stem: StemConfig::default(),
            num_res_blocks: 1,
            channels_per_stage: vec![32, 64, 64],
            num_classes,
        }
    }

    /// Two narrow stages, small enough for finite-difference checks and
    /// quick benchmark runs.
    pub fn toy(input_len: usize, num_classes: usize) -> Self {
        ArchConfig {
            input_len,
            input_channels: 2,
            stem: StemConfig {
                kernels: 8,
                size: 7,
                stride: 2,
            },
            num_res_blocks: 1,
            channels_per_stage: vec![8, 16],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 2 {
            return Err(Error::config("input must have two channels (I and Q)"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.input_len == 0 {
            return Err(Error::config("input_len must be positive"));
        }
        if self.stem.kernels == 0 || self.stem.size == 0 || self.stem.stride == 0 || self.stem.size.is_multiple_of(2) {
            return Err(Error::config(
                "stem needs positive kernels/stride and an odd kernel size",
            ));
        }
        if self.channels_per_stage.contains(&0) {
            return Err(Error::config("stage widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct SepConv {
    depthwise: ParamId,
    pointwise: ParamId,
    stride: usize,
    bn: BnIds,
}

#[derive(Debug, Clone, Copy)]
struct Projection {
    weight: ParamId,
    stride: usize,
    bn: BnIds,
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    first: SepConv,
    second: SepConv,
    skip: Option<Projection>,
}

/// Parameter layout and wiring of the network; the values live in [`Params`].
#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchConfig,
    stem_w: ParamId,
    stem_bn: BnIds,
    blocks: Vec<ResBlock>,
    dense_w: ParamId,
    dense_b: ParamId,
    layout: Params,
}

struct LayoutBuilder {
    params: Params,
}

impl LayoutBuilder {
    fn weight(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.params.push(name, ParamKind::Trainable, Tensor::zeros(shape))
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> BnIds {
        BnIds {
            gamma: self.params.push(
                format!("{prefix}.bn.gamma"),
                ParamKind::Trainable,
                Tensor::filled(&[channels], 1.0),
            ),
            beta: self.params.push(
                format!("{prefix}.bn.beta"),
                ParamKind::Trainable,
                Tensor::zeros(&[channels]),
            ),
            mean: self.params.push(
                format!("{prefix}.bn.running_mean"),
                ParamKind::RunningStat,
                Tensor::zeros(&[channels]),
            ),
            var: self.params.push(
                format!("{prefix}.bn.running_var"),
                ParamKind::RunningStat,
                Tensor::filled(&[channels], 1.0),
            ),
        }
    }

    fn sep(&mut self, prefix: &str, cin: usize, cout: usize, stride: usize) -> SepConv {
        SepConv {
            depthwise: self.weight(format!("{prefix}.dw"), &[cin, 1, 3]),
            pointwise: self.weight(format!("{prefix}.pw"), &[cout, cin, 1]),
            stride,
            bn: self.bn(prefix, cout),
        }
    }
}

impl Network {
    pub fn new(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut b = LayoutBuilder { params: Params::new() };
        let stem_w = b.weight(
            "stem.conv.w".into(),
            &[arch.stem.kernels, arch.input_channels, arch.stem.size],
        );
        let stem_bn = b.bn("stem", arch.stem.kernels);
        let mut blocks = Vec::new();
        let mut width = arch.stem.kernels;
        for (s, &next) in arch.channels_per_stage.iter().enumerate() {
            for r in 0..arch.num_res_blocks {
                let p = format!("stage{s}.conv{r}");
                blocks.push(ResBlock {
                    first: b.sep(&format!("{p}.a"), width, width, 1),
                    second: b.sep(&format!("{p}.b"), width, width, 1),
                    skip: None,
                });
            }
            let p = format!("stage{s}.down");
            blocks.push(ResBlock {
                first: b.sep(&format!("{p}.a"), width, next, 2),
                second: b.sep(&format!("{p}.b"), next, next, 1),
                skip: Some(Projection {
                    weight: b.weight(format!("{p}.skip.w"), &[next, width, 1]),
                    stride: 2,
                    bn: b.bn(&format!("{p}.skip"), next),
                }),
            });
            width = next;
        }
        let dense_w = b.weight("head.dense.w".into(), &[arch.num_classes, width]);
        let dense_b = b.weight("head.dense.b".into(), &[arch.num_classes]);
        Ok(Network {
            arch: arch.clone(),
            stem_w,
            stem_bn,
            blocks,
            dense_w,
            dense_b,
            layout: b.params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// Zero-valued parameters with the network's names, kinds and shapes.
    pub fn layout(&self) -> &Params {
        &self.layout
    }

    pub fn dense_ids(&self) -> (ParamId, ParamId) {
        (self.dense_w, self.dense_b)
    }

    /// Fan-in scaled uniform weights (He bound for convolutions, LeCun bound
    /// for the dense head), zero dense bias, identity batch norm.
    pub fn init_params(&self, rng: &mut Rng) -> Params {
        let mut params = self.layout.clone();
        let ids: Vec<ParamId> = (0..params.len()).map(ParamId).collect();
        for id in ids {
            let entry = &params.entries()[id.0];
            if entry.kind != ParamKind::Trainable || entry.name.contains(".bn.") || id == self.dense_b {
                continue;
            }
            let shape = entry.value.shape().to_vec();
            let fan_in: usize = shape[1..].iter().product();
            let bound = if id == self.dense_w {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for v in params.get_mut(id).data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    fn sep_conv(&self, tape: &mut Tape, params: &Params, x: NodeId, sep: &SepConv, mode: Mode) -> NodeId {
        let channels = tape.value(x).dim(1);
        let h = tape.conv(params, x, sep.depthwise, sep.stride, 1, channels);
        let h = tape.conv(params, h, sep.pointwise, 1, 0, 1);
        tape.batch_norm(params, h, sep.bn.gamma, sep.bn.beta, sep.bn.mean, sep.bn.var, mode)
    }

    /// Records the forward pass on a fresh tape; returns the tape and the
    /// softmax output node. Parameters are not modified.
    pub fn forward_tape(&self, params: &Params, batch: Tensor, mode: Mode) -> Result<(Tape, NodeId)> {
        self.check_input(&batch)?;
        let mut tape = Tape::new();
        let x = tape.input(batch);
        let stem = &self.arch.stem;
        let h = tape.conv(params, x, self.stem_w, stem.stride, stem.size / 2, 1);
        let bn = self.stem_bn;
        let h = tape.batch_norm(params, h, bn.gamma, bn.beta, bn.mean, bn.var, mode);
        let mut h = tape.relu(h);
        for block in &self.blocks {
            let a = self.sep_conv(&mut tape, params, h, &block.first, mode);
            let a = tape.relu(a);
            let a = self.sep_conv(&mut tape, params, a, &block.second, mode);
            let skip = match &block.skip {
                None => h,
                Some(p) => {
                    let s = tape.conv(params, h, p.weight, p.stride, 0, 1);
                    tape.batch_norm(params, s, p.bn.gamma, p.bn.beta, p.bn.mean, p.bn.var, mode)
                }
            };
            let sum = tape.add(a, skip);
            h = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(h);
        let logits = tape.dense(params, pooled, self.dense_w, self.dense_b);
        let out = tape.softmax(logits);
        Ok((tape, out))
    }

    /// Forward pass returning `[batch, classes]` probabilities. Training mode
    /// normalizes with batch statistics and updates the running statistics;
    /// evaluation mode leaves `params` untouched.
    pub fn forward(&self, params: &mut Params, batch: Tensor, mode: Mode) -> Result<Tensor> {
        let (tape, out) = self.forward_tape(params, batch, mode)?;
        if mode == Mode::Train {
            apply_bn_updates(params, &tape);
        }
        Ok(tape.value(out).clone())
    }

    /// Evaluation-mode probabilities.
    pub fn predict(&self, params: &Params, batch: Tensor) -> Result<Tensor> {
        let (tape, out) = self.forward_tape(params, batch, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != 3 || s[0] == 0 || s[1] != self.arch.input_channels || s[2] != self.arch.input_len {
            return Err(Error::shape(format!(
                "expected input [batch, {}, {}], got {s:?}",
                self.arch.input_channels, self.arch.input_len
            )));
        }
        Ok(())
    }
}

/// Builds the network layout and freshly initialized parameters; the EMA
/// shadow starts equal to the live weights.
pub fn build_model(arch: &ArchConfig, rng: &mut Rng) -> Result<(Network, ParamSet)> {
    let net = Network::new(arch)?;
    let params = net.init_params(rng);
    Ok((net, ParamSet::new(params)))
}

/// Packs samples into a `[batch, 2, length]` tensor (I channel, then Q).
pub fn batch_tensor<'a>(samples: impl IntoIterator<Item = &'a IqVector>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    let mut len = None;
    for s in samples {
        let l = *len.get_or_insert(s.len());
        if s.len() != l {
            return Err(Error::shape("samples in a batch must share one length"));
        }
        data.extend(s.samples().iter().map(|c| c.re));
        data.extend(s.samples().iter().map(|c| c.im));
        count += 1;
    }
    let len = len.ok_or_else(|| Error::degenerate("empty batch"))?;
    Tensor::new(vec![count, 2, len], data)
}

/// Splits a `[batch, classes]` probability tensor into rows.
pub fn prob_rows(probs: &Tensor) -> Vec<crate::losses::ProbVector> {
    (0..probs.dim(0))
        .map(|i| crate::losses::ProbVector::new(probs.row(i).to_vec()).expect("softmax rows are distributions"))
        .collect()
}
