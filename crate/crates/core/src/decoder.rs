//! Candidate scoring and the classification loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, NodeId, Scalar, Tape};
use crate::error::{Error, Result};
use crate::params::{xavier, Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    #[default]
    #[serde(rename = "convtranse")]
    ConvTransE,
    #[serde(rename = "distmult")]
    DistMult,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convtranse" => Ok(Self::ConvTransE),
            "distmult" => Ok(Self::DistMult),
            _ => Err(Error::Config(format!(
                "unknown decoder {s:?} (expected convtranse or distmult)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub dim: usize,
    pub channels: usize,
    /// Odd, so that padding `(k - 1) / 2` keeps the signal length.
    pub kernel_size: usize,
    pub dropout: f64,
    pub bias: bool,
}

#[derive(Clone, Debug)]
struct ConvParams {
    kernel: ParamId,
    conv_bias: Option<ParamId>,
    fc: ParamId,
    fc_bias: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    conv: Option<ConvParams>,
}

impl Decoder {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        config: DecoderConfig,
    ) -> Result<Self> {
        let conv = match config.kind {
            DecoderKind::DistMult => None,
            DecoderKind::ConvTransE => {
                let (ch, ke, d) = (config.channels, config.kernel_size, config.dim);
                if ch == 0 || ke == 0 || ke % 2 == 0 {
                    return Err(Error::Config(format!(
                        "decoder needs channels >= 1 and an odd kernel size, got {ch} and {ke}"
                    )));
                }
                let kernel = store.add(
                    "decoder.conv.kernel",
                    xavier(rng, &[ch, 2, ke], 2 * ke, ch * ke),
                );
                let conv_bias = config
                    .bias
                    .then(|| store.add("decoder.conv.bias", Array::zeros(&[ch])));
                let fc = store.add("decoder.fc.weight", xavier(rng, &[ch * d, d], ch * d, d));
                let fc_bias = config
                    .bias
                    .then(|| store.add("decoder.fc.bias", Array::zeros(&[d])));
                Some(ConvParams {
                    kernel,
                    conv_bias,
                    fc,
                    fc_bias,
                })
            }
        };
        Ok(Self { config, conv })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    /// Query representation before the dot product with candidates: `[B, d]`.
    pub fn hidden<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        subjects: NodeId,
        relations: NodeId,
    ) -> Result<NodeId> {
        let se = tape.shape(subjects).to_vec();
        let sr = tape.shape(relations).to_vec();
        if se != sr || se.len() != 2 || se[1] != self.config.dim {
            return Err(Error::ShapeMismatch {
                op: "decoder",
                left: se,
                right: sr,
            });
        }
        match &self.conv {
            None => tape.mul(subjects, relations),
            Some(p) => {
                let (b, d) = (se[0], se[1]);
                let joined = tape.concat_last_axis(subjects, relations)?;
                let signal = tape.reshape(joined, &[b, 2, d])?;
                let pad = (self.config.kernel_size - 1) / 2;
                let conv = tape.conv1d(
                    signal,
                    bound[p.kernel],
                    p.conv_bias.map(|id| bound[id]),
                    pad,
                )?;
                let flat = tape.flatten(conv)?;
                let dropped = tape.dropout(flat, self.config.dropout)?;
                let projected = tape.matmul(dropped, bound[p.fc])?;
                match p.fc_bias {
                    Some(bias) => tape.add_bias(projected, bound[bias]),
                    None => Ok(projected),
                }
            }
        }
    }

    /// Raw scores of every candidate row: `[B, |E|]`.
    pub fn score_all<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        subjects: NodeId,
        relations: NodeId,
        candidates: NodeId,
    ) -> Result<NodeId> {
        let sc = tape.shape(candidates).to_vec();
        if sc.len() != 2 || sc[1] != self.config.dim {
            return Err(Error::ShapeMismatch {
                op: "decoder candidates",
                left: vec![self.config.dim],
                right: sc,
            });
        }
        let hidden = self.hidden(tape, bound, subjects, relations)?;
        let cand_t = tape.transpose(candidates)?;
        tape.matmul(hidden, cand_t)
    }

    /// Parameters actually allocated: `ch·2·ke + ch·d·d` plus `ch + d`
    /// biases, or 0 for DistMult.
    pub fn parameter_count(&self) -> usize {
        let c = &self.config;
        match self.conv {
            None => 0,
            Some(_) => {
                let bias = if c.bias { c.channels + c.dim } else { 0 };
                c.channels * 2 * c.kernel_size + c.channels * c.dim * c.dim + bias
            }
        }
    }

    /// The closed form `ch(2ke + d + 2)` that is sometimes quoted for this
    /// decoder. It does not include the `ch·d × d` projection and so
    /// disagrees with [`Decoder::parameter_count`].
    pub fn quoted_parameter_formula(&self) -> usize {
        let c = &self.config;
        match self.conv {
            None => 0,
            Some(_) => c.channels * (2 * c.kernel_size + c.dim + 2),
        }
    }
}

/// Mean softmax cross-entropy of `scores` (`[|E|]` or `[B, |E|]`).
pub fn classification_loss<T: Scalar>(
    tape: &mut Tape<T>,
    scores: NodeId,
    gold: &[usize],
) -> Result<NodeId> {
    tape.cross_entropy(scores, gold)
}
