//! Multichannel convolution, max-over-time pooling and the softmax head.

use rand::Rng;

use crate::attention::ChannelSet;
use crate::error::{Error, Result};
use crate::params::{uniform, Named};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CONV_INIT_RANGE: f64 = 0.08;

/// All filters of one width.
///
/// `weights` is `maps × width × (L·k)`: for window offset `t`, entry
/// `[f, t, l·k + j]` multiplies dimension `j` of channel `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvBank {
    pub fn init<R: Rng>(width: usize, maps: usize, channel_width: usize, channels: usize, rng: &mut R) -> Self {
        ConvBank {
            weights: uniform(&[maps, width, channel_width * channels], CONV_INIT_RANGE, rng),
            bias: Tensor::zeros(&[maps]),
        }
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn maps(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> ConvVars {
        ConvVars {
            weights: tape.leaf(self.weights.clone(), grad),
            bias: tape.leaf(self.bias.clone(), grad),
        }
    }
}

impl Named for ConvBank {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("m", &self.weights), ("b", &self.bias)]
    }
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("m", &mut self.weights), ("b", &mut self.bias)]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weights: Var,
    pub bias: Var,
}

/// Lays the channels side by side: row `i` is `[c_{1i}, …, c_{Li}]`.
pub fn stack_channels(tape: &mut Tape, set: &ChannelSet) -> Result<Var> {
    tape.concat_all(&set.channels, 1)
}

/// Feature maps `relu(m · c_{i:i+l−1} + b)` for every filter of the bank,
/// summed across channels; shape `(n − l + 1) × maps`.
pub fn conv_forward(tape: &mut Tape, stacked: Var, bank: &ConvVars) -> Result<Var> {
    let z = tape.conv(stacked, bank.weights, bank.bias)?;
    Ok(tape.relu(z))
}

/// Maximum over positions, one value per filter.
pub fn max_pool(tape: &mut Tape, maps: Var) -> Result<Var> {
    tape.max_rows(maps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// `c × s`.
    pub w: Tensor,
    /// `c`.
    pub b: Tensor,
}

impl ClassifierHead {
    pub fn init<R: Rng>(classes: usize, features: usize, rng: &mut R) -> Self {
        ClassifierHead {
            w: uniform(&[classes, features], CONV_INIT_RANGE, rng),
            b: Tensor::zeros(&[classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> HeadVars {
        HeadVars {
            w: tape.leaf(self.w.clone(), grad),
            b: tape.leaf(self.b.clone(), grad),
        }
    }
}

impl Named for ClassifierHead {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W", &self.w), ("b", &self.b)]
    }
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W", &mut self.w), ("b", &mut self.b)]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w: Var,
    pub b: Var,
}

/// `softmax(W · r + b)`.
pub fn classify(tape: &mut Tape, r: Var, head: &HeadVars) -> Result<Var> {
    let sw = tape.value(head.w).shape().to_vec();
    let s = tape.value(r).numel();
    if sw.len() != 2 || sw[1] != s || tape.value(head.b).numel() != sw[0] {
        return Err(Error::dim("classify", &sw, tape.value(r).shape()));
    }
    let c = sw[0];
    let rc = tape.reshape(r, &[s, 1])?;
    let z = tape.matmul(head.w, rc)?;
    let bc = tape.reshape(head.b, &[c, 1])?;
    let logits = tape.add(z, bc)?;
    let logits = tape.reshape(logits, &[c])?;
    tape.softmax(logits)
}

/// `−log p[label]`, with `p` floored at 1e-12.
pub fn cross_entropy(tape: &mut Tape, probs: Var, label: usize) -> Result<Var> {
    tape.nll(probs, label)
}
