//! Scalar and vectorial attention, and assembly of the `L` channel matrices.
//!
//! Scalar attention scores word `k` by how strongly every word associates
//! with it: `M_l[i][j] = tanh(h_iᵀ W_l h_j + b_l)`, masked by a Bernoulli
//! matrix `V_l`, summed over the first index, pushed to −99999 at pad
//! positions and softmax-normalized. Vectorial attention produces one weight
//! per hidden dimension per position, normalized across positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, Named};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Added to the score of a padding position before the softmax.
pub const PAD_SENTINEL: f64 = -99999.0;

pub const ATTN_INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Scalar,
    Vectorial,
    Combined,
}

impl AttentionMode {
    pub fn uses_scalar(self) -> bool {
        self != AttentionMode::Vectorial
    }

    pub fn uses_vectorial(self) -> bool {
        self != AttentionMode::Scalar
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Self::Scalar),
            "vectorial" => Ok(Self::Vectorial),
            "combined" => Ok(Self::Combined),
            _ => Err(Error::Config(format!("unknown attention mode {s:?}"))),
        }
    }
}

/// Which index the masked association matrix is summed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumAxis {
    /// `s_k = Σ_x A[x][k]`: how much all words attend to word `k`.
    #[default]
    Column,
    /// `s_k = Σ_x A[k][x]`.
    Row,
}

impl std::str::FromStr for SumAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "column" => Ok(Self::Column),
            "row" => Ok(Self::Row),
            _ => Err(Error::Config(format!("unknown attention sum axis {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarAttnParams {
    /// `2d × 2d`.
    pub w: Tensor,
    /// Single element.
    pub b: Tensor,
    /// Bernoulli keep probability for the channel mask, in `(0, 1]`.
    pub keep_prob: f64,
}

impl ScalarAttnParams {
    pub fn init<R: Rng>(width: usize, keep_prob: f64, rng: &mut R) -> Self {
        ScalarAttnParams {
            w: uniform(&[width, width], ATTN_INIT_RANGE, rng),
            b: Tensor::scalar(0.0),
            keep_prob,
        }
    }
}

impl Named for ScalarAttnParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W", &self.w), ("b", &self.b)]
    }
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W", &mut self.w), ("b", &mut self.b)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorialAttnParams {
    /// `a × 2d`; maps the hidden projection to one score per dimension.
    pub w1: Tensor,
    /// `a × 2d`.
    pub w2: Tensor,
    /// `a`.
    pub b: Tensor,
}

impl VectorialAttnParams {
    pub fn init<R: Rng>(width: usize, hidden: usize, rng: &mut R) -> Self {
        VectorialAttnParams {
            w1: uniform(&[hidden, width], ATTN_INIT_RANGE, rng),
            w2: uniform(&[hidden, width], ATTN_INIT_RANGE, rng),
            b: Tensor::zeros(&[hidden]),
        }
    }
}

impl Named for VectorialAttnParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("W1", &self.w1), ("W2", &self.w2), ("b", &self.b)]
    }
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("W1", &mut self.w1), ("W2", &mut self.w2), ("b", &mut self.b)]
    }
}

/// Parameters of one channel. Which halves are present depends on the mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelParams {
    pub scalar: Option<ScalarAttnParams>,
    pub vectorial: Option<VectorialAttnParams>,
}

impl ChannelParams {
    pub fn init<R: Rng>(mode: AttentionMode, width: usize, attn_hidden: usize, keep_prob: f64, rng: &mut R) -> Self {
        ChannelParams {
            scalar: mode
                .uses_scalar()
                .then(|| ScalarAttnParams::init(width, keep_prob, rng)),
            vectorial: mode
                .uses_vectorial()
                .then(|| VectorialAttnParams::init(width, attn_hidden, rng)),
        }
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> ChannelVars {
        ChannelVars {
            scalar: self.scalar.as_ref().map(|s| ScalarVars {
                w: tape.leaf(s.w.clone(), grad),
                b: tape.leaf(s.b.clone(), grad),
                keep_prob: s.keep_prob,
            }),
            vectorial: self.vectorial.as_ref().map(|v| VectorialVars {
                w1: tape.leaf(v.w1.clone(), grad),
                w2: tape.leaf(v.w2.clone(), grad),
                b: tape.leaf(v.b.clone(), grad),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScalarVars {
    pub w: Var,
    pub b: Var,
    pub keep_prob: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct VectorialVars {
    pub w1: Var,
    pub w2: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ChannelVars {
    pub scalar: Option<ScalarVars>,
    pub vectorial: Option<VectorialVars>,
}

impl ChannelVars {
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = Vec::new();
        if let Some(s) = self.scalar {
            v.extend([s.w, s.b]);
        }
        if let Some(p) = self.vectorial {
            v.extend([p.w1, p.w2, p.b]);
        }
        v
    }
}

/// `M[i][j] = tanh(h_iᵀ W h_j + b)` for `H: n × 2d`.
pub fn association_matrix(tape: &mut Tape, h: Var, w: Var, b: Var) -> Result<Var> {
    let (sh, sw) = (tape.value(h).shape(), tape.value(w).shape());
    if sh.len() != 2 || sw != [sh[1], sh[1]] {
        return Err(Error::dim("association_matrix", sh, sw));
    }
    if !tape.value(b).is_scalar() {
        return Err(Error::dim("association_matrix bias", &[1], tape.value(b).shape()));
    }
    let hw = tape.matmul(h, w)?;
    let ht = tape.transpose(h)?;
    let bilinear = tape.matmul(hw, ht)?;
    let shifted = tape.add(bilinear, b)?;
    Ok(tape.tanh(shifted))
}

/// Channel mask `V`: Bernoulli(`keep_prob`) entries in training, the constant
/// `keep_prob` otherwise.
pub fn sample_channel_mask<R: Rng>(n: usize, keep_prob: f64, rng: &mut R, training: bool) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::arg(format!("keep probability {keep_prob} outside (0, 1]")));
    }
    let data = if training {
        (0..n * n)
            .map(|_| if rng.gen_bool(keep_prob) { 1.0 } else { 0.0 })
            .collect()
    } else {
        vec![keep_prob; n * n]
    };
    Tensor::matrix(n, n, data)
}

/// Attention weights over positions from an association matrix and a mask.
pub fn scalar_attention(tape: &mut Tape, m: Var, mask: Var, pad_mask: &[bool], axis: SumAxis) -> Result<Var> {
    let (sm, sv) = (tape.value(m).shape(), tape.value(mask).shape());
    let n = pad_mask.len();
    if sm != [n, n] || sv != [n, n] {
        return Err(Error::dim("scalar_attention", sm, sv));
    }
    let masked = tape.mul(m, mask)?;
    let summed = tape.sum_axis(
        masked,
        match axis {
            SumAxis::Column => 0,
            SumAxis::Row => 1,
        },
    )?;
    let offsets = pad_mask
        .iter()
        .map(|&p| if p { PAD_SENTINEL } else { 0.0 })
        .collect();
    let offsets = tape.constant(Tensor::vector(offsets));
    let score = tape.add(summed, offsets)?;
    tape.softmax(score)
}

/// Per-dimension weights `n × 2d`; each column is a distribution over positions.
pub fn vectorial_attention(tape: &mut Tape, h: Var, p: &VectorialVars) -> Result<Var> {
    let sh = tape.value(h).shape().to_vec();
    let (s1, s2, sb) = (
        tape.value(p.w1).shape(),
        tape.value(p.w2).shape(),
        tape.value(p.b).shape(),
    );
    if sh.len() != 2 || s2.len() != 2 || s2[1] != sh[1] || s1 != s2 || sb != [s2[0]] {
        return Err(Error::dim("vectorial_attention", &sh, s2));
    }
    let (n, a) = (sh[0], s2[0]);
    let w2t = tape.transpose(p.w2)?;
    let proj = tape.matmul(h, w2t)?;
    let ones = tape.constant(Tensor::full(&[n, 1], 1.0));
    let brow = tape.reshape(p.b, &[1, a])?;
    let bias = tape.matmul(ones, brow)?;
    let z = tape.add(proj, bias)?;
    let hidden = tape.sigmoid(z);
    let scores = tape.matmul(hidden, p.w1)?;
    tape.softmax_cols(scores)
}

/// One channel matrix `C_l`, rows kept in sentence order.
pub fn build_channel(
    tape: &mut Tape,
    h: Var,
    scalar_weights: Option<Var>,
    vectorial_weights: Option<Var>,
    mode: AttentionMode,
) -> Result<Var> {
    let sh = tape.value(h).shape().to_vec();
    if sh.len() != 2 {
        return Err(Error::dim("build_channel", &sh, &[]));
    }
    let (n, width) = (sh[0], sh[1]);
    let need = |w: Option<Var>, what: &str| {
        w.ok_or_else(|| Error::arg(format!("{mode:?} channel needs {what} attention weights")))
    };
    let row_scale = |tape: &mut Tape, a: Var| -> Result<Var> {
        if tape.value(a).numel() != n {
            return Err(Error::dim("build_channel", &[n], tape.value(a).shape()));
        }
        let col = tape.reshape(a, &[n, 1])?;
        let ones = tape.constant(Tensor::full(&[1, width], 1.0));
        tape.matmul(col, ones)
    };
    let vectorial = |tape: &mut Tape, av: Var| -> Result<Var> {
        if tape.value(av).shape() != sh.as_slice() {
            return Err(Error::dim("build_channel", &sh, tape.value(av).shape()));
        }
        tape.mul(av, h)
    };
    match mode {
        AttentionMode::Scalar => {
            let r = row_scale(tape, need(scalar_weights, "scalar")?)?;
            tape.mul(r, h)
        }
        AttentionMode::Vectorial => vectorial(tape, need(vectorial_weights, "vectorial")?),
        AttentionMode::Combined => {
            let a = need(scalar_weights, "scalar")?;
            let inner = vectorial(tape, need(vectorial_weights, "vectorial")?)?;
            let r = row_scale(tape, a)?;
            tape.mul(r, inner)
        }
    }
}

/// Channel matrices plus the scalar weights kept for export.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub channels: Vec<Var>,
    /// Empty in vectorial mode.
    pub scalar_weights: Vec<Var>,
}

/// Builds all `L` channels. Each channel draws its mask from its own stream
/// seeded from `rng` in channel order.
pub fn build_channels<R: Rng>(
    tape: &mut Tape,
    h: Var,
    pad_mask: &[bool],
    params: &[ChannelVars],
    mode: AttentionMode,
    axis: SumAxis,
    rng: &mut R,
    training: bool,
) -> Result<ChannelSet> {
    if params.is_empty() {
        return Err(Error::arg("at least one channel is required"));
    }
    let n = tape.value(h).shape()[0];
    if n != pad_mask.len() {
        return Err(Error::dim("build_channels", &[n], &[pad_mask.len()]));
    }
    let seeds: Vec<u64> = params.iter().map(|_| rng.gen()).collect();
    let mut set = ChannelSet {
        channels: Vec::with_capacity(params.len()),
        scalar_weights: Vec::new(),
    };
    for (p, seed) in params.iter().zip(seeds) {
        let a = match (mode.uses_scalar(), p.scalar) {
            (true, Some(s)) => {
                let m = association_matrix(tape, h, s.w, s.b)?;
                let mut chan_rng = ChaCha8Rng::seed_from_u64(seed);
                let v = sample_channel_mask(n, s.keep_prob, &mut chan_rng, training)?;
                let v = tape.constant(v);
                let a = scalar_attention(tape, m, v, pad_mask, axis)?;
                set.scalar_weights.push(a);
                Some(a)
            }
            (true, None) => return Err(Error::arg("channel is missing scalar attention parameters")),
            (false, _) => None,
        };
        let av = match (mode.uses_vectorial(), &p.vectorial) {
            (true, Some(vp)) => Some(vectorial_attention(tape, h, vp)?),
            (true, None) => return Err(Error::arg("channel is missing vectorial attention parameters")),
            (false, _) => None,
        };
        set.channels.push(build_channel(tape, h, a, av, mode)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn association_zero_and_constant_cases() {
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[3, 4]));
        let w = t.constant(uniform(&[4, 4], 1.0, &mut rng(1)));
        let b = t.constant(Tensor::scalar(0.0));
        let m = association_matrix(&mut t, h, w, b).unwrap();
        assert_eq!(t.value(m).data(), &[0.0; 9]);

        let h = t.constant(uniform(&[3, 4], 1.0, &mut rng(2)));
        let w0 = t.constant(Tensor::zeros(&[4, 4]));
        let beta = t.constant(Tensor::scalar(0.7));
        let m = association_matrix(&mut t, h, w0, beta).unwrap();
        assert!(t.value(m).data().iter().all(|&v| v == 0.7f64.tanh()));
    }

    #[test]
    fn association_matches_bilinear_loop() {
        let hv = uniform(&[3, 4], 1.0, &mut rng(3));
        let wv = uniform(&[4, 4], 1.0, &mut rng(4));
        let bv = 0.3;
        let mut t = Tape::new();
        let h = t.constant(hv.clone());
        let w = t.constant(wv.clone());
        let b = t.constant(Tensor::scalar(bv));
        let m = association_matrix(&mut t, h, w, b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = bv;
                for p in 0..4 {
                    for q in 0..4 {
                        s += hv.at(i, p) * wv.at(p, q) * hv.at(j, q);
                    }
                }
                assert!((t.value(m).at(i, j) - s.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn association_rejects_bad_shapes() {
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[3, 4]));
        let w = t.constant(Tensor::zeros(&[3, 3]));
        let b = t.constant(Tensor::scalar(0.0));
        assert!(matches!(association_matrix(&mut t, h, w, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mask_sampling() {
        let ones = sample_channel_mask(4, 1.0, &mut rng(0), true).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
        let eval = sample_channel_mask(4, 0.8, &mut rng(0), false).unwrap();
        assert!(eval.data().iter().all(|&v| v == 0.8));
        let m = sample_channel_mask(50, 0.8, &mut rng(5), true).unwrap();
        let mean = m.data().iter().sum::<f64>() / 2500.0;
        assert!((0.7..=0.9).contains(&mean), "{mean}");
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(sample_channel_mask(3, 0.0, &mut rng(0), true).is_err());
        assert!(sample_channel_mask(3, 1.2, &mut rng(0), false).is_err());
    }

    fn attend(m: Tensor, v: Tensor, pads: &[bool]) -> Vec<f64> {
        let mut t = Tape::new();
        let (m, v) = (t.constant(m), t.constant(v));
        let a = scalar_attention(&mut t, m, v, pads, SumAxis::Column).unwrap();
        t.value(a).data().to_vec()
    }

    #[test]
    fn scalar_attention_cases() {
        let a = attend(Tensor::zeros(&[4, 4]), Tensor::full(&[4, 4], 1.0), &[false; 4]);
        assert!(a.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let a = attend(Tensor::zeros(&[3, 3]), Tensor::full(&[3, 3], 1.0), &[true, false, false]);
        // The pad sits at the front, so it is the first position here.
        assert!(a[0] < 1e-12);
        assert!((a[1] - 0.5).abs() < 1e-12 && (a[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_attention_matches_column_sum_oracle() {
        let m = uniform(&[3, 3], 1.0, &mut rng(6));
        let a = attend(m.clone(), Tensor::full(&[3, 3], 1.0), &[false; 3]);
        let sums: Vec<f64> = (0..3).map(|k| (0..3).map(|x| m.at(x, k)).sum()).collect();
        let z: f64 = sums.iter().map(|s| s.exp()).sum();
        for k in 0..3 {
            assert!((a[k] - sums[k].exp() / z).abs() < 1e-12);
        }
    }

    fn vec_params(t: &mut Tape, width: usize, hidden: usize, seed: u64) -> (VectorialVars, VectorialAttnParams) {
        let mut r = rng(seed);
        let p = VectorialAttnParams {
            w1: uniform(&[hidden, width], 1.0, &mut r),
            w2: uniform(&[hidden, width], 1.0, &mut r),
            b: uniform(&[hidden], 1.0, &mut r),
        };
        let v = ChannelParams { scalar: None, vectorial: Some(p.clone()) }.bind(t, false);
        (v.vectorial.unwrap(), p)
    }

    #[test]
    fn vectorial_attention_matches_loop_oracle() {
        let (n, width, hidden) = (3, 2, 2);
        let hv = uniform(&[n, width], 1.0, &mut rng(7));
        let mut t = Tape::new();
        let (vars, p) = vec_params(&mut t, width, hidden, 8);
        let h = t.constant(hv.clone());
        let av = vectorial_attention(&mut t, h, &vars).unwrap();
        let mut scores = vec![vec![0.0; width]; n];
        for i in 0..n {
            let s: Vec<f64> = (0..hidden)
                .map(|r| sigmoid(p.b.data()[r] + (0..width).map(|q| p.w2.at(r, q) * hv.at(i, q)).sum::<f64>()))
                .collect();
            for dim in 0..width {
                scores[i][dim] = (0..hidden).map(|r| p.w1.at(r, dim) * s[r]).sum();
            }
        }
        for dim in 0..width {
            let z: f64 = (0..n).map(|i| scores[i][dim].exp()).sum();
            for i in 0..n {
                assert!((t.value(av).at(i, dim) - scores[i][dim].exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectorial_attention_symmetry_and_singleton() {
        let mut t = Tape::new();
        let (vars, _) = vec_params(&mut t, 4, 3, 9);
        let row = uniform(&[1, 4], 1.0, &mut rng(10));
        let same = Tensor::from_rows(&vec![row.data().to_vec(); 5]).unwrap();
        let h = t.constant(same);
        let av = vectorial_attention(&mut t, h, &vars).unwrap();
        assert!(t.value(av).data().iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let h1 = t.constant(row);
        let av = vectorial_attention(&mut t, h1, &vars).unwrap();
        assert_eq!(t.value(av).data(), &[1.0; 4]);
    }

    #[test]
    fn channel_modes() {
        let n = 4;
        let hv = uniform(&[n, 3], 1.0, &mut rng(11));
        let mut t = Tape::new();
        let h = t.constant(hv.clone());
        let uni = t.constant(Tensor::full(&[n], 0.25));
        let c = build_channel(&mut t, h, Some(uni), None, AttentionMode::Scalar).unwrap();
        for (x, y) in t.value(c).data().iter().zip(hv.data()) {
            assert!((x - y / 4.0).abs() < 1e-15);
        }
        assert!(build_channel(&mut t, h, None, None, AttentionMode::Scalar).is_err());
        assert!(build_channel(&mut t, h, Some(uni), None, AttentionMode::Combined).is_err());

        let a = t.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
        let av = t.constant(uniform(&[n, 3], 1.0, &mut rng(12)));
        let comb = build_channel(&mut t, h, Some(a), Some(av), AttentionMode::Combined).unwrap();
        let vect = build_channel(&mut t, h, None, Some(av), AttentionMode::Vectorial).unwrap();
        let comb2 = build_channel(&mut t, vect, Some(a), None, AttentionMode::Scalar).unwrap();
        for (x, y) in t.value(comb).data().iter().zip(t.value(comb2).data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let h1 = t.constant(Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap());
        let one = t.constant(Tensor::vector(vec![1.0]));
        let ones = t.constant(Tensor::full(&[1, 3], 1.0));
        let c = build_channel(&mut t, h1, Some(one), Some(ones), AttentionMode::Combined).unwrap();
        assert_eq!(t.value(c).data(), t.value(h1).data());
    }

    fn channel_params(l: usize, mode: AttentionMode, seed: u64) -> Vec<ChannelParams> {
        let mut r = rng(seed);
        (0..l).map(|_| ChannelParams::init(mode, 6, 6, 0.8, &mut r)).collect()
    }

    #[test]
    fn channel_count_and_shapes() {
        let params = channel_params(3, AttentionMode::Combined, 13);
        let mut t = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| p.bind(&mut t, false)).collect();
        let h = t.constant(uniform(&[5, 6], 1.0, &mut rng(14)));
        let pads = [true, false, false, false, false];
        let set = build_channels(&mut t, h, &pads, &vars, AttentionMode::Combined, SumAxis::Column, &mut rng(15), true).unwrap();
        assert_eq!(set.channels.len(), 3);
        assert_eq!(set.scalar_weights.len(), 3);
        for c in &set.channels {
            assert_eq!(t.value(*c).shape(), &[5, 6]);
        }
        for a in &set.scalar_weights {
            let w = t.value(*a).data();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w[0] < 1e-12);
        }
        assert!(build_channels(&mut t, h, &pads, &[], AttentionMode::Combined, SumAxis::Column, &mut rng(0), true).is_err());
    }

    #[test]
    fn identical_params_identical_channels() {
        let one = channel_params(1, AttentionMode::Combined, 16).remove(0);
        let mut same = vec![one.clone(), one.clone()];
        for p in &mut same {
            p.scalar.as_mut().unwrap().keep_prob = 1.0;
        }
        let mut t = Tape::new();
        let h = t.constant(uniform(&[4, 6], 1.0, &mut rng(17)));
        let vars: Vec<_> = same.iter().map(|p| p.bind(&mut t, false)).collect();
        let set = build_channels(&mut t, h, &[false; 4], &vars, AttentionMode::Combined, SumAxis::Column, &mut rng(18), true).unwrap();
        assert_eq!(t.value(set.channels[0]), t.value(set.channels[1]));

        let diff = channel_params(2, AttentionMode::Combined, 19);
        let vars: Vec<_> = diff.iter().map(|p| p.bind(&mut t, false)).collect();
        let set = build_channels(&mut t, h, &[false; 4], &vars, AttentionMode::Combined, SumAxis::Column, &mut rng(18), false).unwrap();
        assert_ne!(t.value(set.channels[0]), t.value(set.channels[1]));
    }
}
