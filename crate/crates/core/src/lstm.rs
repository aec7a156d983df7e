//! LSTM cell and the bi-directional encoder that produces the `n × 2d`
//! hidden matrix.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{uniform, Named};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LSTM_INIT_RANGE: f64 = 0.08;

/// Gate weights act on the stacked column `[h_{t−1}; x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub w_i: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub b_f: Tensor,
    pub b_i: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

impl LstmParams {
    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut w = || uniform(&[hidden, hidden + input], LSTM_INIT_RANGE, rng);
        let (w_f, w_i, w_o, w_c) = (w(), w(), w(), w());
        LstmParams {
            w_f,
            w_i,
            w_o,
            w_c,
            b_f: Tensor::zeros(&[hidden]),
            b_i: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_f.shape()[1] - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [&self.w_f, &self.w_i, &self.w_o, &self.w_c];
        let bs = [&self.b_f, &self.b_i, &self.b_o, &self.b_c];
        let s = self.w_f.shape();
        if s.len() != 2 || s[1] <= s[0] {
            return Err(Error::dim("lstm weights", s, &[]));
        }
        for w in ws {
            if w.shape() != s {
                return Err(Error::dim("lstm weights", s, w.shape()));
            }
        }
        for b in bs {
            if b.shape() != [s[0]] {
                return Err(Error::dim("lstm bias", &[s[0]], b.shape()));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> Result<LstmVars> {
        let leaves: Vec<Var> = self
            .named()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), grad))
            .collect();
        LstmVars::from_leaves(tape, &leaves)
    }
}

impl Named for LstmParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("W_f", &self.w_f),
            ("W_i", &self.w_i),
            ("W_o", &self.w_o),
            ("W_C", &self.w_c),
            ("b_f", &self.b_f),
            ("b_i", &self.b_i),
            ("b_o", &self.b_o),
            ("b_C", &self.b_c),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("W_f", &mut self.w_f),
            ("W_i", &mut self.w_i),
            ("W_o", &mut self.w_o),
            ("W_C", &mut self.w_c),
            ("b_f", &mut self.b_f),
            ("b_i", &mut self.b_i),
            ("b_o", &mut self.b_o),
            ("b_C", &mut self.b_c),
        ]
    }
}

/// [`LstmParams`] registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_f: Var,
    pub w_i: Var,
    pub w_o: Var,
    pub w_c: Var,
    pub b_f: Var,
    pub b_i: Var,
    pub b_o: Var,
    pub b_c: Var,
    leaves: [Var; 4],
    hidden: usize,
    input: usize,
}

impl LstmVars {
    /// Wraps already-registered tensors given in [`Named`] order.
    pub fn from_leaves(tape: &mut Tape, leaves: &[Var]) -> Result<Self> {
        let [w_f, w_i, w_o, w_c, lf, li, lo, lc] = leaves[..] else {
            return Err(Error::arg(format!("expected 8 LSTM tensors, got {}", leaves.len())));
        };
        let s = tape.value(w_f).shape().to_vec();
        if s.len() != 2 || s[1] <= s[0] {
            return Err(Error::dim("lstm weights", &s, &[]));
        }
        let d = s[0];
        let mut col = |v: Var| tape.reshape(v, &[d, 1]);
        Ok(LstmVars {
            w_f,
            w_i,
            w_o,
            w_c,
            b_f: col(lf)?,
            b_i: col(li)?,
            b_o: col(lo)?,
            b_c: col(lc)?,
            leaves: [lf, li, lo, lc],
            hidden: d,
            input: s[1] - d,
        })
    }

    /// Leaf handles in [`Named`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = vec![self.w_f, self.w_i, self.w_o, self.w_c];
        v.extend(self.leaves);
        v
    }
}

/// One step. `x_t` is `k × 1`, the states are `d × 1`.
pub fn lstm_cell(tape: &mut Tape, x_t: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let (sx, sh, sc) = (tape.value(x_t).shape(), tape.value(h_prev).shape(), tape.value(c_prev).shape());
    if sx != [p.input, 1] || sh != [p.hidden, 1] || sc != [p.hidden, 1] {
        return Err(Error::dim("lstm_cell", &[p.hidden, p.input], sx));
    }
    let hx = tape.concat(h_prev, x_t, 0)?;
    let mut gate = |w: Var, b: Var| -> Result<Var> {
        let z = tape.matmul(w, hx)?;
        tape.add(z, b)
    };
    let zf = gate(p.w_f, p.b_f)?;
    let zi = gate(p.w_i, p.b_i)?;
    let zo = gate(p.w_o, p.b_o)?;
    let zc = gate(p.w_c, p.b_c)?;
    let f = tape.sigmoid(zf);
    let i = tape.sigmoid(zi);
    let o = tape.sigmoid(zo);
    let cand = tape.tanh(zc);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        BiLstmParams {
            forward: LstmParams::init(hidden, input, rng),
            backward: LstmParams::init(hidden, input, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.backward.validate()?;
        if self.forward.w_f.shape() != self.backward.w_f.shape() {
            return Err(Error::dim("bilstm", self.forward.w_f.shape(), self.backward.w_f.shape()));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> Result<BiLstmVars> {
        Ok(BiLstmVars {
            forward: self.forward.bind(tape, grad)?,
            backward: self.backward.bind(tape, grad)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub forward: LstmVars,
    pub backward: LstmVars,
}

fn run_direction(tape: &mut Tape, inputs: &[Var], p: &LstmVars) -> Result<Vec<Var>> {
    let zero = Tensor::zeros(&[p.hidden, 1]);
    let mut h = tape.constant(zero.clone());
    let mut c = tape.constant(zero);
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = lstm_cell(tape, x, h, c, p)?;
        out.push(h);
    }
    Ok(out)
}

/// Encodes `x: n × k` into `H: n × 2d`, row `i` being `[→h_i, ←h_i]`.
/// Both directions start from zero states.
pub fn bilstm_encode(tape: &mut Tape, x: Var, p: &BiLstmVars) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 2 || s[0] == 0 || s[1] != p.forward.input {
        return Err(Error::dim("bilstm_encode", &s, &[p.forward.input]));
    }
    let n = s[0];
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.slice(x, 0, i, 1)?;
        cols.push(tape.reshape(row, &[s[1], 1])?);
    }
    let fwd = run_direction(tape, &cols, &p.forward)?;
    cols.reverse();
    let mut bwd = run_direction(tape, &cols, &p.backward)?;
    bwd.reverse();
    let f = tape.concat_all(&fwd, 1)?;
    let b = tape.concat_all(&bwd, 1)?;
    let stacked = tape.concat(f, b, 0)?;
    tape.transpose(stacked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop reference for one LSTM step.
    fn oracle_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let d = h.len();
        let hx: Vec<f64> = h.iter().chain(x).copied().collect();
        let lin = |w: &Tensor, b: &Tensor, r: usize| -> f64 {
            let mut s = b.data()[r];
            for (j, v) in hx.iter().enumerate() {
                s += w.at(r, j) * v;
            }
            s
        };
        let mut hn = vec![0.0; d];
        let mut cn = vec![0.0; d];
        for r in 0..d {
            let f = sigmoid(lin(&p.w_f, &p.b_f, r));
            let i = sigmoid(lin(&p.w_i, &p.b_i, r));
            let o = sigmoid(lin(&p.w_o, &p.b_o, r));
            let cand = lin(&p.w_c, &p.b_c, r).tanh();
            cn[r] = f * c[r] + i * cand;
            hn[r] = o * cn[r].tanh();
        }
        (hn, cn)
    }

    fn random_params(d: usize, k: usize, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::init(d, k, &mut rng);
        for b in [&mut p.b_f, &mut p.b_i, &mut p.b_o, &mut p.b_c] {
            *b = uniform(&[d], 0.5, &mut rng);
        }
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c] {
            *w = uniform(&[d, d + k], 0.7, &mut rng);
        }
        p
    }

    fn col(tape: &mut Tape, v: &[f64]) -> Var {
        tape.constant(Tensor::matrix(v.len(), 1, v.to_vec()).unwrap())
    }

    #[test]
    fn zero_params_give_half_gates() {
        let mut p = LstmParams::init(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c] {
            *w = Tensor::zeros(&[3, 5]);
        }
        let mut t = Tape::new();
        let vars = p.bind(&mut t, false).unwrap();
        let x = col(&mut t, &[0.3, -0.4]);
        let h0 = col(&mut t, &[0.0; 3]);
        let c0 = col(&mut t, &[0.0; 3]);
        let (h, c) = lstm_cell(&mut t, x, h0, c0, &vars).unwrap();
        assert_eq!(t.value(h).data(), &[0.0; 3]);
        assert_eq!(t.value(c).data(), &[0.0; 3]);

        let v = [1.0, -2.0, 0.5];
        let cv = col(&mut t, &v);
        let (h, c) = lstm_cell(&mut t, x, h0, cv, &vars).unwrap();
        for r in 0..3 {
            assert_eq!(t.value(c).data()[r], 0.5 * v[r]);
            assert!((t.value(h).data()[r] - 0.5 * (0.5 * v[r]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let p = random_params(4, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (eh, ec) = oracle_cell(&x, &h, &c, &p);

        let mut t = Tape::new();
        let vars = p.bind(&mut t, false).unwrap();
        let (xv, hv, cv) = (col(&mut t, &x), col(&mut t, &h), col(&mut t, &c));
        let (ho, co) = lstm_cell(&mut t, xv, hv, cv, &vars).unwrap();
        for r in 0..4 {
            assert!((t.value(ho).data()[r] - eh[r]).abs() < 1e-12);
            assert!((t.value(co).data()[r] - ec[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_rejects_bad_dims() {
        let p = random_params(2, 2, 1);
        let mut t = Tape::new();
        let vars = p.bind(&mut t, false).unwrap();
        let x = col(&mut t, &[1.0, 2.0, 3.0]);
        let h = col(&mut t, &[0.0; 2]);
        assert!(matches!(lstm_cell(&mut t, x, h, h, &vars), Err(Error::Dimension { .. })));
    }

    fn encode(p: &BiLstmParams, x: &Tensor) -> Tensor {
        let mut t = Tape::new();
        let vars = p.bind(&mut t, false).unwrap();
        let xv = t.constant(x.clone());
        let h = bilstm_encode(&mut t, xv, &vars).unwrap();
        t.value(h).clone()
    }

    #[test]
    fn encoder_matches_composed_oracle() {
        let (d, k, n) = (3, 2, 5);
        let p = BiLstmParams {
            forward: random_params(d, k, 21),
            backward: random_params(d, k, 22),
        };
        let x = uniform(&[n, k], 1.0, &mut ChaCha8Rng::seed_from_u64(23));
        let h = encode(&p, &x);
        assert_eq!(h.shape(), &[n, 2 * d]);

        let mut fwd = Vec::new();
        let (mut hs, mut cs) = (vec![0.0; d], vec![0.0; d]);
        for i in 0..n {
            (hs, cs) = oracle_cell(x.row(i), &hs, &cs, &p.forward);
            fwd.push(hs.clone());
        }
        let mut bwd = vec![Vec::new(); n];
        let (mut hs, mut cs) = (vec![0.0; d], vec![0.0; d]);
        for i in (0..n).rev() {
            (hs, cs) = oracle_cell(x.row(i), &hs, &cs, &p.backward);
            bwd[i] = hs.clone();
        }
        for i in 0..n {
            for j in 0..d {
                assert!((h.at(i, j) - fwd[i][j]).abs() < 1e-12);
                assert!((h.at(i, d + j) - bwd[i][j]).abs() < 1e-12);
            }
        }
        assert!(h.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn single_step_sequence() {
        let p = BiLstmParams {
            forward: random_params(2, 2, 31),
            backward: random_params(2, 2, 32),
        };
        let x = Tensor::from_rows(&[vec![0.4, -0.9]]).unwrap();
        let h = encode(&p, &x);
        let (hf, _) = oracle_cell(x.row(0), &[0.0; 2], &[0.0; 2], &p.forward);
        let (hb, _) = oracle_cell(x.row(0), &[0.0; 2], &[0.0; 2], &p.backward);
        let want: Vec<f64> = hf.into_iter().chain(hb).collect();
        for (a, b) in h.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reversal_swaps_directions() {
        let (d, k, n) = (3, 2, 4);
        let p = BiLstmParams {
            forward: random_params(d, k, 41),
            backward: random_params(d, k, 42),
        };
        let swapped = BiLstmParams {
            forward: p.backward.clone(),
            backward: p.forward.clone(),
        };
        let x = uniform(&[n, k], 1.0, &mut ChaCha8Rng::seed_from_u64(43));
        let rev_rows: Vec<Vec<f64>> = (0..n).rev().map(|i| x.row(i).to_vec()).collect();
        let xr = Tensor::from_rows(&rev_rows).unwrap();
        let h = encode(&p, &x);
        let hr = encode(&swapped, &xr);
        for i in 0..n {
            for j in 0..d {
                assert_eq!(h.at(i, j), hr.at(n - 1 - i, d + j));
                assert_eq!(h.at(i, d + j), hr.at(n - 1 - i, j));
            }
        }
    }
}
