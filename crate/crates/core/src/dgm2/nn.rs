//! LSTM cell and one-hidden-layer tanh readout with explicit backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Mat};
use crate::scalar::Scalar;

/// Flat view over a parameter container, used by the optimizer and gradient checks.
pub trait ParamSet<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S]));

    fn flatten(&self) -> Vec<S>
    where
        S: Copy,
    {
        let mut out = Vec::new();
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn assign(&mut self, flat: &[S])
    where
        S: Copy,
    {
        let mut pos = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }
}

fn uniform_mat<S: Scalar, R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat<S> {
    Mat::from_fn(rows, cols, |_, _| S::lit(rng.random_range(-scale..=scale)))
}

fn uniform_vec<S: Scalar, R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.random_range(-scale..=scale))).collect()
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp_fast())
}

/// `1 − 2 / (e^{2x} + 1)`: one `exp` instead of the library `tanh`, which is
/// about twice as slow. Absolute error stays at rounding level.
#[inline]
pub(crate) fn tanh<S: Scalar>(x: S) -> S {
    let two = S::lit(2.0);
    S::one() - two / ((two * x).exp_fast() + S::one())
}

/// Gate rows are stacked `[input, forget, candidate, output]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LstmCell<S> {
    pub w: Mat<S>,
    pub u: Mat<S>,
    pub b: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LstmState<S> {
    pub h: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> LstmState<S> {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![S::zero(); hidden], c: vec![S::zero(); hidden] }
    }
}

#[derive(Clone, Debug)]
pub struct LstmCache<S> {
    x: Vec<S>,
    h_prev: Vec<S>,
    c_prev: Vec<S>,
    /// Activated gates, stacked like the weight rows.
    gates: Vec<S>,
    tanh_c: Vec<S>,
}

impl<S: Scalar> LstmCell<S> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w: Mat::zeros(4 * hidden_dim, input_dim),
            u: Mat::zeros(4 * hidden_dim, hidden_dim),
            b: vec![S::zero(); 4 * hidden_dim],
        }
    }

    pub fn random<R: Rng>(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: uniform_mat(4 * hidden_dim, input_dim, scale, rng),
            u: uniform_mat(4 * hidden_dim, hidden_dim, scale, rng),
            b: uniform_vec(4 * hidden_dim, scale, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn forward(&self, x: &[S], state: &LstmState<S>) -> (LstmState<S>, LstmCache<S>) {
        let hd = self.hidden_dim();
        let mut gates = self.b.clone();
        for (r, a) in gates.iter_mut().enumerate() {
            *a += dot(self.w.row(r), x) + dot(self.u.row(r), &state.h);
        }
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hd..3 * hd).contains(&r) { tanh(*a) } else { sigmoid(*a) };
        }
        let mut c = Vec::with_capacity(hd);
        let mut tanh_c = Vec::with_capacity(hd);
        let mut h = Vec::with_capacity(hd);
        for j in 0..hd {
            let cj = gates[hd + j] * state.c[j] + gates[j] * gates[2 * hd + j];
            let tc = tanh(cj);
            c.push(cj);
            tanh_c.push(tc);
            h.push(gates[3 * hd + j] * tc);
        }
        let cache = LstmCache { x: x.to_vec(), h_prev: state.h.clone(), c_prev: state.c.clone(), gates, tanh_c };
        (LstmState { h, c }, cache)
    }

    /// Accumulates parameter gradients into `grad`; returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        cache: &LstmCache<S>,
        dh: &[S],
        dc: &[S],
        grad: &mut LstmCell<S>,
    ) -> (Vec<S>, Vec<S>, Vec<S>) {
        let hd = self.hidden_dim();
        let one = S::one();
        let gt = &cache.gates;
        let mut da = vec![S::zero(); 4 * hd];
        let mut dc_prev = vec![S::zero(); hd];
        for j in 0..hd {
            let (i, f, g, o, tc) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j], cache.tanh_c[j]);
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (one - tc * tc);
            da[j] = dct * g * i * (one - i);
            da[hd + j] = dct * cache.c_prev[j] * f * (one - f);
            da[2 * hd + j] = dct * i * (one - g * g);
            da[3 * hd + j] = d_o * o * (one - o);
            dc_prev[j] = dct * f;
        }
        grad.w.add_outer(one, &da, &cache.x);
        grad.u.add_outer(one, &da, &cache.h_prev);
        grad.b.iter_mut().zip(&da).for_each(|(g, &d)| *g += d);
        (self.w.tmatvec(&da), self.u.tmatvec(&da), dc_prev)
    }
}

impl<S> ParamSet<S> for LstmCell<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        f(self.w.as_slice());
        f(self.u.as_slice());
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        f(self.w.as_mut_slice());
        f(self.u.as_mut_slice());
        f(&mut self.b);
    }
}

/// `out = W2 tanh(W1 h + b1) + b2`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Readout<S> {
    pub w1: Mat<S>,
    pub b1: Vec<S>,
    pub w2: Mat<S>,
    pub b2: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct ReadoutCache<S> {
    h: Vec<S>,
    a1: Vec<S>,
}

impl<S: Scalar> Readout<S> {
    pub fn zeros(input: usize, width: usize, output: usize) -> Self {
        Self {
            w1: Mat::zeros(width, input),
            b1: vec![S::zero(); width],
            w2: Mat::zeros(output, width),
            b2: vec![S::zero(); output],
        }
    }

    pub fn random<R: Rng>(input: usize, width: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w1: uniform_mat(width, input, scale, rng),
            b1: uniform_vec(width, scale, rng),
            w2: uniform_mat(output, width, scale, rng),
            b2: uniform_vec(output, scale, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, h: &[S]) -> (Vec<S>, ReadoutCache<S>) {
        let a1: Vec<S> = (0..self.w1.rows()).map(|r| tanh(dot(self.w1.row(r), h) + self.b1[r])).collect();
        let out: Vec<S> = (0..self.w2.rows()).map(|r| dot(self.w2.row(r), &a1) + self.b2[r]).collect();
        (out, ReadoutCache { h: h.to_vec(), a1 })
    }

    /// Accumulates parameter gradients; returns the gradient with respect to the input.
    pub fn backward(&self, cache: &ReadoutCache<S>, dout: &[S], grad: &mut Readout<S>) -> Vec<S> {
        let one = S::one();
        grad.w2.add_outer(one, dout, &cache.a1);
        grad.b2.iter_mut().zip(dout).for_each(|(g, &d)| *g += d);
        let da1 = self.w2.tmatvec(dout);
        let dz1: Vec<S> = da1.iter().zip(&cache.a1).map(|(&d, &a)| d * (one - a * a)).collect();
        grad.w1.add_outer(one, &dz1, &cache.h);
        grad.b1.iter_mut().zip(&dz1).for_each(|(g, &d)| *g += d);
        self.w1.tmatvec(&dz1)
    }
}

impl<S> ParamSet<S> for Readout<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        f(self.w1.as_slice());
        f(&self.b1);
        f(self.w2.as_slice());
        f(&self.b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        f(self.w1.as_mut_slice());
        f(&mut self.b1);
        f(self.w2.as_mut_slice());
        f(&mut self.b2);
    }
}

/// Recurrent cell followed by a readout producing K logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Network<S> {
    pub cell: LstmCell<S>,
    pub readout: Readout<S>,
}

impl<S: Scalar> Network<S> {
    pub fn zeros(input: usize, hidden: usize, k: usize) -> Self {
        Self { cell: LstmCell::zeros(input, hidden), readout: Readout::zeros(hidden, hidden, k) }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, k: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            cell: LstmCell::random(input, hidden, scale, rng),
            readout: Readout::random(hidden, hidden, k, scale, rng),
        }
    }
}

impl<S> ParamSet<S> for Network<S> {
    fn visit(&self, f: &mut dyn FnMut(&[S])) {
        self.cell.visit(f);
        self.readout.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [S])) {
        self.cell.visit_mut(f);
        self.readout.visit_mut(f);
    }
}

/// `p ⊙ (g − ⟨p, g⟩)`: gradient with respect to logits given a gradient with
/// respect to `p = softmax(logits)`.
pub fn softmax_backward<S: Scalar>(p: &[S], g: &[S]) -> Vec<S> {
    let inner = dot(p, g);
    p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}
