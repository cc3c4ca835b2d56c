//! Minibatch ELBO and gradient with every activation stored feature-major
//! (`features × batch`), so the inner loops run across individuals.
//!
//! Numerically this is the per-series computation summed over the batch; it
//! exists because training spends nearly all of its time here.

use super::nn::{sigmoid, tanh, LstmCell, Readout};
use super::{Dgm2Model, Dgm2Params};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::scalar::Scalar;

/// `out += a x`, four columns of `a` per pass over an output row.
fn gemm_acc<S: Scalar>(out: &mut Mat<S>, a: &Mat<S>, x: &Mat<S>) {
    let n = a.cols();
    for r in 0..a.rows() {
        let arow = a.row(r);
        let orow = out.row_mut(r);
        let mut c = 0;
        while c + 4 <= n {
            let (w0, w1, w2, w3) = (arow[c], arow[c + 1], arow[c + 2], arow[c + 3]);
            let (x0, x1, x2, x3) = (x.row(c), x.row(c + 1), x.row(c + 2), x.row(c + 3));
            for (b, o) in orow.iter_mut().enumerate() {
                *o += w0 * x0[b] + w1 * x1[b] + w2 * x2[b] + w3 * x3[b];
            }
            c += 4;
        }
        for (w, c) in arow[c..].iter().zip(c..n) {
            for (o, &v) in orow.iter_mut().zip(x.row(c)) {
                *o += *w * v;
            }
        }
    }
}

/// `out += aᵀ d`, four rows of `a` per pass over an output row.
fn gemm_tn_acc<S: Scalar>(out: &mut Mat<S>, a: &Mat<S>, d: &Mat<S>) {
    let m = a.rows();
    let mut r = 0;
    while r + 4 <= m {
        let (d0, d1, d2, d3) = (d.row(r), d.row(r + 1), d.row(r + 2), d.row(r + 3));
        for c in 0..a.cols() {
            let (w0, w1, w2, w3) = (a[(r, c)], a[(r + 1, c)], a[(r + 2, c)], a[(r + 3, c)]);
            for (b, o) in out.row_mut(c).iter_mut().enumerate() {
                *o += w0 * d0[b] + w1 * d1[b] + w2 * d2[b] + w3 * d3[b];
            }
        }
        r += 4;
    }
    for r in r..m {
        let drow = d.row(r);
        for (c, &w) in a.row(r).iter().enumerate() {
            for (o, &v) in out.row_mut(c).iter_mut().zip(drow) {
                *o += w * v;
            }
        }
    }
}

/// `g += d xᵀ`
fn gemm_nt_acc<S: Scalar>(g: &mut Mat<S>, d: &Mat<S>, x: &Mat<S>) {
    for r in 0..d.rows() {
        let drow = d.row(r);
        for c in 0..x.rows() {
            g[(r, c)] += dot(drow, x.row(c));
        }
    }
}

fn broadcast_rows<S: Scalar>(bias: &[S], batch: usize) -> Mat<S> {
    Mat::from_fn(bias.len(), batch, |r, _| bias[r])
}

fn add_row_sums<S: Scalar>(acc: &mut [S], m: &Mat<S>) {
    for (r, a) in acc.iter_mut().enumerate() {
        *a += m.row(r).iter().copied().sum::<S>();
    }
}

struct CellCache<S> {
    x: Mat<S>,
    h_prev: Mat<S>,
    c_prev: Mat<S>,
    gates: Mat<S>,
    tanh_c: Mat<S>,
}

fn cell_forward<S: Scalar>(cell: &LstmCell<S>, x: &Mat<S>, h: &Mat<S>, c: &Mat<S>) -> (Mat<S>, Mat<S>, CellCache<S>) {
    let hd = cell.hidden_dim();
    let nb = x.cols();
    let mut gates = broadcast_rows(&cell.b, nb);
    gemm_acc(&mut gates, &cell.w, x);
    gemm_acc(&mut gates, &cell.u, h);
    for r in 0..4 * hd {
        let candidate = (2 * hd..3 * hd).contains(&r);
        for a in gates.row_mut(r) {
            *a = if candidate { tanh(*a) } else { sigmoid(*a) };
        }
    }
    let mut c_new = Mat::zeros(hd, nb);
    let mut tanh_c = Mat::zeros(hd, nb);
    let mut h_new = Mat::zeros(hd, nb);
    for j in 0..hd {
        for b in 0..nb {
            let cj = gates[(hd + j, b)] * c[(j, b)] + gates[(j, b)] * gates[(2 * hd + j, b)];
            let tc = tanh(cj);
            c_new[(j, b)] = cj;
            tanh_c[(j, b)] = tc;
            h_new[(j, b)] = gates[(3 * hd + j, b)] * tc;
        }
    }
    let cache = CellCache { x: x.clone(), h_prev: h.clone(), c_prev: c.clone(), gates, tanh_c };
    (h_new, c_new, cache)
}

/// Returns `(dx, dh_prev, dc_prev)`; `dx` only when requested.
fn cell_backward<S: Scalar>(
    cell: &LstmCell<S>,
    cache: &CellCache<S>,
    dh: &Mat<S>,
    dc: &Mat<S>,
    grad: &mut LstmCell<S>,
    want_dx: bool,
) -> (Option<Mat<S>>, Mat<S>, Mat<S>) {
    let hd = cell.hidden_dim();
    let nb = dh.cols();
    let one = S::one();
    let gt = &cache.gates;
    let mut da = Mat::zeros(4 * hd, nb);
    let mut dc_prev = Mat::zeros(hd, nb);
    for j in 0..hd {
        for b in 0..nb {
            let (i, f, g, o) = (gt[(j, b)], gt[(hd + j, b)], gt[(2 * hd + j, b)], gt[(3 * hd + j, b)]);
            let tc = cache.tanh_c[(j, b)];
            let dhj = dh[(j, b)];
            let dct = dc[(j, b)] + dhj * o * (one - tc * tc);
            da[(j, b)] = dct * g * i * (one - i);
            da[(hd + j, b)] = dct * cache.c_prev[(j, b)] * f * (one - f);
            da[(2 * hd + j, b)] = dct * i * (one - g * g);
            da[(3 * hd + j, b)] = dhj * tc * o * (one - o);
            dc_prev[(j, b)] = dct * f;
        }
    }
    gemm_nt_acc(&mut grad.w, &da, &cache.x);
    gemm_nt_acc(&mut grad.u, &da, &cache.h_prev);
    add_row_sums(&mut grad.b, &da);
    let dx = want_dx.then(|| {
        let mut dx = Mat::zeros(cell.input_dim(), nb);
        gemm_tn_acc(&mut dx, &cell.w, &da);
        dx
    });
    let mut dh_prev = Mat::zeros(hd, nb);
    gemm_tn_acc(&mut dh_prev, &cell.u, &da);
    (dx, dh_prev, dc_prev)
}

struct ReadCache<S> {
    h: Mat<S>,
    a1: Mat<S>,
}

fn readout_forward<S: Scalar>(r: &Readout<S>, h: &Mat<S>) -> (Mat<S>, ReadCache<S>) {
    let nb = h.cols();
    let mut a1 = broadcast_rows(&r.b1, nb);
    gemm_acc(&mut a1, &r.w1, h);
    a1.as_mut_slice().iter_mut().for_each(|a| *a = tanh(*a));
    let mut out = broadcast_rows(&r.b2, nb);
    gemm_acc(&mut out, &r.w2, &a1);
    (out, ReadCache { h: h.clone(), a1 })
}

fn readout_backward<S: Scalar>(r: &Readout<S>, cache: &ReadCache<S>, dout: &Mat<S>, grad: &mut Readout<S>) -> Mat<S> {
    let nb = dout.cols();
    gemm_nt_acc(&mut grad.w2, dout, &cache.a1);
    add_row_sums(&mut grad.b2, dout);
    let mut dz1 = Mat::zeros(r.w1.rows(), nb);
    gemm_tn_acc(&mut dz1, &r.w2, dout);
    for (d, &a) in dz1.as_mut_slice().iter_mut().zip(cache.a1.as_slice()) {
        *d *= S::one() - a * a;
    }
    gemm_nt_acc(&mut grad.w1, &dz1, &cache.h);
    add_row_sums(&mut grad.b1, &dz1);
    let mut dh = Mat::zeros(r.w1.cols(), nb);
    gemm_tn_acc(&mut dh, &r.w1, &dz1);
    dh
}

/// Column-wise softmax and log-softmax of `K × B` logits.
fn softmax_cols<S: Scalar>(logits: &Mat<S>) -> (Mat<S>, Mat<S>) {
    let (k, nb) = (logits.rows(), logits.cols());
    let mut p = Mat::zeros(k, nb);
    let mut lp = Mat::zeros(k, nb);
    for b in 0..nb {
        let mx = (0..k).map(|r| logits[(r, b)]).fold(S::neg_infinity(), S::max);
        let z: S = (0..k).map(|r| (logits[(r, b)] - mx).exp()).sum();
        let lz = mx + z.ln();
        for r in 0..k {
            lp[(r, b)] = logits[(r, b)] - lz;
            p[(r, b)] = lp[(r, b)].exp();
        }
    }
    (p, lp)
}

/// `p ⊙ (g − ⟨p, g⟩)` per column.
fn softmax_backward_cols<S: Scalar>(p: &Mat<S>, g: &Mat<S>) -> Mat<S> {
    let (k, nb) = (p.rows(), p.cols());
    let mut out = Mat::zeros(k, nb);
    for b in 0..nb {
        let inner: S = (0..k).map(|r| p[(r, b)] * g[(r, b)]).sum();
        for r in 0..k {
            out[(r, b)] = p[(r, b)] * (g[(r, b)] - inner);
        }
    }
    out
}

impl<S: Scalar> Dgm2Model<S> {
    /// Summed ELBO of `series` (each `(d, T)` with a common `T`) and the
    /// summed gradient, accumulated into `grad`.
    pub(crate) fn batch_elbo_grad(&self, series: &[&[Vec<S>]], grad: &mut Dgm2Params<S>) -> Result<S> {
        let nb = series.len();
        if nb == 0 {
            return Ok(S::zero());
        }
        let t_len = series[0].first().map_or(0, Vec::len);
        for s in series {
            if s.len() != self.d {
                return Err(Error::DimensionMismatch { expected: self.d, got: s.len() });
            }
            if s.iter().any(|row| row.len() != t_len) {
                return Err(Error::ShapeMismatch("batch series must share one length".into()));
            }
        }
        let p = &self.params;
        let (k, d, hd) = (self.k, self.d, self.hidden);
        let one = S::one();
        let half = S::lit(0.5);
        let xs: Vec<Mat<S>> = (0..t_len).map(|t| Mat::from_fn(d, nb, |j, b| series[b][j][t])).collect();

        // Inference chain.
        let (mut h, mut c) = (Mat::zeros(hd, nb), Mat::zeros(hd, nb));
        let mut inf_cells = Vec::with_capacity(t_len);
        let mut inf_reads = Vec::with_capacity(t_len);
        let mut q = Vec::with_capacity(t_len);
        let mut log_q = Vec::with_capacity(t_len);
        for x in &xs {
            let (hn, cn, cache) = cell_forward(&p.inference.cell, x, &h, &c);
            let (logits, rc) = readout_forward(&p.inference.readout, &hn);
            let (qt, lqt) = softmax_cols(&logits);
            q.push(qt);
            log_q.push(lqt);
            inf_cells.push(cache);
            inf_reads.push(rc);
            (h, c) = (hn, cn);
        }

        // Transition chain on the soft inputs q_1..q_{T-1}.
        let (mut h, mut c) = (Mat::zeros(hd, nb), Mat::zeros(hd, nb));
        let mut tr_cells = Vec::with_capacity(t_len);
        let mut tr_reads = Vec::with_capacity(t_len);
        let mut probs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            if t > 0 {
                let (hn, cn, cache) = cell_forward(&p.transition.cell, &q[t - 1], &h, &c);
                tr_cells.push(cache);
                (h, c) = (hn, cn);
            }
            let (logits, rc) = readout_forward(&p.transition.readout, &h);
            probs.push(softmax_cols(&logits).0);
            tr_reads.push(rc);
        }

        let base = crate::scalar::softmax(&p.base_logits);
        let inv_var: Vec<S> = p.log_var.iter().map(|&lv| (-lv).exp()).collect();
        let log2pi = S::lit(std::f64::consts::TAU).ln();
        let mut total = S::zero();
        let mut dq: Vec<Mat<S>> = Vec::with_capacity(t_len);
        let mut dp: Vec<Mat<S>> = Vec::with_capacity(t_len);
        let mut dbase = vec![S::zero(); k];
        for t in 0..t_len {
            let mut dq_t = Mat::zeros(k, nb);
            let mut dp_t = Mat::zeros(k, nb);
            for b in 0..nb {
                for kk in 0..k {
                    let mut ll = S::zero();
                    for j in 0..d {
                        let r = xs[t][(j, b)] - p.means[(kk, j)];
                        ll += -half * (log2pi + p.log_var[j] + r * r * inv_var[j]);
                    }
                    let psi = (one - self.gamma) * probs[t][(kk, b)] + self.gamma * base[kk];
                    let qv = q[t][(kk, b)];
                    let lq = log_q[t][(kk, b)];
                    if qv > S::zero() {
                        total += qv * (ll - lq + psi.ln());
                    }
                    dq_t[(kk, b)] = ll - lq - one + psi.ln();
                    let dpsi = qv / psi;
                    dp_t[(kk, b)] = (one - self.gamma) * dpsi;
                    dbase[kk] += self.gamma * dpsi;
                    for j in 0..d {
                        let r = xs[t][(j, b)] - p.means[(kk, j)];
                        grad.means[(kk, j)] += qv * r * inv_var[j];
                        grad.log_var[j] += qv * (-half + half * r * r * inv_var[j]);
                    }
                }
            }
            dq.push(dq_t);
            dp.push(dp_t);
        }
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let inner: S = base.iter().zip(&dbase).map(|(&a, &g)| a * g).sum();
        for (g, (&a, &db)) in grad.base_logits.iter_mut().zip(base.iter().zip(&dbase)) {
            *g += a * (db - inner);
        }

        let mut dh_next = Mat::zeros(hd, nb);
        let mut dc_next = Mat::zeros(hd, nb);
        for t in (0..t_len).rev() {
            let dlogits = softmax_backward_cols(&probs[t], &dp[t]);
            let mut dh = readout_backward(&p.transition.readout, &tr_reads[t], &dlogits, &mut grad.transition.readout);
            if t == 0 {
                break;
            }
            dh.axpy(one, &dh_next);
            let (dx, dh_prev, dc_prev) =
                cell_backward(&p.transition.cell, &tr_cells[t - 1], &dh, &dc_next, &mut grad.transition.cell, true);
            dq[t - 1].axpy(one, &dx.expect("requested"));
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        let mut dh_next = Mat::zeros(hd, nb);
        let mut dc_next = Mat::zeros(hd, nb);
        for t in (0..t_len).rev() {
            let dlogits = softmax_backward_cols(&q[t], &dq[t]);
            let mut dh = readout_backward(&p.inference.readout, &inf_reads[t], &dlogits, &mut grad.inference.readout);
            dh.axpy(one, &dh_next);
            let (_, dh_prev, dc_prev) =
                cell_backward(&p.inference.cell, &inf_cells[t], &dh, &dc_next, &mut grad.inference.cell, false);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(total)
    }
}
