//! One LSTM layer with a linear head, forward and backward by hand.
//!
//! Parameters live in one flat vector, laid out as
//!
//! ```text
//! w_input  4H×F   gate rows in the order input, forget, output, candidate
//! w_hidden 4H×H
//! b_gates  4H
//! w_head   Q×H
//! b_head   Q
//! ```
//!
//! Inputs are standardized with fixed `(x − input_shift)/input_scale` and
//! outputs mapped back with `output_shift + output_scale·(w_head·h + b_head)`.

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub hidden: usize,
    pub width: usize,
    pub outputs: usize,
}

impl Shape {
    pub fn w_input(&self) -> (usize, usize) {
        (0, 4 * self.hidden * self.width)
    }

    pub fn w_hidden(&self) -> (usize, usize) {
        let start = self.w_input().1;
        (start, start + 4 * self.hidden * self.hidden)
    }

    pub fn b_gates(&self) -> (usize, usize) {
        let start = self.w_hidden().1;
        (start, start + 4 * self.hidden)
    }

    pub fn w_head(&self) -> (usize, usize) {
        let start = self.b_gates().1;
        (start, start + self.outputs * self.hidden)
    }

    pub fn b_head(&self) -> (usize, usize) {
        let start = self.w_head().1;
        (start, start + self.outputs)
    }

    pub fn n_params(&self) -> usize {
        self.b_head().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scaling<T> {
    pub input_shift: T,
    pub input_scale: T,
    pub output_shift: T,
    pub output_scale: T,
}

/// Dot product with four independent partial sums, so the additions do not
/// form one serial dependency chain.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Activations of one sequence, kept for the backward pass.
pub(crate) struct Tape<T> {
    steps: usize,
    hidden: usize,
    width: usize,
    /// Standardized inputs, steps×F.
    x: Vec<T>,
    /// Hidden and cell states, (steps+1)×H, row 0 is the zero start.
    h: Vec<T>,
    c: Vec<T>,
    /// Gate activations i, f, o, g per step, steps×4H.
    gates: Vec<T>,
    out: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn new(shape: Shape, steps: usize) -> Self {
        let h = shape.hidden;
        Self {
            steps,
            hidden: h,
            width: shape.width,
            x: vec![T::zero(); steps * shape.width],
            h: vec![T::zero(); (steps + 1) * h],
            c: vec![T::zero(); (steps + 1) * h],
            gates: vec![T::zero(); steps * 4 * h],
            out: vec![T::zero(); shape.outputs],
        }
    }

    pub fn output(&self) -> &[T] {
        &self.out
    }
}

/// Runs one window (`steps×F`, row-major) through the network.
pub(crate) fn forward<T: Real>(shape: Shape, params: &[T], scaling: &Scaling<T>, window: &[T], tape: &mut Tape<T>) {
    let (hd, f) = (shape.hidden, shape.width);
    let wi = &params[shape.w_input().0..shape.w_input().1];
    let wh = &params[shape.w_hidden().0..shape.w_hidden().1];
    let bg = &params[shape.b_gates().0..shape.b_gates().1];
    let wo = &params[shape.w_head().0..shape.w_head().1];
    let bo = &params[shape.b_head().0..shape.b_head().1];
    let steps = tape.steps;
    for (dst, &v) in tape.x.iter_mut().zip(window) {
        *dst = (v - scaling.input_shift) / scaling.input_scale;
    }
    let mut z = vec![T::zero(); 4 * hd];
    for s in 0..steps {
        let x = &tape.x[s * f..(s + 1) * f];
        let h_prev = &tape.h[s * hd..(s + 1) * hd];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = bg[r] + dot(&wi[r * f..(r + 1) * f], x) + dot(&wh[r * hd..(r + 1) * hd], h_prev);
        }
        let gates = &mut tape.gates[s * 4 * hd..(s + 1) * 4 * hd];
        for k in 0..hd {
            gates[k] = sigmoid(z[k]);
            gates[hd + k] = sigmoid(z[hd + k]);
            gates[2 * hd + k] = sigmoid(z[2 * hd + k]);
            gates[3 * hd + k] = z[3 * hd + k].tanh();
        }
        let (before, after) = tape.c.split_at_mut((s + 1) * hd);
        let c_prev = &before[s * hd..];
        let c_new = &mut after[..hd];
        let h_new = &mut tape.h[(s + 1) * hd..(s + 2) * hd];
        for k in 0..hd {
            let c = gates[hd + k] * c_prev[k] + gates[k] * gates[3 * hd + k];
            c_new[k] = c;
            h_new[k] = gates[2 * hd + k] * c.tanh();
        }
    }
    let h_last = &tape.h[steps * hd..];
    for (q, o) in tape.out.iter_mut().enumerate() {
        *o = scaling.output_shift + scaling.output_scale * (bo[q] + dot(&wo[q * hd..(q + 1) * hd], h_last));
    }
}

/// Accumulates `∂loss/∂params` into `grad` given `d_out = ∂loss/∂output`.
pub(crate) fn backward<T: Real>(
    shape: Shape,
    params: &[T],
    scaling: &Scaling<T>,
    tape: &Tape<T>,
    d_out: &[T],
    grad: &mut [T],
) {
    let (hd, f, steps) = (tape.hidden, tape.width, tape.steps);
    let (wh0, wh1) = shape.w_hidden();
    let wh = &params[wh0..wh1];
    let (who0, who1) = shape.w_head();
    let wo = &params[who0..who1];

    let mut dh = vec![T::zero(); hd];
    let h_last = &tape.h[steps * hd..];
    {
        let (g_head, rest) = grad[who0..].split_at_mut(who1 - who0);
        let g_bias = &mut rest[..shape.outputs];
        for (q, &d) in d_out.iter().enumerate() {
            let d = d * scaling.output_scale;
            g_bias[q] += d;
            for k in 0..hd {
                g_head[q * hd + k] += d * h_last[k];
                dh[k] += d * wo[q * hd + k];
            }
        }
    }

    let mut dc = vec![T::zero(); hd];
    let mut dz = vec![T::zero(); 4 * hd];
    let (wi0, _) = shape.w_input();
    let (bg0, _) = shape.b_gates();
    for s in (0..steps).rev() {
        let gates = &tape.gates[s * 4 * hd..(s + 1) * 4 * hd];
        let c_prev = &tape.c[s * hd..(s + 1) * hd];
        let c_new = &tape.c[(s + 1) * hd..(s + 2) * hd];
        for k in 0..hd {
            let (i, fg, o, g) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let tc = c_new[k].tanh();
            let d_o = dh[k] * tc;
            let d_c = dc[k] + dh[k] * o * (T::one() - tc * tc);
            dz[k] = d_c * g * i * (T::one() - i);
            dz[hd + k] = d_c * c_prev[k] * fg * (T::one() - fg);
            dz[2 * hd + k] = d_o * o * (T::one() - o);
            dz[3 * hd + k] = d_c * i * (T::one() - g * g);
            dc[k] = d_c * fg;
        }
        let x = &tape.x[s * f..(s + 1) * f];
        let h_prev = &tape.h[s * hd..(s + 1) * hd];
        for (r, &d) in dz.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            grad[bg0 + r] += d;
            let gi = &mut grad[wi0 + r * f..wi0 + (r + 1) * f];
            for (g, &xv) in gi.iter_mut().zip(x) {
                *g += d * xv;
            }
            let gh = &mut grad[wh0 + r * hd..wh0 + (r + 1) * hd];
            for (g, &hv) in gh.iter_mut().zip(h_prev) {
                *g += d * hv;
            }
        }
        dh.fill(T::zero());
        for (r, &d) in dz.iter().enumerate() {
            for (dhk, &w) in dh.iter_mut().zip(&wh[r * hd..(r + 1) * hd]) {
                *dhk += w * d;
            }
        }
    }
}
