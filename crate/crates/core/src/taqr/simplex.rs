//! Simplex iterations for quantile regression on the K-row interpolation basis.
//!
//! A vertex of the LP `min Σ τ·u_i + (1−τ)·v_i  s.t.  y = Xβ + u − v` is a set
//! `h` of K rows fitted exactly, `β = X_h⁻¹ y_h`. Each non-basic row carries a
//! sign telling which of `u_i`/`v_i` is basic; it follows the residual sign
//! and is only free when the residual is zero (a degenerate vertex).
//!
//! For basis slot `j`, the edge `β + t·σ·X_h⁻¹e_j` releases row `h_j` with
//! residual `−σt`. Its reduced costs are
//!
//! ```text
//! σ = +1:  (1 − τ) − g_j        σ = −1:  τ + g_j        g = (Σ_{i∉h} ψ_i x_i)ᵀ X_h⁻¹
//! ```
//!
//! with `ψ_i = τ` for positive rows and `τ − 1` for negative ones. Along an
//! improving edge every non-basic row whose residual runs into zero is a
//! breakpoint that raises the slope by `|x_iᵀ X_h⁻¹ e_j|`; the entering row is
//! the breakpoint where the slope turns non-negative.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::{dot, independent_rows, Matrix};
use crate::Real;

use super::pinball;

#[derive(Debug, Clone)]
pub(crate) struct Row<T> {
    pub id: usize,
    pub x: Vec<T>,
    pub y: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Basic,
    Pos,
    Neg,
}

#[derive(Debug, Clone)]
pub(crate) struct Simplex<T> {
    tau: T,
    k: usize,
    rows: VecDeque<Row<T>>,
    signs: VecDeque<Sign>,
    /// Row ids, slot `j` matching row `j` of `binv`'s inverse.
    basis: Vec<usize>,
    binv: Matrix<T>,
    beta: Vec<T>,
}

struct Breakpoint<T> {
    pos: usize,
    t: T,
    slope: T,
}

impl<T: Real> Simplex<T> {
    /// Builds a starting vertex from pivoted elimination on the rows and runs
    /// the simplex to optimality.
    pub fn solve(rows: VecDeque<Row<T>>, tau: T, max_pivots: usize) -> Result<(Self, usize)> {
        let mut s = Self::start(rows, tau)?;
        let pivots = s.optimize(max_pivots)?;
        Ok((s, pivots))
    }

    fn start(rows: VecDeque<Row<T>>, tau: T) -> Result<Self> {
        let k = rows.front().map_or(0, |r| r.x.len());
        if rows.len() <= k {
            return Err(Error::Underdetermined {
                rows: rows.len(),
                cols: k,
            });
        }
        let views: Vec<&[T]> = rows.iter().map(|r| r.x.as_slice()).collect();
        let picked = independent_rows(&views, T::pivot_tol().sqrt())
            .ok_or_else(|| Error::SingularDesign(format!("design of {} rows has rank below {k}", rows.len())))?;
        let basis = picked.iter().map(|&p| rows[p].id).collect();
        let mut s = Self {
            tau,
            k,
            signs: VecDeque::from(vec![Sign::Pos; rows.len()]),
            rows,
            basis,
            binv: Matrix::zeros(k, k),
            beta: vec![T::zero(); k],
        };
        for &p in &picked {
            s.signs[p] = Sign::Basic;
        }
        s.refactor()?;
        s.sync_signs();
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row<T>> + '_ {
        self.rows.iter()
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    /// Basis row ids in ascending order.
    pub fn basis_ids(&self) -> Vec<usize> {
        let mut b = self.basis.clone();
        b.sort_unstable();
        b
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn objective(&self) -> T {
        self.rows
            .iter()
            .map(|r| pinball(r.y, dot(&r.x, &self.beta), self.tau))
            .sum()
    }

    fn pos_of(&self, id: usize) -> usize {
        id - self.rows[0].id
    }

    fn residual(&self, pos: usize) -> T {
        let r = &self.rows[pos];
        r.y - dot(&r.x, &self.beta)
    }

    fn is_zero(&self, r: T, y: T) -> bool {
        r.abs() < T::zero_residual_tol() * (T::one() + y.abs())
    }

    /// Recomputes `X_h⁻¹` and `β` from the basis rows.
    fn refactor(&mut self) -> Result<()> {
        let k = self.k;
        let xh = Matrix::from_fn(k, k, |j, c| self.rows[self.pos_of(self.basis[j])].x[c]);
        let yh: Vec<T> = self.basis.iter().map(|&id| self.rows[self.pos_of(id)].y).collect();
        self.binv = xh
            .inverse(T::pivot_tol())
            .ok_or_else(|| Error::SingularDesign("basis matrix became singular".into()))?;
        let mut beta = self.binv.mul_vec(&yh);
        // one round of iterative refinement keeps X_h·β = y_h tight
        let resid: Vec<T> = (0..k).map(|j| yh[j] - dot(xh.row(j), &beta)).collect();
        let corr = self.binv.mul_vec(&resid);
        for (b, c) in beta.iter_mut().zip(corr) {
            *b += c;
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite coefficients".into()));
        }
        self.beta = beta;
        Ok(())
    }

    /// Non-basic signs follow non-zero residuals; zero residuals keep theirs.
    fn sync_signs(&mut self) {
        for p in 0..self.rows.len() {
            if self.signs[p] == Sign::Basic {
                continue;
            }
            let r = self.residual(p);
            if !self.is_zero(r, self.rows[p].y) {
                self.signs[p] = if r > T::zero() { Sign::Pos } else { Sign::Neg };
            }
        }
    }

    fn psi(&self, s: Sign) -> T {
        match s {
            Sign::Pos => self.tau,
            Sign::Neg => self.tau - T::one(),
            Sign::Basic => T::zero(),
        }
    }

    /// `g = (Σ_{i∉h} ψ_i x_i)ᵀ X_h⁻¹`.
    fn gradient(&self) -> Vec<T> {
        let mut a = vec![T::zero(); self.k];
        for (row, &s) in self.rows.iter().zip(&self.signs) {
            let psi = self.psi(s);
            if psi != T::zero() {
                for (ac, &xc) in a.iter_mut().zip(&row.x) {
                    *ac += psi * xc;
                }
            }
        }
        self.binv.vec_mul(&a)
    }

    fn direction(&self, slot: usize) -> Vec<T> {
        self.binv.column(slot)
    }

    /// Breakpoints along `σ·d`, sorted by step length then row id.
    fn breakpoints(&self, d: &[T], sigma: T) -> Vec<Breakpoint<T>> {
        let dscale = d.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let mut out = Vec::new();
        for p in 0..self.rows.len() {
            let s = self.signs[p];
            if s == Sign::Basic {
                continue;
            }
            let row = &self.rows[p];
            let w = sigma * dot(&row.x, d);
            let xscale = row.x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if w.abs() <= T::pivot_tol() * (T::one() + xscale * dscale) {
                continue;
            }
            let heading_to_zero = match s {
                Sign::Pos => w > T::zero(),
                Sign::Neg => w < T::zero(),
                Sign::Basic => false,
            };
            if heading_to_zero {
                let t = (self.residual(p) / w).max(T::zero());
                out.push(Breakpoint {
                    pos: p,
                    t,
                    slope: w.abs(),
                });
            }
        }
        out.sort_by(|a, b| {
            a.t.partial_cmp(&b.t)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.pos.cmp(&b.pos))
        });
        out
    }

    /// Walks breakpoints from initial slope `d0 ≤ 0`; returns the index of the
    /// entering breakpoint.
    fn line_search(bps: &[Breakpoint<T>], d0: T, shortest: bool) -> Option<usize> {
        if bps.is_empty() {
            return None;
        }
        if shortest {
            return Some(0);
        }
        let mut slope = d0;
        for (i, bp) in bps.iter().enumerate() {
            slope += bp.slope;
            if slope >= T::zero() {
                return Some(i);
            }
        }
        Some(bps.len() - 1)
    }

    /// Moves row at `enter` into basis slot `slot`; rows crossed on the way flip sign.
    fn pivot(&mut self, slot: usize, enter: usize, crossed: &[usize], leaving_sign: Sign) -> Result<()> {
        for &p in crossed {
            self.signs[p] = match self.signs[p] {
                Sign::Pos => Sign::Neg,
                Sign::Neg => Sign::Pos,
                Sign::Basic => Sign::Basic,
            };
        }
        let old = self.basis[slot];
        if let Some(leaving) = old.checked_sub(self.rows[0].id).filter(|&p| p < self.rows.len()) {
            if self.rows[leaving].id == old {
                self.signs[leaving] = leaving_sign;
            }
        }
        self.signs[enter] = Sign::Basic;
        self.basis[slot] = self.rows[enter].id;
        self.refactor()?;
        self.sync_signs();
        Ok(())
    }

    /// Pivots to an optimal vertex. Uses long steps and the most negative
    /// reduced cost, switching to Bland's rule with shortest steps while the
    /// iteration is stuck at a degenerate vertex.
    pub fn optimize(&mut self, max_pivots: usize) -> Result<usize> {
        let tol = T::reduced_cost_tol();
        let mut pivots = 0;
        let mut stall = 0;
        let bland_after = self.k.max(4);
        loop {
            let g = self.gradient();
            let bland = stall >= bland_after;
            let mut choice: Option<(usize, T, T)> = None;
            for (slot, &gj) in g.iter().enumerate() {
                for (sigma, cost) in [(T::one(), T::one() - self.tau - gj), (-T::one(), self.tau + gj)] {
                    if cost >= -tol {
                        continue;
                    }
                    let better = match choice {
                        None => true,
                        Some((s, _, c)) => {
                            if bland {
                                self.basis[slot] < self.basis[s]
                            } else {
                                cost < c
                            }
                        }
                    };
                    if better {
                        choice = Some((slot, sigma, cost));
                    }
                }
            }
            let Some((slot, sigma, cost)) = choice else {
                return Ok(pivots);
            };
            if pivots >= max_pivots {
                return Err(Error::PivotLimit(max_pivots));
            }
            let d = self.direction(slot);
            let bps = self.breakpoints(&d, sigma);
            let idx = Self::line_search(&bps, cost, bland)
                .ok_or_else(|| Error::Numerical("unbounded improving direction".into()))?;
            let step = bps[idx].t;
            let crossed: Vec<usize> = bps[..idx].iter().map(|b| b.pos).collect();
            let leaving_y = self.rows[self.pos_of(self.basis[slot])].y;
            let leaving_sign = if sigma > T::zero() { Sign::Neg } else { Sign::Pos };
            self.pivot(slot, bps[idx].pos, &crossed, leaving_sign)?;
            pivots += 1;
            if self.is_zero(step, leaving_y) {
                stall += 1;
            } else {
                stall = 0;
            }
        }
    }

    /// Appends a row; the current basis stays a vertex of the enlarged problem.
    pub fn push(&mut self, row: Row<T>) {
        debug_assert!(self.rows.back().is_none_or(|b| b.id + 1 == row.id));
        let r = row.y - dot(&row.x, &self.beta);
        self.rows.push_back(row);
        self.signs.push_back(if r >= T::zero() { Sign::Pos } else { Sign::Neg });
    }

    /// Removes the oldest row. When it was basic, the freed slot is refilled
    /// by a line search along the released direction, which also detects a
    /// window that no longer spans K dimensions. Returns pivots performed.
    pub fn pop_front(&mut self) -> Result<usize> {
        let row = self.rows.pop_front().expect("pop from empty window");
        let sign = self.signs.pop_front().expect("signs aligned with rows");
        if sign != Sign::Basic {
            return Ok(0);
        }
        let slot = self
            .basis
            .iter()
            .position(|&id| id == row.id)
            .expect("basic row in basis");
        let d = self.direction(slot);
        let g = self.gradient()[slot];
        let mut best: Option<(T, Vec<Breakpoint<T>>, T)> = None;
        for sigma in [T::one(), -T::one()] {
            let d0 = -sigma * g;
            let bps = self.breakpoints(&d, sigma);
            if bps.is_empty() {
                continue;
            }
            if best.as_ref().is_none_or(|(_, _, bd)| d0 < *bd) {
                best = Some((sigma, bps, d0));
            }
        }
        let Some((_, bps, d0)) = best else {
            return Err(Error::SingularDesign(format!(
                "window rank fell below {} after dropping row {}",
                self.k, row.id
            )));
        };
        let idx = Self::line_search(&bps, d0.min(T::zero()), false).expect("non-empty breakpoints");
        let crossed: Vec<usize> = bps[..idx].iter().map(|b| b.pos).collect();
        // the dropped row no longer exists, so its sign is irrelevant
        self.pivot(slot, bps[idx].pos, &crossed, Sign::Pos)?;
        Ok(1)
    }
}
