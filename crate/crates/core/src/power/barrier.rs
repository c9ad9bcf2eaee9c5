//! Log-barrier ascent for smooth concave programs over a box with concave
//! inequality constraints `c_k(x) >= 0`.
//!
//! Each barrier stage takes projected Newton steps on the variables that are
//! not pinned at a bound, and falls back to a projected gradient step with a
//! Barzilai-Borwein length when the Newton step gives no Armijo ascent.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A concave maximization problem. Implementors overwrite every entry of
/// `grad` when it is `Some`.
pub trait ConcaveProgram {
    fn dim(&self) -> usize;
    fn lower(&self, i: usize) -> f64;
    fn upper(&self, i: usize) -> f64;
    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64;
    fn n_constraints(&self) -> usize;
    fn constraint(&self, k: usize, x: &[f64], grad: Option<&mut [f64]>) -> f64;

    /// Add `weight` times the Hessian of the objective (`which = None`) or of
    /// constraint `k` (`Some(k)`) to the row-major `dim x dim` matrix `h`.
    ///
    /// The default differences the gradient, which needs the functions to be
    /// defined slightly outside the box.
    fn add_hessian(&self, which: Option<usize>, x: &[f64], weight: f64, h: &mut [f64]) {
        let n = self.dim();
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for i in 0..n {
            let step = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + step;
            self.gradient_of(which, &xp, &mut gp);
            xp[i] = x[i] - step;
            self.gradient_of(which, &xp, &mut gm);
            xp[i] = x[i];
            for j in 0..n {
                h[j * n + i] += weight * (gp[j] - gm[j]) / (2.0 * step);
            }
        }
    }

    #[doc(hidden)]
    fn gradient_of(&self, which: Option<usize>, x: &[f64], g: &mut [f64]) {
        match which {
            None => {
                self.objective(x, Some(g));
            }
            Some(k) => {
                self.constraint(k, x, Some(g));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierOptions {
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_factor: f64,
    pub armijo: f64,
    pub shrink: f64,
    /// Stage tolerance on the projected unit-step gradient, scaled by `1 + |F|`.
    pub grad_tol: f64,
    pub max_inner: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { mu_start: 1.0, mu_end: 1e-8, mu_factor: 0.2, armijo: 1e-4, shrink: 0.5, grad_tol: 1e-8, max_inner: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub kkt_residual: f64,
    pub status: SolverStatus,
}

fn project<P: ConcaveProgram + ?Sized>(p: &P, x: &mut [f64]) {
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = xi.clamp(p.lower(i), p.upper(i));
    }
}

pub fn max_violation<P: ConcaveProgram + ?Sized>(p: &P, x: &[f64]) -> f64 {
    (0..p.n_constraints()).map(|k| (-p.constraint(k, x, None)).max(0.0)).fold(0.0, f64::max)
}

/// Barrier value `f + mu sum ln c_k`, or `-inf` outside the strict interior.
fn barrier<P: ConcaveProgram + ?Sized>(p: &P, x: &[f64], mu: f64, grad: Option<&mut [f64]>, scratch: &mut [f64]) -> f64 {
    match grad {
        None => {
            let mut f = p.objective(x, None);
            for k in 0..p.n_constraints() {
                let c = p.constraint(k, x, None);
                if !(c > 0.0) {
                    return f64::NEG_INFINITY;
                }
                f += mu * c.ln();
            }
            f
        }
        Some(g) => {
            let mut f = p.objective(x, Some(g));
            for k in 0..p.n_constraints() {
                scratch.iter_mut().for_each(|s| *s = 0.0);
                let c = p.constraint(k, x, Some(scratch));
                if !(c > 0.0) {
                    return f64::NEG_INFINITY;
                }
                f += mu * c.ln();
                for (gi, si) in g.iter_mut().zip(scratch.iter()) {
                    *gi += mu / c * si;
                }
            }
            f
        }
    }
}

fn projected_step_norm<P: ConcaveProgram + ?Sized>(p: &P, x: &[f64], g: &[f64]) -> f64 {
    (0..x.len()).map(|i| ((x[i] + g[i]).clamp(p.lower(i), p.upper(i)) - x[i]).abs()).fold(0.0, f64::max)
}

/// Newton direction of the barrier function on the free variables, or
/// `None` when the reduced Hessian is not negative definite enough to
/// factor. Variables at a bound whose gradient points outward stay fixed.
fn newton_direction<P: ConcaveProgram + ?Sized>(p: &P, x: &[f64], g: &[f64], mu: f64, scratch: &mut [f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let mut h = vec![0.0; n * n];
    p.add_hessian(None, x, 1.0, &mut h);
    for k in 0..p.n_constraints() {
        let c = p.constraint(k, x, Some(scratch));
        p.add_hessian(Some(k), x, mu / c, &mut h);
        for a in 0..n {
            for b in 0..n {
                h[a * n + b] -= mu * scratch[a] * scratch[b] / (c * c);
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| !((x[i] <= p.lower(i) && g[i] <= 0.0) || (x[i] >= p.upper(i) && g[i] >= 0.0))).collect();
    let mut d = vec![0.0; n];
    if free.is_empty() {
        return Some(d);
    }
    let k = free.len();
    let diag = free.iter().fold(0.0f64, |a, &i| a.max(h[i * n + i].abs()));
    let neg_h = DMatrix::from_fn(k, k, |a, b| {
        let v = -h[free[a] * n + free[b]];
        if a == b {
            v + 1e-14 * diag.max(f64::MIN_POSITIVE)
        } else {
            v
        }
    });
    let rhs = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
    let sol = neg_h.cholesky()?.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        d[i] = sol[a];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Armijo backtracking along the projected path `P(x + alpha d)`.
#[allow(clippy::too_many_arguments)]
fn projected_search<P: ConcaveProgram + ?Sized>(
    p: &P,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    mut alpha: f64,
    mu: f64,
    opts: &BarrierOptions,
    x_new: &mut [f64],
    scratch: &mut [f64],
) -> Option<(f64, f64)> {
    while alpha > 1e-300 {
        for i in 0..x.len() {
            x_new[i] = x[i] + alpha * d[i];
        }
        project(p, x_new);
        let f_new = barrier(p, x_new, mu, None, scratch);
        let ascent: f64 = (0..x.len()).map(|i| g[i] * (x_new[i] - x[i])).sum();
        if f_new.is_finite() && ascent > 0.0 && f_new >= f + opts.armijo * ascent {
            return Some((f_new, alpha));
        }
        if ascent <= 0.0 && x_new == x {
            return None;
        }
        alpha *= opts.shrink;
    }
    None
}

/// Maximize `p` from the strictly feasible point `x0`.
///
/// If `x0` violates a constraint the report comes back `Infeasible` with
/// `x0` unchanged; callers run a phase-one problem first.
pub fn maximize<P: ConcaveProgram + ?Sized>(p: &P, x0: &[f64], opts: &BarrierOptions) -> (Vec<f64>, SolverReport) {
    let n = p.dim();
    let mut x = x0.to_vec();
    project(p, &mut x);
    if (0..p.n_constraints()).any(|k| !(p.constraint(k, &x, None) > 0.0)) {
        let report = SolverReport {
            iterations: 0,
            objective: p.objective(&x, None),
            max_violation: max_violation(p, &x),
            kkt_residual: f64::INFINITY,
            status: SolverStatus::Infeasible,
        };
        return (x, report);
    }

    let mut g = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut iterations = 0;
    let mut mu = if p.n_constraints() == 0 { 0.0 } else { opts.mu_start };
    let mut last_stage_converged;
    let mut kkt;
    loop {
        let mut f = barrier(p, &x, mu, Some(&mut g), &mut scratch);
        let mut step = 1.0 / g.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
        last_stage_converged = false;
        kkt = projected_step_norm(p, &x, &g);
        for _ in 0..opts.max_inner {
            if kkt <= opts.grad_tol * (1.0 + f.abs()) {
                last_stage_converged = true;
                break;
            }
            iterations += 1;
            let direction = newton_direction(p, &x, &g, mu, &mut scratch);
            if let Some(d) = &direction {
                // Predicted gain below the resolution of `f`: nothing left to take.
                let decrement: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
                if decrement <= 4.0 * f64::EPSILON * (1.0 + f.abs())
                    && d.iter().enumerate().all(|(i, di)| {
                        let xi = (x[i] + di).clamp(p.lower(i), p.upper(i));
                        xi == x[i] + di
                    })
                {
                    last_stage_converged = true;
                    break;
                }
            }
            let newton = direction.and_then(|d| projected_search(p, &x, f, &g, &d, 1.0, mu, opts, &mut x_new, &mut scratch));
            let f_new = match newton {
                Some((f_new, _)) => f_new,
                None => match projected_search(p, &x, f, &g, &g, step, mu, opts, &mut x_new, &mut scratch) {
                    Some((f_new, alpha)) => {
                        step = alpha;
                        f_new
                    }
                    None => {
                        // No representable ascent left at this barrier weight.
                        last_stage_converged = true;
                        break;
                    }
                },
            };
            if x_new == x {
                last_stage_converged = true;
                break;
            }
            let f_new = barrier(p, &x_new, mu, Some(&mut g_new), &mut scratch).max(f_new);
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..n {
                let s = x_new[i] - x[i];
                ss += s * s;
                sy += s * (g_new[i] - g[i]);
            }
            step = if sy < 0.0 { (ss / -sy).clamp(1e-20, 1e20) } else { step * 4.0 };
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut g, &mut g_new);
            f = f_new;
            kkt = projected_step_norm(p, &x, &g);
        }
        if mu <= opts.mu_end || mu == 0.0 {
            break;
        }
        mu = (mu * opts.mu_factor).max(opts.mu_end);
    }

    let violation = max_violation(p, &x);
    let kkt_residual = kkt.max(mu * p.n_constraints() as f64);
    let status =
        if last_stage_converged && violation <= 1e-8 && kkt_residual <= 1e-6 { SolverStatus::Converged } else { SolverStatus::MaxIter };
    let report = SolverReport { iterations, objective: p.objective(&x, None), max_violation: violation, kkt_residual, status };
    (x, report)
}

/// Phase-one problem: maximize `s` subject to `c_k(x) - s >= 0`, with `s`
/// appended as the last variable and capped at `s_max`.
pub struct PhaseOne<'a, P: ConcaveProgram + ?Sized> {
    pub inner: &'a P,
    pub s_min: f64,
    pub s_max: f64,
}

impl<P: ConcaveProgram + ?Sized> ConcaveProgram for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn lower(&self, i: usize) -> f64 {
        if i == self.inner.dim() {
            self.s_min
        } else {
            self.inner.lower(i)
        }
    }

    fn upper(&self, i: usize) -> f64 {
        if i == self.inner.dim() {
            self.s_max
        } else {
            self.inner.upper(i)
        }
    }

    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.inner.dim();
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            g[n] = 1.0;
        }
        x[n]
    }

    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }

    fn constraint(&self, k: usize, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.inner.dim();
        match grad {
            Some(g) => {
                let c = self.inner.constraint(k, &x[..n], Some(&mut g[..n]));
                g[n] = -1.0;
                c - x[n]
            }
            None => self.inner.constraint(k, &x[..n], None) - x[n],
        }
    }

    fn add_hessian(&self, which: Option<usize>, x: &[f64], weight: f64, h: &mut [f64]) {
        let Some(k) = which else { return };
        let n = self.inner.dim();
        embed_hessian(self.inner, Some(k), &x[..n], weight, h, n + 1);
    }
}

/// Add an inner program's Hessian into the leading block of a wider matrix
/// with row stride `stride`.
pub(crate) fn embed_hessian<P: ConcaveProgram + ?Sized>(
    inner: &P,
    which: Option<usize>,
    x: &[f64],
    weight: f64,
    h: &mut [f64],
    stride: usize,
) {
    let n = inner.dim();
    let mut block = vec![0.0; n * n];
    inner.add_hessian(which, x, weight, &mut block);
    for a in 0..n {
        h[a * stride..a * stride + n].iter_mut().zip(&block[a * n..(a + 1) * n]).for_each(|(t, v)| *t += v);
    }
}

/// Outcome of a phase-one search.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOneOutcome {
    /// A strictly feasible point.
    Feasible(Vec<f64>),
    /// No strictly feasible point; indices of the constraints that stay
    /// binding at the best phase-one point.
    Infeasible { x: Vec<f64>, binding: Vec<usize> },
}

/// Look for a strictly feasible point starting from `x0`.
pub fn find_feasible<P: ConcaveProgram + ?Sized>(p: &P, x0: &[f64], opts: &BarrierOptions) -> PhaseOneOutcome {
    let mut x = x0.to_vec();
    project(p, &mut x);
    let cs: Vec<f64> = (0..p.n_constraints()).map(|k| p.constraint(k, &x, None)).collect();
    let worst = cs.iter().copied().fold(f64::INFINITY, f64::min);
    if worst > 0.0 {
        return PhaseOneOutcome::Feasible(x);
    }
    let scale = cs.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let phase = PhaseOne { inner: p, s_min: worst - scale, s_max: 1e-3 * scale };
    let mut z = x.clone();
    z.push(worst - 0.5 * scale);
    let (z, _) = maximize(&phase, &z, opts);
    let n = p.dim();
    let s = z[n];
    let x = z[..n].to_vec();
    let slack_tol = 1e-9 * scale;
    if s > slack_tol && (0..p.n_constraints()).all(|k| p.constraint(k, &x, None) > 0.0) {
        return PhaseOneOutcome::Feasible(x);
    }
    let binding = (0..p.n_constraints()).filter(|&k| p.constraint(k, &x, None) <= s.max(0.0) + 1e-6 * scale).collect();
    PhaseOneOutcome::Infeasible { x, binding }
}
