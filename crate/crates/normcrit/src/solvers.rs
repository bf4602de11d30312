//! Constrained critical points on `S(a₁) × S(a₂)`.
//!
//! Both branches minimize the fiber-reduced functional
//! `J(w) = Ψ_w(t(w))`, where `t(w)` is the fiber maximum (mountain pass,
//! `P⁻`) or the fiber local minimum (ground state, `P⁺`). The gradient of `J`
//! at fixed `t` follows from the envelope theorem, so no resampling is needed
//! while iterating. A minimizer `w` of `J` gives the critical point
//! `t ⋆ w`, stored exactly on the grid scaled by `e^{-t}`; there the
//! discrete Pohozaev identity holds to root-finding precision.
//!
//! The descent is a preconditioned nonlinear conjugate gradient on the
//! product of spheres with `(λ + e^{2t}(-Δ))` as preconditioner and Armijo
//! backtracking, so accepted steps never raise `J`. Near a critical point a
//! Newton iteration on the bordered Euler-Lagrange system finishes the job;
//! on geometric grids the discrete energy is dilation invariant up to the
//! ends of the grid, so the Pohozaev identity survives the polish.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{NormcritError, Result};
use crate::fiber::{classify, Fiber, GeometryConstants, Label};
use crate::functionals::{
    criticality_residual, sign_diagnostic, Aggregates, Norms, Pair, Params, SignDiagnostic,
};
use crate::grid::{GridSpec, RadialField, RadialGrid};
use crate::profiles::{bubble, cutoff, gamma_p, shooting, signed_pow, ProfileCache};

/// Which fiber critical point defines the reduced functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Local minimum of the fiber, on `P⁺`.
    Plus,
    /// Maximum of the fiber, on `P⁻`.
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    GroundPlus,
    MountainPass,
    ScalarPlus,
    ScalarMinus,
}

impl Branch {
    pub fn side(self) -> Side {
        match self {
            Branch::GroundPlus | Branch::ScalarPlus => Side::Plus,
            Branch::MountainPass | Branch::ScalarMinus => Side::Minus,
        }
    }

    fn label(self) -> Label {
        match self.side() {
            Side::Plus => Label::PPlus,
            Side::Minus => Label::PMinus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Computational grid; `None` picks one from the expected length scales.
    pub grid: Option<GridSpec>,
    /// Relative tolerance on the constrained gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial step of the line search.
    pub step: f64,
    /// Number of starting points for mountain-pass solves.
    pub seeds: usize,
    pub seed: u64,
    /// Finish with Newton once the descent is close.
    pub newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grid: None,
            tol: 1e-8,
            max_iter: 200_000,
            step: 1.0,
            seeds: 3,
            seed: 0,
            newton: true,
        }
    }
}

/// Descent residual below which Newton takes over.
const NEWTON_SWITCH: f64 = 1e-4;

/// Relative Pohozaev residual allowed in a converged result.
pub const POHOZAEV_TOL: f64 = 1e-6;

/// A converged (or last) iterate with its certificates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub branch: Branch,
    pub masses: (f64, f64),
    pub energy: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub norms: Norms,
    /// `|P(u, v)|`.
    pub pohozaev_residual: f64,
    /// `‖∇I + λ₁u‖ + ‖∇I + λ₂v‖`.
    #[serde(rename = "tangent_gradient_residual")]
    pub tangent_residual: f64,
    /// Relative mass errors.
    pub mass_error: (f64, f64),
    /// Descent iterations, summed over restarts.
    pub iterations: usize,
    pub newton_steps: usize,
    pub converged: bool,
    /// The iterate reached `‖∇(u,v)‖ = ρ₀`.
    pub boundary_hit: bool,
    pub label: Label,
    pub sign: SignDiagnostic,
    /// `J` after each accepted descent step.
    pub history: Vec<f64>,
    pub pair: Pair,
}

impl SolveResult {
    /// `‖∇u‖² + ‖∇v‖²`.
    pub fn grad_sq(&self) -> f64 {
        self.norms.grad_u + self.norms.grad_v
    }

    /// `|P| / (1 + ‖∇(u,v)‖²)`.
    pub fn pohozaev_relative(&self) -> f64 {
        self.pohozaev_residual / (1.0 + self.grad_sq())
    }

    /// Tangent residual relative to `1 + ‖∇(u,v)‖`.
    pub fn residual_relative(&self) -> f64 {
        self.tangent_residual / (1.0 + self.grad_sq().sqrt())
    }

    /// Relative error in `λ₁a₁² + λ₂a₂² = (1-γ_p)(α₁‖u‖_p^p + α₂‖v‖_p^p)`.
    pub fn identity_error(&self) -> f64 {
        let s = &self.sign;
        (s.weighted_sum - s.identity_rhs).abs() / s.identity_rhs.abs().max(1e-300)
    }

    /// `u > 0` and `v > 0` away from the Dirichlet node, or identically zero
    /// for an absent component.
    pub fn positive(&self) -> bool {
        let ok = |f: &RadialField, a: f64| {
            let vals = &f.values()[..f.values().len() - 1];
            if a > 0.0 {
                vals.iter().all(|&x| x > 0.0)
            } else {
                vals.iter().all(|&x| x == 0.0)
            }
        };
        ok(&self.pair.u, self.masses.0) && ok(&self.pair.v, self.masses.1)
    }
}

/// Per-iteration record handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct IterInfo {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    /// Fiber parameter of the iterate; the critical point is `t ⋆ w`.
    pub t: f64,
}

pub type Observer<'a> = dyn FnMut(&IterInfo, &Pair) + 'a;

struct Problem<'a> {
    prm: &'a Params,
    a1: f64,
    a2: f64,
    side: Side,
}

#[derive(Clone, Copy)]
struct Eval {
    j: f64,
    t: f64,
    a1: f64,
}

impl Problem<'_> {
    fn eval(&self, pair: &Pair) -> Option<Eval> {
        let f = Fiber::new(pair.norms(self.prm.p).aggregates(self.prm), self.prm.p);
        let roots = f.critical_points().ok()?;
        let t = match self.side {
            Side::Plus => roots.s_plus?,
            Side::Minus => roots.t_minus?,
        };
        Some(Eval { j: f.psi(t), t, a1: f.agg.a1 })
    }

    /// `L²` gradient of `J` at fixed `t`, one vector per component.
    fn gradient(&self, pair: &Pair, t: f64) -> [Vec<f64>; 2] {
        let prm = self.prm;
        let grid = pair.u.grid();
        let kappa = prm.p * gamma_p(prm.p);
        let (e2, e4, ek) = ((2.0 * t).exp(), (4.0 * t).exp(), (kappa * t).exp());
        let (u, v) = (pair.u.values(), pair.v.values());
        let mut gu = grid.neg_laplacian(u);
        let mut gv = grid.neg_laplacian(v);
        let n = u.len();
        for i in 0..n - 1 {
            let (a, b) = (u[i], v[i]);
            gu[i] = e2 * gu[i]
                - e4 * (prm.mu1 * a * a * a + prm.beta * b * b * a)
                - ek * prm.alpha1 * signed_pow(a, prm.p);
            gv[i] = e2 * gv[i]
                - e4 * (prm.mu2 * b * b * b + prm.beta * a * a * b)
                - ek * prm.alpha2 * signed_pow(b, prm.p);
        }
        gu[n - 1] = 0.0;
        gv[n - 1] = 0.0;
        [gu, gv]
    }

    fn active(&self) -> [bool; 2] {
        [self.a1 > 0.0, self.a2 > 0.0]
    }

    fn masses(&self) -> [f64; 2] {
        [self.a1 * self.a1, self.a2 * self.a2]
    }

    fn normalize(&self, grid: &Arc<RadialGrid>, u: Vec<f64>, v: Vec<f64>) -> Result<Pair> {
        let [m1, m2] = self.masses();
        let u = RadialField::new(grid.clone(), normalize(grid, u, m1))?;
        let v = RadialField::new(grid.clone(), normalize(grid, v, m2))?;
        Pair::new(u, v)
    }

    /// Tangent projection per component, in place.
    fn project(&self, grid: &RadialGrid, x: &Pair, d: &mut [Vec<f64>; 2]) {
        let act = self.active();
        for (k, vals) in [x.u.values(), x.v.values()].into_iter().enumerate() {
            if !act[k] {
                d[k].iter_mut().for_each(|z| *z = 0.0);
                continue;
            }
            let c = grid.dot(&d[k], vals) / grid.dot(vals, vals);
            d[k].iter_mut().zip(vals).for_each(|(z, u)| *z -= c * u);
        }
    }
}

fn normalize(grid: &RadialGrid, mut vals: Vec<f64>, mass: f64) -> Vec<f64> {
    if mass > 0.0 {
        let c = (mass / grid.dot(&vals, &vals)).sqrt();
        vals.iter_mut().for_each(|x| *x *= c);
    } else {
        vals.iter_mut().for_each(|x| *x = 0.0);
    }
    vals
}

fn dot2(grid: &RadialGrid, a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    grid.dot(&a[0], &b[0]) + grid.dot(&a[1], &b[1])
}

struct Descent {
    /// Current iterate `w`, not yet dilated.
    pair: Pair,
    t: f64,
    iterations: usize,
    /// The iterate pushed mass against the outer boundary.
    spread: bool,
    /// Residual relative to `1 + ‖∇(t ⋆ w)‖`.
    residual: f64,
    boundary_hit: bool,
    history: Vec<f64>,
}

struct DescentLimits {
    tol: f64,
    max_iter: usize,
    /// Stop after this many iterations without a decrease of `J`.
    stall: usize,
    /// Upper bound on `‖∇(t ⋆ w)‖²`.
    grad_cap: Option<f64>,
    /// Upper bound on the mass fraction beyond `R_max / 2`.
    spread_cap: Option<f64>,
}

/// Preconditioned Polak-Ribière descent of `J` on the product of spheres.
fn descend(
    pb: &Problem,
    init: Pair,
    step0: f64,
    lim: &DescentLimits,
    history: Vec<f64>,
    observer: &mut Observer,
) -> Result<Descent> {
    let grid = init.u.grid().clone();
    let mut x = pb.normalize(&grid, init.u.into_values(), init.v.into_values())?;
    let mut ev = pb.eval(&x).ok_or_else(|| {
        NormcritError::ProjectionUndefined("starting point has no fiber critical point".into())
    })?;
    let mut history = history;
    history.push(ev.j);
    let mut step = step0;
    let mut prev: Option<([Vec<f64>; 2], [Vec<f64>; 2], f64)> = None;
    let mut residual = f64::INFINITY;
    let mut it = 0;
    let mut stalls = 0;
    let done = |x: Pair, ev: Eval, it, spread, residual, boundary_hit, history| Descent {
        pair: x,
        t: ev.t,
        iterations: it,
        spread,
        residual,
        boundary_hit,
        history,
    };
    while it < lim.max_iter {
        it += 1;
        if ev.t.abs() > 0.7 {
            // Keep the iterate on a scale the grid resolves.
            let d = x.dilate(ev.t)?;
            x = pb.normalize(&grid, d.u.into_values(), d.v.into_values())?;
            ev = pb.eval(&x).ok_or_else(|| {
                NormcritError::Resolution("recentering lost the fiber critical point".into())
            })?;
            prev = None;
        }
        let e2 = (2.0 * ev.t).exp();
        if let Some(cap) = lim.grad_cap {
            if e2 * ev.a1 >= cap {
                return Ok(done(x, ev, it, false, residual, true, history));
            }
        }
        if let Some(cap) = lim.spread_cap {
            if it % 25 == 0 && outer_mass_fraction(&x) > cap {
                return Ok(done(x, ev, it, true, residual, false, history));
            }
        }
        let raw = pb.gradient(&x, ev.t);
        let mut g = raw.clone();
        pb.project(&grid, &x, &mut g);
        let gnorm = grid.dot(&g[0], &g[0]).sqrt() + grid.dot(&g[1], &g[1]).sqrt();
        residual = gnorm / (1.0 + (e2 * ev.a1).sqrt());
        observer(&IterInfo { iteration: it, energy: ev.j, residual, t: ev.t }, &x);
        if residual <= lim.tol {
            return Ok(done(x, ev, it, false, residual, false, history));
        }
        // Preconditioner (λ + e^{2t}(-Δ))⁻¹ with λ the current multiplier.
        let mut pg: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (k, vals) in [x.u.values(), x.v.values()].into_iter().enumerate() {
            let lam = if pb.active()[k] {
                (-grid.dot(&raw[k], vals) / grid.dot(vals, vals)).max(0.0)
            } else {
                0.0
            };
            let scaled: Vec<f64> = g[k].iter().map(|z| z / e2).collect();
            pg[k] = grid.solve_shifted(lam / e2, &scaled);
        }
        pb.project(&grid, &x, &mut pg);
        let pg_dot_g = dot2(&grid, &pg, &g);
        let steepest = |pg: &[Vec<f64>; 2]| -> [Vec<f64>; 2] {
            [pg[0].iter().map(|z| -z).collect(), pg[1].iter().map(|z| -z).collect()]
        };
        let mut dir = steepest(&pg);
        if let Some((pdir, ppg, ppg_dot_g)) = &prev {
            let beta = ((pg_dot_g - dot2(&grid, ppg, &g)) / ppg_dot_g).max(0.0);
            if beta > 0.0 && it % 100 != 0 {
                // Old direction transported by projection.
                let mut old = pdir.clone();
                pb.project(&grid, &x, &mut old);
                for k in 0..2 {
                    dir[k].iter_mut().zip(&old[k]).for_each(|(d, o)| *d += beta * o);
                }
            }
        }
        let mut slope = dot2(&grid, &dir, &g);
        if slope >= 0.0 {
            dir = steepest(&pg);
            slope = -pg_dot_g;
        }
        // Armijo backtracking along the retraction. Once the change in J
        // sinks into rounding, an approximate Wolfe test on the directional
        // derivative decides instead.
        let noise = 1e-14 * (e2 * ev.a1 + ev.j.abs());
        let mut theta = step;
        let mut accepted = None;
        for _ in 0..60 {
            let u = x.u.values().iter().zip(&dir[0]).map(|(a, d)| a + theta * d).collect();
            let v = x.v.values().iter().zip(&dir[1]).map(|(a, d)| a + theta * d).collect();
            let cand = pb.normalize(&grid, u, v)?;
            if let Some(e) = pb.eval(&cand) {
                if e.j <= ev.j + 1e-4 * theta * slope && e.j < ev.j - noise {
                    accepted = Some((cand, e));
                    break;
                }
                if e.j <= ev.j + noise {
                    let mut gc = pb.gradient(&cand, e.t);
                    pb.project(&grid, &cand, &mut gc);
                    if dot2(&grid, &gc, &dir).abs() <= 0.8 * slope.abs() {
                        accepted = Some((cand, e));
                        break;
                    }
                }
            }
            theta *= 0.5;
        }
        match accepted {
            Some((cand, e)) => {
                stalls = if e.j < ev.j { 0 } else { stalls + 1 };
                x = cand;
                ev = e;
                history.push(ev.j);
                step = (theta * 2.0).min(8.0 * step0);
                prev = Some((dir, pg, pg_dot_g));
            }
            None => {
                stalls += 1;
                prev = None;
                step = step0;
            }
        }
        if stalls > lim.stall {
            break;
        }
    }
    Ok(done(x, ev, it, false, residual, false, history))
}

/// Newton iteration on `-Δu + λ₁u = f₁(u, v)`, `-Δv + λ₂v = f₂(u, v)`,
/// `‖u‖² = a₁²`, `‖v‖² = a₂²` on the grid of `pair`. Returns the polished
/// pair and the number of steps once the criticality residual is at most
/// `target`, or the best iterate once the residual stops decreasing.
pub fn newton_polish(
    prm: &Params,
    a1: f64,
    a2: f64,
    pair: &Pair,
    target: f64,
    max_steps: usize,
) -> Result<(Pair, usize)> {
    let grid = pair.u.grid().clone();
    let n = grid.len();
    let act = [a1 > 0.0, a2 > 0.0];
    let mass = [a1 * a1, a2 * a2];
    let (w, kap) = (grid.weights(), grid.kappa());
    let p = prm.p;
    let mut z = [pair.u.values().to_vec(), pair.v.values().to_vec()];
    let (l1, l2) = pair.norms(p).multipliers(prm);
    let mut lam = [l1, l2];
    let mut res = criticality_residual(prm, pair);
    let mut steps = 0;
    let build = |z: &[Vec<f64>; 2]| -> Result<Pair> {
        Pair::new(
            RadialField::new(grid.clone(), normalize(&grid, z[0].clone(), mass[0]))?,
            RadialField::new(grid.clone(), normalize(&grid, z[1].clone(), mass[1]))?,
        )
    };
    let coef = [(prm.mu1, prm.alpha1), (prm.mu2, prm.alpha2)];
    while res > target {
        if steps == max_steps {
            break;
        }
        steps += 1;
        let mut a = BandMatrix::zeros(2 * n, 2, 2);
        let mut f = vec![0.0; 2 * n];
        let mut b = [vec![0.0; 2 * n], vec![0.0; 2 * n]];
        let ku = [grid.neg_laplacian(&z[0]), grid.neg_laplacian(&z[1])];
        for i in 0..n - 1 {
            let (u, v) = (z[0][i], z[1][i]);
            for c in 0..2 {
                let row = 2 * i + c;
                if !act[c] {
                    continue;
                }
                let (own, other) = if c == 0 { (u, v) } else { (v, u) };
                let (mu, alpha) = coef[c];
                if i > 0 {
                    a.add(row, row - 2, -kap[i - 1]);
                }
                a.add(row, row + 2, -kap[i]);
                let kdiag = kap[i] + if i > 0 { kap[i - 1] } else { 0.0 };
                let dself = 3.0 * mu * own * own
                    + prm.beta * other * other
                    + alpha * (p - 1.0) * own.abs().max(1e-300).powf(p - 2.0);
                a.add(row, row, kdiag + w[i] * (lam[c] - dself));
                let cross = -2.0 * prm.beta * own * other * w[i];
                let col = if c == 0 { row + 1 } else { row - 1 };
                if act[1 - c] {
                    a.add(row, col, cross);
                }
                let react = mu * own * own * own
                    + prm.beta * other * other * own
                    + alpha * signed_pow(own, p);
                f[row] = w[i] * (ku[c][i] + lam[c] * own - react);
                b[c][row] = w[i] * own;
            }
        }
        for c in 0..2 {
            a.identity_row(2 * (n - 1) + c);
            if !act[c] {
                for i in 0..n - 1 {
                    a.identity_row(2 * i + c);
                }
            }
        }
        let lu = a.factor()?;
        let neg_f: Vec<f64> = f.iter().map(|x| -x).collect();
        let x0 = lu.solve(&neg_f);
        let y = [lu.solve(&b[0]), lu.solve(&b[1])];
        let dotv = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let m: Vec<f64> = (0..2).map(|c| 0.5 * (grid.dot(&z[c], &z[c]) - mass[c])).collect();
        // Schur complement for the multipliers.
        let idx: Vec<usize> = (0..2).filter(|&c| act[c]).collect();
        let mut dl = [0.0; 2];
        let rhs: Vec<f64> = idx.iter().map(|&c| dotv(&b[c], &x0) + m[c]).collect();
        if idx.len() == 1 {
            let c = idx[0];
            dl[c] = rhs[0] / dotv(&b[c], &y[c]);
        } else {
            let s = [
                [dotv(&b[0], &y[0]), dotv(&b[0], &y[1])],
                [dotv(&b[1], &y[0]), dotv(&b[1], &y[1])],
            ];
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            dl[0] = (rhs[0] * s[1][1] - s[0][1] * rhs[1]) / det;
            dl[1] = (s[0][0] * rhs[1] - s[1][0] * rhs[0]) / det;
        }
        if !(dl[0].is_finite() && dl[1].is_finite()) {
            return Err(NormcritError::NonConvergence { iterations: steps, residual: res });
        }
        let dx: Vec<f64> = (0..2 * n).map(|k| x0[k] - y[0][k] * dl[0] - y[1][k] * dl[1]).collect();
        let mut theta = 1.0;
        loop {
            let trial: [Vec<f64>; 2] = [
                (0..n).map(|i| z[0][i] + theta * dx[2 * i]).collect(),
                (0..n).map(|i| z[1][i] + theta * dx[2 * i + 1]).collect(),
            ];
            let cand = build(&trial)?;
            let r = criticality_residual(prm, &cand);
            if r < res || theta < 1.0 / 64.0 {
                if !(r < res) {
                    // Rounding floor reached.
                    return Ok((build(&z)?, steps - 1));
                }
                res = r;
                z = [cand.u.into_values(), cand.v.into_values()];
                lam = [lam[0] + theta * dl[0], lam[1] + theta * dl[1]];
                break;
            }
            theta *= 0.5;
        }
    }
    Ok((build(&z)?, steps))
}

fn certify(
    prm: &Params,
    a1: f64,
    a2: f64,
    branch: Branch,
    pair: Pair,
    tol: f64,
    counts: (usize, usize),
    boundary_hit: bool,
    history: Vec<f64>,
) -> SolveResult {
    let norms = pair.norms(prm.p);
    let energy = norms.energy(prm);
    let (lambda1, lambda2) = norms.multipliers(prm);
    let tangent_residual = criticality_residual(prm, &pair);
    let rel = |m: f64, a: f64| if a > 0.0 { (m - a * a).abs() / (a * a) } else { m.sqrt() };
    let mut res = SolveResult {
        branch,
        masses: (a1, a2),
        label: classify(prm, &pair, POHOZAEV_TOL),
        sign: sign_diagnostic(prm, &pair),
        energy,
        lambda1,
        lambda2,
        pohozaev_residual: norms.pohozaev(prm).abs(),
        tangent_residual,
        mass_error: (rel(norms.mass_u, a1), rel(norms.mass_v, a2)),
        iterations: counts.0,
        newton_steps: counts.1,
        converged: false,
        boundary_hit,
        history,
        norms,
        pair,
    };
    res.converged = !boundary_hit
        && res.residual_relative() <= tol
        && res.pohozaev_relative() <= POHOZAEV_TOL
        && res.label == branch.label();
    res
}

/// Descent, Newton polish, and more descent if the polish fails. The flag
/// reports a descent stopped by `spread_cap`.
fn run_branch(
    prm: &Params,
    a1: f64,
    a2: f64,
    branch: Branch,
    init: Pair,
    opts: &SolverOptions,
    caps: (Option<f64>, Option<f64>),
    observer: &mut Observer,
) -> Result<(SolveResult, bool)> {
    let pb = Problem { prm, a1, a2, side: branch.side() };
    // Descend to each switch level in turn and try Newton there; the last
    // level is the tolerance itself.
    let mut switch = if opts.newton { opts.tol.max(NEWTON_SWITCH) } else { opts.tol };
    let mut pair = init;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let last = switch <= opts.tol;
        let lim = DescentLimits {
            tol: switch,
            max_iter: opts.max_iter.saturating_sub(iterations),
            stall: if last { 200 } else { 50 },
            grad_cap: caps.0,
            spread_cap: caps.1,
        };
        let d = descend(&pb, pair, opts.step, &lim, history, observer)?;
        iterations += d.iterations;
        let dilated = d.pair.dilate_exact(d.t)?;
        if d.boundary_hit || d.spread || last || iterations >= opts.max_iter {
            let counts = (iterations, 0);
            let res = certify(prm, a1, a2, branch, dilated, opts.tol, counts, d.boundary_hit, d.history);
            return Ok((res, d.spread));
        }
        let scale = 1.0 + dilated.norms(prm.p).aggregates(prm).a1.sqrt();
        if let Ok((polished, k)) = newton_polish(prm, a1, a2, &dilated, 0.5 * opts.tol * scale, 40) {
            let res = certify(prm, a1, a2, branch, polished, opts.tol, (iterations, k), false, d.history.clone());
            if res.converged && res.positive() {
                return Ok((res, false));
            }
        }
        pair = d.pair;
        history = d.history;
        switch = (0.1 * switch).max(opts.tol);
    }
}

/// Mass fraction beyond `R_max / 2` that triggers a wider domain.
const SPREAD_CAP: f64 = 1e-5;

/// [`run_branch`] on successively wider domains while the iterate spreads
/// toward the boundary.
fn run_widening(
    prm: &Params,
    a1: f64,
    a2: f64,
    branch: Branch,
    init: Pair,
    opts: &SolverOptions,
    observer: &mut Observer,
) -> Result<SolveResult> {
    let mut init = init;
    let mut spent = 0;
    for _ in 0..4 {
        let (mut res, spread) = run_branch(prm, a1, a2, branch, init, opts, (None, Some(SPREAD_CAP)), observer)?;
        res.iterations += spent;
        if !spread {
            return Ok(res);
        }
        spent = res.iterations;
        let grid = res.pair.u.grid();
        let lam = [res.lambda1, res.lambda2]
            .into_iter()
            .filter(|l| *l > 0.0)
            .fold(f64::INFINITY, f64::min);
        let target = if lam.is_finite() { 30.0 / lam.sqrt() } else { 0.0 };
        let wide = grid.scaled(target.max(2.0 * grid.r_max()) / grid.r_max())?;
        let u = res.pair.u.resample(wide.clone());
        let v = res.pair.v.resample(wide);
        init = Pair::new(u, v)?;
    }
    let mut res = run_branch(prm, a1, a2, branch, init, opts, (None, None), observer)?.0;
    res.iterations += spent;
    Ok(res)
}

/// Closed-form normalized solution of `-Δu + λu = α|u|^{p-2}u` with mass `a²`:
/// `u = (λ/α)^{1/(p-2)} w_p(√λ x)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalarClosedForm {
    pub lambda: f64,
    /// Amplitude `(λ/α)^{1/(p-2)}`.
    pub amplitude: f64,
    pub energy: f64,
}

/// `w_mass` is `‖w_p‖₂²`.
pub fn scalar_closed_form(alpha: f64, p: f64, a: f64, w_mass: f64) -> ScalarClosedForm {
    let lambda = (a * a * alpha.powf(2.0 / (p - 2.0)) / w_mass).powf((p - 2.0) / (6.0 - 2.0 * p));
    ScalarClosedForm {
        lambda,
        amplitude: (lambda / alpha).powf(1.0 / (p - 2.0)),
        energy: -(3.0 - p) / (4.0 - p) * a * a * lambda,
    }
}

/// `K_{p,α}`: `m = -K a^{(4-p)/(3-p)}` for the purely subcritical scalar
/// problem with `p < 3`, and the analogous constant for `p > 3`.
pub fn scalar_energy_constant(alpha: f64, p: f64, w_l2: f64) -> f64 {
    ((3.0 - p) / (4.0 - p)).abs() * w_l2.powf((2.0 - p) / (3.0 - p)) * alpha.powf(1.0 / (3.0 - p))
}

/// Reference grid for profile constants.
pub const PROFILE_GRID: GridSpec = GridSpec {
    n: 8192,
    r_max: 40.0,
    mapping: crate::grid::Mapping::Geometric { r_min: 1e-5 },
};

/// `‖w_p‖₂²` and `C_p^p` from a well-resolved profile.
pub fn profile_constants(p: f64) -> Result<(f64, f64)> {
    let prof = ProfileCache::global().get(p, PROFILE_GRID)?;
    Ok((prof.mass, prof.gn_constant_pow()))
}

fn closed_form_seed(grid: &Arc<RadialGrid>, alpha: f64, p: f64, a: f64, w_mass: f64) -> Result<RadialField> {
    if a <= 0.0 || alpha <= 0.0 {
        return Ok(RadialField::zeros(grid.clone()));
    }
    let cf = scalar_closed_form(alpha, p, a, w_mass);
    let shot = shooting(p)?;
    let k = cf.lambda.sqrt();
    Ok(RadialField::from_fn(grid.clone(), |r| cf.amplitude * shot.eval(k * r)))
}

fn check_masses(a1: f64, a2: f64) -> Result<()> {
    if !(a1.is_finite() && a2.is_finite() && a1 >= 0.0 && a2 >= 0.0 && a1 + a2 > 0.0) {
        return Err(NormcritError::Parameter(format!("masses ({a1}, {a2})")));
    }
    Ok(())
}

/// Geometry constants with the Gagliardo-Nirenberg constant from `w_p`.
pub fn geometry(prm: &Params, a1: f64, a2: f64) -> Result<GeometryConstants> {
    let (_, cp_pow) = profile_constants(prm.p)?;
    GeometryConstants::new(prm, a1, a2, cp_pow)
}

/// Geometric grid spanning `[1e-4, 30]` times the closed-form length scale
/// `λ^{-1/2}` of the ground state.
pub fn ground_grid(prm: &Params, a1: f64, a2: f64) -> Result<GridSpec> {
    let (w_mass, _) = profile_constants(prm.p)?;
    let mut lam = f64::INFINITY;
    for (alpha, a) in [(prm.alpha1, a1), (prm.alpha2, a2)] {
        if a > 0.0 && alpha > 0.0 {
            lam = lam.min(scalar_closed_form(alpha, prm.p, a, w_mass).lambda);
        }
    }
    let scale = if lam.is_finite() { 1.0 / lam.sqrt() } else { 1.0 };
    Ok(GridSpec::geometric(4096, 30.0 * scale, 1e-4 * scale))
}

/// Grid for concentrated states, resolving every scale down to `1e-6 R_max`.
/// Rounding in the strong residual grows as the node spacing ratio shrinks,
/// so the grid is kept moderate.
pub fn bubble_grid(r_max: f64) -> GridSpec {
    GridSpec::geometric(2048, r_max, 1e-6 * r_max)
}

/// Bubble grid on `[0, 20]`, widened for `p > 3` to thirty closed-form
/// length scales, which grow with the mass.
pub fn mountain_pass_grid(prm: &Params, a1: f64, a2: f64) -> Result<GridSpec> {
    let mut r_max: f64 = 20.0;
    if prm.p > 3.0 {
        let (w_mass, _) = profile_constants(prm.p)?;
        for (alpha, a) in [(prm.alpha1, a1), (prm.alpha2, a2)] {
            if a > 0.0 && alpha > 0.0 {
                r_max = r_max.max(30.0 / scalar_closed_form(alpha, prm.p, a, w_mass).lambda.sqrt());
            }
        }
    }
    Ok(bubble_grid(r_max))
}

/// Pair for the scalar problems: `μ₂ = μ₁`, `α₂ = 0`, `β = 0`.
fn scalar_params(mu: f64, alpha: f64, p: f64) -> Params {
    Params { mu1: mu, mu2: mu, alpha1: alpha, alpha2: 0.0, beta: 0.0, p }
}

/// Ground state: minimizer of `I` on `V(a₁, a₂)` for `2 < p < 3` under `T ≤ γ₁`.
pub fn solve_local_min(prm: &Params, a1: f64, a2: f64, opts: &SolverOptions) -> Result<SolveResult> {
    solve_local_min_with(prm, a1, a2, None, opts, &mut |_, _| {})
}

/// As [`solve_local_min`], optionally from `init` and reporting each iterate.
pub fn solve_local_min_with(
    prm: &Params,
    a1: f64,
    a2: f64,
    init: Option<Pair>,
    opts: &SolverOptions,
    observer: &mut Observer,
) -> Result<SolveResult> {
    prm.validate()?;
    check_masses(a1, a2)?;
    if !(prm.p < 3.0 && prm.alpha1 >= 0.0 && prm.alpha2 >= 0.0) {
        return Err(NormcritError::Parameter(
            "the local minimum exists for 2 < p < 3 with nonnegative couplings".into(),
        ));
    }
    let two = a1 > 0.0 && a2 > 0.0;
    let grad_cap = if two {
        let g = geometry(prm, a1, a2)?;
        g.require()?;
        Some(g.rho0 * g.rho0)
    } else {
        None
    };
    let init = match init {
        Some(p) => p,
        None => {
            let spec = match opts.grid {
                Some(g) => g,
                None => ground_grid(prm, a1, a2)?,
            };
            let grid = spec.build()?;
            let (w_mass, _) = profile_constants(prm.p)?;
            Pair::new(
                closed_form_seed(&grid, prm.alpha1, prm.p, a1, w_mass)?,
                closed_form_seed(&grid, prm.alpha2, prm.p, a2, w_mass)?,
            )?
        }
    };
    let branch = if two { Branch::GroundPlus } else { Branch::ScalarPlus };
    Ok(run_branch(prm, a1, a2, branch, init, opts, (grad_cap, None), observer)?.0)
}

/// Synchronized bubble `(c₁, c₂) U_ε` with a Gaussian tail of width `tail`.
fn bubble_seed(grid: &Arc<RadialGrid>, c: [f64; 2], eps: f64, tail: f64) -> Result<Pair> {
    let f = |c: f64| {
        RadialField::from_fn(grid.clone(), |r| {
            c * bubble(eps, r) * (-(r / tail).powi(2)).exp() * cutoff(grid.r_max() / 2.0, r)
        })
    };
    Pair::new(f(c[0]), f(c[1]))
}

/// Bubble amplitudes `(√k₁, √k₂)` of the limiting system, or the scalar
/// amplitude `μ^{-1/2}` when one component is absent.
fn bubble_amplitudes(prm: &Params, a1: f64, a2: f64) -> Result<[f64; 2]> {
    if a1 > 0.0 && a2 > 0.0 {
        let k = prm.coupled()?;
        Ok([k.k1.sqrt(), k.k2.sqrt()])
    } else if a1 > 0.0 {
        Ok([1.0 / prm.mu1.sqrt(), 0.0])
    } else {
        Ok([0.0, 1.0 / prm.mu2.sqrt()])
    }
}

/// Mountain-pass state on `P⁻`: minimizes the fiber maximum from several
/// starting points and keeps the lowest converged level.
pub fn solve_mountain_pass(prm: &Params, a1: f64, a2: f64, opts: &SolverOptions) -> Result<SolveResult> {
    solve_mountain_pass_with(prm, a1, a2, None, opts, &mut |_, _| {})
}

pub fn solve_mountain_pass_with(
    prm: &Params,
    a1: f64,
    a2: f64,
    init: Option<Pair>,
    opts: &SolverOptions,
    observer: &mut Observer,
) -> Result<SolveResult> {
    prm.validate()?;
    check_masses(a1, a2)?;
    let two = a1 > 0.0 && a2 > 0.0;
    let positive = prm.alpha1 > 0.0 && prm.alpha2 > 0.0;
    if two && prm.p < 3.0 && positive {
        geometry(prm, a1, a2)?.require()?;
    }
    if prm.p == 3.0 && positive {
        let (w_mass, _) = profile_constants(3.0)?;
        let limit = w_mass.sqrt();
        for (alpha, a, i) in [(prm.alpha1, a1, 1), (prm.alpha2, a2, 2)] {
            if alpha * a >= limit {
                return Err(NormcritError::Geometry(format!(
                    "alpha{i} a{i} < ||w_3||_2 violated: {:.6e} >= {:.6e}",
                    alpha * a,
                    limit
                )));
            }
        }
    }
    let branch = if two { Branch::MountainPass } else { Branch::ScalarMinus };
    if let Some(init) = init {
        return run_widening(prm, a1, a2, branch, init, opts, observer);
    }
    let amp = bubble_amplitudes(prm, a1, a2)?;
    let spec = match opts.grid {
        Some(g) => g,
        None => mountain_pass_grid(prm, a1, a2)?,
    };
    let grid = spec.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<SolveResult> = None;
    let mut last_err = None;
    for k in 0..opts.seeds.max(1) {
        let eps = if k == 0 { 0.05 } else { 0.05 * rng.gen_range(0.5..2.0) };
        let tail = if k == 0 { 2.0 } else { 2.0 * rng.gen_range(0.7..1.5) };
        let mut seed = bubble_seed(&grid, amp, eps, tail)?;
        if k == 0 && prm.p < 3.0 && positive {
            // Ground-state profile plus a synchronized bubble.
            let (w_mass, _) = profile_constants(prm.p)?;
            let g = [
                closed_form_seed(&grid, prm.alpha1, prm.p, a1, w_mass)?,
                closed_form_seed(&grid, prm.alpha2, prm.p, a2, w_mass)?,
            ];
            let add = |b: &RadialField, g: &RadialField| {
                b.values().iter().zip(g.values()).map(|(x, y)| x + y).collect::<Vec<_>>()
            };
            seed = Pair::new(
                RadialField::new(grid.clone(), add(&seed.u, &g[0]))?,
                RadialField::new(grid.clone(), add(&seed.v, &g[1]))?,
            )?;
        } else if k == 0 && prm.p > 3.0 && positive {
            // Above p = 3 the scalar profile is itself a fiber maximum.
            let (w_mass, _) = profile_constants(prm.p)?;
            seed = Pair::new(
                closed_form_seed(&grid, prm.alpha1, prm.p, a1, w_mass)?,
                closed_form_seed(&grid, prm.alpha2, prm.p, a2, w_mass)?,
            )?;
        }
        match run_widening(prm, a1, a2, branch, seed, opts, observer) {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (res.converged && !b.converged)
                            || (res.converged == b.converged && res.energy < b.energy)
                    }
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or(NormcritError::NonConvergence { iterations: 0, residual: f64::NAN })
    })
}

/// Scalar problem `-Δu + λu = μu³ + α|u|^{p-2}u`, `‖u‖² = a²`, on either
/// side of the fiber; the second component is identically zero.
pub fn solve_scalar_branch(
    p: f64,
    mu: f64,
    alpha: f64,
    a: f64,
    side: Side,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let prm = scalar_params(mu, alpha, p);
    match side {
        Side::Plus => solve_local_min(&prm, a, 0.0, opts),
        Side::Minus => solve_mountain_pass(&prm, a, 0.0, opts),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Ground,
    MountainPass,
}

/// Masses `a₁ = a₀ fᵏ`, `a₂ = ratio · a₁` for `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassPath {
    pub a0: f64,
    pub ratio: f64,
    pub factor: f64,
    pub steps: usize,
}

impl MassPath {
    /// `a₀` halved `steps` times.
    pub fn halving(a0: f64, ratio: f64, steps: usize) -> Self {
        MassPath { a0, ratio, factor: 0.5, steps }
    }

    pub fn masses(&self) -> Vec<(f64, f64)> {
        (0..=self.steps)
            .map(|k| {
                let a = self.a0 * self.factor.powi(k as i32);
                (a, self.ratio * a)
            })
            .collect()
    }
}

/// A sequence of masses for a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Geometric { a0: f64, ratio: f64, factor: f64, steps: usize },
    /// `a_i = (‖w₃‖₂/α_i)(1 - g₀ fᵏ)`, approaching the `p = 3` threshold
    /// with equal relative gaps in both components.
    Threshold { gap0: f64, factor: f64, steps: usize },
}

impl From<MassPath> for PathSpec {
    fn from(m: MassPath) -> Self {
        PathSpec::Geometric { a0: m.a0, ratio: m.ratio, factor: m.factor, steps: m.steps }
    }
}

impl PathSpec {
    pub fn masses(&self, prm: &Params) -> Result<Vec<(f64, f64)>> {
        match *self {
            PathSpec::Geometric { a0, ratio, factor, steps } => {
                Ok(MassPath { a0, ratio, factor, steps }.masses())
            }
            PathSpec::Threshold { gap0, factor, steps } => {
                if prm.p != 3.0 || !(prm.alpha1 > 0.0 && prm.alpha2 > 0.0) {
                    return Err(NormcritError::Parameter(
                        "threshold paths need p = 3 and positive couplings".into(),
                    ));
                }
                if !(gap0 > 0.0 && gap0 < 1.0 && factor > 0.0 && factor < 1.0) {
                    return Err(NormcritError::Parameter(format!("gap0 {gap0}, factor {factor}")));
                }
                let w = profile_constants(3.0)?.0.sqrt();
                Ok((0..=steps)
                    .map(|k| {
                        let g = 1.0 - gap0 * factor.powi(k as i32);
                        (w / prm.alpha1 * g, w / prm.alpha2 * g)
                    })
                    .collect())
            }
        }
    }
}

/// Coarse class of a failed solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Admissibility,
    Geometry,
    NonConvergence,
    Other,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<NormcritError> for Failure {
    fn from(e: NormcritError) -> Self {
        let kind = match e {
            NormcritError::Admissibility(_) => FailureKind::Admissibility,
            NormcritError::Geometry(_) => FailureKind::Geometry,
            NormcritError::NonConvergence { .. } => FailureKind::NonConvergence,
            _ => FailureKind::Other,
        };
        Failure { kind, message: e.to_string() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub params: Params,
    pub a1: f64,
    pub a2: f64,
    pub result: std::result::Result<SolveResult, Failure>,
}

fn solve_mode(
    mode: SweepMode,
    prm: &Params,
    a1: f64,
    a2: f64,
    init: Option<Pair>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    match mode {
        SweepMode::Ground => solve_local_min_with(prm, a1, a2, init, opts, &mut |_, _| {}),
        SweepMode::MountainPass => solve_mountain_pass_with(prm, a1, a2, init, opts, &mut |_, _| {}),
    }
}

/// Warm start for the next point of a mass path: the previous profile,
/// stretched by the closed-form length ratio on the ground branch.
fn warm_start(mode: SweepMode, prm: &Params, prev: &SolveResult, a1: f64, a2: f64, opts: &SolverOptions) -> Result<Pair> {
    let grid = match (mode, opts.grid) {
        (_, Some(g)) => g.build()?,
        (SweepMode::Ground, None) => ground_grid(prm, a1, a2)?.build()?,
        (SweepMode::MountainPass, None) => mountain_pass_grid(prm, a1, a2)?.build()?,
    };
    let stretch = match mode {
        SweepMode::Ground => {
            let (w_mass, _) = profile_constants(prm.p)?;
            let (a_old, a_new, alpha) = if a1 > 0.0 {
                (prev.masses.0, a1, prm.alpha1)
            } else {
                (prev.masses.1, a2, prm.alpha2)
            };
            let l_old = scalar_closed_form(alpha, prm.p, a_old, w_mass).lambda;
            let l_new = scalar_closed_form(alpha, prm.p, a_new, w_mass).lambda;
            (l_new / l_old).sqrt()
        }
        SweepMode::MountainPass => 1.0,
    };
    let u = RadialField::from_fn(grid.clone(), |r| prev.pair.u.eval(r * stretch));
    let v = RadialField::from_fn(grid.clone(), |r| prev.pair.v.eval(r * stretch));
    Pair::new(u, v)
}

/// Solves along a mass path. With `warm`, each point starts from the previous
/// converged one and the path runs sequentially; otherwise the points are
/// independent and spread over `threads` workers. Output order follows the
/// path either way.
pub fn sweep_masses(
    prm: &Params,
    masses: &[(f64, f64)],
    mode: SweepMode,
    opts: &SolverOptions,
    warm: bool,
    threads: usize,
) -> Vec<SweepEntry> {
    if warm {
        let mut out = Vec::with_capacity(masses.len());
        let mut prev: Option<SolveResult> = None;
        for (index, &(a1, a2)) in masses.iter().enumerate() {
            let init = prev
                .as_ref()
                .filter(|r| r.converged)
                .and_then(|r| warm_start(mode, prm, r, a1, a2, opts).ok());
            let result = solve_mode(mode, prm, a1, a2, init, opts);
            if let Ok(r) = &result {
                prev = Some(r.clone());
            }
            out.push(SweepEntry { index, params: *prm, a1, a2, result: result.map_err(Failure::from) });
        }
        return out;
    }
    let jobs: Vec<(Params, f64, f64)> = masses.iter().map(|&(a1, a2)| (*prm, a1, a2)).collect();
    run_parallel(&jobs, threads, |prm, a1, a2| solve_mode(mode, prm, a1, a2, None, opts))
}

/// Solves for each coupling in `betas` at fixed masses; couplings in the
/// excluded band are recorded as admissibility errors.
pub fn sweep_beta(
    prm: &Params,
    betas: &[f64],
    a1: f64,
    a2: f64,
    mode: SweepMode,
    opts: &SolverOptions,
    threads: usize,
) -> Vec<SweepEntry> {
    let jobs: Vec<(Params, f64, f64)> =
        betas.iter().map(|&beta| (Params { beta, ..*prm }, a1, a2)).collect();
    run_parallel(&jobs, threads, |prm, a1, a2| {
        prm.coupled()?;
        solve_mode(mode, prm, a1, a2, None, opts)
    })
}

fn run_parallel(
    jobs: &[(Params, f64, f64)],
    threads: usize,
    solve: impl Fn(&Params, f64, f64) -> Result<SolveResult> + Sync,
) -> Vec<SweepEntry> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepEntry>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = threads.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(prm, a1, a2)) = jobs.get(index) else { break };
                let result = solve(&prm, a1, a2).map_err(Failure::from);
                slots.lock().unwrap()[index] = Some(SweepEntry { index, params: prm, a1, a2, result });
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|e| e.expect("every job ran")).collect()
}

/// A test pair of the `p = 3` threshold construction and its energy after
/// projection onto `P`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThresholdPoint {
    /// Requested Gagliardo-Nirenberg ratios `‖∇u‖²‖u‖₂/‖u‖₃³`.
    pub ratio: (f64, f64),
    /// Ratios attained by the discrete test functions.
    pub attained: (f64, f64),
    pub t_minus: f64,
    pub energy: f64,
}

/// Grid for the threshold construction.
const THRESHOLD_GRID: GridSpec = GridSpec {
    n: 4096,
    r_max: 40.0,
    mapping: crate::grid::Mapping::Geometric { r_min: 1e-4 },
};

/// `‖∇u‖²‖u‖₂ / ‖u‖₃³`.
pub fn gn_ratio3(u: &RadialField) -> f64 {
    u.grad_sq() * u.mass().sqrt() / u.lq(3.0)
}

/// Smallest ratio the construction can reach: that of the discrete `w₃`.
pub fn threshold_ratio_floor() -> Result<f64> {
    let w = ProfileCache::global().get(3.0, THRESHOLD_GRID)?;
    Ok(gn_ratio3(&w.field))
}

/// Component with mass `a²`, unit `L³` norm and ratio `m`, built on the path
/// from `w₃` toward a thin shell and rescaled by `x ↦ s u(b x)`.
fn threshold_component(w: &RadialField, a: f64, m: f64) -> Result<RadialField> {
    let grid = w.grid().clone();
    let shell = RadialField::from_fn(grid.clone(), |r| (-4.0 * (r - 4.0).powi(2)).exp());
    let wn: Vec<f64> = w.values().iter().map(|x| x / w.mass().sqrt()).collect();
    let sn: Vec<f64> = shell.values().iter().map(|x| x / shell.mass().sqrt()).collect();
    let mix = |theta: f64| -> Result<RadialField> {
        let vals = wn.iter().zip(&sn).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        RadialField::new(grid.clone(), vals)
    };
    let f0 = gn_ratio3(&mix(0.0)?);
    let f1 = gn_ratio3(&mix(1.0)?);
    if m < f0 * (1.0 - 1e-12) {
        return Err(NormcritError::Parameter(format!(
            "ratio {m:.6e} is below the sharp value {f0:.6e}"
        )));
    }
    if m > f1 {
        return Err(NormcritError::Parameter(format!("ratio {m:.6e} exceeds the family range")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    if m > f0 * (1.0 + 1e-12) {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gn_ratio3(&mix(mid)?) > m {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let u = mix(lo)?;
    // ‖s u(b·)‖₂ = s b⁻² ‖u‖₂, ‖s u(b·)‖₃ = s b^{-4/3} ‖u‖₃.
    let (l2, l3) = (u.mass().sqrt(), u.lq(3.0).cbrt());
    let q = l2 / (a * l3);
    let (s, b) = (q * q / l3, q.powf(1.5));
    u.rescale_exact(s, 1.0 / b)
}

/// Energy at the `P⁻` projection of the test pair with ratios `(m₁, m₂)`,
/// `‖u‖₂ = a₁`, `‖v‖₂ = a₂` and unit `L³` norms, for `p = 3`.
pub fn threshold_sequence_energy(prm: &Params, a1: f64, a2: f64, m1: f64, m2: f64) -> Result<ThresholdPoint> {
    prm.validate()?;
    if prm.p != 3.0 {
        return Err(NormcritError::Parameter("the threshold construction needs p = 3".into()));
    }
    let w = ProfileCache::global().get(3.0, THRESHOLD_GRID)?;
    let u = threshold_component(&w.field, a1, m1)?;
    let v = threshold_component(&w.field, a2, m2)?;
    let v_on_u = v.resample(u.grid().clone());
    let agg = Aggregates {
        a1: u.grad_sq() + v.grad_sq(),
        a2: 0.25 * (prm.mu1 * u.lq(4.0) + prm.mu2 * v.lq(4.0) + 2.0 * prm.beta * u.cross(&v_on_u)?),
        a3: prm.alpha1 * u.lq(3.0) / 3.0,
        a4: prm.alpha2 * v.lq(3.0) / 3.0,
    };
    let fiber = Fiber::new(agg, 3.0);
    let t = fiber.critical_points()?.t_minus.ok_or_else(|| {
        NormcritError::ProjectionUndefined("the fiber has no maximum".into())
    })?;
    Ok(ThresholdPoint { ratio: (m1, m2), attained: (gn_ratio3(&u), gn_ratio3(&v)), t_minus: t, energy: fiber.psi(t) })
}

/// Ratios `M_n = (2α_i/3 + A₀ 4^{-n}) a_i` for `n = 0..steps`.
pub fn threshold_ratios(prm: &Params, a1: f64, a2: f64, a0: f64, steps: usize) -> Vec<(f64, f64)> {
    (0..steps)
        .map(|n| {
            let an = a0 * 0.25f64.powi(n as i32);
            ((2.0 * prm.alpha1 / 3.0 + an) * a1, (2.0 * prm.alpha2 / 3.0 + an) * a2)
        })
        .collect()
}

/// What the constrained flow does when no positive normalized solution
/// should exist. Heuristic evidence, not a proof.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub iterations: usize,
    /// The flow met its tolerance with positive components.
    pub converged_positive: bool,
    /// Iterates whose residual was within a factor 10 of the best so far.
    pub near_critical: usize,
    /// How many of those raised the multiplier sign flag.
    pub flagged: usize,
    pub final_energy: f64,
    pub final_residual: f64,
    pub final_sign: SignDiagnostic,
    /// Fraction of the mass beyond `R_max / 2`, at checkpoints.
    pub spreading: Vec<f64>,
    pub residuals: Vec<f64>,
    pub energies: Vec<f64>,
}

/// Runs the mountain-pass descent for the given couplings, recording the
/// multiplier sign diagnostic on every near-critical iterate.
pub fn nonexistence_probe(prm: &Params, a1: f64, a2: f64, opts: &SolverOptions) -> Result<ProbeReport> {
    prm.validate()?;
    check_masses(a1, a2)?;
    let amp = bubble_amplitudes(prm, a1, a2)?;
    let spec = opts.grid.unwrap_or_else(|| bubble_grid(20.0));
    let grid = spec.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seed = bubble_seed(&grid, amp, 0.3 * rng.gen_range(0.8..1.25), 3.0)?;
    let pb = Problem { prm, a1, a2, side: Side::Minus };
    let mut near = 0;
    let mut flagged = 0;
    let mut best = f64::INFINITY;
    let mut spreading = Vec::new();
    let mut residuals = Vec::new();
    let mut energies = Vec::new();
    let every = (opts.max_iter / 200).max(1);
    let lim = DescentLimits { tol: opts.tol, max_iter: opts.max_iter, stall: opts.max_iter, grad_cap: None, spread_cap: None };
    let d = descend(&pb, seed, opts.step, &lim, Vec::new(), &mut |info, x| {
        best = best.min(info.residual);
        if info.residual <= 10.0 * best {
            near += 1;
            if let Ok(proj) = x.dilate_exact(info.t) {
                if sign_diagnostic(prm, &proj).flag {
                    flagged += 1;
                }
            }
        }
        if info.iteration % every == 0 {
            spreading.push(outer_mass_fraction(x));
            residuals.push(info.residual);
            energies.push(info.energy);
        }
    })?;
    let proj = d.pair.dilate_exact(d.t)?;
    let res = certify(prm, a1, a2, Branch::MountainPass, proj.clone(), opts.tol, (d.iterations, 0), false, Vec::new());
    Ok(ProbeReport {
        iterations: d.iterations,
        converged_positive: res.converged && res.positive(),
        near_critical: near,
        flagged,
        final_energy: *d.history.last().unwrap_or(&f64::NAN),
        final_residual: d.residual,
        final_sign: sign_diagnostic(prm, &proj),
        spreading,
        residuals,
        energies,
    })
}

/// Fraction of the total mass outside `R_max / 2`.
pub fn outer_mass_fraction(pair: &Pair) -> f64 {
    let g = pair.u.grid();
    let half = g.r_max() / 2.0;
    let (mut outer, mut total) = (0.0, 0.0);
    for (i, (&r, &w)) in g.nodes().iter().zip(g.weights()).enumerate() {
        let m = (pair.u.values()[i].powi(2) + pair.v.values()[i].powi(2)) * w;
        total += m;
        if r > half {
            outer += m;
        }
    }
    outer / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(p: f64) -> Params {
        Params { mu1: 1.0, mu2: 1.0, alpha1: 1.0, alpha2: 1.0, beta: 2.0, p }
    }

    #[test]
    fn closed_form_energy_matches_constant() {
        let (p, alpha, a, wm) = (2.5, 1.3, 0.4, 7.0);
        let cf = scalar_closed_form(alpha, p, a, wm);
        let k = scalar_energy_constant(alpha, p, wm.sqrt());
        assert_relative_eq!(cf.energy, -k * a.powf((4.0 - p) / (3.0 - p)), max_relative = 1e-12);
    }

    #[test]
    fn ground_state_certificates() {
        let prm = model(2.5);
        let res = solve_local_min(&prm, 0.5, 0.5, &SolverOptions::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!(res.energy < 0.0);
        assert!(res.pohozaev_relative() < 1e-10);
        assert!(res.mass_error.0 < 1e-12 && res.mass_error.1 < 1e-12);
        assert!(res.lambda1 > 0.0 && res.lambda2 > 0.0);
        assert!(res.identity_error() < 1e-8);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn descent_alone_meets_the_tolerance() {
        let prm = model(2.5);
        let opts = SolverOptions { newton: false, ..Default::default() };
        let res = solve_local_min(&prm, 1.0, 1.0, &opts).unwrap();
        assert!(res.converged && res.newton_steps == 0);
        assert!(res.residual_relative() <= 1e-8);
    }

    #[test]
    fn newton_polish_is_stable_at_a_solution() {
        let prm = model(2.5);
        let res = solve_local_min(&prm, 0.5, 0.5, &SolverOptions::default()).unwrap();
        let (again, _) = newton_polish(&prm, 0.5, 0.5, &res.pair, 1e-12, 10).unwrap();
        let diff: f64 = again.u.values().iter().zip(res.pair.u.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8 * res.pair.u.values()[0]);
    }

    #[test]
    fn geometry_refusal_names_inequality() {
        let err = solve_local_min(&model(2.5), 8.0, 8.0, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, NormcritError::Geometry(_)));
        assert!(err.to_string().contains("gamma1"));
    }

    #[test]
    fn mass_path_is_geometric() {
        let m = MassPath::halving(2.0, 1.0, 3).masses();
        assert_eq!(m, vec![(2.0, 2.0), (1.0, 1.0), (0.5, 0.5), (0.25, 0.25)]);
    }

    #[test]
    fn result_round_trips_through_json() {
        let prm = model(2.5);
        let res = solve_local_min(&prm, 0.5, 0.5, &SolverOptions::default()).unwrap();
        let text = serde_json::to_string(&res).unwrap();
        let back: SolveResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back.energy.to_bits(), res.energy.to_bits());
        assert_eq!(back.pair.u.values(), res.pair.u.values());
        assert_eq!(back.pair.u.grid().nodes(), res.pair.u.grid().nodes());
    }

    #[test]
    fn threshold_energy_falls_with_ratio() {
        let prm = Params { p: 3.0, ..model(3.0) };
        let (wm, _) = profile_constants(3.0).unwrap();
        let a = 1.2 * wm.sqrt();
        let e: Vec<f64> = threshold_ratios(&prm, a, a, 0.5, 4)
            .into_iter()
            .map(|(m1, m2)| threshold_sequence_energy(&prm, a, a, m1, m2).unwrap().energy)
            .collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    }

    #[test]
    fn threshold_sharp_ratio_without_perturbation_has_no_projection() {
        let prm = model(3.0);
        let (wm, _) = profile_constants(3.0).unwrap();
        let a = 1.2 * wm.sqrt();
        let m = threshold_ratio_floor().unwrap();
        let err = threshold_sequence_energy(&prm, a, a, m, m).unwrap_err();
        assert!(matches!(err, NormcritError::ProjectionUndefined(_)), "{err}");
        assert!(threshold_sequence_energy(&prm, a, a, 0.9 * m, m).is_err());
    }
}
