//! Fiber maps `s ↦ I(s ⋆ (u, v))`, their critical points, projections onto the
//! Pohozaev set and the geometry constants of the local minimization.
//!
//! With `κ = pγ_p = 2(p-2)` the rescaled derivative
//! `g(s) = e^{-2s} Ψ'(s) = A₁ - 4A₂e^{2s} - κ(A₃+A₄)e^{(κ-2)s}`
//! is either decreasing or increases to a single peak and then decreases, so
//! Ψ has at most two critical points and each is bracketed by the peak.

use serde::{Deserialize, Serialize};

use crate::error::{NormcritError, Result};
use crate::functionals::{Aggregates, Pair, Params};
use crate::profiles::gamma_p;

const ROOT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct Fiber {
    pub agg: Aggregates,
    pub p: f64,
}

/// Critical points of a fiber map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FiberRoots {
    /// Local minimum at negative level (only for `2 < p < 3`).
    pub s_plus: Option<f64>,
    /// Global maximum.
    pub t_minus: Option<f64>,
}

impl FiberRoots {
    pub fn count(&self) -> usize {
        self.s_plus.is_some() as usize + self.t_minus.is_some() as usize
    }
}

impl Fiber {
    pub fn new(agg: Aggregates, p: f64) -> Self {
        Fiber { agg, p }
    }

    pub fn of(prm: &Params, pair: &Pair) -> Self {
        Fiber::new(pair.norms(prm.p).aggregates(prm), prm.p)
    }

    fn kappa(&self) -> f64 {
        self.p * gamma_p(self.p)
    }

    fn a34(&self) -> f64 {
        self.agg.a3 + self.agg.a4
    }

    pub fn psi(&self, s: f64) -> f64 {
        let a = &self.agg;
        0.5 * (2.0 * s).exp() * a.a1 - (4.0 * s).exp() * a.a2 - (self.kappa() * s).exp() * self.a34()
    }

    pub fn dpsi(&self, s: f64) -> f64 {
        (2.0 * s).exp() * self.g(s)
    }

    pub fn d2psi(&self, s: f64) -> f64 {
        let a = &self.agg;
        let k = self.kappa();
        2.0 * (2.0 * s).exp() * a.a1 - 16.0 * (4.0 * s).exp() * a.a2 - k * k * (k * s).exp() * self.a34()
    }

    /// `e^{-2s} Ψ'(s)`.
    pub fn g(&self, s: f64) -> f64 {
        let a = &self.agg;
        let k = self.kappa();
        a.a1 - 4.0 * a.a2 * (2.0 * s).exp() - k * self.a34() * ((k - 2.0) * s).exp()
    }

    fn dg(&self, s: f64) -> f64 {
        let k = self.kappa();
        -8.0 * self.agg.a2 * (2.0 * s).exp() - k * (k - 2.0) * self.a34() * ((k - 2.0) * s).exp()
    }

    /// Location of the peak of `g`, if `g` is not monotone.
    fn peak(&self) -> Option<f64> {
        let k = self.kappa();
        let c = k * (2.0 - k) * self.a34();
        // -8A₂e^{2s} = k(k-2)A₃₄e^{(k-2)s}  ⇔  e^{(4-k)s} = k(2-k)A₃₄ / (8A₂).
        if c > 0.0 && self.agg.a2 > 0.0 {
            Some((c / (8.0 * self.agg.a2)).ln() / (4.0 - k))
        } else {
            None
        }
    }

    pub fn critical_points(&self) -> Result<FiberRoots> {
        let a = &self.agg;
        if !(a.a1 > 0.0 && a.a2 > 0.0) || !a.a1.is_finite() || !a.a2.is_finite() {
            return Err(NormcritError::ProjectionUndefined(format!(
                "degenerate fiber: A1 = {}, A2 = {}",
                a.a1, a.a2
            )));
        }
        let k = self.kappa();
        if (k - 2.0).abs() < 1e-14 {
            let c = a.a1 - 2.0 * self.a34();
            return Ok(FiberRoots {
                s_plus: None,
                t_minus: (c > 0.0).then(|| 0.5 * (c / (4.0 * a.a2)).ln()),
            });
        }
        let peak = self.peak();
        let start = match peak {
            Some(s) => s,
            None => {
                // Monotone decreasing: find a point with g > 0 if any.
                let mut s = -1.0;
                let mut found = None;
                for _ in 0..200 {
                    if self.g(s) > 0.0 {
                        found = Some(s);
                        break;
                    }
                    s -= 4.0;
                }
                match found {
                    Some(s) => s,
                    None => return Ok(FiberRoots::default()),
                }
            }
        };
        if !(self.g(start) > 0.0) {
            return Ok(FiberRoots::default());
        }
        let t_minus = self.bracket_root(start, 1.0)?;
        let s_plus = match peak {
            Some(pk) if self.g(pk - 1e3) < 0.0 => Some(self.bracket_root(pk, -1.0)?),
            _ => None,
        };
        Ok(FiberRoots { s_plus, t_minus: Some(t_minus) })
    }

    /// Root of `g` on the side `dir` of `start`, where `g(start) > 0`.
    fn bracket_root(&self, start: f64, dir: f64) -> Result<f64> {
        let mut step = 0.5;
        let mut far = start + dir * step;
        let mut near = start;
        let mut tries = 0;
        while self.g(far) > 0.0 {
            near = far;
            step *= 2.0;
            far = start + dir * step;
            tries += 1;
            if tries > 80 {
                return Err(NormcritError::ProjectionUndefined("fiber root not bracketed".into()));
            }
        }
        // g(near) > 0 ≥ g(far); safeguarded Newton.
        let (mut lo, mut hi) = if near < far { (near, far) } else { (far, near) };
        let pos_at_lo = self.g(lo) > 0.0;
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gs = self.g(s);
            if gs == 0.0 {
                return Ok(s);
            }
            if (gs > 0.0) == pos_at_lo {
                lo = s;
            } else {
                hi = s;
            }
            let d = self.dg(s);
            let newton = s - gs / d;
            let next = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - s).abs() < ROOT_TOL || hi - lo < ROOT_TOL {
                return Ok(next);
            }
            s = next;
        }
        Ok(s)
    }

    /// Counts sign changes of `Ψ'` on `samples` equispaced points around the
    /// critical points, as an independent check on [`Fiber::critical_points`].
    pub fn scan_sign_changes(&self, samples: usize) -> Result<usize> {
        let roots = self.critical_points()?;
        let mut anchors: Vec<f64> = [roots.s_plus, roots.t_minus, self.peak()]
            .into_iter()
            .flatten()
            .collect();
        if anchors.is_empty() {
            anchors.push(0.0);
        }
        let lo = anchors.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0;
        let hi = anchors.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0;
        let mut changes = 0;
        let mut prev = self.g(lo).signum();
        for i in 1..samples {
            let s = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            let cur = self.g(s).signum();
            if cur != 0.0 && prev != 0.0 && cur != prev {
                changes += 1;
            }
            if cur != 0.0 {
                prev = cur;
            }
        }
        Ok(changes)
    }
}

/// Position of a pair relative to the Pohozaev set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    PPlus,
    PMinus,
    PZero,
    OffManifold,
}

/// Classifies by `P ≈ 0` (relative to `1 + A₁`) and the sign of `Ψ''(0)`.
pub fn classify(prm: &Params, pair: &Pair, tol: f64) -> Label {
    let f = Fiber::of(prm, pair);
    let p_val = f.dpsi(0.0);
    if p_val.abs() > tol * (1.0 + f.agg.a1) {
        return Label::OffManifold;
    }
    let d2 = f.d2psi(0.0);
    if d2.abs() <= 1e-6 * f.agg.a1 {
        Label::PZero
    } else if d2 > 0.0 {
        Label::PPlus
    } else {
        Label::PMinus
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub t: f64,
    pub pair: Pair,
    pub energy: f64,
}

/// `t ⋆ (u, v)` with `t` the fiber maximum.
pub fn project_minus(prm: &Params, pair: &Pair) -> Result<Projection> {
    let f = Fiber::of(prm, pair);
    let t = f.critical_points()?.t_minus.ok_or_else(|| {
        NormcritError::ProjectionUndefined(
            "fiber has no maximum (gradient term does not dominate the subcritical term)".into(),
        )
    })?;
    Ok(Projection { t, energy: f.psi(t), pair: pair.dilate_exact(t)? })
}

/// `s ⋆ (u, v)` with `s` the fiber local minimum; requires `2 < p < 3`.
pub fn project_plus(prm: &Params, pair: &Pair) -> Result<Projection> {
    let positive = prm.alpha1 >= 0.0 && prm.alpha2 >= 0.0 && prm.alpha1 + prm.alpha2 > 0.0;
    if !(prm.p < 3.0 && positive) {
        return Err(NormcritError::ProjectionUndefined(
            "local minimum of the fiber needs 2 < p < 3 and positive couplings".into(),
        ));
    }
    let f = Fiber::of(prm, pair);
    let s = f.critical_points()?.s_plus.ok_or_else(|| {
        NormcritError::ProjectionUndefined("fiber has no local minimum".into())
    })?;
    Ok(Projection { t: s, energy: f.psi(s), pair: pair.dilate_exact(s)? })
}

/// Constants of the convex-concave geometry for `2 < p < 3`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GeometryConstants {
    pub p: f64,
    /// `C_p^p`.
    pub cp_pow: f64,
    /// Squared coupled Sobolev constant.
    pub sobolev_sq: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    /// `T(a₁, a₂) = α₁a₁^{4-p} + α₂a₂^{4-p}`.
    pub t: f64,
    pub gamma1: f64,
    pub gamma0: f64,
    pub rho0: f64,
    pub rho_bar: f64,
    /// Zeros of `h` when `T < γ₁`.
    pub r0: Option<f64>,
    pub r1: Option<f64>,
}

impl GeometryConstants {
    pub fn new(prm: &Params, a1: f64, a2: f64, cp_pow: f64) -> Result<Self> {
        prm.validate()?;
        let p = prm.p;
        if p >= 3.0 {
            return Err(NormcritError::Parameter(format!("geometry constants need p < 3, got {p}")));
        }
        let sc2 = prm.coupled()?.sobolev_sq();
        let d1 = 1.0 / (4.0 * sc2);
        let d2 = prm.alpha1 / p * cp_pow * a1.powf(4.0 - p);
        let d3 = prm.alpha2 / p * cp_pow * a2.powf(4.0 - p);
        let t = prm.alpha1 * a1.powf(4.0 - p) + prm.alpha2 * a2.powf(4.0 - p);
        let gamma1 = p / (2.0 * (4.0 - p) * cp_pow)
            * (2.0 * (3.0 - p) * sc2 / (4.0 - p)).powf(3.0 - p);
        let gamma0 = p / (2.0 * (p - 2.0) * (4.0 - p) * cp_pow)
            * ((3.0 - p) * sc2 / (4.0 - p)).powf(3.0 - p);
        let rho0 = ((3.0 - p) / (2.0 * (4.0 - p) * d1)).sqrt();
        let rho_bar = ((3.0 - p) / (4.0 * (4.0 - p) * d1)).sqrt();
        let mut g = GeometryConstants {
            p,
            cp_pow,
            sobolev_sq: sc2,
            d1,
            d2,
            d3,
            t,
            gamma1,
            gamma0,
            rho0,
            rho_bar,
            r0: None,
            r1: None,
        };
        if t < gamma1 {
            let psi1 = |r: f64| 0.5 * r.powf(6.0 - 2.0 * p) - d1 * r.powf(8.0 - 2.0 * p) - (d2 + d3);
            g.r0 = Some(bisect(psi1, 0.0, rho0));
            g.r1 = Some(bisect(psi1, rho0, (0.5 / d1).sqrt()));
        }
        Ok(g)
    }

    /// `T ≤ γ₁`.
    pub fn holds(&self) -> bool {
        self.t <= self.gamma1
    }

    pub fn require(&self) -> Result<()> {
        if self.holds() {
            Ok(())
        } else {
            Err(NormcritError::Geometry(format!(
                "T <= gamma1 violated: T = {:.6e}, gamma1 = {:.6e}",
                self.t, self.gamma1
            )))
        }
    }

    /// `h(ρ) = ρ²/2 - D₁ρ⁴ - (D₂+D₃)ρ^{2(p-2)}`.
    pub fn h(&self, rho: f64) -> f64 {
        0.5 * rho * rho - self.d1 * rho.powi(4) - (self.d2 + self.d3) * rho.powf(2.0 * (self.p - 2.0))
    }
}

/// Root of a function with a sign change on `[a, b]`.
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a.max(f64::MIN_POSITIVE));
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, RadialField};
    use approx::assert_relative_eq;

    fn agg(a1: f64, a2: f64, a34: f64) -> Aggregates {
        Aggregates { a1, a2, a3: 0.5 * a34, a4: 0.5 * a34 }
    }

    #[test]
    fn two_roots_below_three() {
        let f = Fiber::new(agg(1.0, 0.01, 0.1), 2.5);
        let r = f.critical_points().unwrap();
        let (s, t) = (r.s_plus.unwrap(), r.t_minus.unwrap());
        assert!(s < t);
        assert!(f.dpsi(s).abs() < 1e-10 && f.dpsi(t).abs() < 1e-10);
        assert!(f.d2psi(s) > 0.0 && f.d2psi(t) < 0.0);
        assert!(f.psi(s) < 0.0 && f.psi(t) > 0.0);
        assert_eq!(f.scan_sign_changes(400).unwrap(), 2);
    }

    #[test]
    fn closed_form_at_three() {
        let f = Fiber::new(agg(2.0, 0.3, 0.6), 3.0);
        let t = f.critical_points().unwrap().t_minus.unwrap();
        assert_relative_eq!(t, 0.5 * ((2.0 - 1.2) / 1.2f64).ln(), epsilon = 1e-14);
        let none = Fiber::new(agg(1.0, 0.3, 0.6), 3.0).critical_points().unwrap();
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn single_root_above_three() {
        let f = Fiber::new(agg(0.5, 2.0, 3.0), 3.5);
        let r = f.critical_points().unwrap();
        assert!(r.s_plus.is_none());
        assert!(f.dpsi(r.t_minus.unwrap()).abs() < 1e-10);
        assert_eq!(f.scan_sign_changes(400).unwrap(), 1);
    }

    #[test]
    fn negative_subcritical_gives_single_maximum() {
        let f = Fiber::new(agg(1.0, 0.2, -0.4), 2.5);
        let r = f.critical_points().unwrap();
        assert_eq!(r.count(), 1);
        assert!(f.d2psi(r.t_minus.unwrap()) < 0.0);
    }

    #[test]
    fn projection_lands_on_minus_set() {
        let prm = Params { mu1: 1.0, mu2: 1.0, alpha1: 1.0, alpha2: 1.0, beta: 2.0, p: 2.5 };
        let g = GridSpec::new(1024, 15.0).build().unwrap();
        let u = RadialField::from_fn(g.clone(), |r| (-r * r).exp());
        let v = RadialField::from_fn(g, |r| 0.5 * (-r * r / 2.0).exp());
        let pair = Pair::new(u, v).unwrap();
        let pm = project_minus(&prm, &pair).unwrap();
        assert_eq!(classify(&prm, &pm.pair, 1e-8), Label::PMinus);
        let again = project_minus(&prm, &pm.pair).unwrap();
        assert!(again.t.abs() < 1e-6);
        let pp = project_plus(&prm, &pair).unwrap();
        assert_eq!(classify(&prm, &pp.pair, 1e-8), Label::PPlus);
        assert!(pp.energy < 0.0 && pm.energy > 0.0);
    }

    #[test]
    fn h_vanishes_at_radii() {
        let prm = Params { mu1: 1.0, mu2: 1.0, alpha1: 1.0, alpha2: 1.0, beta: 2.0, p: 2.5 };
        let g = GeometryConstants::new(&prm, 0.3, 0.3, 1.0).unwrap();
        assert!(g.holds());
        let (r0, r1) = (g.r0.unwrap(), g.r1.unwrap());
        assert!(r0 < g.rho0 && g.rho0 < r1);
        assert!(g.h(r0).abs() < 1e-10 && g.h(r1).abs() < 1e-10);
        assert!(g.h(0.5 * (r0 + r1)) > 0.0);
        assert!(g.gamma1 < g.gamma0);
    }
}
