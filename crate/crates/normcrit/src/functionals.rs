//! Energy, Pohozaev functional, gradient and Lagrange multipliers of the
//! coupled system
//!
//! ```text
//! -Δu + λ₁u = μ₁u³ + α₁|u|^{p-2}u + βv²u
//! -Δv + λ₂v = μ₂v³ + α₂|v|^{p-2}v + βu²v
//! ```
//!
//! on pairs of radial fields sharing one grid.

use serde::{Deserialize, Serialize};

use crate::error::{NormcritError, Result};
use crate::grid::{GridSpec, RadialField};
use crate::profiles::{check_exponent, gamma_p, signed_pow, SOBOLEV_SQ};

/// Coefficients of the system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub p: f64,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        check_exponent(self.p)?;
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(NormcritError::Parameter(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(NormcritError::Parameter(format!("{name} = {v}")));
            }
        }
        if self.beta < 0.0 {
            return Err(NormcritError::Parameter(format!("beta = {} is negative", self.beta)));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        gamma_p(self.p)
    }

    /// `β ∈ (0, min μ) ∪ (max μ, ∞)`.
    pub fn beta_admissible(&self) -> bool {
        let lo = self.mu1.min(self.mu2);
        let hi = self.mu1.max(self.mu2);
        self.beta > 0.0 && (self.beta < lo || self.beta > hi)
    }

    /// `(k₁, k₂)` of the synchronized bubble `(√k₁ U, √k₂ U)`.
    pub fn coupled(&self) -> Result<CoupledConstants> {
        if !self.beta_admissible() {
            return Err(NormcritError::Admissibility(format!(
                "beta = {} lies in [min mu, max mu] = [{}, {}] or is not positive",
                self.beta,
                self.mu1.min(self.mu2),
                self.mu1.max(self.mu2)
            )));
        }
        let det = self.beta * self.beta - self.mu1 * self.mu2;
        let k1 = (self.beta - self.mu2) / det;
        let k2 = (self.beta - self.mu1) / det;
        Ok(CoupledConstants { k1, k2 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledConstants {
    pub k1: f64,
    pub k2: f64,
}

impl CoupledConstants {
    /// Squared coupled Sobolev constant `(k₁ + k₂) S^2`.
    pub fn sobolev_sq(&self) -> f64 {
        (self.k1 + self.k2) * SOBOLEV_SQ
    }

    /// Energy of the synchronized bubble, `(k₁ + k₂) S^2 / 4`.
    pub fn bubble_level(&self) -> f64 {
        self.sobolev_sq() / 4.0
    }
}

/// Two radial components on a common grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "PairState", try_from = "PairState")]
pub struct Pair {
    pub u: RadialField,
    pub v: RadialField,
}

impl Pair {
    pub fn new(u: RadialField, v: RadialField) -> Result<Self> {
        if !u.same_grid(&v) {
            return Err(NormcritError::GridMismatch);
        }
        Ok(Pair { u, v })
    }

    pub fn norms(&self, p: f64) -> Norms {
        Norms {
            grad_u: self.u.grad_sq(),
            grad_v: self.v.grad_sq(),
            mass_u: self.u.mass(),
            mass_v: self.v.mass(),
            l4_u: self.u.lq(4.0),
            l4_v: self.v.lq(4.0),
            lp_u: self.u.lq(p),
            lp_v: self.v.lq(p),
            cross: self.u.cross(&self.v).expect("pair shares a grid"),
        }
    }

    /// `s ⋆ (u, v)` on the grid scaled by `e^{-s}`, so that norms scale exactly.
    pub fn dilate_exact(&self, s: f64) -> Result<Pair> {
        let u = self.u.dilate_exact(s)?;
        let v = RadialField::new(u.grid().clone(), self.v.dilate_exact(s)?.into_values())?;
        Ok(Pair { u, v })
    }

    /// `s ⋆ (u, v)` resampled on the current grid.
    pub fn dilate(&self, s: f64) -> Result<Pair> {
        Ok(Pair { u: self.u.dilate(s)?, v: self.v.dilate(s)? })
    }
}

/// Serialized form of a [`Pair`]: the grid description and nodal values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub grid: GridSpec,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl From<Pair> for PairState {
    fn from(pair: Pair) -> Self {
        PairState { grid: pair.u.grid().spec(), u: pair.u.into_values(), v: pair.v.into_values() }
    }
}

impl TryFrom<PairState> for Pair {
    type Error = NormcritError;

    fn try_from(s: PairState) -> Result<Self> {
        let grid = s.grid.build()?;
        Pair::new(RadialField::new(grid.clone(), s.u)?, RadialField::new(grid, s.v)?)
    }
}

/// Integral quantities of a pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub grad_u: f64,
    pub grad_v: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub l4_u: f64,
    pub l4_v: f64,
    pub lp_u: f64,
    pub lp_v: f64,
    pub cross: f64,
}

/// Fiber coefficients: `Ψ(s) = e^{2s}A₁/2 - e^{4s}A₂ - e^{pγs}(A₃+A₄)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl Norms {
    pub fn aggregates(&self, prm: &Params) -> Aggregates {
        Aggregates {
            a1: self.grad_u + self.grad_v,
            a2: 0.25 * (prm.mu1 * self.l4_u + prm.mu2 * self.l4_v + 2.0 * prm.beta * self.cross),
            a3: prm.alpha1 * self.lp_u / prm.p,
            a4: prm.alpha2 * self.lp_v / prm.p,
        }
    }

    pub fn energy(&self, prm: &Params) -> f64 {
        let a = self.aggregates(prm);
        0.5 * a.a1 - a.a2 - a.a3 - a.a4
    }

    pub fn pohozaev(&self, prm: &Params) -> f64 {
        let a = self.aggregates(prm);
        a.a1 - 4.0 * a.a2 - prm.p * prm.gamma() * (a.a3 + a.a4)
    }

    /// `(λ₁, λ₂)` from testing each equation with its own component. A
    /// vanishing component gets multiplier zero.
    pub fn multipliers(&self, prm: &Params) -> (f64, f64) {
        let ratio = |num: f64, mass: f64| if mass > 0.0 { num / mass } else { 0.0 };
        let l1 = ratio(
            prm.mu1 * self.l4_u + prm.alpha1 * self.lp_u + prm.beta * self.cross - self.grad_u,
            self.mass_u,
        );
        let l2 = ratio(
            prm.mu2 * self.l4_v + prm.alpha2 * self.lp_v + prm.beta * self.cross - self.grad_v,
            self.mass_v,
        );
        (l1, l2)
    }

    /// `(1 - γ_p)(α₁‖u‖_p^p + α₂‖v‖_p^p)`, which equals `λ₁a₁² + λ₂a₂²` on the
    /// Pohozaev set.
    pub fn multiplier_identity_rhs(&self, prm: &Params) -> f64 {
        (1.0 - prm.gamma()) * (prm.alpha1 * self.lp_u + prm.alpha2 * self.lp_v)
    }
}

/// `I(u, v)`.
pub fn energy(prm: &Params, pair: &Pair) -> f64 {
    pair.norms(prm.p).energy(prm)
}

/// `P(u, v)`.
pub fn pohozaev(prm: &Params, pair: &Pair) -> f64 {
    pair.norms(prm.p).pohozaev(prm)
}

/// Scalar energy `½‖∇u‖² - μ/4 ‖u‖₄⁴ - α/p ‖u‖_p^p`, equal to `I(u, 0)`.
pub fn scalar_energy(mu: f64, alpha: f64, p: f64, u: &RadialField) -> f64 {
    0.5 * u.grad_sq() - 0.25 * mu * u.lq(4.0) - alpha / p * u.lq(p)
}

/// Nonlinear part `μ₁u³ + α₁|u|^{p-2}u + βv²u` at each node.
pub(crate) fn reaction(mu: f64, alpha: f64, beta: f64, p: f64, u: &[f64], v: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| mu * a * a * a + alpha * signed_pow(a, p) + beta * b * b * a)
        .collect()
}

/// `L²`-gradients `(-Δu - μ₁u³ - α₁|u|^{p-2}u - βv²u, ...)`.
pub fn gradient(prm: &Params, pair: &Pair) -> (RadialField, RadialField) {
    let g = pair.u.grid().clone();
    let (u, v) = (pair.u.values(), pair.v.values());
    let mut gu = g.neg_laplacian(u);
    let mut gv = g.neg_laplacian(v);
    let ru = reaction(prm.mu1, prm.alpha1, prm.beta, prm.p, u, v);
    let rv = reaction(prm.mu2, prm.alpha2, prm.beta, prm.p, v, u);
    let n = gu.len();
    for i in 0..n - 1 {
        gu[i] -= ru[i];
        gv[i] -= rv[i];
    }
    (
        RadialField::new(g.clone(), gu).expect("finite gradient"),
        RadialField::new(g, gv).expect("finite gradient"),
    )
}

pub fn multipliers(prm: &Params, pair: &Pair) -> (f64, f64) {
    pair.norms(prm.p).multipliers(prm)
}

/// `‖∇I + λ₁u‖ + ‖∇I + λ₂v‖` with the multipliers from [`multipliers`],
/// i.e. the residual of the Euler-Lagrange system.
pub fn criticality_residual(prm: &Params, pair: &Pair) -> f64 {
    let (l1, l2) = multipliers(prm, pair);
    let (gu, gv) = gradient(prm, pair);
    let grid = pair.u.grid();
    let ru: Vec<f64> = gu.values().iter().zip(pair.u.values()).map(|(g, u)| g + l1 * u).collect();
    let rv: Vec<f64> = gv.values().iter().zip(pair.v.values()).map(|(g, v)| g + l2 * v).collect();
    grid.dot(&ru, &ru).sqrt() + grid.dot(&rv, &rv).sqrt()
}

/// Verdict of the multiplier sign test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVerdict {
    /// Both couplings positive; the identity forces no negative multiplier.
    Consistent,
    /// Both couplings negative: some multiplier must be negative, which rules
    /// out positive solutions in `R^4`.
    NonexistenceConsistent,
    /// Mixed signs; the identity alone decides nothing.
    Indeterminate,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SignDiagnostic {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `λ₁a₁² + λ₂a₂²` from the computed multipliers.
    pub weighted_sum: f64,
    /// `(1 - γ_p)(α₁‖u‖_p^p + α₂‖v‖_p^p)`.
    pub identity_rhs: f64,
    /// Raised when the identity forces a negative multiplier.
    pub flag: bool,
    pub verdict: SignVerdict,
}

pub fn sign_diagnostic(prm: &Params, pair: &Pair) -> SignDiagnostic {
    let n = pair.norms(prm.p);
    let (l1, l2) = n.multipliers(prm);
    let rhs = n.multiplier_identity_rhs(prm);
    let verdict = if prm.alpha1 < 0.0 && prm.alpha2 < 0.0 {
        SignVerdict::NonexistenceConsistent
    } else if prm.alpha1 >= 0.0 && prm.alpha2 >= 0.0 {
        SignVerdict::Consistent
    } else {
        SignVerdict::Indeterminate
    };
    SignDiagnostic {
        lambda1: l1,
        lambda2: l2,
        weighted_sum: l1 * n.mass_u + l2 * n.mass_v,
        identity_rhs: rhs,
        flag: rhs < 0.0,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    fn params() -> Params {
        Params { mu1: 1.0, mu2: 2.0, alpha1: 0.7, alpha2: 1.3, beta: 3.0, p: 2.6 }
    }

    fn pair() -> Pair {
        let g = GridSpec::new(2048, 12.0).build().unwrap();
        let u = RadialField::from_fn(g.clone(), |r| 0.8 * (-r * r / 3.0).exp());
        let v = RadialField::from_fn(g, |r| 1.1 / (1.0 + r * r).powi(2));
        Pair::new(u, v).unwrap()
    }

    #[test]
    fn coupled_constants_solve_the_bubble_system() {
        let prm = params();
        let k = prm.coupled().unwrap();
        // μ₁k₁ + βk₂ = 1 and βk₁ + μ₂k₂ = 1.
        assert_relative_eq!(prm.mu1 * k.k1 + prm.beta * k.k2, 1.0, epsilon = 1e-14);
        assert_relative_eq!(prm.beta * k.k1 + prm.mu2 * k.k2, 1.0, epsilon = 1e-14);
        let bad = Params { beta: 1.5, ..prm };
        assert!(matches!(bad.coupled(), Err(NormcritError::Admissibility(_))));
    }

    #[test]
    fn energy_reduces_to_scalar() {
        let prm = params();
        let pr = pair();
        let zero = RadialField::zeros(pr.u.grid().clone());
        let semi = Pair::new(pr.u.clone(), zero).unwrap();
        assert_relative_eq!(
            energy(&prm, &semi),
            scalar_energy(prm.mu1, prm.alpha1, prm.p, &pr.u),
            max_relative = 1e-14
        );
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let prm = params();
        let pr = pair();
        let g = pr.u.grid().clone();
        let phi = RadialField::from_fn(g.clone(), |r| r * (-r).exp());
        let psi = RadialField::from_fn(g, |r| (-(r - 2.0).powi(2)).exp());
        let (gu, gv) = gradient(&prm, &pr);
        let exact = gu.inner(&phi).unwrap() + gv.inner(&psi).unwrap();
        let h = 1e-5;
        let shift = |t: f64| {
            let mut u = pr.u.clone();
            let mut v = pr.v.clone();
            u.values_mut().iter_mut().zip(phi.values()).for_each(|(a, b)| *a += t * b);
            v.values_mut().iter_mut().zip(psi.values()).for_each(|(a, b)| *a += t * b);
            energy(&prm, &Pair::new(u, v).unwrap())
        };
        let fd = (shift(h) - shift(-h)) / (2.0 * h);
        assert_relative_eq!(fd, exact, max_relative = 1e-7);
    }

    #[test]
    fn pohozaev_is_derivative_of_dilation() {
        let prm = params();
        let pr = pair();
        let h = 1e-5;
        let ep = energy(&prm, &pr.dilate_exact(h).unwrap());
        let em = energy(&prm, &pr.dilate_exact(-h).unwrap());
        assert_relative_eq!((ep - em) / (2.0 * h), pohozaev(&prm, &pr), max_relative = 1e-7);
    }

    #[test]
    fn sign_verdicts() {
        let pr = pair();
        let neg = Params { alpha1: -1.0, alpha2: -1.0, ..params() };
        let d = sign_diagnostic(&neg, &pr);
        assert!(d.flag);
        assert_eq!(d.verdict, SignVerdict::NonexistenceConsistent);
        let pos = sign_diagnostic(&params(), &pr);
        assert!(!pos.flag);
        assert_eq!(pos.verdict, SignVerdict::Consistent);
        let mixed = Params { alpha1: -1.0, ..params() };
        assert_eq!(sign_diagnostic(&mixed, &pr).verdict, SignVerdict::Indeterminate);
    }

    #[test]
    fn multipliers_satisfy_tested_equations() {
        let prm = params();
        let pr = pair();
        let (l1, l2) = multipliers(&prm, &pr);
        let (gu, gv) = gradient(&prm, &pr);
        // ⟨∇I + λu, u⟩ = 0 by construction.
        let t1 = gu.inner(&pr.u).unwrap() + l1 * pr.u.mass();
        let t2 = gv.inner(&pr.v).unwrap() + l2 * pr.v.mass();
        assert!(t1.abs() < 1e-10 && t2.abs() < 1e-10);
    }
}
