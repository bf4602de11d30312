//! Limit checks along mass sweeps.
//!
//! Each converged state is rescaled exactly (new nodes, scaled values) so
//! that the comparison with the limit profile happens on the state's own
//! grid. Limit profiles are solved on that grid as well, which keeps the
//! discretization error of the reference out of the distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{NormcritError, Result};
use crate::functionals::Params;
use crate::grid::RadialField;
use crate::profiles::{bubble, ScalarProfile};
use crate::solvers::{profile_constants, scalar_closed_form, Branch, SolveResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SmallMassGround,
    SmallMassMp,
    P3Threshold,
    LargeMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    SmallMass,
    LargeMass,
    P3Threshold,
}

/// Least-squares slope of `log y` against `log x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub quantity: String,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// 95% confidence interval from Student's t.
    pub ci95: (f64, f64),
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
    pub points: usize,
    /// Slope predicted by the theory, when there is one.
    pub expected: Option<f64>,
}

impl RateFit {
    /// `|slope - expected| ≤ rel |expected|`.
    pub fn within(&self, rel: f64) -> Option<bool> {
        self.expected.map(|e| (self.slope - e).abs() <= rel * e.abs())
    }
}

/// Fits `log y = slope · log x + intercept`.
pub fn fit_loglog(quantity: &str, x: &[f64], y: &[f64], expected: Option<f64>) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(NormcritError::NotApplicable(format!(
            "{quantity}: {n} positive points, a slope fit needs 3"
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(NormcritError::NotApplicable(format!("{quantity}: abscissae coincide")));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| NormcritError::Parameter(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        quantity: quantity.to_string(),
        slope,
        intercept,
        stderr,
        ci95: (slope - t * stderr, slope + t * stderr),
        residual: (sse / nf).sqrt(),
        points: n,
        expected,
    })
}

/// Strict decrease over enough steps plus a bound on the last value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub steps: usize,
    pub strictly_decreasing: bool,
    pub final_value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Minimum number of consecutive decreases for a trend verdict.
pub const MIN_TREND_STEPS: usize = 4;

pub fn trend(values: &[f64], tolerance: f64) -> TrendVerdict {
    let steps = values.len().saturating_sub(1);
    let strictly_decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let final_value = values.last().copied().unwrap_or(f64::NAN);
    TrendVerdict {
        steps,
        strictly_decreasing,
        final_value,
        tolerance,
        pass: strictly_decreasing && steps >= MIN_TREND_STEPS && final_value <= tolerance,
    }
}

/// Outcome of [`bubble_fit`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BubbleFit {
    /// Scale `σ` with `σ u(0) = √k₁ U₁(0)`; the rescaled state is compared with `ε₀ = 1`.
    pub eps_fit: f64,
    /// `D^{1,2}` distance of `(σu(σ·), σv(σ·))` to `(√k₁U₁, √k₂U₁)`, relative to the limit.
    pub dist_d12: f64,
    /// `v(0)/u(0)`.
    pub ratio: f64,
    /// `√(k₂/k₁)`.
    pub ratio_expected: f64,
}

/// Sup of `(1+r²) σ u(σ r)` for the two components.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayBound {
    pub sigma: f64,
    pub constant_u: f64,
    pub constant_v: f64,
}

/// A converged state after the regime's rescaling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub a1: f64,
    pub a2: f64,
    pub energy: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Distance to the limit profile (`H¹` for profile limits, `D^{1,2}` for bubbles).
    pub distance: f64,
    /// Fitted `(ν₁, ν₂)` for `p = 3`.
    pub nu: Option<(f64, f64)>,
    /// Mass of the rescaled first component.
    pub rescaled_mass: f64,
    pub bubble: Option<BubbleFit>,
    pub decay: Option<DecayBound>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub regime: Regime,
    pub sequence: Vec<(Params, SolveResult)>,
    pub steps: Vec<StepRecord>,
    pub distances: Vec<f64>,
    pub fitted_rates: Vec<RateFit>,
    /// `|m⁻ - (k₁+k₂)S²/4|` relative to the bubble level, for mountain-pass sequences.
    pub limit_energy_gap: Vec<f64>,
    pub distance_trend: TrendVerdict,
    pub gap_trend: Option<TrendVerdict>,
    /// Decay constants within a factor 2 across the last three steps.
    pub decay_stable: Option<bool>,
    /// Entries left out, with the reason.
    pub skipped: Vec<String>,
}

/// Relative tolerance on the final profile distance.
pub const DISTANCE_TOL: f64 = 5e-2;
/// Relative tolerance on the final energy gap to the bubble level.
pub const GAP_TOL: f64 = 5e-2;

/// `ũ(x) = c u(x / s)`, represented exactly on the grid scaled by `s`.
fn rescale(u: &RadialField, c: f64, s: f64) -> Result<RadialField> {
    u.rescale_exact(c, s)
}

/// `(‖∇(u-w)‖² + ‖u-w‖²)^{1/2} / (‖∇w‖² + ‖w‖²)^{1/2}` with `w` sampled by `target`.
fn h1_relative(u: &RadialField, target: &RadialField) -> Result<f64> {
    let diff: Vec<f64> = u.values().iter().zip(target.values()).map(|(a, b)| a - b).collect();
    let d = RadialField::new(u.grid().clone(), diff)?;
    Ok(((d.grad_sq() + d.mass()) / (target.grad_sq() + target.mass())).sqrt())
}

/// `‖∇(u - target)‖₂`, invariant under simultaneous `σ f(σ·)` dilation.
pub fn d12_distance(u: &RadialField, target: impl Fn(f64) -> f64) -> f64 {
    let grid = u.grid();
    let diff: Vec<f64> = u.values().iter().zip(grid.nodes()).map(|(a, &r)| a - target(r)).collect();
    grid.dirichlet_form(&diff).sqrt()
}

/// Small- and large-mass rescaling `ũ = (α/L)^{1/(p-2)} u(x/√L)` with
/// `L = (a²α^{2/(p-2)}/‖w_p‖₂²)^{(p-2)/(6-2p)}`, which gives `‖ũ‖₂² = ‖w_p‖₂²`.
pub fn mass_collapse_rescale(u: &RadialField, alpha: f64, p: f64, a: f64, w_mass: f64) -> Result<RadialField> {
    let l = scalar_closed_form(alpha, p, a, w_mass).lambda;
    rescale(u, (alpha / l).powf(1.0 / (p - 2.0)), l.sqrt())
}

/// `ũ = c r_i² u(c r_i x)`, `c = a/‖w₃‖₂`, `r_i = (1 - α a/‖w₃‖₂)^{-1/2}`.
pub fn p3_rescale(u: &RadialField, alpha: f64, a: f64, w3_l2: f64) -> Result<RadialField> {
    let c = a / w3_l2;
    let ri = (1.0 - alpha * a / w3_l2).powf(-0.5);
    rescale(u, c * ri * ri, 1.0 / (c * ri))
}

/// `ν` with `(ν w(0), ν ‖∇w‖²)` closest to `(ũ(0), ‖∇ũ‖²)` in relative terms;
/// both are linear in `ν` for `ν w(√ν x)` in four dimensions.
fn fit_nu(u: &RadialField, w: &ScalarProfile) -> f64 {
    0.5 * (u.values()[0] / w.center + u.grad_sq() / w.grad_sq)
}

fn converged(
    entries: &[(Params, SolveResult)],
    keep: impl Fn(&SolveResult) -> Option<String>,
) -> (Vec<(Params, SolveResult)>, Vec<String>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (prm, res) in entries {
        let why = if !res.converged {
            Some("not converged".to_string())
        } else {
            keep(res)
        };
        match why {
            Some(w) => skipped.push(format!("a = ({}, {}): {w}", res.masses.0, res.masses.1)),
            None => ok.push((*prm, res.clone())),
        }
    }
    (ok, skipped)
}

/// Runs `f` over `items` on scoped threads, keeping the order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Compares each converged state with the profile limit of `mode`:
/// `(w_p, w_p)` for small or large masses, `(ν₁w₃(√ν₁·), ν₂w₃(√ν₂·))` near
/// the `p = 3` threshold. Unconverged entries are skipped with a notice.
pub fn ground_limit_check(entries: &[(Params, SolveResult)], mode: LimitMode) -> Result<AsymptoticsReport> {
    let first = entries
        .first()
        .ok_or_else(|| NormcritError::NotApplicable("empty sweep".into()))?;
    let p = first.0.p;
    let regime = match mode {
        LimitMode::SmallMass => {
            if !(p < 3.0) {
                return Err(NormcritError::NotApplicable("the small-mass profile limit needs p < 3".into()));
            }
            Regime::SmallMassGround
        }
        LimitMode::LargeMass => {
            if !(p > 3.0) {
                return Err(NormcritError::NotApplicable("the large-mass limit needs p > 3".into()));
            }
            Regime::LargeMass
        }
        LimitMode::P3Threshold => {
            if p != 3.0 {
                return Err(NormcritError::NotApplicable("the threshold limit needs p = 3".into()));
            }
            Regime::P3Threshold
        }
    };
    let (ok, skipped) = converged(entries, |res| {
        let two = res.masses.0 > 0.0 && res.masses.1 > 0.0;
        (!two).then(|| "one component is absent".to_string())
    });
    let (w_mass, _) = profile_constants(p)?;
    let steps: Vec<Result<StepRecord>> = par_map(&ok, |(prm, res)| {
        let (a1, a2) = res.masses;
        let (u, v) = match mode {
            LimitMode::P3Threshold => (
                p3_rescale(&res.pair.u, prm.alpha1, a1, w_mass.sqrt())?,
                p3_rescale(&res.pair.v, prm.alpha2, a2, w_mass.sqrt())?,
            ),
            _ => (
                mass_collapse_rescale(&res.pair.u, prm.alpha1, p, a1, w_mass)?,
                mass_collapse_rescale(&res.pair.v, prm.alpha2, p, a2, w_mass)?,
            ),
        };
        let wu = ScalarProfile::solve(p, u.grid().clone())?;
        let wv = ScalarProfile::solve(p, v.grid().clone())?;
        let (target_u, target_v, nu) = match mode {
            LimitMode::P3Threshold => {
                let (n1, n2) = (fit_nu(&u, &wu), fit_nu(&v, &wv));
                let t = |w: &ScalarProfile, n: f64| {
                    RadialField::from_fn(w.field.grid().clone(), |r| n * w.field.eval(n.sqrt() * r))
                };
                (t(&wu, n1), t(&wv, n2), Some((n1, n2)))
            }
            _ => (wu.field.clone(), wv.field.clone(), None),
        };
        let distance = h1_relative(&u, &target_u)?.max(h1_relative(&v, &target_v)?);
        Ok(StepRecord {
            a1,
            a2,
            energy: res.energy,
            lambda1: res.lambda1,
            lambda2: res.lambda2,
            distance,
            nu,
            rescaled_mass: u.mass(),
            bubble: None,
            decay: None,
        })
    });
    let steps = steps.into_iter().collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = steps.iter().map(|s| s.distance).collect();
    let mut fitted_rates = Vec::new();
    let a: Vec<f64> = steps.iter().map(|s| s.a1).collect();
    match mode {
        LimitMode::SmallMass | LimitMode::LargeMass => {
            let lam: Vec<f64> = steps.iter().map(|s| s.lambda1).collect();
            let expected = (p - 2.0) / (3.0 - p);
            if let Ok(f) = fit_loglog("lambda1", &a, &lam, Some(expected)) {
                fitted_rates.push(f);
            }
            let e: Vec<f64> = steps.iter().map(|s| s.energy.abs()).collect();
            if let Ok(f) = fit_loglog("energy", &a, &e, Some((4.0 - p) / (3.0 - p))) {
                fitted_rates.push(f);
            }
            if let Ok(f) = fit_loglog("distance", &a, &distances, None) {
                fitted_rates.push(f);
            }
        }
        LimitMode::P3Threshold => {
            let gap: Vec<f64> = ok
                .iter()
                .map(|(prm, res)| 1.0 - prm.alpha1 * res.masses.0 / w_mass.sqrt())
                .collect();
            if let Ok(f) = fit_loglog("distance", &gap, &distances, None) {
                fitted_rates.push(f);
            }
        }
    }
    Ok(AsymptoticsReport {
        regime,
        sequence: ok,
        distance_trend: trend(&distances, DISTANCE_TOL),
        steps,
        distances,
        fitted_rates,
        limit_energy_gap: Vec::new(),
        gap_trend: None,
        decay_stable: None,
        skipped,
    })
}

/// Fits the bubble `(√k₁U_{ε₀}, √k₂U_{ε₀})` to a concentrated mountain-pass
/// state. With `σ = 2√2√k₁ / u(0)` the rescaled pair `σ(u, v)(σx)` has the
/// center value of `√k₁U₁`, so the fit is taken at `ε₀ = 1`.
pub fn bubble_fit(prm: &Params, res: &SolveResult) -> Result<BubbleFit> {
    if !matches!(res.branch, Branch::MountainPass | Branch::ScalarMinus) {
        return Err(NormcritError::NotApplicable("bubble fits need a mountain-pass state".into()));
    }
    let (k1, k2) = if res.masses.1 > 0.0 && res.masses.0 > 0.0 {
        let k = prm.coupled()?;
        (k.k1, k.k2)
    } else {
        (1.0 / prm.mu1, 0.0)
    };
    let u0 = res.pair.u.values()[0];
    let sigma = 2.0 * 2f64.sqrt() * k1.sqrt() / u0;
    // Concentration means the bubble scale sits well inside the decay length.
    let lam = res.lambda1.max(res.lambda2);
    if !(u0 > 0.0 && sigma * lam.max(0.0).sqrt() < 0.5) {
        return Err(NormcritError::NotApplicable(format!(
            "center value {u0:.4e} gives bubble scale {sigma:.4e}, not concentrated"
        )));
    }
    let u1 = res.pair.u.rescale_exact(sigma, 1.0 / sigma)?;
    let v1 = res.pair.v.rescale_exact(sigma, 1.0 / sigma)?;
    let du = d12_distance(&u1, |r| k1.sqrt() * bubble(1.0, r));
    let dv = d12_distance(&v1, |r| k2.sqrt() * bubble(1.0, r));
    let s2 = crate::profiles::SOBOLEV_SQ;
    let reference = ((k1 + k2) * s2).sqrt();
    Ok(BubbleFit {
        eps_fit: sigma,
        dist_d12: (du * du + dv * dv).sqrt() / reference,
        ratio: res.pair.v.values()[0] / u0,
        ratio_expected: (k2 / k1).sqrt(),
    })
}

/// `sup_r (1 + r²) σ f(σ r)` over the nodes.
pub fn decay_constant(f: &RadialField, sigma: f64) -> f64 {
    f.grid()
        .nodes()
        .iter()
        .zip(f.values())
        .map(|(&r, &x)| {
            let s = r / sigma;
            (1.0 + s * s) * sigma * x
        })
        .fold(0.0, f64::max)
}

/// Decay constants of a mountain-pass state at scale `sigma`.
pub fn decay_check(res: &SolveResult, sigma: f64) -> Result<DecayBound> {
    if !matches!(res.branch, Branch::MountainPass | Branch::ScalarMinus) {
        return Err(NormcritError::NotApplicable("decay bounds need a mountain-pass state".into()));
    }
    Ok(DecayBound {
        sigma,
        constant_u: decay_constant(&res.pair.u, sigma),
        constant_v: decay_constant(&res.pair.v, sigma),
    })
}

/// Constants within a factor 2 of each other over the last three entries.
pub fn decay_stable(bounds: &[DecayBound]) -> Option<bool> {
    if bounds.len() < 3 {
        return None;
    }
    let tail = &bounds[bounds.len() - 3..];
    let ok = |f: &dyn Fn(&DecayBound) -> f64| {
        let lo = tail.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = tail.iter().map(f).fold(0.0, f64::max);
        lo > 0.0 && hi <= 2.0 * lo
    };
    let v_present = tail.iter().all(|b| b.constant_v > 0.0);
    Some(ok(&|b| b.constant_u) && (!v_present || ok(&|b| b.constant_v)))
}

/// Small-mass mountain-pass sequence: energy gap to the bubble level,
/// bubble fits and decay constants.
pub fn bubble_limit_check(entries: &[(Params, SolveResult)]) -> Result<AsymptoticsReport> {
    let (ok, mut skipped) = converged(entries, |res| {
        (!matches!(res.branch, Branch::MountainPass)).then(|| "not a coupled mountain-pass state".into())
    });
    let mut steps = Vec::new();
    let mut gaps = Vec::new();
    let mut kept = Vec::new();
    for (prm, res) in ok {
        let level = prm.coupled()?.bubble_level();
        let fit = match bubble_fit(&prm, &res) {
            Ok(f) => f,
            Err(e) => {
                skipped.push(format!("a = ({}, {}): {e}", res.masses.0, res.masses.1));
                continue;
            }
        };
        gaps.push((res.energy - level).abs() / level);
        steps.push(StepRecord {
            a1: res.masses.0,
            a2: res.masses.1,
            energy: res.energy,
            lambda1: res.lambda1,
            lambda2: res.lambda2,
            distance: fit.dist_d12,
            nu: None,
            rescaled_mass: res.pair.u.rescale_exact(fit.eps_fit, 1.0 / fit.eps_fit)?.mass(),
            bubble: Some(fit),
            decay: Some(decay_check(&res, fit.eps_fit)?),
        });
        kept.push((prm, res));
    }
    let distances: Vec<f64> = steps.iter().map(|s| s.distance).collect();
    let a: Vec<f64> = steps.iter().map(|s| s.a1).collect();
    let mut fitted_rates = Vec::new();
    for (name, ys) in [
        ("energy_gap", gaps.clone()),
        ("eps_fit", steps.iter().map(|s| s.bubble.map_or(f64::NAN, |b| b.eps_fit)).collect()),
    ] {
        if let Ok(f) = fit_loglog(name, &a, &ys, None) {
            fitted_rates.push(f);
        }
    }
    let bounds: Vec<DecayBound> = steps.iter().filter_map(|s| s.decay).collect();
    Ok(AsymptoticsReport {
        regime: Regime::SmallMassMp,
        sequence: kept,
        distance_trend: trend(&distances, f64::INFINITY),
        gap_trend: Some(trend(&gaps, GAP_TOL)),
        decay_stable: decay_stable(&bounds),
        steps,
        distances,
        fitted_rates,
        limit_energy_gap: gaps,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    #[test]
    fn loglog_fit_recovers_power_law() {
        let x: Vec<f64> = (1..8).map(|k| 0.5f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|a| 3.0 * a.powf(1.7)).collect();
        let f = fit_loglog("y", &x, &y, Some(1.7)).unwrap();
        assert_relative_eq!(f.slope, 1.7, max_relative = 1e-12);
        assert!(f.residual < 1e-12 && f.stderr < 1e-10);
        assert_eq!(f.within(0.01), Some(true));
    }

    #[test]
    fn loglog_fit_interval_covers_noisy_slope() {
        let x: Vec<f64> = (0..10).map(|k| 2f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, a)| a.powf(-0.5) * (1.0 + 0.05 * (i as f64 * 2.1).sin())).collect();
        let f = fit_loglog("y", &x, &y, Some(-0.5)).unwrap();
        assert!(f.ci95.0 < -0.5 && -0.5 < f.ci95.1, "{f:?}");
        assert!(f.residual > 0.0);
    }

    #[test]
    fn trend_requires_enough_steps() {
        assert!(trend(&[5.0, 4.0, 3.0, 2.0, 0.01], 0.05).pass);
        assert!(!trend(&[5.0, 4.0, 3.0, 0.01], 0.05).pass);
        assert!(!trend(&[5.0, 4.0, 4.0, 2.0, 0.01], 0.05).pass);
        assert!(!trend(&[5.0, 4.0, 3.0, 2.0, 0.1], 0.05).pass);
    }

    #[test]
    fn exact_bubble_decay_constant() {
        let g = GridSpec::geometric(2048, 1e4, 1e-4).build().unwrap();
        let u = RadialField::from_fn(g, |r| bubble(1.0, r));
        assert_relative_eq!(decay_constant(&u, 1.0), 2.0 * 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn mass_collapse_rescaling_maps_mass_to_profile() {
        let g = GridSpec::geometric(1024, 30.0, 1e-4).build().unwrap();
        let u = RadialField::from_fn(g, |r| (-r * r).exp());
        let (p, alpha, w_mass) = (2.5, 1.3, 9.7);
        let a = u.mass().sqrt();
        let t = mass_collapse_rescale(&u, alpha, p, a, w_mass).unwrap();
        assert_relative_eq!(t.mass(), w_mass, max_relative = 1e-12);
    }

    #[test]
    fn d12_distance_is_dilation_invariant() {
        let g = GridSpec::geometric(2048, 200.0, 1e-4).build().unwrap();
        let u = RadialField::from_fn(g, |r| 2.0 / (1.0 + r * r).powf(1.1));
        let target = |r: f64| bubble(1.0, r);
        let d0 = d12_distance(&u, target);
        let s = 3.7;
        let us = u.rescale_exact(s, 1.0 / s).unwrap();
        let d1 = d12_distance(&us, |r| s * target(s * r));
        assert_relative_eq!(d0, d1, max_relative = 1e-6);
    }
}
