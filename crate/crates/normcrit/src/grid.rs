//! Radial grids on `[0, R_max]` for radially symmetric functions on R^4.
//!
//! Integrals use control-volume weights: node `i` owns the shell between the
//! neighbouring face midpoints, so `sum(w) = |S^3| R^4 / 4` exactly. The
//! Laplacian is the flux form built on the same cells. It is symmetric with
//! respect to the weights and reproduces `Δ r^2 = 8` at every interior node,
//! including the origin where the limit `Δu(0) = 4 u''(0)` is implied.
//! The outer node carries a homogeneous Dirichlet condition.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NormcritError, Result};

/// Surface area of the unit sphere in R^4.
pub const SPHERE_AREA: f64 = 2.0 * PI * PI;

/// Node placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mapping {
    Uniform,
    /// `r = R_max * xi^exponent` with `xi` uniform, refining near the origin.
    Graded { exponent: f64 },
    /// Origin plus nodes in geometric progression from `r_min` to `R_max`.
    /// Dilating by one ratio maps the grid onto itself, so the discrete
    /// energy is dilation invariant away from the two ends.
    Geometric { r_min: f64 },
}

impl Default for Mapping {
    fn default() -> Self {
        Mapping::Uniform
    }
}

/// Grid description, cheap to copy and serialize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub r_max: f64,
    #[serde(default)]
    pub mapping: Mapping,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 4096, r_max: 20.0, mapping: Mapping::Uniform }
    }
}

impl GridSpec {
    pub fn new(n: usize, r_max: f64) -> Self {
        GridSpec { n, r_max, mapping: Mapping::Uniform }
    }

    pub fn graded(n: usize, r_max: f64, exponent: f64) -> Self {
        GridSpec { n, r_max, mapping: Mapping::Graded { exponent } }
    }

    pub fn geometric(n: usize, r_max: f64, r_min: f64) -> Self {
        GridSpec { n, r_max, mapping: Mapping::Geometric { r_min } }
    }

    pub fn build(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::new(*self).map(Arc::new)
    }
}

#[derive(Debug)]
pub struct RadialGrid {
    spec: GridSpec,
    r: Vec<f64>,
    weights: Vec<f64>,
    /// Flux coefficients on the `n - 1` faces between consecutive nodes.
    kappa: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl RadialGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if spec.n < 16 {
            return Err(NormcritError::InvalidGrid(format!("N = {} < 16", spec.n)));
        }
        if !(spec.r_max.is_finite() && spec.r_max > 0.0) {
            return Err(NormcritError::InvalidGrid(format!("R_max = {}", spec.r_max)));
        }
        let n = spec.n;
        let last = (n - 1) as f64;
        let r: Vec<f64> = match spec.mapping {
            Mapping::Uniform => (0..n).map(|i| spec.r_max * i as f64 / last).collect(),
            Mapping::Graded { exponent } => {
                if !(exponent.is_finite() && exponent >= 1.0) {
                    return Err(NormcritError::InvalidGrid(format!(
                        "graded exponent {exponent} < 1"
                    )));
                }
                (0..n).map(|i| spec.r_max * (i as f64 / last).powf(exponent)).collect()
            }
            Mapping::Geometric { r_min } => {
                if !(r_min > 0.0 && r_min < spec.r_max) {
                    return Err(NormcritError::InvalidGrid(format!("geometric r_min = {r_min}")));
                }
                let ratio = (spec.r_max / r_min).ln() / (last - 1.0);
                std::iter::once(0.0)
                    .chain((0..n - 1).map(|i| r_min * (ratio * i as f64).exp()))
                    .collect()
            }
        };
        let mut r = r;
        r[n - 1] = spec.r_max;
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NormcritError::InvalidGrid("nodes not strictly increasing".into()));
        }
        // Face radii: 0, midpoints, R_max.
        let mut faces = Vec::with_capacity(n + 1);
        faces.push(0.0);
        faces.extend(r.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        faces.push(spec.r_max);
        let quarter = SPHERE_AREA / 4.0;
        let weights: Vec<f64> =
            faces.windows(2).map(|f| quarter * (f[1].powi(4) - f[0].powi(4))).collect();
        // Flux through face i+1/2 equals 8 * (volume inside it) for u = r^2.
        let kappa: Vec<f64> = (0..n - 1)
            .map(|i| 2.0 * SPHERE_AREA * faces[i + 1].powi(4) / (r[i + 1].powi(2) - r[i].powi(2)))
            .collect();
        Ok(RadialGrid { spec, r, weights, kappa })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        self.spec.r_max
    }

    pub fn nodes(&self) -> &[f64] {
        &self.r
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// The same grid stretched by `factor` (radii times `factor`).
    pub fn scaled(&self, factor: f64) -> Result<Arc<RadialGrid>> {
        let mapping = match self.spec.mapping {
            Mapping::Geometric { r_min } => Mapping::Geometric { r_min: r_min * factor },
            m => m,
        };
        RadialGrid::new(GridSpec { r_max: self.spec.r_max * factor, mapping, ..self.spec })
            .map(Arc::new)
    }

    /// `∫ f` over the ball.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Weighted inner product.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * w).sum()
    }

    /// `∫ |∇u|^2`.
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        self.kappa.iter().enumerate().map(|(i, k)| k * (u[i + 1] - u[i]).powi(2)).sum()
    }

    /// `-Δu` at every node, zero on the Dirichlet node.
    pub fn neg_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, k) in self.kappa.iter().enumerate() {
            let flux = k * (u[i + 1] - u[i]);
            out[i] -= flux;
            out[i + 1] += flux;
        }
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o /= w;
        }
        out[n - 1] = 0.0;
        out
    }

    /// Solves `(shift + (-Δ)) x = rhs` with `x` vanishing on the Dirichlet node.
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        // Symmetric form: (shift W + K) x = W rhs, tridiagonal.
        let m = self.len() - 1;
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m.saturating_sub(1)];
        let mut b = vec![0.0; m];
        for i in 0..m {
            diag[i] = shift * self.weights[i] + self.kappa[i];
            if i > 0 {
                diag[i] += self.kappa[i - 1];
                off[i - 1] = -self.kappa[i - 1];
            }
            b[i] = self.weights[i] * rhs[i];
        }
        let mut x = thomas_symmetric(&diag, &off, &b);
        x.push(0.0);
        x
    }

    /// Solves `(-Δ + pot) x = rhs` with `x` vanishing on the Dirichlet node.
    /// The operator may be indefinite, so the elimination pivots.
    pub fn solve_with_potential(&self, pot: &[f64], rhs: &[f64]) -> Vec<f64> {
        let m = self.len() - 1;
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m.saturating_sub(1)];
        let mut b = vec![0.0; m];
        for i in 0..m {
            diag[i] = pot[i] * self.weights[i] + self.kappa[i];
            if i > 0 {
                diag[i] += self.kappa[i - 1];
                off[i - 1] = -self.kappa[i - 1];
            }
            b[i] = self.weights[i] * rhs[i];
        }
        let mut x = tridiag_pivoting(&off, &diag, &off, &b);
        x.push(0.0);
        x
    }

    /// Index of the interval `[r_i, r_{i+1}]` containing `r` (clamped).
    fn interval(&self, r: f64) -> usize {
        let idx = self.r.partition_point(|&x| x <= r);
        idx.saturating_sub(1).min(self.len() - 2)
    }
}

fn thomas_symmetric(diag: &[f64], off: &[f64], b: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut denom = diag[0];
    c[0] = if m > 1 { off[0] / denom } else { 0.0 };
    d[0] = b[0] / denom;
    for i in 1..m {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i < m - 1 {
            c[i] = off[i] / denom;
        }
        d[i] = (b[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Tridiagonal solve with partial pivoting; `lower[i]` couples rows `i+1, i`
/// and `upper[i]` couples rows `i, i+1`.
fn tridiag_pivoting(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut d = diag.to_vec();
    let mut du = upper.to_vec();
    du.push(0.0);
    let mut du2 = vec![0.0; m];
    let mut dl = lower.to_vec();
    let mut x = b.to_vec();
    for i in 0..m.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            let f = dl[i] / d[i];
            d[i + 1] -= f * du[i];
            x[i + 1] -= f * x[i];
            dl[i] = 0.0;
        } else {
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let t = d[i + 1];
            d[i + 1] = du[i] - f * t;
            du[i] = t;
            du2[i] = du[i + 1];
            du[i + 1] = -f * du[i + 1];
            x.swap(i, i + 1);
            x[i + 1] -= f * x[i];
        }
    }
    for i in (0..m).rev() {
        let mut s = x[i];
        if i + 1 < m {
            s -= du[i] * x[i + 1];
        }
        if i + 2 < m {
            s -= du2[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    x
}

/// Nodal samples of a radial function that vanishes at `R_max`.
#[derive(Clone, Debug)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialField {
    /// Wraps nodal values; the boundary value is forced to zero.
    pub fn new(grid: Arc<RadialGrid>, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(NormcritError::InvalidGrid(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NormcritError::Format("non-finite field value".into()));
        }
        let n = values.len();
        values[n - 1] = 0.0;
        Ok(RadialField { grid, values })
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let mut values: Vec<f64> = grid.nodes().iter().map(|&r| f(r)).collect();
        let n = values.len();
        values[n - 1] = 0.0;
        RadialField { grid, values }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        RadialField { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &RadialField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    fn check(&self, other: &RadialField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(NormcritError::GridMismatch)
        }
    }

    /// `‖u‖_2^2`.
    pub fn mass(&self) -> f64 {
        self.grid.dot(&self.values, &self.values)
    }

    /// `‖∇u‖_2^2`.
    pub fn grad_sq(&self) -> f64 {
        self.grid.dirichlet_form(&self.values)
    }

    /// `‖u‖_q^q`.
    pub fn lq(&self, q: f64) -> f64 {
        let w = self.grid.weights();
        if q == 2.0 {
            return self.mass();
        }
        if q == 4.0 {
            return self.values.iter().zip(w).map(|(u, w)| (u * u).powi(2) * w).sum();
        }
        self.values.iter().zip(w).map(|(u, w)| u.abs().powf(q) * w).sum()
    }

    /// `∫ u^2 v^2`.
    pub fn cross(&self, other: &RadialField) -> Result<f64> {
        self.check(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((u, v), w)| u * u * v * v * w)
            .sum())
    }

    pub fn inner(&self, other: &RadialField) -> Result<f64> {
        self.check(other)?;
        Ok(self.grid.dot(&self.values, &other.values))
    }

    /// `Δu` as a field (zero on the Dirichlet node).
    pub fn laplacian(&self) -> RadialField {
        let mut v = self.grid.neg_laplacian(&self.values);
        v.iter_mut().for_each(|x| *x = -*x);
        RadialField { grid: self.grid.clone(), values: v }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|x| *x *= c);
    }

    /// Monotone cubic interpolant, even across the origin and zero past `R_max`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        let g = &self.grid;
        if r >= g.r_max() {
            return 0.0;
        }
        let i = g.interval(r);
        let x = g.nodes();
        let h = x[i + 1] - x[i];
        let t = (r - x[i]) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let d0 = self.slope(i) * h;
        let d1 = self.slope(i + 1) * h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1
    }

    /// Fritsch-Carlson node slope.
    fn slope(&self, i: usize) -> f64 {
        let x = self.grid.nodes();
        let y = &self.values;
        let n = y.len();
        if i == 0 {
            return 0.0;
        }
        let dl = (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
        if i == n - 1 {
            return dl;
        }
        let dr = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        if dl * dr <= 0.0 {
            return 0.0;
        }
        let hl = x[i] - x[i - 1];
        let hr = x[i + 1] - x[i];
        let w1 = 2.0 * hr + hl;
        let w2 = hr + 2.0 * hl;
        (w1 + w2) / (w1 / dl + w2 / dr)
    }

    /// Resamples `u` onto another grid.
    pub fn resample(&self, grid: Arc<RadialGrid>) -> RadialField {
        RadialField::from_fn(grid, |r| self.eval(r))
    }

    /// `s ⋆ u = e^{2s} u(e^s r)` resampled on the same grid.
    pub fn dilate(&self, s: f64) -> Result<RadialField> {
        if !s.is_finite() {
            return Err(NormcritError::Parameter(format!("dilation {s}")));
        }
        let g = &self.grid;
        let support = g.r_max() * (-s).exp();
        if support < g.nodes()[3] {
            return Err(NormcritError::Resolution(format!(
                "dilation by {s} leaves fewer than 4 nodes of support"
            )));
        }
        let amp = (2.0 * s).exp();
        let k = s.exp();
        Ok(RadialField::from_fn(g.clone(), |r| amp * self.eval(k * r)))
    }

    /// `s ⋆ u` represented exactly on the grid scaled by `e^{-s}`.
    pub fn dilate_exact(&self, s: f64) -> Result<RadialField> {
        let grid = self.grid.scaled((-s).exp())?;
        let amp = (2.0 * s).exp();
        Ok(RadialField { grid, values: self.values.iter().map(|v| amp * v).collect() })
    }

    /// `amp * u(x / stretch)` represented exactly on the grid scaled by `stretch`.
    pub fn rescale_exact(&self, amp: f64, stretch: f64) -> Result<RadialField> {
        let grid = self.grid.scaled(stretch)?;
        Ok(RadialField { grid, values: self.values.iter().map(|v| amp * v).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize, r: f64) -> Arc<RadialGrid> {
        GridSpec::new(n, r).build().unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(15, 1.0).build().is_err());
        assert!(GridSpec::new(64, 0.0).build().is_err());
        assert!(GridSpec::new(64, -1.0).build().is_err());
        assert!(GridSpec::graded(64, 1.0, 0.5).build().is_err());
    }

    #[test]
    fn weights_sum_to_ball_volume() {
        for spec in [GridSpec::new(16, 1.0), GridSpec::new(4096, 20.0), GridSpec::graded(999, 7.0, 2.0)] {
            let g = spec.build().unwrap();
            let total: f64 = g.weights().iter().sum();
            let exact = PI * PI * spec.r_max.powi(4) / 2.0;
            assert_relative_eq!(total, exact, max_relative = 1e-12);
            assert!(g.weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn graded_refines_origin() {
        let g = GridSpec::graded(200, 10.0, 2.0).build().unwrap();
        let r = g.nodes();
        assert!(r[1] - r[0] < r[199] - r[198]);
    }

    #[test]
    fn laplacian_of_r_squared_is_eight() {
        for spec in [GridSpec::new(64, 1.0), GridSpec::graded(300, 3.0, 2.0)] {
            let g = spec.build().unwrap();
            let vals: Vec<f64> = g.nodes().iter().map(|r| r * r).collect();
            let lap = g.neg_laplacian(&vals);
            for v in &lap[..g.len() - 2] {
                assert_relative_eq!(*v, -8.0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gradient_of_r_squared() {
        let g = grid(2048, 1.0);
        let vals: Vec<f64> = g.nodes().iter().map(|r| r * r).collect();
        assert_relative_eq!(g.dirichlet_form(&vals), 4.0 * PI * PI / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn shifted_solve_inverts_operator() {
        let g = GridSpec::graded(500, 6.0, 2.0).build().unwrap();
        let u = RadialField::from_fn(g.clone(), |r| (-r * r).exp());
        let lu = g.neg_laplacian(u.values());
        let rhs: Vec<f64> = lu.iter().zip(u.values()).map(|(a, b)| a + 0.3 * b).collect();
        let x = g.solve_shifted(0.3, &rhs);
        for (a, b) in x.iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn potential_solve_handles_indefinite_operator() {
        let g = GridSpec::new(400, 8.0).build().unwrap();
        let u = RadialField::from_fn(g.clone(), |r| (-r * r / 4.0).exp());
        let pot: Vec<f64> = g.nodes().iter().map(|r| 1.0 - 6.0 * (-r * r).exp()).collect();
        let lu = g.neg_laplacian(u.values());
        let rhs: Vec<f64> = lu.iter().zip(u.values()).zip(&pot).map(|((a, b), p)| a + p * b).collect();
        let x = g.solve_with_potential(&pot, &rhs);
        for (a, b) in x.iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_is_even() {
        let g = grid(128, 5.0);
        let u = RadialField::from_fn(g.clone(), |r| 1.0 / (1.0 + r * r));
        for (i, &r) in g.nodes().iter().enumerate() {
            assert_relative_eq!(u.eval(r), u.values()[i], epsilon = 1e-14);
        }
        assert_eq!(u.eval(-0.7), u.eval(0.7));
        assert_eq!(u.eval(6.0), 0.0);
    }

    #[test]
    fn exact_dilation_scales_norms() {
        let g = grid(1024, 10.0);
        let u = RadialField::from_fn(g, |r| (-r * r).exp());
        let s = 0.37;
        let d = u.dilate_exact(s).unwrap();
        assert_relative_eq!(d.mass(), u.mass(), max_relative = 1e-12);
        assert_relative_eq!(d.grad_sq(), (2.0 * s).exp() * u.grad_sq(), max_relative = 1e-12);
        assert_relative_eq!(d.lq(3.0), (2.0 * s).exp() * u.lq(3.0), max_relative = 1e-12);
        assert_relative_eq!(d.lq(4.0), (4.0 * s).exp() * u.lq(4.0), max_relative = 1e-12);
    }

    #[test]
    fn dilation_refuses_collapse() {
        let g = grid(64, 1.0);
        let u = RadialField::from_fn(g, |r| 1.0 - r);
        assert!(matches!(u.dilate(10.0), Err(NormcritError::Resolution(_))));
    }

    #[test]
    fn cross_rejects_mismatched_grids() {
        let a = RadialField::zeros(grid(64, 1.0));
        let b = RadialField::zeros(grid(64, 2.0));
        assert!(matches!(a.cross(&b), Err(NormcritError::GridMismatch)));
    }
}
