//! Reference profiles: the Aubin-Talenti bubble, its cutoff, and the scalar
//! ground state `w_p` of `-Δw + w = w^{p-1}` with its Gagliardo-Nirenberg
//! constant.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{NormcritError, Result};
use crate::grid::{GridSpec, Mapping, RadialField, RadialGrid};

/// `S^2 = ‖∇U‖^2 = ‖U‖_4^4 = 32π²/3`.
pub const SOBOLEV_SQ: f64 = 32.0 * PI * PI / 3.0;

/// Sharp Sobolev constant `S` in `S ‖u‖_4^2 ≤ ‖∇u‖^2`.
pub fn sobolev_constant() -> f64 {
    SOBOLEV_SQ.sqrt()
}

/// `U_ε(r) = 2√2 ε / (ε² + r²)`, solving `-ΔU = U^3`.
pub fn bubble(eps: f64, r: f64) -> f64 {
    2.0 * 2f64.sqrt() * eps / (eps * eps + r * r)
}

pub fn bubble_field(grid: Arc<RadialGrid>, eps: f64) -> RadialField {
    RadialField::from_fn(grid, |r| bubble(eps, r))
}

/// Smooth radial cutoff: 1 on `[0, ρ]`, 0 beyond `2ρ`, `C^2` in between.
pub fn cutoff(rho: f64, r: f64) -> f64 {
    if r <= rho {
        1.0
    } else if r >= 2.0 * rho {
        0.0
    } else {
        let t = (r - rho) / rho;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// `W_ε = φ U_ε` with the cutoff radius `ρ`.
pub fn cutoff_bubble_field(grid: Arc<RadialGrid>, eps: f64, rho: f64) -> RadialField {
    RadialField::from_fn(grid, |r| cutoff(rho, r) * bubble(eps, r))
}

/// Quadrature of the bubble: `‖∇U‖^2`, `‖U‖_4^4` and the Sobolev quotient.
#[derive(Clone, Copy, Debug)]
pub struct BubbleQuadrature {
    pub grad_sq: f64,
    pub l4: f64,
    /// `‖∇U‖^2 / ‖U‖_4^2`, an approximation of `S`.
    pub quotient: f64,
}

/// Integrates over the ball of radius `R_max` without the Dirichlet clamp.
pub fn bubble_quadrature(grid: Arc<RadialGrid>, eps: f64) -> BubbleQuadrature {
    let raw: Vec<f64> = grid.nodes().iter().map(|&r| bubble(eps, r)).collect();
    let grad_sq = grid.dirichlet_form(&raw);
    let l4 = raw.iter().zip(grid.weights()).map(|(u, w)| u.powi(4) * w).sum();
    BubbleQuadrature { grad_sq, l4, quotient: grad_sq / l4.sqrt() }
}

/// `|u|^{q-2} u` with the magnitude clamped away from zero.
#[inline]
pub fn signed_pow(u: f64, q: f64) -> f64 {
    u.signum() * u.abs().max(1e-300).powf(q - 1.0)
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 2.0 && p < 4.0 {
        Ok(())
    } else {
        Err(NormcritError::Parameter(format!("p = {p} outside (2, 4)")))
    }
}

const SHOOT_STEP: f64 = 2e-3;
const SHOOT_END: f64 = 60.0;
const SHOOT_START: f64 = 1e-4;

enum Shot {
    Crossed,
    Turned,
    Undecided,
}

struct Trajectory {
    w: Vec<f64>,
    dw: Vec<f64>,
    outcome: Shot,
}

fn rhs(p: f64, r: f64, w: f64, dw: f64) -> f64 {
    -3.0 * dw / r + w - signed_pow(w, p)
}

fn integrate(p: f64, b: f64, keep: bool) -> Trajectory {
    let h = SHOOT_STEP;
    let c = (b - b.powf(p - 1.0)) / 8.0;
    let mut r = SHOOT_START;
    let mut w = b + c * r * r;
    let mut dw = 2.0 * c * r;
    let mut ws = Vec::new();
    let mut dws = Vec::new();
    if keep {
        ws.push(b);
        dws.push(0.0);
    }
    // First step lands on r = h so that stored samples sit on a uniform grid.
    let mut step = h - SHOOT_START;
    let steps = (SHOOT_END / h) as usize;
    for _ in 0..steps {
        let k1w = dw;
        let k1d = rhs(p, r, w, dw);
        let k2w = dw + 0.5 * step * k1d;
        let k2d = rhs(p, r + 0.5 * step, w + 0.5 * step * k1w, dw + 0.5 * step * k1d);
        let k3w = dw + 0.5 * step * k2d;
        let k3d = rhs(p, r + 0.5 * step, w + 0.5 * step * k2w, dw + 0.5 * step * k2d);
        let k4w = dw + step * k3d;
        let k4d = rhs(p, r + step, w + step * k3w, dw + step * k3d);
        w += step / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        dw += step / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        r += step;
        step = h;
        if keep {
            ws.push(w);
            dws.push(dw);
        }
        if w < 0.0 {
            return Trajectory { w: ws, dw: dws, outcome: Shot::Crossed };
        }
        if dw > 0.0 {
            return Trajectory { w: ws, dw: dws, outcome: Shot::Turned };
        }
    }
    Trajectory { w: ws, dw: dws, outcome: Shot::Undecided }
}

/// Shooting solution of the profile ODE, trusted up to `r_trust` and
/// continued by the linear decay law beyond.
#[derive(Clone, Debug)]
pub struct Shooting {
    pub p: f64,
    /// `w(0)`.
    pub center: f64,
    pub r_trust: f64,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl Shooting {
    pub fn new(p: f64) -> Result<Self> {
        check_exponent(p)?;
        let mut lo = 1.0;
        let mut hi = 2.0;
        let mut tries = 0;
        loop {
            match integrate(p, hi, false).outcome {
                Shot::Crossed => break,
                _ => {
                    lo = hi;
                    hi *= 2.0;
                }
            }
            tries += 1;
            if tries > 60 {
                return Err(NormcritError::NoSignChange(format!(
                    "no overshooting center found for p = {p}"
                )));
            }
        }
        if !matches!(integrate(p, lo, false).outcome, Shot::Turned | Shot::Undecided) {
            return Err(NormcritError::NoSignChange(format!("lower center {lo} overshoots")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match integrate(p, mid, false).outcome {
                Shot::Crossed => hi = mid,
                _ => lo = mid,
            }
        }
        let a = integrate(p, lo, true);
        let b = integrate(p, hi, true);
        let len = a.w.len().min(b.w.len());
        let mut trust = 0;
        for i in 1..len {
            let mean = 0.5 * (a.w[i] + b.w[i]);
            if mean <= 0.0 || (a.w[i] - b.w[i]).abs() > 1e-7 * mean {
                break;
            }
            trust = i;
        }
        if trust < 10 {
            return Err(NormcritError::NoSignChange(format!("shooting failed to resolve p = {p}")));
        }
        let w: Vec<f64> = (0..=trust).map(|i| 0.5 * (a.w[i] + b.w[i])).collect();
        let dw: Vec<f64> = (0..=trust).map(|i| 0.5 * (a.dw[i] + b.dw[i])).collect();
        Ok(Shooting { p, center: 0.5 * (lo + hi), r_trust: trust as f64 * SHOOT_STEP, w, dw })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        let h = SHOOT_STEP;
        if r >= self.r_trust {
            let wt = *self.w.last().unwrap();
            return wt * (self.r_trust / r).powf(1.5) * (-(r - self.r_trust)).exp();
        }
        let i = ((r / h) as usize).min(self.w.len() - 2);
        let t = (r - i as f64 * h) / h;
        let (y0, y1) = (self.w[i], self.w[i + 1]);
        let (d0, d1) = (self.dw[i] * h, self.dw[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1
    }
}

/// `w_p` resolved on a grid, with its norms.
#[derive(Clone, Debug)]
pub struct ScalarProfile {
    pub p: f64,
    pub field: RadialField,
    /// `w(0)` from the shooting solution.
    pub center: f64,
    pub mass: f64,
    pub grad_sq: f64,
    pub lp: f64,
    /// `‖-Δw + w - w^{p-1}‖ / ‖w‖` on the grid.
    pub residual: f64,
}

impl ScalarProfile {
    /// Shoots for `w_p`, samples it and polishes with Newton on the grid.
    pub fn solve(p: f64, grid: Arc<RadialGrid>) -> Result<Self> {
        let shot = shooting(p)?;
        let guess = RadialField::from_fn(grid, |r| shot.eval(r));
        Self::polish(p, guess, shot.center)
    }

    /// Newton iteration for the discrete equation, starting from `guess`.
    pub fn polish(p: f64, guess: RadialField, center: f64) -> Result<Self> {
        check_exponent(p)?;
        let grid = guess.grid().clone();
        let mut w = guess.into_values();
        let mut residual = f64::INFINITY;
        for _ in 0..60 {
            let f = profile_residual(&grid, p, &w);
            let norm = grid.dot(&w, &w).sqrt();
            residual = grid.dot(&f, &f).sqrt() / norm;
            if residual < 1e-13 {
                break;
            }
            let pot: Vec<f64> =
                w.iter().map(|&x| 1.0 - (p - 1.0) * x.abs().max(1e-300).powf(p - 2.0)).collect();
            let neg: Vec<f64> = f.iter().map(|x| -x).collect();
            let delta = grid.solve_with_potential(&pot, &neg);
            for (x, d) in w.iter_mut().zip(&delta) {
                *x += d;
            }
        }
        let field = RadialField::new(grid.clone(), w)?;
        let f = profile_residual(&grid, p, field.values());
        residual = residual.min(grid.dot(&f, &f).sqrt() / field.mass().sqrt());
        if !(residual < 1e-7) || field.values()[..grid.len() - 1].iter().any(|&x| x <= 0.0) {
            return Err(NormcritError::NonConvergence { iterations: 60, residual });
        }
        Ok(ScalarProfile {
            p,
            center,
            mass: field.mass(),
            grad_sq: field.grad_sq(),
            lp: field.lq(p),
            residual,
            field,
        })
    }

    /// `γ_p = 2(p-2)/p`.
    pub fn gamma(&self) -> f64 {
        gamma_p(self.p)
    }

    /// `C_p^p` from the optimality of `w_p` in the Gagliardo-Nirenberg inequality.
    pub fn gn_constant_pow(&self) -> f64 {
        let p = self.p;
        self.lp / (self.grad_sq.powf(p - 2.0) * self.mass.powf((4.0 - p) / 2.0))
    }

    pub fn gn_constant(&self) -> f64 {
        self.gn_constant_pow().powf(1.0 / self.p)
    }

    /// `‖w_p‖_2`.
    pub fn l2(&self) -> f64 {
        self.mass.sqrt()
    }

    /// Values of the profile at the nodes of another grid, by interpolation.
    pub fn sample_on(&self, grid: Arc<RadialGrid>) -> RadialField {
        self.field.resample(grid)
    }
}

/// `γ_p = 2(p-2)/p`.
pub fn gamma_p(p: f64) -> f64 {
    2.0 * (p - 2.0) / p
}

fn profile_residual(grid: &RadialGrid, p: f64, w: &[f64]) -> Vec<f64> {
    let mut f = grid.neg_laplacian(w);
    let n = f.len();
    for i in 0..n - 1 {
        f[i] += w[i] - signed_pow(w[i], p);
    }
    f
}

/// Memoized [`Shooting::new`].
pub fn shooting(p: f64) -> Result<Arc<Shooting>> {
    static SHOTS: OnceLock<Mutex<HashMap<u64, Arc<Shooting>>>> = OnceLock::new();
    let map = SHOTS.get_or_init(Default::default);
    if let Some(s) = map.lock().unwrap().get(&p.to_bits()) {
        return Ok(s.clone());
    }
    let s = Arc::new(Shooting::new(p)?);
    map.lock().unwrap().insert(p.to_bits(), s.clone());
    Ok(s)
}

static GLOBAL: OnceLock<ProfileCache> = OnceLock::new();

/// Memoizes scalar profiles in memory and, optionally, as TSV files.
#[derive(Debug, Default)]
pub struct ProfileCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<(u64, u64, usize, u64), Arc<ScalarProfile>>>,
}

impl ProfileCache {
    pub fn in_memory() -> Self {
        ProfileCache { dir: None, mem: Mutex::default() }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        ProfileCache { dir: Some(dir.into()), mem: Mutex::default() }
    }

    /// Directory from `NORMCRIT_CACHE`, else `./cache`.
    pub fn default_dir() -> PathBuf {
        std::env::var_os("NORMCRIT_CACHE").map(PathBuf::from).unwrap_or_else(|| "cache".into())
    }

    /// Process-wide cache, in memory unless [`ProfileCache::install_global`] ran first.
    pub fn global() -> &'static ProfileCache {
        GLOBAL.get_or_init(ProfileCache::in_memory)
    }

    /// Makes `cache` the process-wide cache. Fails once `global` has been used.
    pub fn install_global(cache: ProfileCache) -> bool {
        GLOBAL.set(cache).is_ok()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, p: f64, spec: GridSpec) -> Result<Arc<ScalarProfile>> {
        check_exponent(p)?;
        let key = (p.to_bits(), spec.r_max.to_bits(), spec.n, mapping_key(spec.mapping));
        if let Some(hit) = self.mem.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let grid = spec.build()?;
        let path = self.dir.as_ref().map(|d| d.join(file_name(p, spec)));
        let loaded = path.as_ref().and_then(|f| read_profile(f, p, grid.clone()).ok());
        let profile = match loaded {
            Some(prof) => prof,
            None => {
                let prof = ScalarProfile::solve(p, grid)?;
                if let Some(f) = &path {
                    write_profile(f, &prof)?;
                }
                prof
            }
        };
        let profile = Arc::new(profile);
        self.mem.lock().unwrap().insert(key, profile.clone());
        Ok(profile)
    }

    /// Cached profile files in the directory.
    pub fn list(&self) -> Result<Vec<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(Vec::new()) };
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("wp_") && n.ends_with(".tsv"))
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Removes cached files and the in-memory entries; returns the file count.
    pub fn clear(&self) -> Result<usize> {
        self.mem.lock().unwrap().clear();
        let files = self.list()?;
        for f in &files {
            fs::remove_file(f)?;
        }
        Ok(files.len())
    }
}

fn mapping_key(m: Mapping) -> u64 {
    match m {
        Mapping::Uniform => 0,
        Mapping::Graded { exponent } => exponent.to_bits(),
        Mapping::Geometric { r_min } => r_min.to_bits() ^ 1,
    }
}

/// `wp_p<p>_N<N>_R<Rmax>.tsv`, with `_g<exponent>` for graded grids and
/// `_m<r_min>` for geometric ones.
pub fn file_name(p: f64, spec: GridSpec) -> String {
    match spec.mapping {
        Mapping::Uniform => format!("wp_p{}_N{}_R{}.tsv", p, spec.n, spec.r_max),
        Mapping::Graded { exponent } => {
            format!("wp_p{}_N{}_R{}_g{}.tsv", p, spec.n, spec.r_max, exponent)
        }
        Mapping::Geometric { r_min } => {
            format!("wp_p{}_N{}_R{}_m{}.tsv", p, spec.n, spec.r_max, r_min)
        }
    }
}

pub fn write_profile(path: &Path, prof: &ScalarProfile) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let spec = prof.field.grid().spec();
    let mut out = String::new();
    out.push_str("# p N Rmax mass grad_sq lp\n");
    out.push_str(&format!(
        "# {:.16e} {} {:.16e} {:.16e} {:.16e} {:.16e}\n",
        prof.p, spec.n, spec.r_max, prof.mass, prof.grad_sq, prof.lp
    ));
    for (r, w) in prof.field.grid().nodes().iter().zip(prof.field.values()) {
        out.push_str(&format!("{r:.16e}\t{w:.16e}\n"));
    }
    let tmp = path.with_extension("tsv.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(out.as_bytes())?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_profile(path: &Path, p: f64, grid: Arc<RadialGrid>) -> Result<ScalarProfile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |m: &str| NormcritError::Format(format!("{}: {m}", path.display()));
    if lines.next().map(str::trim) != Some("# p N Rmax mass grad_sq lp") {
        return Err(bad("missing header"));
    }
    let meta: Vec<f64> = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| bad("missing metadata"))?
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad("metadata not numeric")))
        .collect::<Result<_>>()?;
    if meta.len() != 6 {
        return Err(bad("metadata needs 6 fields"));
    }
    if meta[0] != p || meta[1] as usize != grid.len() || meta[2] != grid.r_max() {
        return Err(bad("profile keyed to another grid"));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (line, &r) in lines.zip(grid.nodes()) {
        let mut it = line.split('\t');
        let rr: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad row"))?;
        let w: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad row"))?;
        if (rr - r).abs() > 1e-12 * grid.r_max() {
            return Err(bad("node mismatch"));
        }
        values.push(w);
    }
    if values.len() != grid.len() {
        return Err(bad("truncated profile"));
    }
    let field = RadialField::new(grid.clone(), values)?;
    let f = profile_residual(&grid, p, field.values());
    let residual = grid.dot(&f, &f).sqrt() / field.mass().sqrt();
    if !(residual < 1e-7) {
        return Err(bad("stored profile does not solve the equation"));
    }
    Ok(ScalarProfile {
        p,
        center: field.values()[0],
        mass: field.mass(),
        grad_sq: field.grad_sq(),
        lp: field.lq(p),
        residual,
        field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent oracle: shoot `(w, r^3 w')` with a halved step and report `w(0)`.
    fn oracle_center(p: f64) -> f64 {
        let run = |b: f64| -> i32 {
            let h = 5e-4;
            let c = (b - b.powf(p - 1.0)) / 8.0;
            let mut r: f64 = 1e-3;
            let mut w = b + c * r * r;
            let mut q = 2.0 * c * r.powi(4);
            let f = |r: f64, w: f64, q: f64| (q / r.powi(3), r.powi(3) * (w - w.abs().powf(p - 1.0)));
            while r < 50.0 {
                let (a1, b1) = f(r, w, q);
                let (a2, b2) = f(r + h / 2.0, w + h / 2.0 * a1, q + h / 2.0 * b1);
                let (a3, b3) = f(r + h / 2.0, w + h / 2.0 * a2, q + h / 2.0 * b2);
                let (a4, b4) = f(r + h, w + h * a3, q + h * b3);
                w += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                q += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
                r += h;
                if w < 0.0 {
                    return 1;
                }
                if q > 0.0 {
                    return -1;
                }
            }
            0
        };
        let (mut lo, mut hi) = (1.0, 64.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if run(mid) > 0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn bubble_quadrature_matches_sobolev() {
        let g = GridSpec::graded(8192, 400.0, 2.0).build().unwrap();
        let q = bubble_quadrature(g, 1.0);
        assert_relative_eq!(q.grad_sq, SOBOLEV_SQ, max_relative = 5e-3);
        assert_relative_eq!(q.l4, SOBOLEV_SQ, max_relative = 5e-3);
    }

    #[test]
    fn cutoff_is_smooth_step() {
        assert_eq!(cutoff(1.0, 0.5), 1.0);
        assert_eq!(cutoff(1.0, 2.5), 0.0);
        assert_relative_eq!(cutoff(1.0, 1.5), 0.5, epsilon = 1e-15);
        assert!(cutoff(1.0, 1.2) > cutoff(1.0, 1.8));
    }

    #[test]
    fn shooting_center_matches_oracle() {
        for p in [2.3, 3.0, 3.5] {
            let s = Shooting::new(p).unwrap();
            assert_relative_eq!(s.center, oracle_center(p), max_relative = 1e-6);
        }
    }

    #[test]
    fn profile_identities() {
        let g = GridSpec::new(4096, 20.0).build().unwrap();
        for p in [2.5, 3.0, 3.5] {
            let w = ScalarProfile::solve(p, g.clone()).unwrap();
            assert!(w.residual < 1e-7);
            // Testing the equation with w itself is exact on the grid.
            assert_relative_eq!(w.grad_sq + w.mass, w.lp, max_relative = 1e-10);
            assert_relative_eq!(w.grad_sq, gamma_p(p) * w.lp, max_relative = 1e-3);
            assert_relative_eq!(w.mass, (4.0 - p) / p * w.lp, max_relative = 1e-3);
            assert_relative_eq!(w.field.values()[0], w.center, max_relative = 1e-3);
            let min_step = w.field.values().windows(2).all(|x| x[1] <= x[0]);
            assert!(min_step, "profile not monotone for p = {p}");
        }
    }

    #[test]
    fn rejects_exponent_outside_range() {
        let g = GridSpec::new(64, 5.0).build().unwrap();
        assert!(ScalarProfile::solve(2.0, g.clone()).is_err());
        assert!(ScalarProfile::solve(4.0, g).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(1024, 15.0);
        let cache = ProfileCache::on_disk(dir.path());
        let a = cache.get(2.5, spec).unwrap();
        let files = cache.list().unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("wp_p2.5_N1024_R15.tsv"));
        let fresh = ProfileCache::on_disk(dir.path());
        let b = fresh.get(2.5, spec).unwrap();
        assert_eq!(a.field.values(), b.field.values());
        assert_eq!(fresh.clear().unwrap(), 1);
        assert!(fresh.list().unwrap().is_empty());
    }
}
