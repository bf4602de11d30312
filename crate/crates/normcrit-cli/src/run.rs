//! Command execution and exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use normcrit::asymptotics::{bubble_limit_check, ground_limit_check, AsymptoticsReport, LimitMode};
use normcrit::fiber::GeometryConstants;
use normcrit::functionals::Params;
use normcrit::profiles::{gamma_p, ProfileCache, SOBOLEV_SQ};
use normcrit::solvers::{
    geometry, nonexistence_probe, profile_constants, solve_local_min, solve_mountain_pass,
    solve_scalar_branch, sweep_masses, Branch, FailureKind, SolveResult, SweepEntry, PROFILE_GRID,
};
use normcrit::{NormcritError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{Command, Limit, RunConfig};
use crate::output::{enum_name, fmt17, write_json, write_profile, write_summary, Row};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

pub fn exit_code(e: &NormcritError) -> i32 {
    match e {
        NormcritError::Admissibility(_) | NormcritError::Geometry(_) => EXIT_REFUSED,
        NormcritError::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Constants of the model at the configured masses.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub params: Params,
    pub masses: (f64, f64),
    pub gamma_p: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    /// Best Sobolev constant `S`.
    pub sobolev: f64,
    pub coupled_sobolev_sq: Option<f64>,
    pub bubble_level: Option<f64>,
    /// Sharp Gagliardo-Nirenberg constant `C_p` and its `p`-th power.
    pub cp: f64,
    pub cp_pow: f64,
    pub w_l2: f64,
    /// Present for `p < 3`.
    pub geometry: Option<GeometryConstants>,
    pub geometry_holds: Option<bool>,
    /// `‖w₃‖₂ / α_i`, the `p = 3` mass thresholds.
    pub p3_thresholds: Option<(f64, f64)>,
}

pub fn constants(cfg: &RunConfig) -> Result<ConstantsReport> {
    let prm = cfg.params;
    let (a1, a2) = cfg.masses;
    let (w_mass, cp_pow) = profile_constants(prm.p)?;
    let coupled = prm.coupled().ok();
    let geometry = if prm.p < 3.0 { Some(geometry(&prm, a1, a2)?) } else { None };
    Ok(ConstantsReport {
        params: prm,
        masses: cfg.masses,
        gamma_p: gamma_p(prm.p),
        k1: coupled.map(|c| c.k1),
        k2: coupled.map(|c| c.k2),
        sobolev: SOBOLEV_SQ.sqrt(),
        coupled_sobolev_sq: coupled.map(|c| c.sobolev_sq()),
        bubble_level: coupled.map(|c| c.bubble_level()),
        cp: cp_pow.powf(1.0 / prm.p),
        cp_pow,
        w_l2: w_mass.sqrt(),
        geometry_holds: geometry.map(|g| g.holds()),
        geometry,
        p3_thresholds: (prm.p == 3.0).then(|| (w_mass.sqrt() / prm.alpha1, w_mass.sqrt() / prm.alpha2)),
    })
}

fn print_constants(c: &ConstantsReport) {
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_else(|| "-".into());
    let mut rows = vec![
        ("gamma_p", fmt17(c.gamma_p)),
        ("k1", opt(c.k1)),
        ("k2", opt(c.k2)),
        ("S", fmt17(c.sobolev)),
        ("S_coupled^2", opt(c.coupled_sobolev_sq)),
        ("bubble_level", opt(c.bubble_level)),
        ("C_p", fmt17(c.cp)),
        ("C_p^p", fmt17(c.cp_pow)),
        ("|w_p|_2", fmt17(c.w_l2)),
    ];
    if let Some(g) = &c.geometry {
        rows.extend([
            ("T", fmt17(g.t)),
            ("gamma1", fmt17(g.gamma1)),
            ("gamma0", fmt17(g.gamma0)),
            ("rho0", fmt17(g.rho0)),
            ("R0", opt(g.r0)),
            ("R1", opt(g.r1)),
            ("T<=gamma1", g.holds().to_string()),
        ]);
    }
    if let Some((t1, t2)) = c.p3_thresholds {
        rows.extend([("|w_3|_2/alpha1", fmt17(t1)), ("|w_3|_2/alpha2", fmt17(t2))]);
    }
    for (k, v) in rows {
        println!("{k}\t{v}");
    }
}

fn status(r: &SolveResult) -> i32 {
    if r.converged {
        EXIT_OK
    } else {
        EXIT_NONCONVERGENCE
    }
}

fn report_solve(cfg: &RunConfig, res: SolveResult) -> Result<i32> {
    let out = &cfg.output;
    write_json(&out.join("result.json"), &res)?;
    write_profile(&out.join(format!("profile_{}.tsv", enum_name(&res.branch))), &res.pair)?;
    println!(
        "{} converged={} energy={} lambda=({}, {}) pohozaev_rel={:.3e} residual_rel={:.3e}",
        enum_name(&res.branch),
        res.converged,
        fmt17(res.energy),
        fmt17(res.lambda1),
        fmt17(res.lambda2),
        res.pohozaev_relative(),
        res.residual_relative()
    );
    let code = status(&res);
    let masses = res.masses;
    write_summary(
        &out.join("summary.csv"),
        &[Row { index: 0, params: cfg.params, masses, outcome: Ok(res), distance: None }],
    )?;
    Ok(code)
}

fn sweep(cfg: &RunConfig) -> Result<i32> {
    let masses = cfg.path.masses(&cfg.params)?;
    let entries = sweep_masses(&cfg.params, &masses, cfg.mode, &cfg.solver, cfg.warm, cfg.threads());
    let out = &cfg.output;
    write_json(&out.join("result.json"), &entries)?;
    write_json(&out.join("sweep.json"), &entries)?;
    let mut rows = Vec::new();
    let mut code = EXIT_OK;
    for e in &entries {
        match &e.result {
            Ok(r) => {
                write_profile(&out.join(format!("profile_{:02}.tsv", e.index)), &r.pair)?;
                if !r.converged && code == EXIT_OK {
                    code = EXIT_NONCONVERGENCE;
                }
            }
            Err(f) => match f.kind {
                FailureKind::Admissibility | FailureKind::Geometry => code = EXIT_REFUSED,
                FailureKind::NonConvergence if code == EXIT_OK => code = EXIT_NONCONVERGENCE,
                FailureKind::Other if code == EXIT_OK => code = EXIT_USAGE,
                _ => {}
            },
        }
        let line = match &e.result {
            Ok(r) => format!("converged={} energy={}", r.converged, fmt17(r.energy)),
            Err(f) => format!("{}: {}", enum_name(&f.kind), f.message),
        };
        println!("[{}] a=({}, {}) {line}", e.index, e.a1, e.a2);
        rows.push(Row {
            index: e.index,
            params: e.params,
            masses: (e.a1, e.a2),
            outcome: e.result.clone(),
            distance: None,
        });
    }
    write_summary(&out.join("summary.csv"), &rows)?;
    Ok(code)
}

fn load_sweep(path: &Path) -> Result<Vec<SweepEntry>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| NormcritError::Format(format!("{}: {e}", path.display())))
}

pub fn asymptotics(entries: &[SweepEntry], limit: Limit) -> Result<AsymptoticsReport> {
    let ok: Vec<(Params, SolveResult)> = entries
        .iter()
        .filter_map(|e| e.result.as_ref().ok().map(|r| (e.params, r.clone())))
        .collect();
    let first = ok.first().ok_or_else(|| NormcritError::NotApplicable("no solved sweep points".into()))?;
    let limit = match limit {
        Limit::Auto if first.0.p == 3.0 => Limit::P3Threshold,
        Limit::Auto if first.1.branch == Branch::MountainPass => Limit::Bubble,
        Limit::Auto if first.0.p < 3.0 => Limit::SmallMass,
        Limit::Auto => Limit::LargeMass,
        l => l,
    };
    match limit {
        Limit::Bubble => bubble_limit_check(&ok),
        Limit::SmallMass => ground_limit_check(&ok, LimitMode::SmallMass),
        Limit::P3Threshold => ground_limit_check(&ok, LimitMode::P3Threshold),
        _ => ground_limit_check(&ok, LimitMode::LargeMass),
    }
}

fn asym(cfg: &RunConfig) -> Result<i32> {
    let entries = load_sweep(&cfg.input_path())?;
    let rep = asymptotics(&entries, cfg.limit)?;
    let out = &cfg.output;
    write_json(&out.join("result.json"), &rep)?;
    let mut rows = Vec::new();
    for (i, step) in rep.steps.iter().enumerate() {
        let hit = rep.sequence.iter().find(|(_, r)| r.masses == (step.a1, step.a2));
        if let Some((prm, res)) = hit {
            write_profile(&out.join(format!("profile_{i:02}.tsv")), &res.pair)?;
            rows.push(Row {
                index: i,
                params: *prm,
                masses: res.masses,
                outcome: Ok(res.clone()),
                distance: Some(step.distance),
            });
        }
    }
    write_summary(&out.join("summary.csv"), &rows)?;
    println!("regime {}", enum_name(&rep.regime));
    for (s, d) in rep.steps.iter().zip(&rep.distances) {
        println!("a=({}, {}) distance={}", s.a1, s.a2, fmt17(*d));
    }
    println!(
        "distance trend: strictly decreasing {}, final {:.3e}, pass {}",
        rep.distance_trend.strictly_decreasing, rep.distance_trend.final_value, rep.distance_trend.pass
    );
    if let Some(g) = &rep.gap_trend {
        println!("energy gap trend: strictly decreasing {}, final {:.3e}, pass {}", g.strictly_decreasing, g.final_value, g.pass);
    }
    for f in &rep.fitted_rates {
        println!("rate {}: slope {:.6} (expected {:?}, 95% ci [{:.6}, {:.6}])", f.quantity, f.slope, f.expected, f.ci95.0, f.ci95.1);
    }
    for s in &rep.skipped {
        println!("skipped: {s}");
    }
    Ok(EXIT_OK)
}

fn probe(cfg: &RunConfig) -> Result<i32> {
    let (a1, a2) = cfg.masses;
    let rep = nonexistence_probe(&cfg.params, a1, a2, &cfg.solver)?;
    write_json(&cfg.output.join("result.json"), &rep)?;
    write_summary(&cfg.output.join("summary.csv"), &[])?;
    println!(
        "iterations={} converged_positive={} near_critical={} flagged={} final_energy={}",
        rep.iterations,
        rep.converged_positive,
        rep.near_critical,
        rep.flagged,
        fmt17(rep.final_energy)
    );
    Ok(EXIT_OK)
}

/// Runs the configured command and returns the exit status.
pub fn execute(cfg: &RunConfig) -> Result<i32> {
    let command = cfg
        .command
        .ok_or_else(|| NormcritError::Parameter("no command given".into()))?;
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let (a1, a2) = cfg.masses;
    match command {
        Command::Constants => {
            let c = constants(cfg)?;
            write_json(&cfg.output.join("result.json"), &c)?;
            write_summary(&cfg.output.join("summary.csv"), &[])?;
            print_constants(&c);
            Ok(EXIT_OK)
        }
        Command::Scalar => {
            let prm = &cfg.params;
            let res = solve_scalar_branch(prm.p, prm.mu1, prm.alpha1, a1, cfg.side, &cfg.solver)?;
            report_solve(cfg, res)
        }
        Command::Ground => report_solve(cfg, solve_local_min(&cfg.params, a1, a2, &cfg.solver)?),
        Command::Mp => report_solve(cfg, solve_mountain_pass(&cfg.params, a1, a2, &cfg.solver)?),
        Command::Sweep => sweep(cfg),
        Command::Asym => asym(cfg),
        Command::Probe => probe(cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheAction {
    List,
    Clear,
    Warm,
}

/// Lists, clears or fills the profile cache in `dir`.
pub fn cache_admin(dir: PathBuf, action: CacheAction, ps: &[f64]) -> Result<i32> {
    let cache = ProfileCache::on_disk(dir);
    match action {
        CacheAction::List => {
            println!("file\tp\tN\tRmax\tmass\tgrad_sq\tlp");
            for f in cache.list()? {
                let text = fs::read_to_string(&f)?;
                let meta = text.lines().nth(1).unwrap_or("#").trim_start_matches('#').trim();
                let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                println!("{name}\t{}", meta.split_whitespace().collect::<Vec<_>>().join("\t"));
            }
        }
        CacheAction::Clear => println!("removed {} files", cache.clear()?),
        CacheAction::Warm => {
            for &p in ps {
                let prof = cache.get(p, PROFILE_GRID)?;
                println!("p = {p}: |w_p|_2^2 = {}", fmt17(prof.mass));
            }
        }
    }
    Ok(EXIT_OK)
}
