//! Artifacts written by every command.

use std::fs;
use std::path::Path;

use normcrit::functionals::{Pair, Params};
use normcrit::solvers::{Failure, SolveResult};
use normcrit::{NormcritError, Result};
use serde::Serialize;

/// Columns of `summary.csv`, in order.
pub const SUMMARY_COLUMNS: [&str; 24] = [
    "index",
    "branch",
    "p",
    "mu1",
    "mu2",
    "alpha1",
    "alpha2",
    "beta",
    "a1",
    "a2",
    "converged",
    "energy",
    "lambda1",
    "lambda2",
    "grad_sq",
    "pohozaev_relative",
    "residual_relative",
    "identity_error",
    "mass_error1",
    "mass_error2",
    "iterations",
    "newton_steps",
    "distance",
    "status",
];

/// Help text describing the columns.
pub const SUMMARY_HELP: &str = "\
summary.csv columns (floats with 17 significant digits, empty when not applicable):
  index              position in the run (sweep step, or 0)
  branch             ground_plus | mountain_pass | scalar_plus | scalar_minus
  p mu1 mu2 alpha1 alpha2 beta   model coefficients
  a1 a2              prescribed L2 norms
  converged          true | false
  energy             I(u, v)
  lambda1 lambda2    Lagrange multipliers
  grad_sq            |grad u|^2 + |grad v|^2
  pohozaev_relative  |P| / (1 + grad_sq)
  residual_relative  constrained gradient norm / (1 + sqrt(grad_sq))
  identity_error     relative error of lambda1 a1^2 + lambda2 a2^2 = (1 - gamma_p)(alpha1 |u|_p^p + alpha2 |v|_p^p)
  mass_error1 mass_error2   relative mass errors
  iterations newton_steps   descent iterations and Newton steps
  distance           distance to the limit profile (asym only)
  status             ok | nonconvergence | admissibility | geometry | other";

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of `summary.csv`.
#[derive(Clone, Debug)]
pub struct Row {
    pub index: usize,
    pub params: Params,
    pub masses: (f64, f64),
    pub outcome: std::result::Result<SolveResult, Failure>,
    pub distance: Option<f64>,
}

impl Row {
    fn record(&self) -> Vec<String> {
        let prm = &self.params;
        let mut rec = vec![self.index.to_string()];
        let branch = self.outcome.as_ref().map(|r| enum_name(&r.branch)).unwrap_or_default();
        rec.push(branch);
        for x in [prm.p, prm.mu1, prm.mu2, prm.alpha1, prm.alpha2, prm.beta, self.masses.0, self.masses.1] {
            rec.push(fmt17(x));
        }
        match &self.outcome {
            Ok(r) => {
                rec.push(r.converged.to_string());
                for x in [
                    r.energy,
                    r.lambda1,
                    r.lambda2,
                    r.grad_sq(),
                    r.pohozaev_relative(),
                    r.residual_relative(),
                    r.identity_error(),
                    r.mass_error.0,
                    r.mass_error.1,
                ] {
                    rec.push(fmt17(x));
                }
                rec.push(r.iterations.to_string());
                rec.push(r.newton_steps.to_string());
            }
            Err(_) => {
                rec.push("false".into());
                rec.extend(vec![String::new(); 11]);
            }
        }
        rec.push(self.distance.map(fmt17).unwrap_or_default());
        let status = match &self.outcome {
            Ok(r) if r.converged => "ok".to_string(),
            Ok(_) => "nonconvergence".to_string(),
            Err(f) => enum_name(&f.kind),
        };
        rec.push(status);
        rec
    }
}

/// Serialized name of a unit enum variant.
pub fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(String::from)).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> NormcritError {
    NormcritError::Format(e.to_string())
}

pub fn write_summary(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `r u v` columns, tab separated, with a header line.
pub fn write_profile(path: &Path, pair: &Pair) -> Result<()> {
    let mut out = String::from("# r\tu\tv\n");
    let nodes = pair.u.grid().nodes();
    for ((r, u), v) in nodes.iter().zip(pair.u.values()).zip(pair.v.values()) {
        out.push_str(&format!("{}\t{}\t{}\n", fmt17(*r), fmt17(*u), fmt17(*v)));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| NormcritError::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [1.0 / 3.0, -2.0f64.sqrt(), 6.02214076e23, 1e-300] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn help_names_every_column() {
        for c in SUMMARY_COLUMNS {
            assert!(SUMMARY_HELP.contains(c), "{c}");
        }
    }
}
