//! Error norms against exact solutions and mesh-convergence studies.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point, TensorBasis};
use crate::problems::ProblemSpec;
use crate::quadrature::tensor_rule;
use crate::time_integration::{run_simulation, SolverConfig};
use crate::transport::evaluate_param;

/// `(L1, L∞)` error of a discrete field. L¹ uses the mesh quadrature; L∞ is
/// the maximum over a `sample_n × sample_n` uniform parametric grid.
pub fn error_norms(
    disc: &Discretization,
    coeffs: &[f64],
    exact: impl Fn(Point) -> f64 + Sync,
    sample_n: usize,
) -> Result<(f64, f64)> {
    if sample_n < 2 {
        return Err(Error::Argument(format!("sample grid needs at least 2 points, got {sample_n}")));
    }
    let quad = disc.quad();
    let mut uq = vec![0.0; quad.len()];
    disc.eval_at_quadrature(coeffs, &mut uq);
    let l1: f64 = (0..quad.len())
        .into_par_iter()
        .map(|q| quad.jxw(q) * (uq[q] - exact(quad.point(q))).abs())
        .sum();
    let geo = disc.mesh().geometry();
    let (u0, u1) = (geo.kv_u().first(), geo.kv_u().last());
    let (v0, v1) = (geo.kv_v().first(), geo.kv_v().last());
    let linf = (0..sample_n * sample_n)
        .into_par_iter()
        .map_init(TensorBasis::default, |basis, k| -> Result<f64> {
            let (i, j) = (k % sample_n, k / sample_n);
            let xi = u0 + (u1 - u0) * i as f64 / (sample_n - 1) as f64;
            let eta = v0 + (v1 - v0) * j as f64 / (sample_n - 1) as f64;
            let x = geo.surface_eval(xi, eta)?;
            Ok((evaluate_param(disc, coeffs, [xi, eta], basis) - exact(x)).abs())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    Ok((l1, linf))
}

/// Time-step selection for convergence studies, as a function of the mesh
/// size `h` and degree `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtRule {
    /// `Δt = c h^{(p+1)/2}`.
    Power { c: f64 },
    /// `Δt = c h`.
    Linear { c: f64 },
    Fixed(f64),
}

impl Default for DtRule {
    fn default() -> Self {
        DtRule::Power { c: 0.1 }
    }
}

impl DtRule {
    pub fn dt(&self, h: f64, degree: usize) -> f64 {
        match *self {
            DtRule::Power { c } => c * h.powf((degree as f64 + 1.0) / 2.0),
            DtRule::Linear { c } => c * h,
            DtRule::Fixed(dt) => dt,
        }
    }
}

impl fmt::Display for DtRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DtRule::Power { c } => write!(f, "power:{c}"),
            DtRule::Linear { c } => write!(f, "linear:{c}"),
            DtRule::Fixed(dt) => write!(f, "fixed:{dt}"),
        }
    }
}

impl FromStr for DtRule {
    type Err = Error;

    /// `default`, `power:C`, `linear:C` or `fixed:DT`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "default" {
            return Ok(DtRule::default());
        }
        let bad = || Error::Argument(format!("invalid dt rule `{s}` (expected default, power:C, linear:C or fixed:DT)"));
        let (name, value) = s.split_once(':').ok_or_else(bad)?;
        let c: f64 = value.parse().map_err(|_| bad())?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(bad());
        }
        match name {
            "power" => Ok(DtRule::Power { c }),
            "linear" => Ok(DtRule::Linear { c }),
            "fixed" => Ok(DtRule::Fixed(c)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub degree: usize,
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub l1: f64,
    pub linf: f64,
}

/// Errors per (degree, mesh) with least-squares slopes of log error
/// against log h.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    pub fn degrees(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.rows.iter().map(|r| r.degree).collect();
        d.dedup();
        d
    }

    /// `(L1 slope, L∞ slope)` for one degree.
    pub fn slopes(&self, degree: usize) -> Option<(f64, f64)> {
        let rows: Vec<&ErrorRow> = self.rows.iter().filter(|r| r.degree == degree).collect();
        if rows.len() < 2 {
            return None;
        }
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let l1: Vec<f64> = rows.iter().map(|r| r.l1).collect();
        let linf: Vec<f64> = rows.iter().map(|r| r.linf).collect();
        Some((fit_slope(&h, &l1), fit_slope(&h, &linf)))
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>3} {:>5} {:>12} {:>12} {:>12} {:>12}", "p", "N", "h", "dt", "L1", "Linf")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>3} {:>5} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}",
                r.degree, r.n, r.h, r.dt, r.l1, r.linf
            )?;
        }
        for p in self.degrees() {
            if let Some((s1, si)) = self.slopes(p) {
                writeln!(f, "p = {p}: slope L1 = {s1:.3}, slope Linf = {si:.3}")?;
            }
        }
        Ok(())
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fit_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Error of one run of a problem with an exact solution on an `n × n` mesh,
/// measured on the first component at `t_end`.
pub fn run_error(problem: &ProblemSpec, degree: usize, n: usize, dt: f64, t_end: f64) -> Result<ErrorRow> {
    if !problem.has_exact() {
        return Err(Error::Argument(format!("problem {} has no exact solution", problem.kind)));
    }
    let patch = crate::geometry::preset_geometry(problem.geometry)?;
    let mesh = Mesh::new(patch, degree, n, n)?;
    let disc = Discretization::new(mesh, tensor_rule(degree + 1, degree + 1)?)?;
    let config = SolverConfig::new(problem, dt, t_end);
    let dt_used = config.effective_dt();
    let result = run_simulation(problem, &disc, config, &mut |_| Ok(()))?;
    let t = result.state.t;
    let (l1, linf) = error_norms(
        &disc,
        &result.state.u,
        |x| problem.exact(x, t).expect("checked above").0,
        4 * n + 1,
    )?;
    Ok(ErrorRow {
        degree,
        n,
        h: 1.0 / n as f64,
        dt: dt_used,
        l1,
        linf,
    })
}

/// Runs every (degree, mesh) pair to `t = 1` and collects the errors. The
/// mesh size is `h = 1/N`; the time step rule sees the physical element
/// width of the domain.
pub fn convergence_study(problem: &ProblemSpec, degrees: &[usize], meshes: &[usize], rule: DtRule) -> Result<ErrorReport> {
    let patch = crate::geometry::preset_geometry(problem.geometry)?;
    let width = patch.diameter() / std::f64::consts::SQRT_2;
    let mut rows = Vec::new();
    for &p in degrees {
        for &n in meshes {
            let dt = rule.dt(width / n as f64, p);
            rows.push(run_error(problem, p, n, dt, 1.0)?);
        }
    }
    Ok(ErrorReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{preset_geometry, GeometryKind};
    use crate::linalg::Factorization;

    fn disc() -> Discretization {
        let patch = preset_geometry(GeometryKind::Rectangle { x0: 0.0, x1: 2.0, y0: 0.0, y1: 1.0 }).unwrap();
        let mesh = Mesh::new(patch, 2, 4, 4).unwrap();
        Discretization::new(mesh, tensor_rule(3, 3).unwrap()).unwrap()
    }

    #[test]
    fn exact_and_offset_fields() {
        let d = disc();
        let c = vec![0.7; d.ndof()];
        let (l1, linf) = error_norms(&d, &c, |_| 0.7, 9).unwrap();
        assert!(l1 < 1e-13 && linf < 1e-13);
        let (l1, linf) = error_norms(&d, &c, |_| 0.5, 9).unwrap();
        assert!((linf - 0.2).abs() < 1e-12);
        assert!((l1 - 0.2 * 2.0).abs() < 1e-10);
        assert!(error_norms(&d, &c, |_| 0.5, 1).is_err());
    }

    #[test]
    fn projection_error_converges() {
        let f = |x: Point| (x[0] + x[1]).sin();
        let mut errs = Vec::new();
        for n in [4, 8, 16] {
            let patch = preset_geometry(GeometryKind::Rectangle { x0: 0.0, x1: 2.0, y0: 0.0, y1: 2.0 }).unwrap();
            let mesh = Mesh::new(patch, 2, n, n).unwrap();
            let d = Discretization::new(mesh, tensor_rule(3, 3).unwrap()).unwrap();
            let u = Factorization::new(&d.assemble_mass()).unwrap().solve(&d.load_fn(f));
            errs.push(error_norms(&d, &u, f, 4 * n + 1).unwrap());
        }
        for w in errs.windows(2) {
            assert!((w[0].0 / w[1].0).log2() > 2.7);
            assert!((w[0].1 / w[1].1).log2() > 2.5);
        }
    }

    #[test]
    fn slope_fit_and_rules() {
        let h = [0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
        assert!((fit_slope(&h, &e) - 3.0).abs() < 1e-12);
        assert_eq!("default".parse::<DtRule>().unwrap(), DtRule::Power { c: 0.1 });
        assert_eq!("linear:0.5".parse::<DtRule>().unwrap(), DtRule::Linear { c: 0.5 });
        assert_eq!("fixed:0.01".parse::<DtRule>().unwrap(), DtRule::Fixed(0.01));
        assert!("fixed:-1".parse::<DtRule>().is_err());
        assert!("cubic:1".parse::<DtRule>().is_err());
        assert!((DtRule::default().dt(0.25, 3) - 0.1 * 0.0625).abs() < 1e-15);
    }
}
