//! Run configuration in a flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! problem = schnakenberg
//! degree = 5
//! nx = 32
//! ny = 32
//! dt = 0.005
//! t_end = 2
//! param.gamma = 100
//! ```
//!
//! Recognized keys: `problem` (required), `geometry`, `nx`, `ny`, `degree`,
//! `dt`, `t_end`, `n_substeps`, `quad_points`, `bc`, `out_dir`,
//! `snapshot_every`, `sample_n` and `param.NAME` for problem parameters.
//! Optional keys accept `auto` for the problem default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::geometry::{preset_geometry, GeometryKind, Mesh};
use crate::problems::{ProblemKind, ProblemSpec};
use crate::quadrature::tensor_rule;
use crate::time_integration::{BoundaryCondition, SolverConfig};

pub const MAX_DEGREE: usize = 8;

const KEYS: [&str; 13] = [
    "problem",
    "geometry",
    "nx",
    "ny",
    "degree",
    "dt",
    "t_end",
    "n_substeps",
    "quad_points",
    "bc",
    "out_dir",
    "snapshot_every",
    "sample_n",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    /// Overrides of the problem parameters.
    pub params: BTreeMap<String, f64>,
    /// `None` keeps the problem's own domain.
    pub geometry: Option<GeometryKind>,
    pub nx: usize,
    pub ny: usize,
    pub degree: usize,
    pub dt: f64,
    pub t_end: f64,
    pub n_substeps: Option<usize>,
    /// Gauss points per direction; `None` means `degree + 1`.
    pub quad_points: Option<usize>,
    pub bc: Option<BoundaryCondition>,
    pub out_dir: PathBuf,
    pub snapshot_every: usize,
    /// Export grid resolution per direction.
    pub sample_n: usize,
}

impl RunConfig {
    /// Defaults for a problem.
    ///
    /// | problem          | degree | mesh  | dt    | t_end |
    /// |------------------|--------|-------|-------|-------|
    /// | nonlinear-scalar | 4      | 32×32 | 0.002 | 1     |
    /// | exact-system     | 2      | 16×16 | 0.01  | 1     |
    /// | schnakenberg     | 5      | 32×32 | 0.005 | 2     |
    /// | gray-scott       | 5      | 16×16 | 1     | 500   |
    pub fn defaults(problem: ProblemKind) -> Self {
        let (degree, n, dt, t_end) = match problem {
            ProblemKind::NonlinearScalar => (4, 32, 0.002, 1.0),
            ProblemKind::ExactSystem => (2, 16, 0.01, 1.0),
            ProblemKind::Schnakenberg => (5, 32, 0.005, 2.0),
            ProblemKind::GrayScott => (5, 16, 1.0, 500.0),
        };
        RunConfig {
            problem,
            params: BTreeMap::new(),
            geometry: None,
            nx: n,
            ny: n,
            degree,
            dt,
            t_end,
            n_substeps: None,
            quad_points: None,
            bc: None,
            out_dir: PathBuf::from("output"),
            snapshot_every: 0,
            sample_n: 4 * n + 1,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::ConfigValue { key: key.into(), message });
        if self.nx == 0 {
            return bad("nx", "must be at least 1".into());
        }
        if self.ny == 0 {
            return bad("ny", "must be at least 1".into());
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return bad("degree", format!("must lie in 1..={MAX_DEGREE}, got {}", self.degree));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end", format!("must be nonnegative, got {}", self.t_end));
        }
        if self.n_substeps == Some(0) {
            return bad("n_substeps", "must be at least 1".into());
        }
        if let Some(q) = self.quad_points {
            if q == 0 || q > crate::quadrature::MAX_POINTS {
                return bad("quad_points", format!("must lie in 1..={}", crate::quadrature::MAX_POINTS));
            }
        }
        if self.sample_n < 2 {
            return bad("sample_n", "must be at least 2".into());
        }
        Ok(())
    }

    /// The problem with parameter overrides and geometry applied.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::new(self.problem, &self.params)?;
        if let Some(g) = self.geometry {
            spec.geometry = g;
        }
        Ok(spec)
    }

    pub fn discretization(&self, problem: &ProblemSpec) -> Result<Discretization> {
        self.validate()?;
        let patch = preset_geometry(problem.geometry)?;
        let mesh = Mesh::new(patch, self.degree, self.nx, self.ny)?;
        let q = self.quad_points.unwrap_or(self.degree + 1);
        Discretization::new(mesh, tensor_rule(q, q)?)
    }

    pub fn solver_config(&self, problem: &ProblemSpec) -> SolverConfig {
        let mut c = SolverConfig::new(problem, self.dt, self.t_end);
        c.n_substeps = self.n_substeps;
        if let Some(bc) = self.bc {
            c.bc = bc;
        }
        c.snapshot_every = self.snapshot_every;
        c
    }

    /// Serializes every key, so that parsing the text reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "problem = {}", self.problem);
        let _ = writeln!(s, "geometry = {}", auto(self.geometry.map(format_geometry)));
        let _ = writeln!(s, "nx = {}", self.nx);
        let _ = writeln!(s, "ny = {}", self.ny);
        let _ = writeln!(s, "degree = {}", self.degree);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "t_end = {}", self.t_end);
        let _ = writeln!(s, "n_substeps = {}", auto(self.n_substeps.map(|n| n.to_string())));
        let _ = writeln!(s, "quad_points = {}", auto(self.quad_points.map(|n| n.to_string())));
        let _ = writeln!(s, "bc = {}", auto(self.bc.map(|b| b.to_string())));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "snapshot_every = {}", self.snapshot_every);
        let _ = writeln!(s, "sample_n = {}", self.sample_n);
        for (k, v) in &self.params {
            let _ = writeln!(s, "param.{k} = {v}");
        }
        s
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::ConfigParse { line: line_no, message: "empty key".into() });
            }
            if !KEYS.contains(&key) && !key.starts_with("param.") {
                return Err(Error::ConfigParse { line: line_no, message: format!("unknown key `{key}`") });
            }
            if entries.iter().any(|&(_, k, _)| k == key) {
                return Err(Error::ConfigParse { line: line_no, message: format!("duplicate key `{key}`") });
            }
            entries.push((line_no, key, value));
        }

        let problem = match entries.iter().find(|&&(_, k, _)| k == "problem") {
            Some(&(_, _, v)) => v.parse::<ProblemKind>().map_err(|e| value_error("problem", e))?,
            None => {
                return Err(Error::ConfigValue {
                    key: "problem".into(),
                    message: "missing required key".into(),
                })
            }
        };
        let mut c = RunConfig::defaults(problem);
        let mut sample_set = false;
        for &(_, key, value) in &entries {
            match key {
                "problem" => {}
                "geometry" => c.geometry = optional(value, parse_geometry).map_err(|e| value_error(key, e))?,
                "nx" => c.nx = parse_num(key, value)?,
                "ny" => c.ny = parse_num(key, value)?,
                "degree" => c.degree = parse_num(key, value)?,
                "dt" => c.dt = parse_num(key, value)?,
                "t_end" => c.t_end = parse_num(key, value)?,
                "n_substeps" => c.n_substeps = optional(value, |v| parse_num(key, v))?,
                "quad_points" => c.quad_points = optional(value, |v| parse_num(key, v))?,
                "bc" => c.bc = optional(value, str::parse).map_err(|e| value_error(key, e))?,
                "out_dir" => c.out_dir = PathBuf::from(value),
                "snapshot_every" => c.snapshot_every = parse_num(key, value)?,
                "sample_n" => {
                    c.sample_n = parse_num(key, value)?;
                    sample_set = true;
                }
                _ => {
                    let name = &key["param.".len()..];
                    if !problem.parameters().iter().any(|&(p, _)| p == name) {
                        return Err(Error::ConfigValue {
                            key: key.into(),
                            message: format!("problem {problem} has no parameter `{name}`"),
                        });
                    }
                    c.params.insert(name.to_string(), parse_num(key, value)?);
                }
            }
        }
        if !sample_set {
            c.sample_n = 4 * c.nx.max(c.ny) + 1;
        }
        c.validate()?;
        Ok(c)
    }
}

fn value_error(key: &str, e: Error) -> Error {
    match e {
        Error::ConfigValue { .. } => e,
        Error::Argument(message) => Error::ConfigValue { key: key.into(), message },
        other => Error::ConfigValue { key: key.into(), message: other.to_string() },
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigValue {
        key: key.into(),
        message: format!("cannot parse `{value}`"),
    })
}

fn optional<T>(value: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

/// `rectangle:x0,x1,y0,y1`, `disk:cx,cy,r` or `annulus:cx,cy,r_in,r_out`.
pub fn parse_geometry(s: &str) -> Result<GeometryKind> {
    let bad = || Error::Argument(format!("invalid geometry `{s}` (expected rectangle:x0,x1,y0,y1, disk:cx,cy,r or annulus:cx,cy,r_in,r_out)"));
    let (name, args) = s.split_once(':').ok_or_else(bad)?;
    let v: Vec<f64> = args
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    match (name.trim(), v.as_slice()) {
        ("rectangle", &[x0, x1, y0, y1]) => Ok(GeometryKind::Rectangle { x0, x1, y0, y1 }),
        ("disk", &[cx, cy, radius]) => Ok(GeometryKind::Disk { center: [cx, cy], radius }),
        ("annulus", &[cx, cy, r_in, r_out]) => Ok(GeometryKind::Annulus { center: [cx, cy], r_in, r_out }),
        _ => Err(bad()),
    }
}

pub fn format_geometry(g: GeometryKind) -> String {
    match g {
        GeometryKind::Rectangle { x0, x1, y0, y1 } => format!("rectangle:{x0},{x1},{y0},{y1}"),
        GeometryKind::Disk { center, radius } => format!("disk:{},{},{radius}", center[0], center[1]),
        GeometryKind::Annulus { center, r_in, r_out } => format!("annulus:{},{},{r_in},{r_out}", center[0], center[1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_gray_scott() {
        let c: RunConfig = "problem = gray-scott\n".parse().unwrap();
        assert_eq!((c.degree, c.nx, c.ny), (5, 16, 16));
        let spec = c.problem_spec().unwrap();
        assert!(matches!(spec.geometry, GeometryKind::Disk { .. }));
        assert_eq!(c.discretization(&spec).unwrap().ndof(), 441);
    }

    #[test]
    fn rejects_bad_input() {
        let err = |s: &str| s.parse::<RunConfig>().unwrap_err();
        assert!(matches!(err("problem = exact-system\ndegree = 0"), Error::ConfigValue { key, .. } if key == "degree"));
        assert!(matches!(err("problem = exact-system\ndegree = 9"), Error::ConfigValue { key, .. } if key == "degree"));
        assert!(matches!(err("problem = exact-system\n\ncolour = red"), Error::ConfigParse { line: 3, .. }));
        assert!(matches!(err("problem = exact-system\nnx 4"), Error::ConfigParse { line: 2, .. }));
        assert!(matches!(err("problem = exact-system\nnx = 4\nnx = 5"), Error::ConfigParse { line: 3, .. }));
        assert!(matches!(err("problem = exact-system\ndt = -1"), Error::ConfigValue { key, .. } if key == "dt"));
        assert!(matches!(err("problem = exact-system\nparam.gamma = 1"), Error::ConfigValue { key, .. } if key == "param.gamma"));
        assert!(matches!(err("problem = heat"), Error::ConfigValue { key, .. } if key == "problem"));
        assert!(matches!(err("nx = 4"), Error::ConfigValue { key, .. } if key == "problem"));
        assert!(matches!(err("problem = schnakenberg\ngeometry = disk:1,2"), Error::ConfigValue { key, .. } if key == "geometry"));
    }

    #[test]
    fn full_roundtrip() {
        let text = "problem = schnakenberg  # comment\ngeometry = annulus:0,0,0.5,1\nnx = 8\nny = 6\ndegree = 3\n\
                    dt = 0.0025\nt_end = 0.5\nn_substeps = 4\nquad_points = 5\nbc = dirichlet-zero\nout_dir = runs/a\n\
                    snapshot_every = 10\nsample_n = 17\nparam.gamma = 50\nparam.d2 = 0.7\n";
        let a: RunConfig = text.parse().unwrap();
        assert_eq!(a.geometry, Some(GeometryKind::Annulus { center: [0.0, 0.0], r_in: 0.5, r_out: 1.0 }));
        assert_eq!(a.bc, Some(BoundaryCondition::DirichletZero));
        let b: RunConfig = a.to_text().parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        let d: RunConfig = RunConfig::defaults(ProblemKind::ExactSystem).to_text().parse().unwrap();
        assert_eq!(d, RunConfig::defaults(ProblemKind::ExactSystem));
    }
}
