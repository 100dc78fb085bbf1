//! Field snapshots as legacy VTK structured grids and CSV tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::geometry::{Point, TensorBasis};
use crate::transport::evaluate_param;

/// Both fields sampled on a uniform `n × n` parametric grid, first index
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub n: usize,
    pub points: Vec<Point>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SampledField {
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.n
    }
}

pub fn sample_fields(disc: &Discretization, u: &[f64], v: &[f64], n: usize) -> Result<SampledField> {
    if n < 2 {
        return Err(Error::Argument(format!("sample grid needs at least 2 points, got {n}")));
    }
    if u.len() != disc.ndof() || v.len() != disc.ndof() {
        return Err(Error::Argument(format!(
            "field lengths {} and {} do not match {} degrees of freedom",
            u.len(),
            v.len(),
            disc.ndof()
        )));
    }
    let geo = disc.mesh().geometry();
    let (u0, u1) = (geo.kv_u().first(), geo.kv_u().last());
    let (v0, v1) = (geo.kv_v().first(), geo.kv_v().last());
    let mut basis = TensorBasis::default();
    let mut out = SampledField {
        n,
        points: Vec::with_capacity(n * n),
        u: Vec::with_capacity(n * n),
        v: Vec::with_capacity(n * n),
    };
    for j in 0..n {
        let eta = v0 + (v1 - v0) * j as f64 / (n - 1) as f64;
        for i in 0..n {
            let xi = u0 + (u1 - u0) * i as f64 / (n - 1) as f64;
            out.points.push(geo.surface_eval(xi, eta)?);
            out.u.push(evaluate_param(disc, u, [xi, eta], &mut basis));
            out.v.push(evaluate_param(disc, v, [xi, eta], &mut basis));
        }
    }
    Ok(out)
}

pub fn vtk_string(field: &SampledField, title: &str) -> String {
    let n = field.n;
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    s.push_str(&title);
    s.push_str("\nASCII\nDATASET STRUCTURED_GRID\n");
    let _ = writeln!(s, "DIMENSIONS {n} {n} 1");
    let _ = writeln!(s, "POINTS {} double", n * n);
    for p in &field.points {
        let _ = writeln!(s, "{:e} {:e} {:e}", p[0], p[1], 0.0);
    }
    let _ = writeln!(s, "POINT_DATA {}", n * n);
    for (name, values) in [("u", &field.u), ("v", &field.v)] {
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for x in values.iter() {
            let _ = writeln!(s, "{x:e}");
        }
    }
    s
}

pub fn csv_string(field: &SampledField) -> String {
    let mut s = String::from("x,y,u,v\n");
    for k in 0..field.points.len() {
        let p = field.points[k];
        let _ = writeln!(s, "{:e},{:e},{:e},{:e}", p[0], p[1], field.u[k], field.v[k]);
    }
    s
}

/// Writes `<stem>.vtk` and `<stem>.csv` and returns both paths.
pub fn write_snapshot(
    disc: &Discretization,
    u: &[f64],
    v: &[f64],
    sample_n: usize,
    stem: impl AsRef<Path>,
    title: &str,
) -> Result<(PathBuf, PathBuf)> {
    let field = sample_fields(disc, u, v, sample_n)?;
    let stem = stem.as_ref();
    let vtk = stem.with_extension("vtk");
    let csv = stem.with_extension("csv");
    std::fs::write(&vtk, vtk_string(&field, title)).map_err(|e| Error::io(&vtk, e))?;
    std::fs::write(&csv, csv_string(&field)).map_err(|e| Error::io(&csv, e))?;
    Ok((vtk, csv))
}
