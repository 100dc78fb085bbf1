//! Galerkin assembly: degree-of-freedom maps, cached element quadrature,
//! mass and stiffness matrices, load vectors and Dirichlet elimination.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{det2, Mesh, Point, TensorBasis};
use crate::linalg::SparseMatrix;
use crate::quadrature::{gauss_legendre_1d, QuadratureRule};

/// Element-to-global index lists and boundary flags. Control points on the
/// seam of a closed patch share one degree of freedom.
#[derive(Debug, Clone)]
pub struct DofMap {
    ndof: usize,
    nloc: usize,
    tensor_to_dof: Vec<usize>,
    conn: Vec<usize>,
    boundary: Vec<bool>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let space = mesh.space();
        let (m_b, l_b) = (space.n_u(), space.n_v());
        let closed = space.is_closed_v();
        let rows = if closed { l_b - 1 } else { l_b };
        let tensor_to_dof: Vec<usize> = (0..m_b * l_b)
            .map(|m| {
                let (i, j) = (m % m_b, m / m_b);
                if closed && j == l_b - 1 {
                    i
                } else {
                    i + j * m_b
                }
            })
            .collect();
        let ndof = m_b * rows;
        let mut boundary = vec![false; ndof];
        for j in 0..l_b {
            for i in 0..m_b {
                let edge_u = i == 0 || i == m_b - 1;
                let edge_v = !closed && (j == 0 || j == l_b - 1);
                if edge_u || edge_v {
                    boundary[tensor_to_dof[i + j * m_b]] = true;
                }
            }
        }
        let nloc = mesh.local_size();
        let mut conn = Vec::with_capacity(mesh.num_elements() * nloc);
        for e in 0..mesh.num_elements() {
            conn.extend(mesh.support(e).into_iter().map(|m| tensor_to_dof[m]));
        }
        DofMap {
            ndof,
            nloc,
            tensor_to_dof,
            conn,
            boundary,
        }
    }

    /// Builds a map from explicit connectivity, mainly for tests.
    pub fn from_parts(ndof: usize, nloc: usize, conn: Vec<usize>, boundary: Vec<bool>) -> Result<Self> {
        if nloc == 0 || !conn.len().is_multiple_of(nloc) || boundary.len() != ndof {
            return Err(Error::Argument("inconsistent dof map data".into()));
        }
        if conn.iter().any(|&d| d >= ndof) {
            return Err(Error::Argument("connectivity index out of range".into()));
        }
        Ok(DofMap {
            ndof,
            nloc,
            tensor_to_dof: (0..ndof).collect(),
            conn,
            boundary,
        })
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn num_elements(&self) -> usize {
        self.conn.len() / self.nloc
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        &self.conn[e * self.nloc..(e + 1) * self.nloc]
    }

    pub fn dof_of_tensor(&self, m: usize) -> usize {
        self.tensor_to_dof[m]
    }

    pub fn is_boundary(&self, d: usize) -> bool {
        self.boundary[d]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }
}

/// Basis values, physical gradients, weighted Jacobians and points at every
/// quadrature point, indexed by `q = e * n_q + g`.
#[derive(Debug, Clone)]
pub struct QuadCache {
    nq: usize,
    nloc: usize,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
    jxw: Vec<f64>,
    points: Vec<Point>,
    params: Vec<[f64; 2]>,
}

impl QuadCache {
    pub fn new(mesh: &Mesh, rule: &QuadratureRule) -> Result<Self> {
        let nq = rule.len();
        let nloc = mesh.local_size();
        struct Chunk {
            values: Vec<f64>,
            grads: Vec<[f64; 2]>,
            jxw: Vec<f64>,
            points: Vec<Point>,
            params: Vec<[f64; 2]>,
        }
        let chunks: Vec<Chunk> = (0..mesh.num_elements())
            .into_par_iter()
            .map(|e| -> Result<Chunk> {
                let el = &mesh.elements()[e];
                let mut geo = TensorBasis::default();
                let mut sp = TensorBasis::default();
                let mut c = Chunk {
                    values: Vec::with_capacity(nq * nloc),
                    grads: Vec::with_capacity(nq * nloc),
                    jxw: Vec::with_capacity(nq),
                    points: Vec::with_capacity(nq),
                    params: Vec::with_capacity(nq),
                };
                for (g, node) in rule.nodes.iter().enumerate() {
                    let (xi, eta) = mesh.parent_to_param(e, node[0], node[1]);
                    let (x, j) = mesh.geometry().eval_with_jacobian(xi, eta, &mut geo);
                    let det = det2(&j);
                    if !(det > 0.0) {
                        return Err(Error::Geometry(format!(
                            "Jacobian determinant {det} at quadrature point ({xi}, {eta}) of element {e}"
                        )));
                    }
                    mesh.space().basis_on_spans(el.span_u, el.span_v, xi, eta, true, &mut sp);
                    for k in 0..nloc {
                        let (nx, ny) = (sp.d_xi[k], sp.d_eta[k]);
                        c.values.push(sp.values[k]);
                        c.grads.push([
                            (j[1][1] * nx - j[1][0] * ny) / det,
                            (-j[0][1] * nx + j[0][0] * ny) / det,
                        ]);
                    }
                    c.jxw.push(rule.weights[g] * det * el.parent_scale());
                    c.points.push(x);
                    c.params.push([xi, eta]);
                }
                Ok(c)
            })
            .collect::<Result<_>>()?;
        let mut cache = QuadCache {
            nq,
            nloc,
            values: Vec::with_capacity(chunks.len() * nq * nloc),
            grads: Vec::with_capacity(chunks.len() * nq * nloc),
            jxw: Vec::with_capacity(chunks.len() * nq),
            points: Vec::with_capacity(chunks.len() * nq),
            params: Vec::with_capacity(chunks.len() * nq),
        };
        for c in chunks {
            cache.values.extend(c.values);
            cache.grads.extend(c.grads);
            cache.jxw.extend(c.jxw);
            cache.points.extend(c.points);
            cache.params.extend(c.params);
        }
        Ok(cache)
    }

    pub fn points_per_element(&self) -> usize {
        self.nq
    }

    /// Total number of quadrature points over the mesh.
    pub fn len(&self) -> usize {
        self.jxw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jxw.is_empty()
    }

    #[inline]
    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q * self.nloc..(q + 1) * self.nloc]
    }

    #[inline]
    pub fn grads(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.nloc..(q + 1) * self.nloc]
    }

    /// Quadrature weight times `|J_k|`, including the parent-map scaling.
    #[inline]
    pub fn jxw(&self, q: usize) -> f64 {
        self.jxw[q]
    }

    #[inline]
    pub fn point(&self, q: usize) -> Point {
        self.points[q]
    }

    #[inline]
    pub fn param(&self, q: usize) -> [f64; 2] {
        self.params[q]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Diffusion coefficient for stiffness assembly.
#[derive(Debug, Clone, Copy)]
pub enum Coefficient<'a> {
    Constant(f64),
    /// One value per quadrature point (`e * n_q + g` ordering).
    AtQuadrature(&'a [f64]),
}

/// Mesh, quadrature, dof map and the symbolic matrix pattern with
/// per-element scatter positions.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Mesh,
    rule: QuadratureRule,
    dofs: DofMap,
    quad: QuadCache,
    pattern: SparseMatrix,
    scatter: Vec<usize>,
}

impl Discretization {
    pub fn new(mesh: Mesh, rule: QuadratureRule) -> Result<Self> {
        let dofs = DofMap::new(&mesh);
        let quad = QuadCache::new(&mesh, &rule)?;
        let n = dofs.ndof();
        let nloc = dofs.nloc();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..dofs.num_elements() {
            let ed = dofs.element_dofs(e);
            for &a in ed {
                rows[a].extend_from_slice(ed);
            }
        }
        let pattern = SparseMatrix::from_pattern(n, &rows)?;
        let mut scatter = Vec::with_capacity(dofs.num_elements() * nloc * nloc);
        for e in 0..dofs.num_elements() {
            let ed = dofs.element_dofs(e);
            for &a in ed {
                for &b in ed {
                    scatter.push(pattern.position(a, b).expect("pattern covers element pairs"));
                }
            }
        }
        Ok(Discretization {
            mesh,
            rule,
            dofs,
            quad,
            pattern,
            scatter,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn quad(&self) -> &QuadCache {
        &self.quad
    }

    pub fn ndof(&self) -> usize {
        self.dofs.ndof()
    }

    pub fn num_elements(&self) -> usize {
        self.dofs.num_elements()
    }

    /// Zero matrix carrying the assembly pattern.
    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    fn assemble_local(&self, local: impl Fn(usize, &mut [f64]) + Sync) -> SparseMatrix {
        let nloc = self.dofs.nloc();
        let ne = self.num_elements();
        let mut blocks = vec![0.0; ne * nloc * nloc];
        blocks
            .par_chunks_mut(nloc * nloc)
            .enumerate()
            .for_each(|(e, block)| local(e, block));
        let mut out = self.pattern.clone();
        let vals = out.values_mut();
        for (pos, v) in self.scatter.iter().zip(&blocks) {
            vals[*pos] += v;
        }
        out
    }

    pub fn assemble_mass(&self) -> SparseMatrix {
        let nloc = self.dofs.nloc();
        let nq = self.quad.points_per_element();
        self.assemble_local(|e, block| {
            for g in 0..nq {
                let q = e * nq + g;
                let n = self.quad.values(q);
                let w = self.quad.jxw(q);
                for a in 0..nloc {
                    let wa = w * n[a];
                    for b in a..nloc {
                        block[a * nloc + b] += wa * n[b];
                    }
                }
            }
            mirror_upper(block, nloc);
        })
    }

    pub fn assemble_stiffness(&self, coefficient: Coefficient<'_>) -> Result<SparseMatrix> {
        let nloc = self.dofs.nloc();
        let nq = self.quad.points_per_element();
        if let Coefficient::AtQuadrature(d) = coefficient {
            if d.len() != self.quad.len() {
                return Err(Error::Argument(format!(
                    "coefficient has {} values, mesh has {} quadrature points",
                    d.len(),
                    self.quad.len()
                )));
            }
            if let Some(i) = d.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite diffusion coefficient at quadrature point {i} ({:?})",
                    self.quad.point(i)
                )));
            }
        }
        Ok(self.assemble_local(|e, block| {
            for g in 0..nq {
                let q = e * nq + g;
                let d = match coefficient {
                    Coefficient::Constant(c) => c,
                    Coefficient::AtQuadrature(v) => v[q],
                };
                let grad = self.quad.grads(q);
                let w = d * self.quad.jxw(q);
                for a in 0..nloc {
                    let ga = [w * grad[a][0], w * grad[a][1]];
                    for b in a..nloc {
                        block[a * nloc + b] += ga[0] * grad[b][0] + ga[1] * grad[b][1];
                    }
                }
            }
            mirror_upper(block, nloc);
        }))
    }

    /// Values of the discrete field with coefficients `coeffs` at every
    /// quadrature point.
    pub fn eval_at_quadrature(&self, coeffs: &[f64], out: &mut [f64]) {
        let nq = self.quad.points_per_element();
        out.par_chunks_mut(nq).enumerate().for_each(|(e, chunk)| {
            let ed = self.dofs.element_dofs(e);
            for (g, o) in chunk.iter_mut().enumerate() {
                let n = self.quad.values(e * nq + g);
                *o = n.iter().zip(ed).map(|(v, &d)| v * coeffs[d]).sum();
            }
        });
    }

    /// `∫ s N_m` for `s` given at the quadrature points.
    pub fn load_from_values(&self, integrand: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ndof()];
        self.add_load_from_values(integrand, 1.0, &mut out);
        out
    }

    pub(crate) fn add_load_from_values(&self, integrand: &[f64], scale: f64, out: &mut [f64]) {
        let nq = self.quad.points_per_element();
        for e in 0..self.num_elements() {
            let ed = self.dofs.element_dofs(e);
            for g in 0..nq {
                let q = e * nq + g;
                let w = scale * integrand[q] * self.quad.jxw(q);
                if w == 0.0 {
                    continue;
                }
                for (n, &d) in self.quad.values(q).iter().zip(ed) {
                    out[d] += w * n;
                }
            }
        }
    }

    /// `∫ f(x) N_m` for a function of the physical point.
    pub fn load_fn(&self, f: impl Fn(Point) -> f64 + Sync) -> Vec<f64> {
        let vals: Vec<f64> = self.quad.points().par_iter().map(|&x| f(x)).collect();
        self.load_from_values(&vals)
    }

    /// `∫ f(u_h, v_h) N_m` and `∫ g(u_h, v_h) N_m`. The reaction receives the
    /// quadrature index, the physical point and the field values.
    pub fn assemble_reaction_load(
        &self,
        u: &[f64],
        v: &[f64],
        reaction: impl Fn(usize, Point, f64, f64) -> (f64, f64) + Sync,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let nqt = self.quad.len();
        let mut uq = vec![0.0; nqt];
        let mut vq = vec![0.0; nqt];
        self.eval_at_quadrature(u, &mut uq);
        self.eval_at_quadrature(v, &mut vq);
        let fg: Vec<(f64, f64)> = (0..nqt)
            .into_par_iter()
            .map(|q| reaction(q, self.quad.point(q), uq[q], vq[q]))
            .collect();
        if let Some(q) = fg.iter().position(|r| !(r.0.is_finite() && r.1.is_finite())) {
            let x = self.quad.point(q);
            return Err(Error::Numerical(format!(
                "non-finite reaction value at ({}, {}) (u = {}, v = {})",
                x[0], x[1], uq[q], vq[q]
            )));
        }
        let f: Vec<f64> = fg.iter().map(|r| r.0).collect();
        let g: Vec<f64> = fg.iter().map(|r| r.1).collect();
        Ok((self.load_from_values(&f), self.load_from_values(&g)))
    }

    /// Domain area `∫ 1`.
    pub fn area(&self) -> f64 {
        (0..self.quad.len()).map(|q| self.quad.jxw(q)).sum()
    }

    /// Boundary quadrature: one entry per point on the (open) parametric
    /// edges, with the host element, parametric point, physical point,
    /// outward unit normal and `ds` weight.
    pub fn boundary_points(&self, n_points: usize) -> Result<Vec<BoundaryPoint>> {
        let (nodes, weights) = gauss_legendre_1d(n_points)?;
        let mesh = &self.mesh;
        let geo = mesh.geometry();
        let (ne_u, ne_v) = mesh.elements_per_direction();
        let (u0, u1) = (geo.kv_u().first(), geo.kv_u().last());
        let (v0, v1) = (geo.kv_v().first(), geo.kv_v().last());
        let mut sides: Vec<(usize, bool, f64)> = vec![(0, false, u0), (0, true, u1)];
        if !geo.is_closed_v() {
            sides.push((1, false, v0));
            sides.push((1, true, v1));
        }
        let mut basis = TensorBasis::default();
        let mut out = Vec::new();
        for (dir, upper, fixed) in sides {
            let count = if dir == 0 { ne_v } else { ne_u };
            for s in 0..count {
                let e = match (dir, upper) {
                    (0, false) => s * ne_u,
                    (0, true) => s * ne_u + ne_u - 1,
                    (_, false) => s,
                    (_, true) => (ne_v - 1) * ne_u + s,
                };
                let el = mesh.elements()[e];
                let (a, b) = if dir == 0 { (el.eta[0], el.eta[1]) } else { (el.xi[0], el.xi[1]) };
                for (t, w) in nodes.iter().zip(&weights) {
                    let s_par = 0.5 * ((b - a) * t + (b + a));
                    let (xi, eta) = if dir == 0 { (fixed, s_par) } else { (s_par, fixed) };
                    let (x, j) = geo.eval_with_jacobian(xi, eta, &mut basis);
                    let along = if dir == 0 { 1 } else { 0 };
                    let tangent = [j[0][along], j[1][along]];
                    let across = [j[0][dir], j[1][dir]];
                    let len = (tangent[0] * tangent[0] + tangent[1] * tangent[1]).sqrt();
                    if !(len > 0.0) {
                        return Err(Error::Geometry(format!(
                            "degenerate boundary tangent at ({xi}, {eta})"
                        )));
                    }
                    let mut normal = [tangent[1] / len, -tangent[0] / len];
                    let dot = normal[0] * across[0] + normal[1] * across[1];
                    if (dot > 0.0) != upper {
                        normal = [-normal[0], -normal[1]];
                    }
                    out.push(BoundaryPoint {
                        element: e,
                        param: [xi, eta],
                        point: x,
                        normal,
                        ds: w * 0.5 * (b - a) * len,
                    });
                }
            }
        }
        Ok(out)
    }

    /// `∫_{∂Ω} g N_m ds` for flux values given at `points`.
    pub fn boundary_load(&self, points: &[BoundaryPoint], flux: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ndof()];
        let mut basis = TensorBasis::default();
        let space = self.mesh.space();
        for (bp, &g) in points.iter().zip(flux) {
            let el = self.mesh.elements()[bp.element];
            space.basis_on_spans(el.span_u, el.span_v, bp.param[0], bp.param[1], false, &mut basis);
            for (n, &d) in basis.values.iter().zip(self.dofs.element_dofs(bp.element)) {
                out[d] += g * bp.ds * n;
            }
        }
        out
    }
}

/// A quadrature point on the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub element: usize,
    pub param: [f64; 2],
    pub point: Point,
    pub normal: Point,
    pub ds: f64,
}

fn mirror_upper(block: &mut [f64], nloc: usize) {
    for a in 0..nloc {
        for b in 0..a {
            block[a * nloc + b] = block[b * nloc + a];
        }
    }
}

/// Homogeneous Dirichlet conditions by symmetric elimination: constrained
/// rows and columns are zeroed, the diagonal set to one and the right-hand
/// side entry to zero.
pub fn apply_dirichlet(matrix: &mut SparseMatrix, rhs: Option<&mut [f64]>, dofs: &DofMap) {
    let n = matrix.nrows();
    let flags = dofs.boundary_flags();
    let row_ptr = matrix.row_ptr().to_vec();
    let cols = matrix.col_idx().to_vec();
    let vals = matrix.values_mut();
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            if flags[i] || flags[j] {
                vals[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    if let Some(rhs) = rhs {
        zero_constrained(rhs, dofs);
    }
}

pub fn zero_constrained(v: &mut [f64], dofs: &DofMap) {
    for (x, &b) in v.iter_mut().zip(dofs.boundary_flags()) {
        if b {
            *x = 0.0;
        }
    }
}
