//! Tensor-product NURBS patches, the parent → parametric → physical map
//! chain, point inversion and the preset domains.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::error::{Error, Result};
use crate::nurbs::{self, KnotVector, Row, MAX_ORDER};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

const SEED_GRID: usize = 8;
const MAX_NEWTON: usize = 50;
const MAX_HALVINGS: usize = 10;

/// A single tensor-product NURBS patch. Control data is stored with the
/// flattened index `m = i + j * m_b`.
#[derive(Debug, Clone)]
pub struct Patch {
    kv_u: KnotVector,
    kv_v: KnotVector,
    weights: Vec<f64>,
    points: Vec<Point>,
    closed_v: bool,
    diameter: f64,
    seeds: Vec<(Point, Point)>,
    rectangle: Option<Rectangle>,
}

/// Bilinear patch whose image is a rectangle: inversion is exact.
#[derive(Debug, Clone, Copy)]
struct Rectangle {
    origin: Point,
    e_u: Point,
    e_v: Point,
}

/// Rational tensor basis restricted to one element: `(p+1)(q+1)` values and
/// parametric derivatives, local index `a + b * (p + 1)`.
#[derive(Debug, Clone, Default)]
pub struct TensorBasis {
    pub first_u: usize,
    pub first_v: usize,
    pub nu: usize,
    pub nv: usize,
    pub values: Vec<f64>,
    pub d_xi: Vec<f64>,
    pub d_eta: Vec<f64>,
}

impl TensorBasis {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Tensor (control-net) index of local function `k` for a net with
    /// `m_b` functions in the first direction.
    #[inline]
    pub fn tensor_index(&self, k: usize, m_b: usize) -> usize {
        let (a, b) = (k % self.nu, k / self.nu);
        (self.first_u + a) + (self.first_v + b) * m_b
    }
}

/// Result of locating a physical point in the parameter domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub xi: f64,
    pub eta: f64,
    /// The point lies outside the patch image and was projected onto the
    /// parametric boundary.
    pub clamped: bool,
}

impl Patch {
    pub fn new(
        kv_u: KnotVector,
        kv_v: KnotVector,
        weights: Vec<f64>,
        points: Vec<Point>,
    ) -> Result<Self> {
        let n = kv_u.num_basis() * kv_v.num_basis();
        nurbs::check_weights(&weights, n)?;
        if points.len() != n {
            return Err(Error::Argument(format!(
                "expected {n} control points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::Argument("control points must be finite".into()));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &points {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let diameter = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
        let mut patch = Patch {
            kv_u,
            kv_v,
            weights,
            points,
            closed_v: false,
            diameter,
            seeds: Vec::new(),
            rectangle: None,
        };
        patch.build_seeds();
        patch.rectangle = patch.detect_rectangle();
        Ok(patch)
    }

    fn detect_rectangle(&self) -> Option<Rectangle> {
        let linear = self.kv_u.degree() == 1 && self.kv_v.degree() == 1;
        if !linear || self.ndof() != 4 || self.weights.iter().any(|&w| w != self.weights[0]) {
            return None;
        }
        let [p00, p10, p01, p11] = [self.points[0], self.points[1], self.points[2], self.points[3]];
        let e_u = [p10[0] - p00[0], p10[1] - p00[1]];
        let e_v = [p01[0] - p00[0], p01[1] - p00[1]];
        let twist = (p11[0] - p10[0] - e_v[0]).abs() + (p11[1] - p10[1] - e_v[1]).abs();
        let skew = e_u[0] * e_v[0] + e_u[1] * e_v[1];
        (twist == 0.0 && skew == 0.0).then_some(Rectangle { origin: p00, e_u, e_v })
    }

    /// Marks the patch as closed in the second direction: the first and last
    /// rows of control points must coincide.
    pub fn closed_in_v(mut self) -> Result<Self> {
        let (m_b, l_b) = (self.n_u(), self.n_v());
        for i in 0..m_b {
            let (a, b) = (self.points[i], self.points[i + (l_b - 1) * m_b]);
            let (wa, wb) = (self.weights[i], self.weights[i + (l_b - 1) * m_b]);
            if (a[0] - b[0]).abs() + (a[1] - b[1]).abs() > 1e-12 * self.diameter.max(1.0)
                || wa != wb
            {
                return Err(Error::Argument(
                    "closing control rows do not coincide".into(),
                ));
            }
        }
        self.closed_v = true;
        Ok(self)
    }

    fn build_seeds(&mut self) {
        let mut seeds = Vec::with_capacity(SEED_GRID * SEED_GRID);
        for b in 0..SEED_GRID {
            for a in 0..SEED_GRID {
                let s = (a as f64 + 0.5) / SEED_GRID as f64;
                let t = (b as f64 + 0.5) / SEED_GRID as f64;
                let xi = self.kv_u.first() + s * (self.kv_u.last() - self.kv_u.first());
                let eta = self.kv_v.first() + t * (self.kv_v.last() - self.kv_v.first());
                let x = self.point_unchecked(xi, eta);
                seeds.push(([xi, eta], x));
            }
        }
        self.seeds = seeds;
    }

    pub fn kv_u(&self) -> &KnotVector {
        &self.kv_u
    }

    pub fn kv_v(&self) -> &KnotVector {
        &self.kv_v
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn control_points(&self) -> &[Point] {
        &self.points
    }

    pub fn n_u(&self) -> usize {
        self.kv_u.num_basis()
    }

    pub fn n_v(&self) -> usize {
        self.kv_v.num_basis()
    }

    /// Number of control points `m_b * l_b`.
    pub fn ndof(&self) -> usize {
        self.n_u() * self.n_v()
    }

    pub fn is_closed_v(&self) -> bool {
        self.closed_v
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    fn check_domain(&self, xi: f64, eta: f64) -> Result<()> {
        let ok_u = xi >= self.kv_u.first() && xi <= self.kv_u.last();
        let ok_v = eta >= self.kv_v.first() && eta <= self.kv_v.last();
        if ok_u && ok_v {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parametric point ({xi}, {eta}) outside the patch domain"
            )))
        }
    }

    /// Evaluates the local rational basis at a parametric point on the given
    /// spans. Derivatives are filled only when `grads` is set.
    pub(crate) fn basis_on_spans(
        &self,
        span_u: usize,
        span_v: usize,
        xi: f64,
        eta: f64,
        grads: bool,
        out: &mut TensorBasis,
    ) {
        let (p, q) = (self.kv_u.degree(), self.kv_v.degree());
        let order = usize::from(grads);
        let mut bu: [Row; 2] = [[0.0; MAX_ORDER]; 2];
        let mut bv: [Row; 2] = [[0.0; MAX_ORDER]; 2];
        if grads {
            nurbs::basis_ders_into(self.kv_u.knots(), p, span_u, xi, order, &mut bu);
            nurbs::basis_ders_into(self.kv_v.knots(), q, span_v, eta, order, &mut bv);
        } else {
            nurbs::basis_into(self.kv_u.knots(), p, span_u, xi, &mut bu[0]);
            nurbs::basis_into(self.kv_v.knots(), q, span_v, eta, &mut bv[0]);
        }
        let (nu, nv) = (p + 1, q + 1);
        let n = nu * nv;
        out.first_u = span_u - p;
        out.first_v = span_v - q;
        out.nu = nu;
        out.nv = nv;
        out.values.resize(n, 0.0);
        out.d_xi.resize(if grads { n } else { 0 }, 0.0);
        out.d_eta.resize(if grads { n } else { 0 }, 0.0);
        let m_b = self.n_u();
        let w0 = self.weights[out.first_v * m_b + out.first_u];
        let polynomial = (0..nv).all(|b| {
            let row = (out.first_v + b) * m_b + out.first_u;
            self.weights[row..row + nu].iter().all(|&w| w == w0)
        });
        let (mut w, mut w_xi, mut w_eta) = (0.0, 0.0, 0.0);
        for b in 0..nv {
            let row = (out.first_v + b) * m_b + out.first_u;
            for a in 0..nu {
                let k = a + b * nu;
                let wt = if polynomial { 1.0 } else { self.weights[row + a] };
                let v = bu[0][a] * bv[0][b] * wt;
                out.values[k] = v;
                w += v;
                if grads {
                    let dx = bu[1][a] * bv[0][b] * wt;
                    let dy = bu[0][a] * bv[1][b] * wt;
                    out.d_xi[k] = dx;
                    out.d_eta[k] = dy;
                    w_xi += dx;
                    w_eta += dy;
                }
            }
        }
        if polynomial {
            return;
        }
        let inv = 1.0 / w;
        for k in 0..n {
            out.values[k] *= inv;
            if grads {
                out.d_xi[k] = (out.d_xi[k] - out.values[k] * w_xi) * inv;
                out.d_eta[k] = (out.d_eta[k] - out.values[k] * w_eta) * inv;
            }
        }
    }

    /// Local basis at a parametric point; parameters are clamped to the box.
    pub fn tensor_basis(&self, xi: f64, eta: f64, grads: bool, out: &mut TensorBasis) {
        let xi = self.kv_u.clamp(xi);
        let eta = self.kv_v.clamp(eta);
        let su = self.kv_u.span_of(xi);
        let sv = self.kv_v.span_of(eta);
        self.basis_on_spans(su, sv, xi, eta, grads, out);
    }

    fn combine(&self, basis: &TensorBasis) -> Point {
        let m_b = self.n_u();
        let mut x = [0.0; 2];
        for k in 0..basis.len() {
            let c = self.points[basis.tensor_index(k, m_b)];
            x[0] += basis.values[k] * c[0];
            x[1] += basis.values[k] * c[1];
        }
        x
    }

    fn point_unchecked(&self, xi: f64, eta: f64) -> Point {
        let mut basis = TensorBasis::default();
        self.tensor_basis(xi, eta, false, &mut basis);
        self.combine(&basis)
    }

    /// Point and Jacobian `J[r][c] = d x_r / d xi_c`.
    pub(crate) fn eval_with_jacobian(&self, xi: f64, eta: f64, basis: &mut TensorBasis) -> (Point, Mat2) {
        self.tensor_basis(xi, eta, true, basis);
        let m_b = self.n_u();
        let mut x = [0.0; 2];
        let mut j = [[0.0; 2]; 2];
        for k in 0..basis.len() {
            let c = self.points[basis.tensor_index(k, m_b)];
            for r in 0..2 {
                x[r] += basis.values[k] * c[r];
                j[r][0] += basis.d_xi[k] * c[r];
                j[r][1] += basis.d_eta[k] * c[r];
            }
        }
        (x, j)
    }

    pub fn surface_eval(&self, xi: f64, eta: f64) -> Result<Point> {
        self.check_domain(xi, eta)?;
        Ok(self.point_unchecked(xi, eta))
    }

    pub fn surface_jacobian(&self, xi: f64, eta: f64) -> Result<(Mat2, f64)> {
        self.check_domain(xi, eta)?;
        let (_, j) = self.eval_with_jacobian(xi, eta, &mut TensorBasis::default());
        let det = det2(&j);
        if !(det > 0.0) {
            return Err(Error::Geometry(format!(
                "Jacobian determinant {det} at ({xi}, {eta}) is not positive"
            )));
        }
        Ok((j, det))
    }

    fn project(&self, xi: f64, eta: f64) -> [f64; 2] {
        let eta = if self.closed_v {
            let (a, b) = (self.kv_v.first(), self.kv_v.last());
            a + (eta - a).rem_euclid(b - a)
        } else {
            self.kv_v.clamp(eta)
        };
        [self.kv_u.clamp(xi), eta]
    }

    /// Locates `x` in the parameter domain. Points outside the patch image are
    /// projected onto the nearest parametric boundary and reported as clamped.
    pub fn invert(&self, x: Point, seed: Option<[f64; 2]>) -> Result<Inversion> {
        if let Some(rect) = &self.rectangle {
            return Ok(self.invert_rectangle(rect, x));
        }
        let tol = 1e-10 * self.diameter;
        let mut basis = TensorBasis::default();
        if let Some(s) = seed {
            if let Some(r) = self.newton(x, s, tol, &mut basis) {
                return Ok(r);
            }
        }
        let best = self
            .seeds
            .iter()
            .min_by(|a, b| dist2(a.1, x).total_cmp(&dist2(b.1, x)))
            .map(|s| s.0)
            .expect("seed grid is never empty");
        self.newton(x, best, tol, &mut basis).ok_or_else(|| Error::Inversion {
            x: x[0],
            y: x[1],
            reason: format!("no convergence within {MAX_NEWTON} iterations"),
        })
    }

    fn invert_rectangle(&self, rect: &Rectangle, x: Point) -> Inversion {
        let d = [x[0] - rect.origin[0], x[1] - rect.origin[1]];
        let s = (d[0] * rect.e_u[0] + d[1] * rect.e_u[1])
            / (rect.e_u[0] * rect.e_u[0] + rect.e_u[1] * rect.e_u[1]);
        let t = (d[0] * rect.e_v[0] + d[1] * rect.e_v[1])
            / (rect.e_v[0] * rect.e_v[0] + rect.e_v[1] * rect.e_v[1]);
        let (a, b) = (self.kv_u.first(), self.kv_u.last());
        let (c, e) = (self.kv_v.first(), self.kv_v.last());
        let xi = a + s * (b - a);
        let eta = c + t * (e - c);
        let [cxi, ceta] = self.project(xi, eta);
        let len_u = (rect.e_u[0] * rect.e_u[0] + rect.e_u[1] * rect.e_u[1]).sqrt();
        let len_v = (rect.e_v[0] * rect.e_v[0] + rect.e_v[1] * rect.e_v[1]).sqrt();
        let off = (s - s.clamp(0.0, 1.0)).abs() * len_u + (t - t.clamp(0.0, 1.0)).abs() * len_v;
        Inversion {
            xi: cxi,
            eta: ceta,
            clamped: off > 1e-12 * self.diameter,
        }
    }

    fn newton(&self, x: Point, start: [f64; 2], tol: f64, basis: &mut TensorBasis) -> Option<Inversion> {
        let lo = [self.kv_u.first(), self.kv_v.first()];
        let hi = [self.kv_u.last(), self.kv_v.last()];
        let mut cur = self.project(start[0], start[1]);
        let (s, mut jac) = self.eval_with_jacobian(cur[0], cur[1], basis);
        let mut r = [s[0] - x[0], s[1] - x[1]];
        let mut f = norm(r);
        for _ in 0..MAX_NEWTON {
            if f <= tol {
                return Some(Inversion {
                    xi: cur[0],
                    eta: cur[1],
                    clamped: false,
                });
            }
            let mut d = lm_step(&jac, r);
            let mut active = [false; 2];
            for c in 0..2 {
                let periodic = c == 1 && self.closed_v;
                if !periodic
                    && ((cur[c] <= lo[c] && d[c] < 0.0) || (cur[c] >= hi[c] && d[c] > 0.0))
                {
                    active[c] = true;
                }
            }
            match active {
                [true, true] => return self.boundary_result(cur, f),
                [true, false] | [false, true] => {
                    let free = if active[0] { 1 } else { 0 };
                    let col = [jac[0][free], jac[1][free]];
                    let cc = col[0] * col[0] + col[1] * col[1];
                    d = [0.0; 2];
                    if cc > 0.0 {
                        d[free] = -(col[0] * r[0] + col[1] * r[1]) / cc;
                    }
                }
                _ => {}
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = self.project(cur[0] + alpha * d[0], cur[1] + alpha * d[1]);
                let (s, j) = self.eval_with_jacobian(cand[0], cand[1], basis);
                let rc = [s[0] - x[0], s[1] - x[1]];
                let fc = norm(rc);
                if fc < f {
                    accepted = Some((cand, j, rc, fc));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((cand, j, rc, fc)) => {
                    let moved = (cand[0] - cur[0]).abs().max((cand[1] - cur[1]).abs());
                    cur = cand;
                    jac = j;
                    r = rc;
                    f = fc;
                    if moved < 1e-15 && f > tol {
                        return self.boundary_result(cur, f);
                    }
                }
                None => return self.boundary_result(cur, f),
            }
        }
        (f <= tol).then_some(Inversion {
            xi: cur[0],
            eta: cur[1],
            clamped: false,
        })
    }

    /// Accepts a stalled iterate only if it sits on the parametric boundary,
    /// i.e. the target lies outside the patch image.
    fn boundary_result(&self, cur: [f64; 2], f: f64) -> Option<Inversion> {
        let on_u = cur[0] <= self.kv_u.first() || cur[0] >= self.kv_u.last();
        let on_v = !self.closed_v && (cur[1] <= self.kv_v.first() || cur[1] >= self.kv_v.last());
        if on_u || on_v {
            Some(Inversion {
                xi: cur[0],
                eta: cur[1],
                clamped: f > 1e-10 * self.diameter,
            })
        } else {
            None
        }
    }

    /// k-refinement in both directions to degree `degree` with `nx × ny`
    /// uniform subdivisions; the geometry is unchanged.
    pub fn k_refine(&self, degree: usize, nx: usize, ny: usize) -> Result<Patch> {
        let (m_b, l_b) = (self.n_u(), self.n_v());
        let pw: Vec<[f64; 3]> = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| [p[0] * w, p[1] * w, w])
            .collect();
        let mut kv_u = None;
        let mut rows = Vec::with_capacity(l_b);
        for j in 0..l_b {
            let (kv, row) =
                nurbs::k_refine_homogeneous(&self.kv_u, &pw[j * m_b..(j + 1) * m_b], degree, nx)?;
            kv_u = Some(kv);
            rows.push(row);
        }
        let kv_u = kv_u.expect("patch has at least one row");
        let new_m = kv_u.num_basis();
        let mut kv_v = None;
        let mut cols = Vec::with_capacity(new_m);
        for i in 0..new_m {
            let col: Vec<[f64; 3]> = rows.iter().map(|r| r[i]).collect();
            let (kv, c) = nurbs::k_refine_homogeneous(&self.kv_v, &col, degree, ny)?;
            kv_v = Some(kv);
            cols.push(c);
        }
        let kv_v = kv_v.expect("patch has at least one column");
        let new_l = kv_v.num_basis();
        let mut weights = Vec::with_capacity(new_m * new_l);
        let mut points = Vec::with_capacity(new_m * new_l);
        for j in 0..new_l {
            for col in &cols {
                let q = col[j];
                weights.push(q[2]);
                points.push([q[0] / q[2], q[1] / q[2]]);
            }
        }
        let patch = Patch::new(kv_u, kv_v, weights, points)?;
        if self.closed_v {
            patch.closed_in_v()
        } else {
            Ok(patch)
        }
    }
}

#[inline]
pub fn det2(j: &Mat2) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

#[inline]
fn norm(r: [f64; 2]) -> f64 {
    (r[0] * r[0] + r[1] * r[1]).sqrt()
}

#[inline]
fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lightly regularized Gauss–Newton step solving `J d = -r`.
fn lm_step(j: &Mat2, r: [f64; 2]) -> [f64; 2] {
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let c = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let lambda = 1e-14 * (a + c);
    let (a, c) = (a + lambda, c + lambda);
    let g0 = -(j[0][0] * r[0] + j[1][0] * r[1]);
    let g1 = -(j[0][1] * r[0] + j[1][1] * r[1]);
    let det = a * c - b * b;
    if det == 0.0 {
        return [0.0; 2];
    }
    [(c * g0 - b * g1) / det, (a * g1 - b * g0) / det]
}

pub fn surface_eval(patch: &Patch, xi: f64, eta: f64) -> Result<Point> {
    patch.surface_eval(xi, eta)
}

pub fn surface_jacobian(patch: &Patch, xi: f64, eta: f64) -> Result<(Mat2, f64)> {
    patch.surface_jacobian(xi, eta)
}

pub fn point_invert(patch: &Patch, x: Point, seed: Option<[f64; 2]>) -> Result<(f64, f64)> {
    let inv = patch.invert(x, seed)?;
    Ok((inv.xi, inv.eta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    /// `[x0, x1] × [y0, y1]`.
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disk { center: Point, radius: f64 },
    Annulus { center: Point, r_in: f64, r_out: f64 },
}

pub fn preset_geometry(kind: GeometryKind) -> Result<Patch> {
    match kind {
        GeometryKind::Rectangle { x0, x1, y0, y1 } => {
            if !(x1 > x0 && y1 > y0) {
                return Err(Error::Argument(format!(
                    "rectangle [{x0}, {x1}] x [{y0}, {y1}] is empty"
                )));
            }
            let kv = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1)?;
            Patch::new(
                kv.clone(),
                kv,
                vec![1.0; 4],
                vec![[x0, y0], [x1, y0], [x0, y1], [x1, y1]],
            )
        }
        GeometryKind::Disk { center, radius } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::Argument(format!("disk radius {radius} must be positive")));
            }
            let h = FRAC_1_SQRT_2;
            let unit = [
                [-h, -h],
                [0.0, -SQRT_2],
                [h, -h],
                [-SQRT_2, 0.0],
                [0.0, 0.0],
                [SQRT_2, 0.0],
                [-h, h],
                [0.0, SQRT_2],
                [h, h],
            ];
            let w1 = [1.0, h, 1.0];
            let weights = (0..9).map(|m| w1[m % 3] * w1[m / 3]).collect();
            let points = unit
                .iter()
                .map(|p| [center[0] + radius * p[0], center[1] + radius * p[1]])
                .collect();
            let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2)?;
            Patch::new(kv.clone(), kv, weights, points)
        }
        GeometryKind::Annulus { center, r_in, r_out } => {
            if !(r_in > 0.0 && r_out > r_in && r_out.is_finite()) {
                return Err(Error::Argument(format!(
                    "annulus radii ({r_in}, {r_out}) must satisfy 0 < r_in < r_out"
                )));
            }
            let kv_u = KnotVector::new(vec![0.0, 0.0, 1.0, 1.0], 1)?;
            let kv_v = KnotVector::new(
                vec![0., 0., 0., 0.25, 0.25, 0.5, 0.5, 0.75, 0.75, 1., 1., 1.],
                2,
            )?;
            let mut weights = Vec::with_capacity(18);
            let mut points = Vec::with_capacity(18);
            for k in 0..9 {
                let theta = k as f64 * std::f64::consts::FRAC_PI_4;
                let (s, c) = theta.sin_cos();
                let (scale, w) = if k % 2 == 0 { (1.0, 1.0) } else { (SQRT_2, FRAC_1_SQRT_2) };
                // snap the seam so the closing rows coincide bit for bit
                let (s, c) = if k == 8 { (0.0, 1.0) } else { (s, c) };
                for r in [r_in, r_out] {
                    points.push([center[0] + r * scale * c, center[1] + r * scale * s]);
                    weights.push(w);
                }
            }
            Patch::new(kv_u, kv_v, weights, points)?.closed_in_v()
        }
    }
}

/// A nonempty knot-span rectangle of the refined patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub span_u: usize,
    pub span_v: usize,
    pub xi: [f64; 2],
    pub eta: [f64; 2],
}

impl Element {
    /// `(xi_{i+1} - xi_i)(eta_{j+1} - eta_j) / 4`, the parent-map determinant.
    pub fn parent_scale(&self) -> f64 {
        0.25 * (self.xi[1] - self.xi[0]) * (self.eta[1] - self.eta[0])
    }
}

pub fn parent_to_param(element: &Element, xi_bar: f64, eta_bar: f64) -> (f64, f64) {
    let [a, b] = element.xi;
    let [c, d] = element.eta;
    (
        0.5 * ((b - a) * xi_bar + (b + a)),
        0.5 * ((d - c) * eta_bar + (d + c)),
    )
}

/// Elements of the analysis space together with the exact geometry.
/// The geometry map is evaluated on the original (coarse) patch, the
/// discrete space lives on its k-refinement.
#[derive(Debug, Clone)]
pub struct Mesh {
    geometry: Patch,
    space: Patch,
    elements: Vec<Element>,
    ne_u: usize,
    ne_v: usize,
    col_of_span_u: Vec<usize>,
    row_of_span_v: Vec<usize>,
}

impl Mesh {
    pub fn new(geometry: Patch, degree: usize, nx: usize, ny: usize) -> Result<Self> {
        if degree < geometry.kv_u().degree() || degree < geometry.kv_v().degree() {
            return Err(Error::Argument(format!(
                "degree {degree} is below the geometry degree ({}, {})",
                geometry.kv_u().degree(),
                geometry.kv_v().degree()
            )));
        }
        let space = geometry.k_refine(degree, nx, ny)?;
        Self::from_patches(geometry, space)
    }

    /// Uses `space` directly as the analysis patch; it must describe the same
    /// geometry as `geometry` on a superset of its knots.
    pub fn from_patches(geometry: Patch, space: Patch) -> Result<Self> {
        let spans_u = space.kv_u().spans();
        let spans_v = space.kv_v().spans();
        let mut col_of_span_u = vec![usize::MAX; space.n_u()];
        let mut row_of_span_v = vec![usize::MAX; space.n_v()];
        for (c, &s) in spans_u.iter().enumerate() {
            col_of_span_u[s] = c;
        }
        for (r, &s) in spans_v.iter().enumerate() {
            row_of_span_v[s] = r;
        }
        let ku = space.kv_u().knots();
        let kv = space.kv_v().knots();
        let mut elements = Vec::with_capacity(spans_u.len() * spans_v.len());
        for &sv in &spans_v {
            for &su in &spans_u {
                elements.push(Element {
                    span_u: su,
                    span_v: sv,
                    xi: [ku[su], ku[su + 1]],
                    eta: [kv[sv], kv[sv + 1]],
                });
            }
        }
        Ok(Mesh {
            geometry,
            space,
            elements,
            ne_u: spans_u.len(),
            ne_v: spans_v.len(),
            col_of_span_u,
            row_of_span_v,
        })
    }

    pub fn geometry(&self) -> &Patch {
        &self.geometry
    }

    pub fn space(&self) -> &Patch {
        &self.space
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn elements_per_direction(&self) -> (usize, usize) {
        (self.ne_u, self.ne_v)
    }

    pub fn degree(&self) -> (usize, usize) {
        (self.space.kv_u().degree(), self.space.kv_v().degree())
    }

    /// Number of local functions per element, `(p+1)(q+1)`.
    pub fn local_size(&self) -> usize {
        let (p, q) = self.degree();
        (p + 1) * (q + 1)
    }

    /// Element containing a parametric point (clamped into the box).
    pub fn element_at(&self, xi: f64, eta: f64) -> usize {
        let su = self.space.kv_u().span_of(self.space.kv_u().clamp(xi));
        let sv = self.space.kv_v().span_of(self.space.kv_v().clamp(eta));
        self.col_of_span_u[su] + self.row_of_span_v[sv] * self.ne_u
    }

    /// Control-net indices of the functions supported on element `e`.
    pub fn support(&self, e: usize) -> Vec<usize> {
        let el = &self.elements[e];
        let (p, q) = self.degree();
        let m_b = self.space.n_u();
        let mut out = Vec::with_capacity((p + 1) * (q + 1));
        for b in 0..=q {
            for a in 0..=p {
                out.push((el.span_u - p + a) + (el.span_v - q + b) * m_b);
            }
        }
        out
    }

    pub fn parent_to_param(&self, e: usize, xi_bar: f64, eta_bar: f64) -> (f64, f64) {
        parent_to_param(&self.elements[e], xi_bar, eta_bar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn unit_square() -> Patch {
        preset_geometry(GeometryKind::Rectangle { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }).unwrap()
    }

    fn disk() -> Patch {
        preset_geometry(GeometryKind::Disk { center: [1.25, 1.25], radius: 1.25 }).unwrap()
    }

    fn annulus() -> Patch {
        preset_geometry(GeometryKind::Annulus { center: [0.0, 0.0], r_in: 0.5, r_out: 1.0 }).unwrap()
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn parent_map_examples() {
        let el = |xi: [f64; 2], eta: [f64; 2]| Element { span_u: 0, span_v: 0, xi, eta };
        assert_eq!(parent_to_param(&el([0.0, 0.5], [0.0, 0.5]), 0.0, 0.0), (0.25, 0.25));
        assert_eq!(parent_to_param(&el([0.0, 1.0], [0.0, 1.0]), -1.0, -1.0), (0.0, 0.0));
        assert_eq!(parent_to_param(&el([0.5, 1.0], [0.0, 0.5]), 1.0, -1.0), (1.0, 0.0));
    }

    #[test]
    fn identity_and_scaled_square() {
        let sq = unit_square();
        assert_eq!(sq.surface_eval(0.3, 0.7).unwrap(), [0.3, 0.7]);
        let (j, det) = sq.surface_jacobian(0.4, 0.1).unwrap();
        assert_eq!(j, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(det, 1.0);
        let (xi, eta) = point_invert(&sq, [0.3, 0.7], None).unwrap();
        assert!((xi - 0.3).abs() < 1e-12 && (eta - 0.7).abs() < 1e-12);
        assert!(matches!(sq.surface_eval(1.1, 0.5), Err(Error::Domain(_))));

        let big = preset_geometry(GeometryKind::Rectangle { x0: 0.0, x1: TAU, y0: 0.0, y1: TAU }).unwrap();
        assert_eq!(big.control_points().len(), 4);
        assert!(big.weights().iter().all(|&w| w == 1.0));
        let (j, det) = big.surface_jacobian(0.2, 0.9).unwrap();
        assert!((j[0][0] - TAU).abs() < 1e-14 && (j[1][1] - TAU).abs() < 1e-14);
        assert!(j[0][1].abs() < 1e-15 && j[1][0].abs() < 1e-15);
        assert!((det - 4.0 * PI * PI).abs() < 1e-12);
        let (xi, eta) = point_invert(&big, [PI, PI], None).unwrap();
        assert!((xi - 0.5).abs() < 1e-12 && (eta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corners_interpolate_control_points() {
        for patch in [unit_square(), disk(), annulus()] {
            let s = patch.surface_eval(0.0, 0.0).unwrap();
            let c = patch.control_points()[0];
            assert!((s[0] - c[0]).abs() < 1e-15 && (s[1] - c[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn disk_boundary_is_exact() {
        let d = disk();
        for s in 0..1000 {
            let t = s as f64 / 999.0;
            for (xi, eta) in [(t, 0.0), (t, 1.0), (0.0, t), (1.0, t)] {
                let p = d.surface_eval(xi, eta).unwrap();
                let r = ((p[0] - 1.25).powi(2) + (p[1] - 1.25).powi(2)).sqrt();
                assert!((r - 1.25).abs() < 1e-12, "({xi}, {eta}) -> {r}");
            }
        }
    }

    #[test]
    fn annulus_boundaries_are_exact() {
        let a = annulus();
        for s in 0..1000 {
            let t = s as f64 / 999.0;
            for (xi, radius) in [(0.0, 0.5), (1.0, 1.0)] {
                let p = a.surface_eval(xi, t).unwrap();
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - radius).abs() < 1e-12);
            }
        }
        assert!(a.is_closed_v());
        assert!(matches!(
            preset_geometry(GeometryKind::Annulus { center: [0.0, 0.0], r_in: 1.0, r_out: 0.5 }),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            preset_geometry(GeometryKind::Disk { center: [0.0, 0.0], radius: 0.0 }),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn disk_jacobian_matches_finite_differences() {
        let d = disk();
        let mut st = 7;
        let h = 1e-6;
        for _ in 0..100 {
            let (xi, eta) = (0.01 + 0.98 * lcg(&mut st), 0.01 + 0.98 * lcg(&mut st));
            let (j, det) = d.surface_jacobian(xi, eta).unwrap();
            let px = d.surface_eval(xi + h, eta).unwrap();
            let mx = d.surface_eval(xi - h, eta).unwrap();
            let py = d.surface_eval(xi, eta + h).unwrap();
            let my = d.surface_eval(xi, eta - h).unwrap();
            for r in 0..2 {
                let fd = [(px[r] - mx[r]) / (2.0 * h), (py[r] - my[r]) / (2.0 * h)];
                for c in 0..2 {
                    assert!((j[r][c] - fd[c]).abs() < 1e-6 * j[r][c].abs().max(1.0));
                }
            }
            assert!(det > 0.0);
        }
    }

    #[test]
    fn inversion_roundtrip() {
        for patch in [disk(), annulus()] {
            let mut st = 99;
            for _ in 0..100 {
                let (xi, eta) = (0.02 + 0.96 * lcg(&mut st), 0.02 + 0.96 * lcg(&mut st));
                let x = patch.surface_eval(xi, eta).unwrap();
                let inv = patch.invert(x, None).unwrap();
                assert!(!inv.clamped);
                assert!((inv.xi - xi).abs() < 1e-8 && (inv.eta - eta).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn outside_points_are_clamped() {
        let sq = unit_square();
        let inv = sq.invert([1.3, 0.4], Some([0.5, 0.5])).unwrap();
        assert!(inv.clamped);
        assert!((inv.xi - 1.0).abs() < 1e-15 && (inv.eta - 0.4).abs() < 1e-12);
        let inv = sq.invert([-0.2, 1.7], None).unwrap();
        assert!(inv.clamped && inv.xi == 0.0 && inv.eta == 1.0);

        let d = disk();
        let inv = d.invert([1.25 + 1.5, 1.25], None).unwrap();
        assert!(inv.clamped);
        let p = d.surface_eval(inv.xi, inv.eta).unwrap();
        assert!((p[0] - 2.5).abs() < 1e-8 && (p[1] - 1.25).abs() < 1e-8);
    }

    #[test]
    fn annulus_inversion_across_the_seam() {
        let a = annulus();
        let x = a.surface_eval(0.5, 0.999).unwrap();
        let inv = a.invert(x, Some([0.5, 0.01])).unwrap();
        assert!(!inv.clamped);
        let y = a.surface_eval(inv.xi, inv.eta).unwrap();
        assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
    }

    #[test]
    fn refinement_preserves_geometry() {
        for patch in [unit_square(), disk(), annulus()] {
            let fine = patch.k_refine(4, 5, 6).unwrap();
            assert_eq!(fine.kv_u().degree(), 4);
            for s in 0..15 {
                for t in 0..15 {
                    let (xi, eta) = (s as f64 / 14.0, t as f64 / 14.0);
                    let a = patch.surface_eval(xi, eta).unwrap();
                    let b = fine.surface_eval(xi, eta).unwrap();
                    assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mesh_structure() {
        let mesh = Mesh::new(disk(), 5, 16, 16).unwrap();
        assert_eq!(mesh.space().ndof(), 441);
        assert_eq!(mesh.num_elements(), 256);
        let mut area = 0.0;
        for (e, el) in mesh.elements().iter().enumerate() {
            assert_eq!(mesh.support(e).len(), 36);
            area += (el.xi[1] - el.xi[0]) * (el.eta[1] - el.eta[0]);
            let (xi, eta) = mesh.parent_to_param(e, 0.3, -0.2);
            assert_eq!(mesh.element_at(xi, eta), e);
        }
        assert!((area - 1.0).abs() < 1e-14);
        assert!(Mesh::new(disk(), 1, 4, 4).is_err());
    }

    #[test]
    fn composition_matches_direct_map() {
        let mesh = Mesh::new(disk(), 3, 3, 3).unwrap();
        let rule = crate::quadrature::tensor_rule(4, 4).unwrap();
        for e in 0..mesh.num_elements() {
            let el = mesh.elements()[e];
            for node in &rule.nodes {
                let (xi, eta) = parent_to_param(&el, node[0], node[1]);
                let composed = mesh.geometry().surface_eval(xi, eta).unwrap();
                let xi2 = 0.5 * ((el.xi[1] - el.xi[0]) * node[0] + (el.xi[1] + el.xi[0]));
                let eta2 = 0.5 * ((el.eta[1] - el.eta[0]) * node[1] + (el.eta[1] + el.eta[0]));
                assert_eq!(composed, mesh.geometry().surface_eval(xi2, eta2).unwrap());
                let (_, det) = mesh.geometry().surface_jacobian(xi, eta).unwrap();
                assert!(det > 0.0);
            }
        }
    }
}
