//! Univariate B-spline and NURBS bases on open knot vectors, together with
//! the refinement operations (knot insertion, degree elevation and
//! k-refinement) used to build analysis-suitable discretizations.
//!
//! Basis evaluation only ever returns the `p + 1` functions that can be
//! nonzero on the containing knot span, plus the span index.

use crate::error::{Error, Result};

/// Largest supported `degree + 1`; sizes the stack scratch used in the
/// basis recursions.
pub const MAX_ORDER: usize = 16;

pub(crate) type Row = [f64; MAX_ORDER];

/// An open (clamped) knot vector together with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree + 1 > MAX_ORDER {
            return Err(Error::Argument(format!(
                "degree {degree} exceeds the supported maximum {}",
                MAX_ORDER - 1
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Argument("knot values must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Argument("knots must be non-decreasing".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Argument(format!(
                "{} knots cannot carry {} basis functions of degree {degree}",
                knots.len(),
                degree + 1
            )));
        }
        let n = knots.len();
        let first = knots[0];
        let last = knots[n - 1];
        if !(first < last) {
            return Err(Error::Argument("knot vector spans an empty interval".into()));
        }
        let lead = knots.iter().take_while(|&&k| k == first).count();
        let trail = knots.iter().rev().take_while(|&&k| k == last).count();
        if lead != degree + 1 || trail != degree + 1 {
            return Err(Error::Argument(format!(
                "knot vector is not open: end multiplicities ({lead}, {trail}) but degree {degree} requires {}",
                degree + 1
            )));
        }
        let kv = KnotVector { knots, degree };
        for i in degree + 1..kv.num_basis() {
            if kv.multiplicity(kv.knots[i]) > degree + 1 {
                return Err(Error::Argument(format!(
                    "interior knot {} has multiplicity above degree + 1",
                    kv.knots[i]
                )));
            }
        }
        Ok(kv)
    }

    /// Open knot vector on `[0, 1]` with `n_spans` equal spans and simple
    /// interior knots.
    pub fn uniform(degree: usize, n_spans: usize) -> Result<Self> {
        if n_spans == 0 {
            return Err(Error::Argument("at least one span is required".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..n_spans).map(|j| j as f64 / n_spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        KnotVector::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `m_b = len - p - 1`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn multiplicity(&self, value: f64) -> usize {
        self.knots.iter().filter(|&&k| k == value).count()
    }

    /// Indices `i` of the nonempty spans `[knots[i], knots[i+1])`, in order.
    pub fn spans(&self) -> Vec<usize> {
        (self.degree..self.num_basis())
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .collect()
    }

    /// Locates `i` with `knots[i] <= xi < knots[i+1]`; the right endpoint maps
    /// to the last nonempty span.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        if !(xi >= self.first() && xi <= self.last()) {
            return Err(Error::Domain(format!(
                "parameter {xi} outside knot range [{}, {}]",
                self.first(),
                self.last()
            )));
        }
        Ok(self.span_of(xi))
    }

    /// Span lookup with the parameter clamped into the knot range.
    pub(crate) fn span_of(&self, xi: f64) -> usize {
        let n = self.num_basis() - 1;
        if xi >= self.knots[n + 1] {
            return n;
        }
        if xi <= self.knots[self.degree] {
            // Skip any repeated knots so the span is nonempty.
            let mut i = self.degree;
            while self.knots[i + 1] <= xi {
                i += 1;
            }
            return i;
        }
        let (mut lo, mut hi) = (self.degree, n + 1);
        let mut mid = (lo + hi) / 2;
        while xi < self.knots[mid] || xi >= self.knots[mid + 1] {
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    pub(crate) fn clamp(&self, xi: f64) -> f64 {
        xi.clamp(self.first(), self.last())
    }
}

/// The `p + 1` basis functions that may be nonzero at a parameter, with
/// derivatives. Function `j` of the local list is global function
/// `span - p + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis1D {
    pub span: usize,
    degree: usize,
    ders: Vec<Vec<f64>>,
}

impl LocalBasis1D {
    pub fn values(&self) -> &[f64] {
        &self.ders[0]
    }

    /// `k`-th derivative of each local function.
    pub fn derivative(&self, k: usize) -> &[f64] {
        &self.ders[k]
    }

    pub fn max_derivative(&self) -> usize {
        self.ders.len() - 1
    }

    pub fn first_index(&self) -> usize {
        self.span - self.degree
    }
}

/// Nonzero B-spline basis functions and derivatives up to order `n` on the
/// given span (Piegl & Tiller A2.3). `ders[k][j]` receives the `k`-th
/// derivative of local function `j`.
pub(crate) fn basis_ders_into(
    knots: &[f64],
    p: usize,
    span: usize,
    u: f64,
    n: usize,
    ders: &mut [Row],
) {
    let mut ndu = [[0.0; MAX_ORDER]; MAX_ORDER];
    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    if n == 0 {
        return;
    }

    let mut a = [[0.0; MAX_ORDER]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0, 1);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p as isize - k as isize;
            if r >= k {
                let rk = rk as usize;
                let pk = pk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1: isize = if rk >= -1 { 1 } else { -rk };
            let j2: isize = if (r as isize) - 1 <= pk {
                k as isize - 1
            } else {
                p as isize - r as isize
            };
            let mut j = j1;
            while j <= j2 {
                let ju = j as usize;
                let idx = (rk + j) as usize;
                let pku = pk as usize;
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[pku + 1][idx];
                d += a[s2][ju] * ndu[idx][pku];
                j += 1;
            }
            if r as isize <= pk {
                let pku = pk as usize;
                a[s2][k] = -a[s1][k - 1] / ndu[pku + 1][r];
                d += a[s2][k] * ndu[r][pku];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for j in 0..=p {
            ders[k][j] *= factor;
        }
        factor *= p.saturating_sub(k) as f64;
    }
}

/// Nonzero B-spline values (no derivatives) on the given span.
pub(crate) fn basis_into(knots: &[f64], p: usize, span: usize, u: f64, out: &mut Row) {
    let mut left = [0.0; MAX_ORDER];
    let mut right = [0.0; MAX_ORDER];
    out[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

pub fn bspline_basis(kv: &KnotVector, xi: f64, deriv_order: usize) -> Result<LocalBasis1D> {
    let p = kv.degree();
    if deriv_order > p {
        return Err(Error::Argument(format!(
            "derivative order {deriv_order} exceeds degree {p}"
        )));
    }
    let span = kv.find_span(xi)?;
    let mut rows = [[0.0; MAX_ORDER]; MAX_ORDER];
    basis_ders_into(kv.knots(), p, span, xi, deriv_order, &mut rows);
    Ok(LocalBasis1D {
        span,
        degree: p,
        ders: rows[..=deriv_order].iter().map(|r| r[..=p].to_vec()).collect(),
    })
}

pub(crate) fn check_weights(weights: &[f64], expected: usize) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::Argument(format!(
            "expected {expected} weights, got {}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Argument(format!(
            "weights must be strictly positive, found {w}"
        )));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Rational basis `B_i w_i / W` with derivatives from the quotient rule.
pub fn nurbs_basis(
    kv: &KnotVector,
    weights: &[f64],
    xi: f64,
    deriv_order: usize,
) -> Result<LocalBasis1D> {
    check_weights(weights, kv.num_basis())?;
    let b = bspline_basis(kv, xi, deriv_order)?;
    let p = kv.degree();
    let first = b.first_index();
    let local = &weights[first..=first + p];
    if local.iter().all(|&w| w == local[0]) {
        return Ok(b);
    }
    let weighted: Vec<Vec<f64>> = b
        .ders
        .iter()
        .map(|row| (0..=p).map(|j| row[j] * weights[first + j]).collect())
        .collect();
    let w_ders: Vec<f64> = weighted.iter().map(|row| row.iter().sum()).collect();
    let mut ders = vec![vec![0.0; p + 1]; deriv_order + 1];
    for k in 0..=deriv_order {
        for j in 0..=p {
            let mut v = weighted[k][j];
            for i in 1..=k {
                v -= binomial(k, i) * w_ders[i] * ders[k - i][j];
            }
            ders[k][j] = v / w_ders[0];
        }
    }
    Ok(LocalBasis1D {
        span: b.span,
        degree: p,
        ders,
    })
}

fn lerp<const N: usize>(a: &[f64; N], b: &[f64; N], alpha: f64) -> [f64; N] {
    let mut out = [0.0; N];
    for c in 0..N {
        out[c] = (1.0 - alpha) * a[c] + alpha * b[c];
    }
    out
}

/// Boehm single-knot insertion on homogeneous control points.
pub(crate) fn insert_knot_homogeneous<const N: usize>(
    kv: &KnotVector,
    pw: &[[f64; N]],
    u: f64,
) -> Result<(KnotVector, Vec<[f64; N]>)> {
    let p = kv.degree();
    if !(u > kv.first() && u < kv.last()) {
        return Err(Error::Argument(format!(
            "inserted knot {u} must lie strictly inside ({}, {})",
            kv.first(),
            kv.last()
        )));
    }
    let s = kv.multiplicity(u);
    if s + 1 > p {
        return Err(Error::Argument(format!(
            "inserting {u} would raise its multiplicity to {} > degree {p}",
            s + 1
        )));
    }
    let k = kv.span_of(u);
    let knots = kv.knots();
    let m = pw.len();
    let mut out = Vec::with_capacity(m + 1);
    for i in 0..=m {
        if i + p <= k {
            out.push(pw[i]);
        } else if i > k - s {
            out.push(pw[i - 1]);
        } else {
            let alpha = (u - knots[i]) / (knots[i + p] - knots[i]);
            out.push(lerp(&pw[i - 1], &pw[i], alpha));
        }
    }
    let mut new_knots = knots.to_vec();
    new_knots.insert(k + 1, u);
    Ok((KnotVector::new(new_knots, p)?, out))
}

/// Blossom of the degree-`p` polynomial piece living on span `k`, evaluated
/// at the `p` arguments in `t`.
fn blossom<const N: usize>(knots: &[f64], p: usize, pw: &[[f64; N]], k: usize, t: &[f64]) -> [f64; N] {
    let mut d: Vec<[f64; N]> = (0..=p).map(|j| pw[k - p + j]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = k - p + j;
            let alpha = (t[r - 1] - knots[i]) / (knots[i + p + 1 - r] - knots[i]);
            d[j] = lerp(&d[j - 1], &d[j], alpha);
        }
    }
    d[p]
}

/// Raises the degree by one, adding one to every knot multiplicity. New
/// control points come from the blossom identity
/// `Q_i = (1/(p+1)) sum_j b(u'_{i+1}, .., u'_{i+p+1} without u'_{i+1+j})`.
pub(crate) fn elevate_degree_homogeneous<const N: usize>(
    kv: &KnotVector,
    pw: &[[f64; N]],
) -> Result<(KnotVector, Vec<[f64; N]>)> {
    let p = kv.degree();
    let knots = kv.knots();
    let mut new_knots = Vec::with_capacity(knots.len() * 2);
    let mut i = 0;
    while i < knots.len() {
        let value = knots[i];
        let mult = knots[i..].iter().take_while(|&&k| k == value).count();
        new_knots.extend(std::iter::repeat_n(value, mult + 1));
        i += mult;
    }
    let elevated = KnotVector::new(new_knots, p + 1)?;
    let q = p + 1;
    let u = elevated.knots();
    let mut out = Vec::with_capacity(elevated.num_basis());
    let mut args = vec![0.0; p];
    for i in 0..elevated.num_basis() {
        let kk = (i..=i + q)
            .find(|&k| u[k] < u[k + 1])
            .ok_or_else(|| Error::Internal("basis function without support".into()))?;
        let span = kv.span_of(0.5 * (u[kk] + u[kk + 1]));
        let window = &u[i + 1..=i + q];
        let mut acc = [0.0; N];
        for skip in 0..q {
            let mut a = 0;
            for (j, &v) in window.iter().enumerate() {
                if j != skip {
                    args[a] = v;
                    a += 1;
                }
            }
            let b = blossom(knots, p, pw, span, &args);
            for c in 0..N {
                acc[c] += b[c];
            }
        }
        for c in acc.iter_mut() {
            *c /= q as f64;
        }
        out.push(acc);
    }
    Ok((elevated, out))
}

/// k-refinement: elevate to `target_degree`, then split every span of the
/// (uniform) parameter range into `n_subdivisions` pieces with simple knots.
/// Breakpoints that are already knots are left alone. The order matters:
/// inserting first would leave C^0 lines.
pub(crate) fn k_refine_homogeneous<const N: usize>(
    kv: &KnotVector,
    pw: &[[f64; N]],
    target_degree: usize,
    n_subdivisions: usize,
) -> Result<(KnotVector, Vec<[f64; N]>)> {
    if n_subdivisions < 1 {
        return Err(Error::Argument("n_subdivisions must be at least 1".into()));
    }
    if target_degree < kv.degree() {
        return Err(Error::Argument(format!(
            "target degree {target_degree} below current degree {}",
            kv.degree()
        )));
    }
    let mut kv = kv.clone();
    let mut pw = pw.to_vec();
    while kv.degree() < target_degree {
        (kv, pw) = elevate_degree_homogeneous(&kv, &pw)?;
    }
    let (a, b) = (kv.first(), kv.last());
    for j in 1..n_subdivisions {
        let u = a + (b - a) * j as f64 / n_subdivisions as f64;
        if kv.multiplicity(u) == 0 {
            (kv, pw) = insert_knot_homogeneous(&kv, &pw, u)?;
        }
    }
    Ok((kv, pw))
}

/// A planar NURBS curve.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    knots: KnotVector,
    weights: Vec<f64>,
    points: Vec<[f64; 2]>,
}

impl NurbsCurve {
    pub fn new(knots: KnotVector, weights: Vec<f64>, points: Vec<[f64; 2]>) -> Result<Self> {
        check_weights(&weights, knots.num_basis())?;
        if points.len() != knots.num_basis() {
            return Err(Error::Argument(format!(
                "expected {} control points, got {}",
                knots.num_basis(),
                points.len()
            )));
        }
        Ok(NurbsCurve {
            knots,
            weights,
            points,
        })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    fn homogeneous(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| [p[0] * w, p[1] * w, w])
            .collect()
    }

    fn from_homogeneous(knots: KnotVector, pw: Vec<[f64; 3]>) -> Result<Self> {
        let weights = pw.iter().map(|q| q[2]).collect();
        let points = pw.iter().map(|q| [q[0] / q[2], q[1] / q[2]]).collect();
        NurbsCurve::new(knots, weights, points)
    }

    pub fn point(&self, xi: f64) -> Result<[f64; 2]> {
        let basis = nurbs_basis(&self.knots, &self.weights, xi, 0)?;
        let first = basis.first_index();
        let mut out = [0.0; 2];
        for (j, &r) in basis.values().iter().enumerate() {
            out[0] += r * self.points[first + j][0];
            out[1] += r * self.points[first + j][1];
        }
        Ok(out)
    }

    pub fn knot_insert(&self, xi_new: f64) -> Result<Self> {
        let (kv, pw) = insert_knot_homogeneous(&self.knots, &self.homogeneous(), xi_new)?;
        Self::from_homogeneous(kv, pw)
    }

    pub fn degree_elevate(&self) -> Result<Self> {
        let (kv, pw) = elevate_degree_homogeneous(&self.knots, &self.homogeneous())?;
        Self::from_homogeneous(kv, pw)
    }

    pub fn k_refine(&self, target_degree: usize, n_subdivisions: usize) -> Result<Self> {
        let (kv, pw) =
            k_refine_homogeneous(&self.knots, &self.homogeneous(), target_degree, n_subdivisions)?;
        Self::from_homogeneous(kv, pw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    /// Textbook Cox–de Boor recursion over the full index range; independent
    /// of the triangular table used by the implementation.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last = *knots.last().unwrap();
            let inside = knots[i] <= x && x < knots[i + 1];
            // right endpoint belongs to the last nonempty span
            let at_end = x == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    fn quarter_circle() -> NurbsCurve {
        NurbsCurve::new(
            KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap(),
            vec![1.0, FRAC_1_SQRT_2, 1.0],
            vec![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap()
    }

    fn max_deviation(a: &NurbsCurve, b: &NurbsCurve, samples: usize) -> f64 {
        (0..samples)
            .map(|s| {
                let xi = s as f64 / (samples - 1) as f64;
                let (pa, pb) = (a.point(xi).unwrap(), b.point(xi).unwrap());
                (pa[0] - pb[0]).abs().max((pa[1] - pb[1]).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn find_span_examples() {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        assert_eq!(kv.find_span(0.3).unwrap(), 2);
        let kv = KnotVector::new(vec![0., 0., 0., 0.5, 1., 1., 1.], 2).unwrap();
        assert_eq!(kv.find_span(0.5).unwrap(), 3);
        assert_eq!(kv.find_span(1.0).unwrap(), 3);
        assert_eq!(kv.find_span(0.0).unwrap(), 2);
        assert!(matches!(kv.find_span(1.0 + 1e-9), Err(Error::Domain(_))));
        assert!(matches!(kv.find_span(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn knot_vector_validation() {
        assert!(KnotVector::new(vec![0., 0., 1., 0.5, 1., 1.], 2).is_err());
        assert!(KnotVector::new(vec![0., 0., 0.5, 1., 1., 1.], 2).is_err());
        assert!(KnotVector::new(vec![0., 0., 0., 0., 1., 1., 1.], 2).is_err());
        assert!(KnotVector::new(vec![0., 0., 1., 1.], 1).is_ok());
        let kv = KnotVector::uniform(3, 4).unwrap();
        assert_eq!(kv.num_basis(), 7);
        assert_eq!(kv.spans(), vec![3, 4, 5, 6]);
    }

    #[test]
    fn bspline_examples() {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        let b = bspline_basis(&kv, 0.5, 0).unwrap();
        assert_eq!(b.values(), &[0.25, 0.5, 0.25]);

        let kv = KnotVector::new(vec![0., 0., 0.5, 1., 1.], 1).unwrap();
        let b = bspline_basis(&kv, 0.25, 0).unwrap();
        assert_eq!(b.span, 1);
        assert!((b.values()[0] - 0.5).abs() < 1e-15 && (b.values()[1] - 0.5).abs() < 1e-15);

        assert!(matches!(bspline_basis(&kv, 0.25, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn bspline_matches_recursion_oracle() {
        let knots = vec![0., 0., 0., 0.5, 1., 1., 1.];
        let kv = KnotVector::new(knots.clone(), 2).unwrap();
        for &x in &[0.0, 0.25, 0.5, 0.77, 1.0] {
            let b = bspline_basis(&kv, x, 0).unwrap();
            let first = b.first_index();
            for (j, &v) in b.values().iter().enumerate() {
                let oracle = cox_de_boor(&knots, first + j, 2, x);
                assert!((v - oracle).abs() < 1e-15, "x={x} j={j}: {v} vs {oracle}");
            }
            let all: f64 = (0..kv.num_basis()).map(|i| cox_de_boor(&knots, i, 2, x)).sum();
            assert!((all - 1.0).abs() < 1e-15);
            assert!((b.values().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        // first function is (1 - 2x)^2 on the left span
        let b = bspline_basis(&kv, 0.25, 0).unwrap();
        assert!((b.values()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unit_weights_reduce_to_bspline() {
        let kv = KnotVector::new(vec![0., 0., 0., 0., 0.3, 0.6, 1., 1., 1., 1.], 3).unwrap();
        let w = vec![1.0; kv.num_basis()];
        for s in 0..=20 {
            let x = s as f64 / 20.0;
            let a = bspline_basis(&kv, x, 2).unwrap();
            let b = nurbs_basis(&kv, &w, x, 2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rational_quarter_circle() {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        let w = [1.0, FRAC_1_SQRT_2, 1.0];
        let r = nurbs_basis(&kv, &w, 0.5, 0).unwrap();
        // direct rational evaluation with Bernstein values (1/4, 1/2, 1/4)
        let den = 0.25 + 0.5 * FRAC_1_SQRT_2 + 0.25;
        let oracle = [0.25 / den, 0.5 * FRAC_1_SQRT_2 / den, 0.25 / den];
        for j in 0..3 {
            assert!((r.values()[j] - oracle[j]).abs() < 1e-15);
        }
        let pts = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let x: f64 = (0..3).map(|j| r.values()[j] * pts[j][0]).sum();
        let y: f64 = (0..3).map(|j| r.values()[j] * pts[j][1]).sum();
        assert!(((x * x + y * y).sqrt() - 1.0).abs() < 1e-12);
        assert!(matches!(
            nurbs_basis(&kv, &[1.0, 0.0, 1.0], 0.5, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kv = KnotVector::new(vec![0., 0., 0., 0., 0.2, 0.45, 0.7, 1., 1., 1., 1.], 3).unwrap();
        let w = vec![1.0, 0.7, 1.3, 0.9, 1.1, 0.8, 1.2];
        let h = 1e-6;
        let mut state = 12345u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = 0.01 + 0.98 * ((state >> 11) as f64 / (1u64 << 53) as f64);
            let r = nurbs_basis(&kv, &w, x, 2).unwrap();
            let full = |x: f64| {
                let b = nurbs_basis(&kv, &w, x, 0).unwrap();
                let mut v = vec![0.0; kv.num_basis()];
                for (j, &val) in b.values().iter().enumerate() {
                    v[b.first_index() + j] = val;
                }
                v
            };
            let (plus, minus) = (full(x + h), full(x - h));
            for (j, &d) in r.derivative(1).iter().enumerate() {
                let i = r.first_index() + j;
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "x={x} i={i}: {d} vs {fd}");
            }
            let s1: f64 = r.derivative(1).iter().sum();
            let s2: f64 = r.derivative(2).iter().sum();
            assert!(s1.abs() < 1e-11 && s2.abs() < 1e-9);
        }
    }

    #[test]
    fn bezier_knot_insertion_midpoints() {
        let kv = KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap();
        let pts = vec![[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]];
        let c = NurbsCurve::new(kv, vec![1.0; 3], pts.clone()).unwrap();
        let r = c.knot_insert(0.5).unwrap();
        assert_eq!(r.knots().knots(), &[0., 0., 0., 0.5, 1., 1., 1.]);
        let expect = [[0.0, 0.0], [0.5, 1.0], [2.0, 1.5], [3.0, 1.0]];
        for (a, b) in r.points().iter().zip(expect.iter()) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
        assert!(max_deviation(&c, &r, 100) < 1e-12);
    }

    #[test]
    fn repeated_insertion_up_to_degree() {
        let c = quarter_circle();
        let r = c.knot_insert(0.4).unwrap().knot_insert(0.4).unwrap();
        assert_eq!(r.knots().multiplicity(0.4), 2);
        assert!(max_deviation(&c, &r, 100) < 1e-12);
        assert!(matches!(r.knot_insert(0.4), Err(Error::Argument(_))));
        assert!(matches!(c.knot_insert(1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn line_degree_elevation() {
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let c = NurbsCurve::new(kv, vec![1.0, 1.0], vec![[0.0, 0.0], [2.0, 4.0]]).unwrap();
        let e = c.degree_elevate().unwrap();
        assert_eq!(e.knots().knots(), &[0., 0., 0., 1., 1., 1.]);
        let expect = [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]];
        for (a, b) in e.points().iter().zip(expect.iter()) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
        assert!(max_deviation(&c, &e, 100) < 1e-12);
    }

    #[test]
    fn elevated_circle_stays_on_circle() {
        let mut c = quarter_circle().knot_insert(0.3).unwrap();
        for _ in 0..3 {
            c = c.degree_elevate().unwrap();
            for s in 0..100 {
                let p = c.point(s as f64 / 99.0).unwrap();
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(c.knots().degree(), 5);
        assert_eq!(c.knots().multiplicity(0.3), 4);
    }

    #[test]
    fn k_refine_counts_and_invariance() {
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let c = NurbsCurve::new(kv, vec![1.0, 1.0], vec![[0.0, 1.0], [3.0, -2.0]]).unwrap();
        let r = c.k_refine(4, 32).unwrap();
        assert_eq!(r.knots().degree(), 4);
        assert_eq!(r.knots().spans().len(), 32);
        assert_eq!(r.knots().num_basis(), 36);
        for j in 1..32 {
            assert_eq!(r.knots().multiplicity(j as f64 / 32.0), 1);
        }
        assert!(max_deviation(&c, &r, 100) < 1e-12);

        let circle = quarter_circle().k_refine(5, 7).unwrap();
        assert!(max_deviation(&quarter_circle(), &circle, 100) < 1e-12);
        assert!(matches!(c.k_refine(4, 0), Err(Error::Argument(_))));
        assert!(matches!(circle.k_refine(2, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn elevation_and_insertion_do_not_commute() {
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let c = NurbsCurve::new(kv, vec![1.0, 1.0], vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let k = c.k_refine(3, 2).unwrap();
        let mut h = c.knot_insert(0.5).unwrap();
        for _ in 0..2 {
            h = h.degree_elevate().unwrap();
        }
        assert_eq!(k.knots().multiplicity(0.5), 1);
        assert_eq!(h.knots().multiplicity(0.5), 3);
        assert_eq!(k.knots().num_basis(), 5);
        assert_eq!(h.knots().num_basis(), 7);
        assert!(max_deviation(&k, &h, 50) < 1e-12);
    }

    #[test]
    fn partition_of_unity_dense_sampling() {
        let circle = quarter_circle().k_refine(4, 9).unwrap();
        let kv = circle.knots();
        for s in 0..1000 {
            let x = s as f64 / 999.0;
            let r = nurbs_basis(kv, circle.weights(), x, 0).unwrap();
            let sum: f64 = r.values().iter().sum();
            assert!((sum - 1.0).abs() < 1e-13);
            assert!(r.values().iter().all(|&v| v >= -1e-15));
            assert_eq!(r.values().len(), kv.degree() + 1);
        }
    }

    proptest! {
        #[test]
        fn insertion_preserves_random_curves(
            w in prop::collection::vec(0.2f64..3.0, 5),
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 5),
            u in 0.01f64..0.99,
        ) {
            let kv = KnotVector::new(vec![0., 0., 0., 0.4, 0.7, 1., 1., 1.], 2).unwrap();
            let c = NurbsCurve::new(kv, w, pts.iter().map(|&(x, y)| [x, y]).collect()).unwrap();
            let r = c.knot_insert(u).unwrap();
            prop_assert!(max_deviation(&c, &r, 60) < 1e-12);
            let e = c.degree_elevate().unwrap();
            prop_assert!(max_deviation(&c, &e, 60) < 1e-12);
        }
    }
}
