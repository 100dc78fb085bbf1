//! Semi-Lagrangian transport: backward characteristic tracing, host-element
//! search, field evaluation at departure points and projection loads.

use rayon::prelude::*;

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::geometry::{Point, TensorBasis};

/// Treatment of departure points that leave the physical domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainPolicy {
    /// Project onto the parametric boundary.
    Clamp,
    /// Wrap into the box `[lo, hi)`; for fields periodic on a rectangle.
    Periodic { lo: Point, hi: Point },
}

impl DomainPolicy {
    pub fn wrap(&self, x: Point) -> Point {
        match *self {
            DomainPolicy::Clamp => x,
            DomainPolicy::Periodic { lo, hi } => {
                let mut y = x;
                for d in 0..2 {
                    let len = hi[d] - lo[d];
                    let r = (x[d] - lo[d]).rem_euclid(len);
                    y[d] = lo[d] + if r >= len { 0.0 } else { r };
                }
                y
            }
        }
    }
}

fn finite(a: Point, at: Point) -> Result<Point> {
    if a[0].is_finite() && a[1].is_finite() {
        Ok(a)
    } else {
        Err(Error::Numerical(format!(
            "non-finite velocity at ({}, {})",
            at[0], at[1]
        )))
    }
}

/// Three-stage Runge–Kutta backward trace from `x` at `t_arrival` over a
/// step `dt`. Stage velocities are sampled at `t_arrival`,
/// `t_arrival - dt/2` and `t_arrival - dt`.
pub fn trace_departure_rk3(
    x: Point,
    velocity: &(dyn Fn(Point, f64) -> Point + Sync),
    t_arrival: f64,
    dt: f64,
) -> Result<Point> {
    trace_with_policy(x, velocity, t_arrival, dt, DomainPolicy::Clamp)
}

/// As [`trace_departure_rk3`], wrapping stage points before sampling the
/// velocity and wrapping the result.
pub fn trace_with_policy(
    x: Point,
    velocity: &(dyn Fn(Point, f64) -> Point + Sync),
    t_arrival: f64,
    dt: f64,
    policy: DomainPolicy,
) -> Result<Point> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("trace step must be positive, got {dt}")));
    }
    let a0 = finite(velocity(policy.wrap(x), t_arrival), x)?;
    let k1 = [x[0] - dt * a0[0], x[1] - dt * a0[1]];
    let a1 = finite(velocity(policy.wrap(k1), t_arrival - 0.5 * dt), k1)?;
    let k2 = [
        0.75 * x[0] + 0.25 * k1[0] - 0.25 * dt * a1[0],
        0.75 * x[1] + 0.25 * k1[1] - 0.25 * dt * a1[1],
    ];
    let a2 = finite(velocity(policy.wrap(k2), t_arrival - dt), k2)?;
    let y = [
        x[0] / 3.0 + 2.0 / 3.0 * k2[0] - 2.0 / 3.0 * dt * a2[0],
        x[1] / 3.0 + 2.0 / 3.0 * k2[1] - 2.0 / 3.0 * dt * a2[1],
    ];
    Ok(policy.wrap(y))
}

/// A physical point located in the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub element: usize,
    pub param: [f64; 2],
    pub clamped: bool,
}

pub fn locate(disc: &Discretization, x: Point, seed: Option<[f64; 2]>) -> Result<Location> {
    let inv = disc.mesh().geometry().invert(x, seed)?;
    Ok(Location {
        element: disc.mesh().element_at(inv.xi, inv.eta),
        param: [inv.xi, inv.eta],
        clamped: inv.clamped,
    })
}

/// Field value at a located point together with the number of coefficients
/// read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub location: Location,
    pub touched: usize,
}

/// Evaluates `Σ ū_l N_l` at a physical point using only the functions
/// supported on the host element.
pub fn locate_and_evaluate(disc: &Discretization, coeffs: &[f64], x: Point) -> Result<Evaluation> {
    let location = locate(disc, x, None)?;
    let mut basis = TensorBasis::default();
    let (value, touched) = eval_located(disc, coeffs, &location, &mut basis);
    Ok(Evaluation {
        value,
        location,
        touched,
    })
}

fn element_basis(disc: &Discretization, loc: &Location, basis: &mut TensorBasis) {
    let el = disc.mesh().elements()[loc.element];
    disc.mesh()
        .space()
        .basis_on_spans(el.span_u, el.span_v, loc.param[0], loc.param[1], false, basis);
}

fn eval_located(disc: &Discretization, coeffs: &[f64], loc: &Location, basis: &mut TensorBasis) -> (f64, usize) {
    element_basis(disc, loc, basis);
    let dofs = disc.dofs().element_dofs(loc.element);
    let v = basis.values.iter().zip(dofs).map(|(n, &d)| n * coeffs[d]).sum();
    (v, dofs.len())
}

/// Field value at a parametric point.
pub fn evaluate_param(disc: &Discretization, coeffs: &[f64], param: [f64; 2], basis: &mut TensorBasis) -> f64 {
    let space = disc.mesh().space();
    let xi = param[0].clamp(space.kv_u().first(), space.kv_u().last());
    let eta = param[1].clamp(space.kv_v().first(), space.kv_v().last());
    let loc = Location {
        element: disc.mesh().element_at(xi, eta),
        param: [xi, eta],
        clamped: false,
    };
    eval_located(disc, coeffs, &loc, basis).0
}

/// Departure points of every quadrature point with the host element and
/// the local basis cached, so that repeated evaluations cost one dot product
/// per point.
#[derive(Debug, Clone)]
pub struct DepartureSet {
    nloc: usize,
    elements: Vec<usize>,
    basis: Vec<f64>,
    clamped: usize,
}

impl DepartureSet {
    /// Departure equal to arrival (zero velocity).
    pub fn identity(disc: &Discretization) -> Self {
        let quad = disc.quad();
        let nq = quad.points_per_element();
        let nloc = disc.dofs().nloc();
        let mut basis = Vec::with_capacity(quad.len() * nloc);
        for q in 0..quad.len() {
            basis.extend_from_slice(quad.values(q));
        }
        DepartureSet {
            nloc,
            elements: (0..quad.len()).map(|q| q / nq).collect(),
            basis,
            clamped: 0,
        }
    }

    /// Traces every quadrature point back over `dt` from `t_arrival`.
    pub fn trace(
        disc: &Discretization,
        velocity: &(dyn Fn(Point, f64) -> Point + Sync),
        t_arrival: f64,
        dt: f64,
        policy: DomainPolicy,
    ) -> Result<Self> {
        let quad = disc.quad();
        let nloc = disc.dofs().nloc();
        let located: Vec<Location> = (0..quad.len())
            .into_par_iter()
            .map(|q| {
                let y = trace_with_policy(quad.point(q), velocity, t_arrival, dt, policy)?;
                locate(disc, y, Some(quad.param(q)))
            })
            .collect::<Result<_>>()?;
        let mut basis = vec![0.0; quad.len() * nloc];
        basis
            .par_chunks_mut(nloc)
            .zip(&located)
            .for_each_init(TensorBasis::default, |tb, (out, loc)| {
                element_basis(disc, loc, tb);
                out.copy_from_slice(&tb.values);
            });
        Ok(DepartureSet {
            nloc,
            clamped: located.iter().filter(|l| l.clamped).count(),
            elements: located.iter().map(|l| l.element).collect(),
            basis,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Number of departure points projected back onto the boundary.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn host_element(&self, q: usize) -> usize {
        self.elements[q]
    }

    /// Field values at all departure points.
    pub fn values(&self, disc: &Discretization, coeffs: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(q, o)| {
            let b = &self.basis[q * self.nloc..(q + 1) * self.nloc];
            let dofs = disc.dofs().element_dofs(self.elements[q]);
            *o = b.iter().zip(dofs).map(|(n, &d)| n * coeffs[d]).sum();
        });
    }
}

/// Projection load `H_m = Σ_k Σ_g w_{k,g} ũ_{k,g} N_m(x_{k,g}) |J_k|` with
/// `ũ` the field at the departure points.
pub fn sl_rhs(disc: &Discretization, coeffs: &[f64], departures: &DepartureSet) -> Vec<f64> {
    let mut vals = vec![0.0; departures.len()];
    departures.values(disc, coeffs, &mut vals);
    disc.load_from_values(&vals)
}
