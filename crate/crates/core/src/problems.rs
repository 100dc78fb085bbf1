//! Benchmark problem definitions: reactions, diffusion, velocity fields,
//! initial data and exact solutions.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{GeometryKind, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    NonlinearScalar,
    ExactSystem,
    Schnakenberg,
    GrayScott,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::NonlinearScalar,
        ProblemKind::ExactSystem,
        ProblemKind::Schnakenberg,
        ProblemKind::GrayScott,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::NonlinearScalar => "nonlinear-scalar",
            ProblemKind::ExactSystem => "exact-system",
            ProblemKind::Schnakenberg => "schnakenberg",
            ProblemKind::GrayScott => "gray-scott",
        }
    }

    /// Parameter names accepted as overrides, with defaults.
    pub fn parameters(self) -> &'static [(&'static str, f64)] {
        match self {
            ProblemKind::NonlinearScalar => &[],
            ProblemKind::ExactSystem => &[("b", 100.0), ("c", 1.0)],
            ProblemKind::Schnakenberg => &[
                ("gamma", 100.0),
                ("alpha", 0.1305),
                ("beta", 0.7695),
                ("d1", 0.05),
                ("d2", 1.0),
                ("advection", 0.0),
                ("omega", 8.0),
            ],
            ProblemKind::GrayScott => &[("alpha", 0.024), ("beta", 0.06), ("d1", 8e-5), ("d2", 4e-5)],
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown problem `{s}` (expected one of nonlinear-scalar, exact-system, schnakenberg, gray-scott)"
                ))
            })
    }
}

/// Reaction terms `(f, g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reaction {
    /// `(f, g) = A (u, v)` with constant `A`.
    Linear([[f64; 2]; 2]),
    Schnakenberg { alpha: f64, beta: f64, gamma: f64 },
    GrayScott { alpha: f64, beta: f64 },
    /// `f = -u^2 + φ(x, t)` for the manufactured scalar problem.
    ScalarManufactured,
}

impl Reaction {
    #[inline]
    pub fn eval(&self, x: Point, t: f64, u: f64, v: f64) -> (f64, f64) {
        match *self {
            Reaction::Linear(a) => (a[0][0] * u + a[0][1] * v, a[1][0] * u + a[1][1] * v),
            Reaction::Schnakenberg { alpha, beta, gamma } => {
                let uuv = u * u * v;
                (gamma * (alpha - u + uuv), gamma * (beta - uuv))
            }
            Reaction::GrayScott { alpha, beta } => {
                let uvv = u * v * v;
                (-uvv + alpha * (1.0 - u), uvv - (alpha + beta) * v)
            }
            Reaction::ScalarManufactured => (-u * u + scalar_source(x, t), 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Reaction::Linear(a) if a.iter().flatten().all(|&c| c == 0.0))
    }
}

/// Source `φ` making `u = 1 + sin(x + y - t)/2` exact for
/// `u_t + u (u_x + u_y) - ∇·(u ∇u) = -u^2 + φ`.
pub fn scalar_source(x: Point, t: f64) -> f64 {
    let th = x[0] + x[1] - t;
    let (s, c) = th.sin_cos();
    let u = 1.0 + 0.5 * s;
    -0.5 * c + u * c + u * s - 0.5 * c * c + u * u
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffusion {
    Constant { d1: f64, d2: f64 },
    /// `d = u`, evaluated from the lagged solution.
    SolutionU,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Velocity {
    Zero,
    Constant(Point),
    /// `a = (-ω y, ω x)`.
    Toroidal { omega: f64 },
    /// `a = (u, u)` from the solution itself.
    SolutionDiagonal,
}

impl Velocity {
    /// Value for velocities that do not depend on the solution.
    pub fn eval(&self, x: Point) -> Option<Point> {
        match *self {
            Velocity::Zero => Some([0.0, 0.0]),
            Velocity::Constant(a) => Some(a),
            Velocity::Toroidal { omega } => Some(velocity_toroidal(omega, x)),
            Velocity::SolutionDiagonal => None,
        }
    }
}

pub fn velocity_toroidal(omega: f64, x: Point) -> Point {
    [-omega * x[1], omega * x[0]]
}

/// A complete benchmark description.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub reaction: Reaction,
    pub diffusion: Diffusion,
    pub velocity: Velocity,
    /// Single-component problem (`v` unused).
    pub scalar: bool,
    pub geometry: GeometryKind,
    /// Period box when the solution is periodic on the domain.
    pub periodic: Option<(Point, Point)>,
    /// Rate used to pick reaction substeps for stiff problems.
    pub stiffness: f64,
    pub params: BTreeMap<String, f64>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        let mut params: BTreeMap<String, f64> =
            kind.parameters().iter().map(|&(k, v)| (k.to_string(), v)).collect();
        for (k, v) in overrides {
            match params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::ConfigValue {
                        key: format!("param.{k}"),
                        message: format!("problem {kind} has no parameter `{k}`"),
                    })
                }
            }
        }
        let p = |k: &str| params[k];
        let positive = |k: &str| -> Result<f64> {
            let v = params[k];
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Argument(format!("parameter `{k}` must be positive, got {v}")))
            }
        };
        let square = |a: f64, b: f64| GeometryKind::Rectangle { x0: a, x1: b, y0: a, y1: b };
        let spec = match kind {
            ProblemKind::NonlinearScalar => ProblemSpec {
                kind,
                reaction: Reaction::ScalarManufactured,
                diffusion: Diffusion::SolutionU,
                velocity: Velocity::SolutionDiagonal,
                scalar: true,
                geometry: square(0.0, TAU),
                periodic: Some(([0.0, 0.0], [TAU, TAU])),
                stiffness: 0.0,
                params,
            },
            ProblemKind::ExactSystem => {
                let (b, c) = (positive("b")?, positive("c")?);
                if b == c {
                    return Err(Error::Argument("parameters b and c must differ".into()));
                }
                ProblemSpec {
                    kind,
                    reaction: Reaction::Linear([[-b, 1.0], [0.0, -c]]),
                    diffusion: Diffusion::Constant { d1: 0.5, d2: 0.5 },
                    velocity: Velocity::Constant([0.5, 0.5]),
                    scalar: false,
                    geometry: square(0.0, TAU),
                    periodic: Some(([0.0, 0.0], [TAU, TAU])),
                    stiffness: b.max(c),
                    params,
                }
            }
            ProblemKind::Schnakenberg => {
                let gamma = positive("gamma")?;
                let advect = p("advection") != 0.0;
                ProblemSpec {
                    kind,
                    reaction: Reaction::Schnakenberg {
                        alpha: positive("alpha")?,
                        beta: positive("beta")?,
                        gamma,
                    },
                    diffusion: Diffusion::Constant {
                        d1: positive("d1")?,
                        d2: positive("d2")?,
                    },
                    velocity: if advect {
                        Velocity::Toroidal { omega: p("omega") }
                    } else {
                        Velocity::Zero
                    },
                    scalar: false,
                    geometry: if advect { square(-0.5, 0.5) } else { square(0.0, 1.0) },
                    periodic: None,
                    stiffness: gamma,
                    params,
                }
            }
            ProblemKind::GrayScott => ProblemSpec {
                kind,
                reaction: Reaction::GrayScott {
                    alpha: positive("alpha")?,
                    beta: positive("beta")?,
                },
                diffusion: Diffusion::Constant {
                    d1: positive("d1")?,
                    d2: positive("d2")?,
                },
                velocity: Velocity::Zero,
                scalar: false,
                geometry: GeometryKind::Disk {
                    center: [1.25, 1.25],
                    radius: 1.25,
                },
                periodic: None,
                stiffness: 0.0,
                params,
            },
        };
        Ok(spec)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    /// Initial data `(u_0, v_0)`.
    pub fn initial(&self, x: Point) -> (f64, f64) {
        match self.kind {
            ProblemKind::NonlinearScalar | ProblemKind::ExactSystem => self.exact(x, 0.0).unwrap(),
            ProblemKind::Schnakenberg => {
                let (a, b) = (self.params["alpha"], self.params["beta"]);
                let (cx, cy) = if self.velocity == Velocity::Zero {
                    (1.0 / 3.0, 1.0 / 3.0)
                } else {
                    (1.0 / 3.0 - 0.5, 1.0 / 3.0 - 0.5)
                };
                let r2 = (x[0] - cx).powi(2) + (x[1] - cy).powi(2);
                (a + b + 1e-3 * (-100.0 * r2).exp(), b / ((a + b) * (a + b)))
            }
            ProblemKind::GrayScott => {
                let inside = (1.0..=1.5).contains(&x[0]) && (1.0..=1.5).contains(&x[1]);
                let v = if inside {
                    0.25 * (4.0 * PI * x[0]).sin().powi(2) * (4.0 * PI * x[1]).sin().powi(2)
                } else {
                    0.0
                };
                (1.0 - 2.0 * v, v)
            }
        }
    }

    pub fn has_exact(&self) -> bool {
        matches!(self.kind, ProblemKind::NonlinearScalar | ProblemKind::ExactSystem)
    }

    /// Exact solution where known.
    pub fn exact(&self, x: Point, t: f64) -> Option<(f64, f64)> {
        let th = x[0] + x[1] - t;
        match self.kind {
            ProblemKind::NonlinearScalar => Some((1.0 + 0.5 * th.sin(), 0.0)),
            ProblemKind::ExactSystem => {
                let (b, c) = (self.params["b"], self.params["c"]);
                let slow = (-(c + 1.0) * t).exp();
                let u = ((-(b + 1.0) * t).exp() + slow) * th.cos();
                let v = (b - c) * slow * th.cos();
                Some((u, v))
            }
            _ => None,
        }
    }

    /// Equilibrium state with zero reaction, if the model has one.
    pub fn equilibrium(&self) -> Option<(f64, f64)> {
        match self.reaction {
            Reaction::Schnakenberg { alpha, beta, .. } => Some((alpha + beta, beta / ((alpha + beta) * (alpha + beta)))),
            Reaction::GrayScott { .. } => Some((1.0, 0.0)),
            _ => None,
        }
    }
}

pub fn problem_fully_nonlinear() -> ProblemSpec {
    ProblemSpec::new(ProblemKind::NonlinearScalar, &BTreeMap::new()).expect("default parameters are valid")
}

pub fn problem_exact_system() -> ProblemSpec {
    ProblemSpec::new(ProblemKind::ExactSystem, &BTreeMap::new()).expect("default parameters are valid")
}

pub fn problem_schnakenberg(gamma: f64, with_advection: bool, omega: f64) -> Result<ProblemSpec> {
    let overrides = BTreeMap::from([
        ("gamma".to_string(), gamma),
        ("advection".to_string(), f64::from(u8::from(with_advection))),
        ("omega".to_string(), omega),
    ]);
    ProblemSpec::new(ProblemKind::Schnakenberg, &overrides)
}

pub fn problem_gray_scott() -> ProblemSpec {
    ProblemSpec::new(ProblemKind::GrayScott, &BTreeMap::new()).expect("default parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HT: f64 = 2e-3;
    const HX: f64 = 0.1;

    /// Central difference refined by three Richardson levels.
    fn d1(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        let mut t = [0.0; 4];
        for (i, slot) in t.iter_mut().enumerate() {
            let hi = h / f64::from(1u32 << i);
            *slot = (f(x + hi) - f(x - hi)) / (2.0 * hi);
        }
        for level in 1..4 {
            let r = f64::from(1u32 << (2 * level));
            for i in (level..4).rev() {
                t[i] = (r * t[i] - t[i - 1]) / (r - 1.0);
            }
        }
        t[3]
    }

    /// Finite-difference PDE residual of an exact solution at `(x, t)`.
    fn residual(spec: &ProblemSpec, x: Point, t: f64) -> (f64, f64) {
        let mut r = [0.0; 2];
        for (k, rk) in r.iter_mut().enumerate() {
            let f = |y: Point, s: f64| {
                let e = spec.exact(y, s).unwrap();
                if k == 0 { e.0 } else { e.1 }
            };
            let along = |y: Point, dir: usize| {
                move |s: f64| {
                    let mut p = y;
                    p[dir] = s;
                    f(p, t)
                }
            };
            let ut = d1(&|s| f(x, s), t, HT);
            let grad = [d1(&along(x, 0), x[0], HX), d1(&along(x, 1), x[1], HX)];
            let u0 = f(x, t);
            let a = match spec.velocity {
                Velocity::SolutionDiagonal => [u0, u0],
                v => v.eval(x).unwrap(),
            };
            let mut div = 0.0;
            for dir in 0..2 {
                let flux = |s: f64| {
                    let mut y = x;
                    y[dir] = s;
                    let d = match spec.diffusion {
                        Diffusion::Constant { d1, d2 } => [d1, d2][k],
                        Diffusion::SolutionU => f(y, t),
                    };
                    d * d1(&along(y, dir), s, HX)
                };
                div += d1(&flux, x[dir], HX);
            }
            let (uu, vv) = spec.exact(x, t).unwrap();
            let (fr, gr) = spec.reaction.eval(x, t, uu, vv);
            *rk = ut + a[0] * grad[0] + a[1] * grad[1] - div - if k == 0 { fr } else { gr };
        }
        (r[0], r[1])
    }

    #[test]
    fn exact_values_at_origin() {
        let ns = problem_fully_nonlinear();
        assert_eq!(ns.exact([0.0, 0.0], 0.0).unwrap().0, 1.0);
        let es = problem_exact_system();
        assert_eq!(es.exact([0.0, 0.0], 0.0).unwrap(), (2.0, 99.0));
        assert_eq!(es.initial([0.0, 0.0]), (2.0, 99.0));
    }

    #[test]
    fn equilibria_give_zero_reaction() {
        let s = problem_schnakenberg(100.0, false, 8.0).unwrap();
        let (u, v) = s.equilibrium().unwrap();
        let (f, g) = s.reaction.eval([0.0, 0.0], 0.0, u, v);
        assert!(f.abs() < 1e-12 && g.abs() < 1e-12);
        assert!((v - 0.95).abs() < 1e-12);
        let gs = problem_gray_scott();
        assert_eq!(gs.reaction.eval([0.0, 0.0], 0.0, 1.0, 0.0), (0.0, 0.0));
        assert!(problem_schnakenberg(0.0, false, 8.0).is_err());
    }

    #[test]
    fn initial_conditions() {
        let s = problem_schnakenberg(100.0, false, 8.0).unwrap();
        let (u, v) = s.initial([1.0 / 3.0, 1.0 / 3.0]);
        assert!((u - 0.901).abs() < 1e-12);
        assert!((v - 0.95).abs() < 1e-12);
        assert_eq!(s.geometry, GeometryKind::Rectangle { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 });
        let sa = problem_schnakenberg(100.0, true, 8.0).unwrap();
        assert_eq!(sa.geometry, GeometryKind::Rectangle { x0: -0.5, x1: 0.5, y0: -0.5, y1: 0.5 });
        assert_eq!(sa.velocity, Velocity::Toroidal { omega: 8.0 });

        let gs = problem_gray_scott();
        let (u, v) = gs.initial([1.0625, 1.0625]);
        assert!((v - 1.0 / 16.0).abs() < 1e-12);
        assert!((u + 2.0 * v - 1.0).abs() < 1e-15);
        assert_eq!(gs.initial([0.5, 0.5]), (1.0, 0.0));
    }

    #[test]
    fn toroidal_field() {
        assert_eq!(velocity_toroidal(8.0, [0.0, 0.0]), [0.0, 0.0]);
        assert_eq!(velocity_toroidal(8.0, [0.5, 0.0]), [0.0, 4.0]);
        let x = [0.3, -0.2];
        let h = 1e-6;
        let div = (velocity_toroidal(8.0, [x[0] + h, x[1]])[0] - velocity_toroidal(8.0, [x[0] - h, x[1]])[0]
            + velocity_toroidal(8.0, [x[0], x[1] + h])[1]
            - velocity_toroidal(8.0, [x[0], x[1] - h])[1])
            / (2.0 * h);
        assert!(div.abs() < 1e-10);
    }

    #[test]
    fn parameter_overrides() {
        let over = BTreeMap::from([("b".to_string(), 50.0)]);
        let p = ProblemSpec::new(ProblemKind::ExactSystem, &over).unwrap();
        assert_eq!(p.reaction, Reaction::Linear([[-50.0, 1.0], [0.0, -1.0]]));
        let bad = BTreeMap::from([("zeta".to_string(), 1.0)]);
        assert!(matches!(
            ProblemSpec::new(ProblemKind::ExactSystem, &bad),
            Err(Error::ConfigValue { .. })
        ));
        assert_eq!("gray-scott".parse::<ProblemKind>().unwrap(), ProblemKind::GrayScott);
        assert!("brusselator".parse::<ProblemKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn exact_solutions_satisfy_the_pde(x in 0.0f64..TAU, y in 0.0f64..TAU, t in 0.0f64..1.0) {
            let (r, _) = residual(&problem_fully_nonlinear(), [x, y], t);
            prop_assert!(r.abs() < 1e-8, "scalar residual {}", r);
            let (ru, rv) = residual(&problem_exact_system(), [x, y], t);
            prop_assert!(ru.abs() < 1e-8 && rv.abs() < 1e-8, "{} {}", ru, rv);
        }
    }

    #[test]
    fn source_formula_matches_symbolic_residual() {
        // u_t + u (u_x + u_y) - |∇u|^2 - u Δu + u^2 with the analytic derivatives
        for &(x, y, t) in &[(0.1, 0.2, 0.3), (2.0, 5.0, 0.7), (4.0, 1.0, 1.0)] {
            let th: f64 = x + y - t;
            let u = 1.0 + 0.5 * th.sin();
            let du = 0.5 * th.cos();
            let lap = -th.sin();
            let phi = -du + u * 2.0 * du - 2.0 * du * du - u * lap + u * u;
            assert!((phi - scalar_source([x, y], t)).abs() < 1e-14);
        }
    }
}
