//! Strang-split time stepping: RK4 reaction half-steps around a
//! semi-Lagrangian BDF2 advection–diffusion step, with factorization reuse.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::assembly::{apply_dirichlet, zero_constrained, BoundaryPoint, Coefficient, Discretization};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::{relative_residual, Factorization, SparseMatrix};
use crate::problems::{Diffusion, ProblemSpec, Reaction, Velocity};
use crate::transport::{evaluate_param, locate, sl_rhs, DepartureSet, DomainPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    NeumannZero,
    /// Neumann data taken from the exact solution.
    NeumannExact,
    DirichletZero,
}

impl BoundaryCondition {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryCondition::NeumannZero => "neumann-zero",
            BoundaryCondition::NeumannExact => "neumann-exact",
            BoundaryCondition::DirichletZero => "dirichlet-zero",
        }
    }

    /// Default for a problem: exact flux when an exact solution exists.
    pub fn default_for(problem: &ProblemSpec) -> Self {
        if problem.has_exact() {
            BoundaryCondition::NeumannExact
        } else {
            BoundaryCondition::NeumannZero
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neumann-zero" => Ok(BoundaryCondition::NeumannZero),
            "neumann-exact" => Ok(BoundaryCondition::NeumannExact),
            "dirichlet-zero" => Ok(BoundaryCondition::DirichletZero),
            _ => Err(Error::Argument(format!(
                "unknown boundary condition `{s}` (expected neumann-zero, neumann-exact or dirichlet-zero)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Reaction substeps per half-step; `None` picks them from the
    /// problem's stiffness.
    pub n_substeps: Option<usize>,
    pub bc: BoundaryCondition,
    /// Emit a snapshot every this many steps (0 disables).
    pub snapshot_every: usize,
}

impl SolverConfig {
    pub fn new(problem: &ProblemSpec, dt: f64, t_end: f64) -> Self {
        SolverConfig {
            dt,
            t_end,
            n_substeps: None,
            bc: BoundaryCondition::default_for(problem),
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Argument(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Argument(format!("end time must be nonnegative, got {}", self.t_end)));
        }
        if self.n_substeps == Some(0) {
            return Err(Error::Argument("reaction substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the step is shortened so that they end at `t_end`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn effective_dt(&self) -> f64 {
        match self.n_steps() {
            0 => self.dt,
            n => self.t_end / n as f64,
        }
    }
}

/// Substeps per reaction half-step: `ceil(s Δt / 2)` for stiffness
/// `s ≥ 100`, otherwise one.
pub fn default_substeps(stiffness: f64, dt: f64) -> usize {
    if stiffness >= 100.0 {
        ((stiffness * dt / 2.0).ceil() as usize).max(1)
    } else {
        1
    }
}

/// Control coefficients at the current and previous level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub v_prev: Vec<f64>,
    pub t: f64,
    pub step: usize,
    /// Input of the previous advection–diffusion stage.
    history: Option<[Vec<f64>; 2]>,
}

impl FieldState {
    pub fn new(u: Vec<f64>, v: Vec<f64>, t: f64) -> Self {
        FieldState {
            u_prev: u.clone(),
            v_prev: v.clone(),
            u,
            v,
            t,
            step: 0,
            history: None,
        }
    }

    pub fn has_history(&self) -> bool {
        self.history.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FactorizationCounts {
    pub mass: usize,
    pub bdf1: usize,
    pub bdf2: usize,
}

/// Per-step diagnostics. Bounds are over control coefficients, which
/// bound the field values by the convex hull property.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub clamped: usize,
    pub residual: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SystemKey {
    bdf2: bool,
    dt_bits: u64,
    diffusion: Option<u64>,
    k_version: u64,
    bc: BoundaryCondition,
}

struct CachedSystem {
    key: SystemKey,
    matrix: SparseMatrix,
    fact: Factorization,
}

/// Matrices and retained factorizations.
pub struct SolverWorkspace {
    mass: SparseMatrix,
    mass_fact: Factorization,
    laplace: SparseMatrix,
    variable_k: Option<SparseMatrix>,
    k_version: u64,
    systems: Vec<CachedSystem>,
    counts: FactorizationCounts,
    bc: BoundaryCondition,
}

impl fmt::Debug for SolverWorkspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverWorkspace")
            .field("k_version", &self.k_version)
            .field("systems", &self.systems.len())
            .field("counts", &self.counts)
            .finish()
    }
}

impl SolverWorkspace {
    pub fn new(disc: &Discretization, bc: BoundaryCondition) -> Result<Self> {
        let mut mass = disc.assemble_mass();
        if bc == BoundaryCondition::DirichletZero {
            apply_dirichlet(&mut mass, None, disc.dofs());
        }
        let mass_fact = Factorization::new(&mass)?;
        let laplace = disc.assemble_stiffness(Coefficient::Constant(1.0))?;
        Ok(SolverWorkspace {
            mass,
            mass_fact,
            laplace,
            variable_k: None,
            k_version: 0,
            systems: Vec::new(),
            counts: FactorizationCounts {
                mass: 1,
                ..Default::default()
            },
            bc,
        })
    }

    pub fn counts(&self) -> FactorizationCounts {
        self.counts
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn mass_factorization(&self) -> &Factorization {
        &self.mass_fact
    }

    /// Installs a new solution-dependent stiffness matrix, invalidating the
    /// systems built on the previous one.
    pub fn set_variable_stiffness(&mut self, k: SparseMatrix) {
        self.variable_k = Some(k);
        self.k_version += 1;
    }

    /// Factorized `(α M + K)` for the requested scheme, reused while the
    /// step, diffusion and boundary treatment are unchanged.
    fn system(&mut self, disc: &Discretization, bdf2: bool, dt: f64, d: Option<f64>) -> Result<usize> {
        let key = SystemKey {
            bdf2,
            dt_bits: dt.to_bits(),
            diffusion: d.map(f64::to_bits),
            k_version: if d.is_some() { 0 } else { self.k_version },
            bc: self.bc,
        };
        if let Some(i) = self.systems.iter().position(|s| s.key == key) {
            return Ok(i);
        }
        let alpha = if bdf2 { 1.5 / dt } else { 1.0 / dt };
        let raw_mass = disc.assemble_mass();
        let mut a = match d {
            Some(d) => raw_mass.combine(alpha, &self.laplace, d)?,
            None => {
                let k = self
                    .variable_k
                    .as_ref()
                    .ok_or_else(|| Error::Internal("variable stiffness requested before assembly".into()))?;
                raw_mass.combine(alpha, k, 1.0)?
            }
        };
        if self.bc == BoundaryCondition::DirichletZero {
            apply_dirichlet(&mut a, None, disc.dofs());
        }
        if bdf2 {
            self.counts.bdf2 += 1;
        } else {
            self.counts.bdf1 += 1;
        }
        // a stale system of the same scheme keeps its symbolic analysis
        let stale = self.systems.iter().position(|s| {
            s.key.bdf2 == bdf2 && s.key.diffusion.is_none() && key.diffusion.is_none() && s.key.k_version != key.k_version
        });
        if let Some(i) = stale {
            let entry = &mut self.systems[i];
            entry.fact.refactor(&a)?;
            entry.matrix = a;
            entry.key = key;
            return Ok(i);
        }
        let fact = Factorization::new(&a)?;
        self.systems.push(CachedSystem { key, matrix: a, fact });
        Ok(self.systems.len() - 1)
    }
}

/// Advances `M dU/dt = F(U)` over `[t0, t0 + h]` by `n_substeps` classical
/// RK4 steps, each stage solved with the retained mass factorization.
#[allow(clippy::too_many_arguments)]
pub fn rk4_reaction_halfstep(
    disc: &Discretization,
    mass_fact: &Factorization,
    reaction: &Reaction,
    scalar: bool,
    dirichlet: bool,
    u: &mut [f64],
    v: &mut [f64],
    t0: f64,
    h: f64,
    n_substeps: usize,
) -> Result<()> {
    if reaction.is_zero() {
        return Ok(());
    }
    let n = u.len();
    let tau = h / n_substeps as f64;
    let stage = |su: &[f64], sv: &[f64], t: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        if let Reaction::Linear(a) = *reaction {
            // constant linear reaction: M^{-1} F acts on the coefficients
            let ku = su.iter().zip(sv).map(|(x, y)| a[0][0] * x + a[0][1] * y).collect();
            let kv = su.iter().zip(sv).map(|(x, y)| a[1][0] * x + a[1][1] * y).collect();
            return Ok((ku, kv));
        }
        let (mut fu, mut fv) = disc
            .assemble_reaction_load(su, sv, |_, x, a, b| reaction.eval(x, t, a, b))
            .map_err(|_| Error::Stiffness {
                time: t,
                substeps: n_substeps,
            })?;
        if dirichlet {
            zero_constrained(&mut fu, disc.dofs());
            zero_constrained(&mut fv, disc.dofs());
        }
        mass_fact.solve_in_place(&mut fu);
        if scalar {
            fv.iter_mut().for_each(|x| *x = 0.0);
        } else {
            mass_fact.solve_in_place(&mut fv);
        }
        Ok((fu, fv))
    };
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for i in 0..n_substeps {
        let t = t0 + i as f64 * tau;
        let (k1u, k1v) = stage(u, v, t)?;
        let (k2u, k2v) = stage(&axpy(u, &k1u, 0.5 * tau), &axpy(v, &k1v, 0.5 * tau), t + 0.5 * tau)?;
        let (k3u, k3v) = stage(&axpy(u, &k2u, 0.5 * tau), &axpy(v, &k2v, 0.5 * tau), t + 0.5 * tau)?;
        let (k4u, k4v) = stage(&axpy(u, &k3u, tau), &axpy(v, &k3v, tau), t + tau)?;
        for j in 0..n {
            u[j] += tau / 6.0 * (k1u[j] + 2.0 * k2u[j] + 2.0 * k3u[j] + k4u[j]);
            v[j] += tau / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Stiffness {
                time: t + tau,
                substeps: n_substeps,
            });
        }
    }
    Ok(())
}

/// Pointwise RK4 for the reaction ODE at a fixed point; `h` may be negative.
fn pointwise_rk4(reaction: &Reaction, x: Point, t0: f64, h: f64, n: usize, w: (f64, f64)) -> (f64, f64) {
    let tau = h / n as f64;
    let (mut u, mut v) = w;
    for i in 0..n {
        let t = t0 + i as f64 * tau;
        let k1 = reaction.eval(x, t, u, v);
        let k2 = reaction.eval(x, t + 0.5 * tau, u + 0.5 * tau * k1.0, v + 0.5 * tau * k1.1);
        let k3 = reaction.eval(x, t + 0.5 * tau, u + 0.5 * tau * k2.0, v + 0.5 * tau * k2.1);
        let k4 = reaction.eval(x, t + tau, u + tau * k3.0, v + tau * k3.1);
        u += tau / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += tau / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (u, v)
}

/// A sampled state for output.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub state: FieldState,
    pub diagnostics: Vec<StepRecord>,
    pub counts: FactorizationCounts,
}

/// The Strang stepper bound to one problem and discretization.
pub struct Solver<'a> {
    problem: &'a ProblemSpec,
    disc: &'a Discretization,
    config: SolverConfig,
    dt: f64,
    n_substeps: usize,
    workspace: SolverWorkspace,
    policy: DomainPolicy,
    fixed_departures: Option<(DepartureSet, DepartureSet)>,
    boundary: Vec<BoundaryPoint>,
}

impl fmt::Debug for Solver<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Solver")
            .field("problem", &self.problem.kind)
            .field("dt", &self.dt)
            .field("n_substeps", &self.n_substeps)
            .field("workspace", &self.workspace)
            .finish()
    }
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a ProblemSpec, disc: &'a Discretization, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if config.bc == BoundaryCondition::NeumannExact && !problem.has_exact() {
            return Err(Error::Argument(format!(
                "boundary condition neumann-exact needs an exact solution; problem {} has none",
                problem.kind
            )));
        }
        let dt = config.effective_dt();
        let n_substeps = config
            .n_substeps
            .unwrap_or_else(|| default_substeps(problem.stiffness, dt));
        let workspace = SolverWorkspace::new(disc, config.bc)?;
        let policy = match problem.periodic {
            Some((lo, hi)) if Self::fills_box(disc, lo, hi) => DomainPolicy::Periodic { lo, hi },
            _ => DomainPolicy::Clamp,
        };
        let fixed_departures = match problem.velocity {
            Velocity::Zero => Some((DepartureSet::identity(disc), DepartureSet::identity(disc))),
            Velocity::SolutionDiagonal => None,
            vel => {
                let field = move |x: Point, _t: f64| vel.eval(x).expect("velocity is solution independent");
                Some((
                    DepartureSet::trace(disc, &field, 0.0, dt, policy)?,
                    DepartureSet::trace(disc, &field, 0.0, 2.0 * dt, policy)?,
                ))
            }
        };
        let boundary = if config.bc == BoundaryCondition::NeumannExact {
            disc.boundary_points(disc.rule().n_u)?
        } else {
            Vec::new()
        };
        Ok(Solver {
            problem,
            disc,
            config,
            dt,
            n_substeps,
            workspace,
            policy,
            fixed_departures,
            boundary,
        })
    }

    fn fills_box(disc: &Discretization, lo: Point, hi: Point) -> bool {
        let g = disc.mesh().geometry();
        let (u, v) = (g.kv_u(), g.kv_v());
        let corners = [(u.first(), v.first()), (u.last(), v.last())];
        let p0 = g.surface_eval(corners[0].0, corners[0].1);
        let p1 = g.surface_eval(corners[1].0, corners[1].1);
        let tol = 1e-12 * g.diameter();
        match (p0, p1) {
            (Ok(a), Ok(b)) => (0..2).all(|d| (a[d] - lo[d]).abs() <= tol && (b[d] - hi[d]).abs() <= tol),
            _ => false,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_substeps(&self) -> usize {
        self.n_substeps
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn workspace(&self) -> &SolverWorkspace {
        &self.workspace
    }

    pub fn counts(&self) -> FactorizationCounts {
        self.workspace.counts
    }

    fn dirichlet(&self) -> bool {
        self.config.bc == BoundaryCondition::DirichletZero
    }

    /// L² projection of the initial data.
    pub fn initial_state(&self) -> Result<FieldState> {
        let mut lu = self.disc.load_fn(|x| self.problem.initial(x).0);
        let mut lv = if self.problem.scalar {
            vec![0.0; self.disc.ndof()]
        } else {
            self.disc.load_fn(|x| self.problem.initial(x).1)
        };
        if self.dirichlet() {
            zero_constrained(&mut lu, self.disc.dofs());
            zero_constrained(&mut lv, self.disc.dofs());
        }
        self.workspace.mass_fact.solve_in_place(&mut lu);
        self.workspace.mass_fact.solve_in_place(&mut lv);
        Ok(FieldState::new(lu, lv, 0.0))
    }

    pub fn reaction_halfstep(&self, u: &mut [f64], v: &mut [f64], t0: f64, h: f64) -> Result<()> {
        rk4_reaction_halfstep(
            self.disc,
            &self.workspace.mass_fact,
            &self.problem.reaction,
            self.problem.scalar,
            self.dirichlet(),
            u,
            v,
            t0,
            h,
            self.n_substeps,
        )
    }

    /// Departure sets for `Δt` and `2Δt` arriving at `t0 + Δt`.
    fn departures(&self, state: &FieldState, bdf2: bool) -> Result<(DepartureSet, Option<DepartureSet>)> {
        if let Some((a, b)) = &self.fixed_departures {
            return Ok((a.clone(), bdf2.then(|| b.clone())));
        }
        let dt = self.dt;
        let t_n = state.t;
        let c0 = &state.u;
        let slope: Vec<f64> = if bdf2 {
            state.u.iter().zip(&state.u_prev).map(|(a, b)| (a - b) / dt).collect()
        } else {
            vec![0.0; c0.len()]
        };
        let disc = self.disc;
        let field = |x: Point, t: f64| -> Point {
            match locate(disc, x, None) {
                Ok(loc) => {
                    let mut basis = Default::default();
                    let a = evaluate_param(disc, c0, loc.param, &mut basis);
                    let b = evaluate_param(disc, &slope, loc.param, &mut basis);
                    let s = a + (t - t_n) * b;
                    [s, s]
                }
                Err(_) => [f64::NAN, f64::NAN],
            }
        };
        let t1 = t_n + dt;
        let one = DepartureSet::trace(disc, &field, t1, dt, self.policy)?;
        let two = if bdf2 {
            Some(DepartureSet::trace(disc, &field, t1, 2.0 * dt, self.policy)?)
        } else {
            None
        };
        Ok((one, two))
    }

    /// Boundary flux loads at `t1` for the exact-flux condition. The exact
    /// state is pulled back through the closing reaction half-step.
    fn flux_loads(&self, t1: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.disc.ndof();
        if self.boundary.is_empty() {
            return (vec![0.0; n], vec![0.0; n]);
        }
        let half = 0.5 * self.dt;
        let eps = 1e-5;
        let pulled = |x: Point| {
            let e = self.problem.exact(x, t1).expect("exact solution available");
            pointwise_rk4(&self.problem.reaction, x, t1, -half, self.n_substeps, e)
        };
        let mut gu = Vec::with_capacity(self.boundary.len());
        let mut gv = Vec::with_capacity(self.boundary.len());
        for bp in &self.boundary {
            let x = bp.point;
            let nrm = bp.normal;
            let plus = pulled([x[0] + eps * nrm[0], x[1] + eps * nrm[1]]);
            let minus = pulled([x[0] - eps * nrm[0], x[1] - eps * nrm[1]]);
            let du = (plus.0 - minus.0) / (2.0 * eps);
            let dv = (plus.1 - minus.1) / (2.0 * eps);
            match self.problem.diffusion {
                Diffusion::Constant { d1, d2 } => {
                    gu.push(d1 * du);
                    gv.push(d2 * dv);
                }
                Diffusion::SolutionU => {
                    gu.push(pulled(x).0 * du);
                    gv.push(0.0);
                }
            }
        }
        (
            self.disc.boundary_load(&self.boundary, &gu),
            self.disc.boundary_load(&self.boundary, &gv),
        )
    }

    /// Semi-Lagrangian diffusion solve over `[t0, t0 + Δt]` from `w`, with
    /// `z` the history level for BDF2 (BDF1 when absent).
    fn diffusion_stage(
        &mut self,
        state: &FieldState,
        w: &[Vec<f64>; 2],
        z: Option<&[Vec<f64>; 2]>,
    ) -> Result<([Vec<f64>; 2], usize, f64)> {
        let dt = self.dt;
        let disc = self.disc;
        let bdf2 = z.is_some();
        let (one, two) = self.departures(state, bdf2)?;
        let mut clamped = one.clamped();
        let diffusion = match self.problem.diffusion {
            Diffusion::Constant { d1, d2 } => [Some(d1), Some(d2)],
            Diffusion::SolutionU => {
                let mut d = vec![0.0; disc.quad().len()];
                disc.eval_at_quadrature(&w[0], &mut d);
                let k = disc.assemble_stiffness(Coefficient::AtQuadrature(&d))?;
                self.workspace.set_variable_stiffness(k);
                [None, None]
            }
        };
        let (fu, fv) = self.flux_loads(state.t + dt);
        let flux = [fu, fv];
        let components = if self.problem.scalar { 1 } else { 2 };
        let mut out = [vec![0.0; disc.ndof()], vec![0.0; disc.ndof()]];
        let mut residual: f64 = 0.0;
        for c in 0..components {
            let h1 = sl_rhs(disc, &w[c], &one);
            let mut rhs: Vec<f64> = match (z, &two) {
                (Some(z), Some(two)) => {
                    let h2 = sl_rhs(disc, &z[c], two);
                    h1.iter().zip(&h2).map(|(a, b)| 2.0 / dt * a - 0.5 / dt * b).collect()
                }
                _ => h1.iter().map(|a| a / dt).collect(),
            };
            for (r, f) in rhs.iter_mut().zip(&flux[c]) {
                *r += f;
            }
            if self.dirichlet() {
                zero_constrained(&mut rhs, disc.dofs());
            }
            let idx = self.workspace.system(disc, bdf2, dt, diffusion[c])?;
            let sys = &self.workspace.systems[idx];
            let x = sys.fact.solve(&rhs);
            residual = residual.max(relative_residual(&sys.matrix, &x, &rhs));
            out[c] = x;
        }
        if let Some(two) = &two {
            clamped += two.clamped();
        }
        Ok((out, clamped, residual))
    }

    /// First step with a BDF1 diffusion stage.
    pub fn bootstrap_first_step(&mut self, state: &mut FieldState) -> Result<StepRecord> {
        if state.has_history() {
            return Err(Error::Internal("bootstrap called on a state with history".into()));
        }
        self.advance(state)
    }

    /// One step of the splitting: reaction over `[t_n, t_n + Δt/2]`,
    /// semi-Lagrangian BDF2 advection–diffusion over `[t_n, t_{n+1}]`,
    /// reaction over `[t_n + Δt/2, t_{n+1}]`.
    pub fn strang_step(&mut self, state: &mut FieldState) -> Result<StepRecord> {
        self.advance(state)
    }

    fn advance(&mut self, state: &mut FieldState) -> Result<StepRecord> {
        let start = Instant::now();
        let dt = self.dt;
        let half = 0.5 * dt;
        let t0 = state.t;
        let mut w = [state.u.clone(), state.v.clone()];
        {
            let [wu, wv] = &mut w;
            self.reaction_halfstep(wu, wv, t0, half)?;
        }
        let z = match state.history.take() {
            Some(mut z) => {
                let [zu, zv] = &mut z;
                self.reaction_halfstep(zu, zv, t0 - half, half)?;
                self.reaction_halfstep(zu, zv, t0, half)?;
                Some(z)
            }
            None => None,
        };
        let (mut x, clamped, residual) = self.diffusion_stage(state, &w, z.as_ref())?;
        {
            let [xu, xv] = &mut x;
            self.reaction_halfstep(xu, xv, t0 + half, half)?;
        }
        let [xu, xv] = x;
        state.u_prev = std::mem::replace(&mut state.u, xu);
        state.v_prev = std::mem::replace(&mut state.v, xv);
        state.history = Some(w);
        state.step += 1;
        state.t = state.step as f64 * dt;
        let bounds = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let (u_min, u_max) = bounds(&state.u);
        let (v_min, v_max) = bounds(&state.v);
        if !(u_min.is_finite() && u_max.is_finite() && v_min.is_finite() && v_max.is_finite()) {
            return Err(Error::Numerical("solution became non-finite".into()));
        }
        Ok(StepRecord {
            step: state.step,
            time: state.t,
            u_min,
            u_max,
            v_min,
            v_max,
            clamped,
            residual,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// Projects the initial data, then steps to `t_end`, passing snapshots to
/// `observer` at the configured cadence (always including the last step).
pub fn run_simulation(
    problem: &ProblemSpec,
    disc: &Discretization,
    config: SolverConfig,
    observer: &mut dyn FnMut(&Snapshot) -> Result<()>,
) -> Result<SimulationResult> {
    let every = config.snapshot_every;
    let n_steps = config.n_steps();
    let mut solver = Solver::new(problem, disc, config)?;
    let mut state = solver.initial_state()?;
    let emit = |state: &FieldState, observer: &mut dyn FnMut(&Snapshot) -> Result<()>| {
        observer(&Snapshot {
            step: state.step,
            time: state.t,
            u: state.u.clone(),
            v: state.v.clone(),
        })
    };
    if every > 0 {
        emit(&state, observer)?;
    }
    let mut diagnostics = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let time = state.t;
        let rec = solver.strang_step(&mut state).map_err(|e| Error::Simulation {
            step: n + 1,
            time,
            source: Box::new(e),
        })?;
        diagnostics.push(rec);
        if every > 0 && (state.step % every == 0 || n + 1 == n_steps) {
            emit(&state, observer)?;
        }
    }
    Ok(SimulationResult {
        state,
        counts: solver.counts(),
        diagnostics,
    })
}
