//! Step-size control and one-step maps: the adaptive Milstein scheme, its
//! Euler variant, the tamed and uniform explicit Milstein schemes, and the
//! drift-implicit backward Euler/Milstein reference schemes.
//!
//! One adaptive step from `(t_k, X_k)` is
//!
//! ```text
//! Δ_k     = min{ Δ(X_k)/M, [t_k]+1 - t_k, T - t_k }        (floored to ticks)
//! X_{k+1} = X_k + f Δ_k + sum_j g_j ΔB^j + sum_{j,r} D_x g_j g_r I_rj
//! ```
//!
//! with every coefficient evaluated at `(X_k, X_anchor)`, where the anchor is
//! the state at the most recent integer time. The clamp to the next integer
//! time guarantees integer times are hit exactly, so the anchor is always a
//! value the path has already computed.

use crate::error::{Error, Result};
use crate::grid::TickGrid;
use crate::math;
use crate::noise::{IncrementBundle, MasterNoise};
use crate::problem::{SdepcaProblem, StepFn};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

/// The solvers, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Solver {
    AdaptiveMilstein,
    AdaptiveEuler,
    TamedMilstein,
    UniformMilstein,
    BackwardEuler,
    BackwardMilstein,
}

impl Solver {
    pub const ALL: [Solver; 6] = [
        Solver::AdaptiveMilstein,
        Solver::AdaptiveEuler,
        Solver::TamedMilstein,
        Solver::UniformMilstein,
        Solver::BackwardEuler,
        Solver::BackwardMilstein,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Solver::AdaptiveMilstein => "adaptive_milstein",
            Solver::AdaptiveEuler => "adaptive_euler",
            Solver::TamedMilstein => "tamed_milstein",
            Solver::UniformMilstein => "uniform_milstein",
            Solver::BackwardEuler => "backward_euler",
            Solver::BackwardMilstein => "backward_milstein",
        }
    }

    pub fn from_name(name: &str) -> Result<Solver> {
        Solver::ALL
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Parameter(format!("unknown solver '{name}'")))
    }

    /// Whether the solver consumes the adaptive step function.
    pub fn is_adaptive(&self) -> bool {
        matches!(self, Solver::AdaptiveMilstein | Solver::AdaptiveEuler)
    }

    /// Whether the solver is drift-implicit (requires the drift Jacobian).
    pub fn is_implicit(&self) -> bool {
        matches!(self, Solver::BackwardEuler | Solver::BackwardMilstein)
    }
}

impl core::fmt::Display for Solver {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Newton settings for the implicit schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonParams {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

/// Per-run options.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub record_trajectory: bool,
    pub newton: NewtonParams,
}

/// Step-size policy: either the adaptive rule `Δ(x)/M` or a fixed tick step
/// for the uniform schemes. Both are clamped so steps never cross an integer
/// time or the horizon.
#[derive(Clone)]
pub struct StepPolicy {
    step_fn: Option<Arc<StepFn>>,
    m: u32,
    uniform_step_ticks: Option<u64>,
    grid: TickGrid,
}

impl StepPolicy {
    /// Adaptive policy with step function `Δ(·)` and refinement `M >= 1`.
    pub fn adaptive(step_fn: Arc<StepFn>, m: u32, grid: TickGrid) -> Result<Self> {
        if m < 1 {
            return Err(Error::Config("refinement parameter M must be at least 1".into()));
        }
        Ok(StepPolicy {
            step_fn: Some(step_fn),
            m,
            uniform_step_ticks: None,
            grid,
        })
    }

    /// Uniform policy with a fixed step, which must be an exact multiple of
    /// the grid tick.
    pub fn uniform(step: f64, grid: TickGrid) -> Result<Self> {
        let ticks = grid.ticks_of_step(step)?;
        StepPolicy::uniform_ticks(ticks, grid)
    }

    /// Uniform policy with a fixed step in ticks.
    pub fn uniform_ticks(ticks: u64, grid: TickGrid) -> Result<Self> {
        if ticks < 1 || ticks > grid.horizon_ticks() {
            return Err(Error::Config(format!("uniform step of {ticks} ticks out of range")));
        }
        Ok(StepPolicy {
            step_fn: None,
            m: 1,
            uniform_step_ticks: Some(ticks),
            grid,
        })
    }

    pub fn grid(&self) -> TickGrid {
        self.grid
    }

    /// Refinement parameter `M` (1 for uniform policies).
    pub fn refinement(&self) -> u32 {
        self.m
    }

    pub fn is_adaptive(&self) -> bool {
        self.step_fn.is_some()
    }

    pub fn uniform_step_ticks(&self) -> Option<u64> {
        self.uniform_step_ticks
    }
}

impl core::fmt::Debug for StepPolicy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("StepPolicy")
            .field("adaptive", &self.is_adaptive())
            .field("m", &self.m)
            .field("uniform_step_ticks", &self.uniform_step_ticks)
            .field("grid", &self.grid)
            .finish()
    }
}

/// Next step size in ticks from state `x` at time `t_ticks`:
/// `max(1, floor(min{Δ(x)/M, next integer time - t, T - t} / δ))`.
///
/// The one-tick floor guard only fires when `Δ(x)/M < δ`; the boundary clamps
/// are exact in ticks, so integer times and the horizon are always hit.
pub fn next_step(policy: &StepPolicy, x: &[f64], t_ticks: u64) -> Result<u64> {
    let grid = policy.grid;
    if t_ticks >= grid.horizon_ticks() {
        return Err(Error::Parameter(format!(
            "time {t_ticks} is not before the horizon {}",
            grid.horizon_ticks()
        )));
    }
    let boundary = grid.next_integer_tick(t_ticks).min(grid.horizon_ticks()) - t_ticks;
    let ticks = match (&policy.step_fn, policy.uniform_step_ticks) {
        (Some(step_fn), None) => {
            let dx = step_fn(x);
            if !dx.is_finite() || dx <= 0.0 {
                return Err(Error::Policy(format!(
                    "step function returned {dx} (must be finite and positive)"
                )));
            }
            let target = math::floor(dx / policy.m as f64 * grid.ticks_per_unit() as f64);
            if target >= boundary as f64 {
                boundary
            } else {
                (target as u64).max(1)
            }
        }
        (None, Some(ticks)) => ticks.min(boundary),
        _ => unreachable!("policy is either adaptive or uniform"),
    };
    Ok(ticks)
}

fn ensure_state_finite(x: &[f64], bundle: &IncrementBundle) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        // run_path rewrites the step index with the loop position
        Err(Error::Overflow {
            step_index: 0,
            t_ticks: bundle.s_tick(),
        })
    }
}

/// Drift taming `f / (1 + Δ (|x|^2 + |y|^2))`, applied in place.
pub fn tamed_drift(f_value: &[f64], x: &[f64], y: &[f64], dt: f64) -> Vec<f64> {
    let denom = 1.0 + dt * (math::norm2sq(x) + math::norm2sq(y));
    f_value.iter().map(|v| v / denom).collect()
}

fn explicit_step(
    problem: &SdepcaProblem,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
    milstein_correction: bool,
    tame: bool,
) -> Result<Vec<f64>> {
    let n = problem.state_dim();
    let d = problem.noise_dim();
    debug_assert_eq!(bundle.channels(), d);
    let dt = bundle.dt();

    let mut f = vec![0.0; n];
    problem.drift(x, anchor, &mut f);
    if tame {
        f = tamed_drift(&f, x, anchor, dt);
    }

    let mut next = x.to_vec();
    math::axpy(dt, &f, &mut next);

    let mut cols = vec![0.0; d * n];
    for j in 0..d {
        problem.diffusion_col(j, x, anchor, &mut cols[j * n..(j + 1) * n]);
    }
    for j in 0..d {
        math::axpy(bundle.db(j), &cols[j * n..(j + 1) * n], &mut next);
    }

    if milstein_correction {
        let mut jac = vec![0.0; n * n];
        for j in 0..d {
            problem.diffusion_jac(j, x, anchor, &mut jac);
            for r in 0..d {
                let weight = bundle.iterated(r, j);
                if weight != 0.0 {
                    math::matvec_acc(weight, &jac, &cols[r * n..(r + 1) * n], &mut next);
                }
            }
        }
    }

    ensure_state_finite(&next, bundle)?;
    Ok(next)
}

/// One step of the explicit Milstein scheme,
/// `X + f Δ + Σ_j g_j ΔB^j + Σ_{j,r} D_x g_j g_r I_rj`, with all
/// coefficients at `(x, anchor)`. For commutative noise the antisymmetric
/// Lévy-area contribution cancels algebraically.
pub fn milstein_step(
    problem: &SdepcaProblem,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
) -> Result<Vec<f64>> {
    explicit_step(problem, x, anchor, bundle, true, false)
}

/// One Euler-Maruyama step: the Milstein scheme without the correction term.
pub fn euler_step(
    problem: &SdepcaProblem,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
) -> Result<Vec<f64>> {
    explicit_step(problem, x, anchor, bundle, false, false)
}

/// One tamed Milstein step: drift divided by `1 + Δ(|x|^2 + |y|^2)`,
/// diffusion and Milstein correction untamed.
pub fn tamed_milstein_step(
    problem: &SdepcaProblem,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
) -> Result<Vec<f64>> {
    explicit_step(problem, x, anchor, bundle, true, true)
}

/// One drift-implicit step: solves
/// `z = x + f(z, anchor) Δ + Σ_j g_j(x, anchor) ΔB^j [+ Milstein correction]`
/// by Newton iteration from the explicit Euler predictor. The diffusion (and
/// correction, for the backward Milstein variant) stay explicit.
pub fn backward_step(
    problem: &SdepcaProblem,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
    scheme: Solver,
    newton: &NewtonParams,
) -> Result<Vec<f64>> {
    if !scheme.is_implicit() {
        return Err(Error::Parameter(format!(
            "backward_step drives implicit schemes, not {scheme}"
        )));
    }
    let n = problem.state_dim();
    let d = problem.noise_dim();
    let dt = bundle.dt();

    // explicit part: x plus diffusion terms (and correction for Milstein)
    let mut base = x.to_vec();
    let mut cols = vec![0.0; d * n];
    for j in 0..d {
        problem.diffusion_col(j, x, anchor, &mut cols[j * n..(j + 1) * n]);
    }
    for j in 0..d {
        math::axpy(bundle.db(j), &cols[j * n..(j + 1) * n], &mut base);
    }
    if scheme == Solver::BackwardMilstein {
        let mut jac = vec![0.0; n * n];
        for j in 0..d {
            problem.diffusion_jac(j, x, anchor, &mut jac);
            for r in 0..d {
                let weight = bundle.iterated(r, j);
                if weight != 0.0 {
                    math::matvec_acc(weight, &jac, &cols[r * n..(r + 1) * n], &mut base);
                }
            }
        }
    }

    let mut f = vec![0.0; n];
    problem.drift(x, anchor, &mut f);
    let mut z = base.clone();
    math::axpy(dt, &f, &mut z);

    let mut resid = vec![0.0; n];
    let mut jac_f = vec![0.0; n * n];
    let mut newton_mat = vec![0.0; n * n];
    for iteration in 0..=newton.max_iter {
        problem.drift(&z, anchor, &mut f);
        let mut rnorm2 = 0.0;
        for i in 0..n {
            resid[i] = z[i] - dt * f[i] - base[i];
            rnorm2 += resid[i] * resid[i];
        }
        let rnorm = math::sqrt(rnorm2);
        if !rnorm.is_finite() {
            return Err(Error::Newton {
                iterations: iteration,
                residual: rnorm,
            });
        }
        if rnorm <= newton.tol {
            ensure_state_finite(&z, bundle)?;
            return Ok(z);
        }
        if iteration == newton.max_iter {
            return Err(Error::Newton {
                iterations: iteration,
                residual: rnorm,
            });
        }
        problem.drift_jac(&z, anchor, &mut jac_f)?;
        for i in 0..n * n {
            newton_mat[i] = -dt * jac_f[i];
        }
        for i in 0..n {
            newton_mat[i * n + i] += 1.0;
        }
        if math::solve_in_place(&mut newton_mat, &mut resid).is_err() {
            return Err(Error::Newton {
                iterations: iteration,
                residual: rnorm,
            });
        }
        for i in 0..n {
            z[i] -= resid[i];
        }
    }
    unreachable!("newton loop returns from within");
}

/// Result of one path run.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// State at `t = T`.
    pub terminal: Vec<f64>,
    /// States at the integer times `0, 1, ..` up to the horizon.
    pub integer_states: Vec<Vec<f64>>,
    /// `N_T`: index of the last step time strictly before `T`
    /// (`t_{N_T+1} = T` exactly in ticks).
    pub n_t: u64,
    /// Total number of steps, `N_T + 1`.
    pub steps: u64,
    pub min_step_ticks: u64,
    pub max_step_ticks: u64,
    /// `(t_k, X_k)` for every step time including `0` and `T`, when recorded.
    pub trajectory: Option<Vec<(u64, Vec<f64>)>>,
}

fn one_step(
    problem: &SdepcaProblem,
    solver: Solver,
    x: &[f64],
    anchor: &[f64],
    bundle: &IncrementBundle,
    newton: &NewtonParams,
) -> Result<Vec<f64>> {
    match solver {
        Solver::AdaptiveMilstein | Solver::UniformMilstein => {
            milstein_step(problem, x, anchor, bundle)
        }
        Solver::AdaptiveEuler => euler_step(problem, x, anchor, bundle),
        Solver::TamedMilstein => tamed_milstein_step(problem, x, anchor, bundle),
        Solver::BackwardEuler | Solver::BackwardMilstein => {
            backward_step(problem, x, anchor, bundle, solver, newton)
        }
    }
}

/// Integrates one path from `t = 0` to `t = T` on the given master noise.
///
/// The delayed argument is updated exactly at integer ticks; all step times
/// are tick-exact, so the run finishes on the horizon without rounding drift.
pub fn run_path(
    problem: &SdepcaProblem,
    policy: &StepPolicy,
    solver: Solver,
    noise: &MasterNoise,
    opts: &RunOptions,
) -> Result<PathRecord> {
    let grid = policy.grid();
    if noise.grid() != grid {
        return Err(Error::Config("noise grid does not match the policy grid".into()));
    }
    if noise.channels() != problem.noise_dim() {
        return Err(Error::Config(format!(
            "noise has {} channels, problem needs {}",
            noise.channels(),
            problem.noise_dim()
        )));
    }
    if grid.horizon() != problem.horizon() {
        return Err(Error::Config(format!(
            "grid horizon {} does not match the problem horizon {}",
            grid.horizon(),
            problem.horizon()
        )));
    }
    if solver.is_adaptive() && !policy.is_adaptive() {
        return Err(Error::Config(format!(
            "{solver} needs an adaptive step policy"
        )));
    }
    if !solver.is_adaptive() && policy.uniform_step_ticks().is_none() {
        return Err(Error::Config(format!(
            "{solver} needs a uniform step in the policy"
        )));
    }
    if solver.is_implicit() && !problem.has_drift_jac() {
        return Err(Error::Config(format!(
            "{solver} requires the problem's drift Jacobian"
        )));
    }

    let tpu = grid.ticks_per_unit();
    let horizon = grid.horizon_ticks();
    let mut x = problem.initial_value().to_vec();
    let mut anchor = x.clone();
    let mut integer_states = Vec::with_capacity((horizon / tpu) as usize + 1);
    integer_states.push(x.clone());
    let mut trajectory = if opts.record_trajectory {
        Some(vec![(0u64, x.clone())])
    } else {
        None
    };

    let mut t: u64 = 0;
    let mut steps: u64 = 0;
    let mut min_step = u64::MAX;
    let mut max_step = 0u64;
    while t < horizon {
        let dt_ticks = next_step(policy, &x, t)?;
        let b = noise.bundle(t, t + dt_ticks)?;
        x = one_step(problem, solver, &x, &anchor, &b, &opts.newton).map_err(|e| match e {
            Error::Overflow { t_ticks, .. } => Error::Overflow {
                step_index: steps,
                t_ticks,
            },
            other => other,
        })?;
        t += dt_ticks;
        steps += 1;
        min_step = min_step.min(dt_ticks);
        max_step = max_step.max(dt_ticks);
        if t % tpu == 0 {
            anchor.copy_from_slice(&x);
            integer_states.push(x.clone());
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push((t, x.clone()));
        }
    }

    Ok(PathRecord {
        terminal: x,
        integer_states,
        n_t: steps - 1,
        steps,
        min_step_ticks: min_step,
        max_step_ticks: max_step,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_master;
    use crate::problem::make_example;
    use approx::assert_relative_eq;

    fn grid13() -> TickGrid {
        TickGrid::new(13, 2.0).unwrap()
    }

    fn synthetic_bundle(dt: f64, db: Vec<f64>, levy: Vec<f64>) -> IncrementBundle {
        IncrementBundle::from_parts(0, 1, dt, db, levy).unwrap()
    }

    #[test]
    fn next_step_example1_at_start() {
        // Δ(2) = 0.4, /M = 0.05, boundary 1; floor(0.05 * 8192) = 409 ticks.
        let (_, sp) = make_example(1).unwrap();
        let policy = StepPolicy::adaptive(sp.step_fn.clone(), 8, grid13()).unwrap();
        assert_eq!(next_step(&policy, &[2.0], 0).unwrap(), 409);
    }

    #[test]
    fn next_step_clamps_to_integer_boundary() {
        // Δ(0)/1 = 2 > 0.25, so the step lands exactly on t = 1.
        let (_, sp) = make_example(1).unwrap();
        let policy = StepPolicy::adaptive(sp.step_fn.clone(), 1, grid13()).unwrap();
        let t = 6144; // 0.75
        assert_eq!(next_step(&policy, &[0.0], t).unwrap(), 2048);
    }

    #[test]
    fn next_step_one_tick_floor_guard() {
        let (_, sp) = make_example(1).unwrap();
        // Δ(2)/M = 0.4 / 2^20 < δ = 2^-13
        let policy = StepPolicy::adaptive(sp.step_fn.clone(), 1 << 20, grid13()).unwrap();
        assert_eq!(next_step(&policy, &[2.0], 0).unwrap(), 1);
    }

    #[test]
    fn next_step_rejects_bad_policy_values() {
        let step: Arc<StepFn> = Arc::new(|x: &[f64]| x[0]);
        let policy = StepPolicy::adaptive(step, 1, grid13()).unwrap();
        assert!(matches!(next_step(&policy, &[0.0], 0), Err(Error::Policy(_))));
        assert!(matches!(
            next_step(&policy, &[f64::NAN], 0),
            Err(Error::Policy(_))
        ));
        let policy = StepPolicy::uniform_ticks(4, grid13()).unwrap();
        assert!(next_step(&policy, &[0.0], 1 << 14).is_err());
    }

    #[test]
    fn m_zero_rejected() {
        let (_, sp) = make_example(1).unwrap();
        assert!(StepPolicy::adaptive(sp.step_fn.clone(), 0, grid13()).is_err());
    }

    #[test]
    fn milstein_hand_step() {
        // X = anchor = 2, Δ = 0.05, ΔB = 0: f = -6 gives -0.3, the correction
        // is 1 * 4 * (0 - 0.05)/2 = -0.1, so 2 - 0.3 - 0.1 = 1.6.
        let (problem, _) = make_example(1).unwrap();
        let b = synthetic_bundle(0.05, vec![0.0], vec![]);
        let x = milstein_step(&problem, &[2.0], &[2.0], &b).unwrap();
        assert_relative_eq!(x[0], 1.6, epsilon = 1e-14);
    }

    #[test]
    fn euler_hand_steps() {
        let (problem, _) = make_example(1).unwrap();
        let b = synthetic_bundle(0.05, vec![0.0], vec![]);
        let x = euler_step(&problem, &[2.0], &[2.0], &b).unwrap();
        assert_relative_eq!(x[0], 1.7, epsilon = 1e-14);
        let b = synthetic_bundle(0.05, vec![0.1], vec![]);
        let x = euler_step(&problem, &[2.0], &[2.0], &b).unwrap();
        assert_relative_eq!(x[0], 2.1, epsilon = 1e-14);
    }

    #[test]
    fn milstein_equals_euler_when_diagonal_vanishes() {
        // (ΔB)^2 = Δ in one dimension kills the correction exactly.
        let (problem, _) = make_example(1).unwrap();
        let dt = 0.0625;
        let b = synthetic_bundle(dt, vec![dt.sqrt()], vec![]);
        let m = milstein_step(&problem, &[1.5], &[2.0], &b).unwrap();
        let e = euler_step(&problem, &[1.5], &[2.0], &b).unwrap();
        assert_eq!(m, e);
    }

    #[test]
    fn zero_coefficients_keep_state() {
        let problem = SdepcaProblem::new(
            2,
            1,
            vec![1.0, -2.0],
            1.0,
            alloc::boxed::Box::new(|_x, _y, _out| {}),
            alloc::boxed::Box::new(|_j, _x, _y, _out| {}),
            alloc::boxed::Box::new(|_j, _x, _y, _out| {}),
        )
        .unwrap();
        let b = synthetic_bundle(0.25, vec![0.7], vec![]);
        let x = milstein_step(&problem, &[1.0, -2.0], &[1.0, -2.0], &b).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn commutative_noise_ignores_levy_areas() {
        let (problem, _) = make_example(2).unwrap();
        let db = vec![0.08, -0.13];
        let with_levy = synthetic_bundle(0.03125, db.clone(), vec![0.02]);
        let without = synthetic_bundle(0.03125, db, vec![0.0]);
        let a = milstein_step(&problem, &[1.2], &[2.0], &with_levy).unwrap();
        let b = milstein_step(&problem, &[1.2], &[2.0], &without).unwrap();
        assert_relative_eq!(a[0], b[0], max_relative = 1e-12);
    }

    #[test]
    fn noncommutative_noise_uses_levy_areas() {
        let (problem, _) = make_example(3).unwrap();
        let db = vec![0.08, -0.13];
        let with_levy = synthetic_bundle(0.03125, db.clone(), vec![0.02]);
        let without = synthetic_bundle(0.03125, db, vec![0.0]);
        let a = milstein_step(&problem, &[1.2], &[2.0], &with_levy).unwrap();
        let b = milstein_step(&problem, &[1.2], &[2.0], &without).unwrap();
        assert!((a[0] - b[0]).abs() > 1e-6);
    }

    #[test]
    fn tamed_drift_values() {
        // Example 1 at x = y = 2 with Δ = 2^-4: f = -6 tamed by 1 + 0.5.
        let out = tamed_drift(&[-6.0], &[2.0], &[2.0], 0.0625);
        assert_relative_eq!(out[0], -4.0, epsilon = 1e-14);
        // denominator 1 at the origin
        let out = tamed_drift(&[-6.0], &[0.0], &[0.0], 0.0625);
        assert_eq!(out[0], -6.0);
        // Δ -> 0 recovers the drift
        let out = tamed_drift(&[-6.0], &[2.0], &[2.0], 1e-300);
        assert_relative_eq!(out[0], -6.0, epsilon = 1e-12);
    }

    #[test]
    fn backward_euler_cubic_matches_bisection_oracle() {
        // zero noise, Δ = 0.5, X = anchor = 2: solve z + 0.5 z^3 = 3.
        let (problem, _) = make_example(1).unwrap();
        let b = synthetic_bundle(0.5, vec![0.0], vec![]);
        let z = backward_step(
            &problem,
            &[2.0],
            &[2.0],
            &b,
            Solver::BackwardEuler,
            &NewtonParams::default(),
        )
        .unwrap();
        // independent oracle: bisection on z + 0.5 z^3 - 3 over [0, 3]
        let (mut lo, mut hi) = (0.0f64, 3.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.5 * mid * mid * mid < 3.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((z[0] - oracle).abs() < 1e-6, "{} vs {}", z[0], oracle);
        assert_relative_eq!(oracle, 1.4561642461, epsilon = 1e-9);
    }

    #[test]
    fn backward_step_tiny_dt_stays_put() {
        let (problem, _) = make_example(1).unwrap();
        let b = synthetic_bundle(1e-12, vec![0.0], vec![]);
        let z = backward_step(
            &problem,
            &[2.0],
            &[2.0],
            &b,
            Solver::BackwardEuler,
            &NewtonParams::default(),
        )
        .unwrap();
        assert_relative_eq!(z[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn backward_linear_drift_closed_form() {
        // f(x, y) = -x: z = (x + g ΔB) / (1 + Δ)
        let problem = SdepcaProblem::new(
            1,
            1,
            vec![1.0],
            1.0,
            alloc::boxed::Box::new(|x, _y, out| out[0] = -x[0]),
            alloc::boxed::Box::new(|_j, _x, _y, out| out[0] = 2.0),
            alloc::boxed::Box::new(|_j, _x, _y, _out| {}),
        )
        .unwrap()
        .with_drift_jac(alloc::boxed::Box::new(|_x, _y, out| out[0] = -1.0));
        let b = synthetic_bundle(0.25, vec![0.3], vec![]);
        let z = backward_step(
            &problem,
            &[1.0],
            &[1.0],
            &b,
            Solver::BackwardEuler,
            &NewtonParams::default(),
        )
        .unwrap();
        assert_relative_eq!(z[0], (1.0 + 2.0 * 0.3) / 1.25, epsilon = 1e-12);
    }

    #[test]
    fn backward_requires_drift_jac() {
        let problem = SdepcaProblem::new(
            1,
            1,
            vec![1.0],
            1.0,
            alloc::boxed::Box::new(|x, _y, out| out[0] = -x[0]),
            alloc::boxed::Box::new(|_j, _x, _y, _out| {}),
            alloc::boxed::Box::new(|_j, _x, _y, _out| {}),
        )
        .unwrap();
        let grid = TickGrid::new(4, 1.0).unwrap();
        let noise = sample_master(grid, 1, 1, 0).unwrap();
        let policy = StepPolicy::uniform_ticks(1, grid).unwrap();
        let err = run_path(
            &problem,
            &policy,
            Solver::BackwardEuler,
            &noise,
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn uniform_run_has_exact_step_count() {
        let (problem, _) = make_example(1).unwrap();
        let grid = grid13();
        let noise = sample_master(grid, 1, 9, 0).unwrap();
        let policy = StepPolicy::uniform_ticks(1, grid).unwrap();
        let rec = run_path(
            &problem,
            &policy,
            Solver::BackwardMilstein,
            &noise,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(rec.steps, 16384);
        assert_eq!(rec.n_t, 16383);
        assert_eq!(rec.integer_states.len(), 3);
        assert_eq!(rec.min_step_ticks, 1);
        assert_eq!(rec.max_step_ticks, 1);
    }

    #[test]
    fn adaptive_run_hits_integer_times_exactly() {
        let (problem, sp) = make_example(1).unwrap();
        let grid = grid13();
        let noise = sample_master(grid, 1, 77, 3).unwrap();
        let policy = StepPolicy::adaptive(sp.step_fn.clone(), 8, grid).unwrap();
        let opts = RunOptions {
            record_trajectory: true,
            ..Default::default()
        };
        let rec = run_path(&problem, &policy, Solver::AdaptiveMilstein, &noise, &opts).unwrap();
        let times: Vec<u64> = rec.trajectory.as_ref().unwrap().iter().map(|(t, _)| *t).collect();
        let tpu = grid.ticks_per_unit();
        assert!(times.contains(&tpu));
        assert!(times.contains(&(2 * tpu)));
        assert_eq!(*times.last().unwrap(), grid.horizon_ticks());
        // steps stay within δ <= Δ_k <= min(Δ(X_k)/M + δ, 1)
        let traj = rec.trajectory.as_ref().unwrap();
        for k in 0..traj.len() - 1 {
            let dt = (traj[k + 1].0 - traj[k].0) as f64 * grid.tick();
            let dx = (sp.step_fn)(&traj[k].1);
            assert!(dt >= grid.tick());
            assert!(dt <= (dx / 8.0 + grid.tick()).min(1.0) + 1e-15, "step {dt} too large");
        }
    }

    #[test]
    fn explicit_uniform_milstein_overflows_on_large_step() {
        // superlinear drift with a coarse uniform step blows up; the run
        // reports the overflow instead of returning NaN states
        let (problem, _) = make_example(1).unwrap();
        let grid = grid13();
        let policy = StepPolicy::uniform(0.25, grid).unwrap();
        let mut diverged = 0;
        for path in 0..20 {
            let noise = sample_master(grid, 1, 4242, path).unwrap();
            match run_path(
                &problem,
                &policy,
                Solver::UniformMilstein,
                &noise,
                &RunOptions::default(),
            ) {
                Ok(_) => {}
                Err(Error::Overflow { .. }) => diverged += 1,
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(diverged > 0);
    }
}
