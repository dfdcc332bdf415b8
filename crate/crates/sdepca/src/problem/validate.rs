//! Numerical validators for the coefficient assumptions.
//!
//! The assumptions are certified at test scale: inequalities are checked over
//! a grid on a bounded box or over seeded random samples, never symbolically.
//! Every check returns its worst (largest) residual, so a nonpositive return
//! certifies the inequality on the evaluated set.

use super::{Domain, SdepcaProblem, StepFn};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::stream_rng;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

/// Largest number of grid evaluations a validator will attempt.
const MAX_GRID_POINTS: u128 = 1 << 28;

fn ensure_finite(what: &'static str, v: &[f64], x: &[f64], y: &[f64]) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        let mut point = x.to_vec();
        point.extend_from_slice(y);
        Err(Error::Evaluation { what, point })
    }
}

/// Odometer over a `dims`-dimensional grid with `grid_points` per axis.
struct GridIter {
    idx: Vec<usize>,
    grid_points: usize,
    done: bool,
}

impl GridIter {
    fn new(dims: usize, grid_points: usize) -> Self {
        GridIter {
            idx: vec![0; dims],
            grid_points,
            done: dims == 0,
        }
    }

    fn current(&self) -> Option<&[usize]> {
        if self.done {
            None
        } else {
            Some(&self.idx)
        }
    }

    fn advance(&mut self) {
        for i in (0..self.idx.len()).rev() {
            self.idx[i] += 1;
            if self.idx[i] < self.grid_points {
                return;
            }
            self.idx[i] = 0;
        }
        self.done = true;
    }
}

fn axis_value(lo: f64, hi: f64, k: usize, grid_points: usize) -> f64 {
    if grid_points == 1 {
        return lo;
    }
    lo + (hi - lo) * k as f64 / (grid_points - 1) as f64
}

fn fill_point(bounds: (&[f64], &[f64]), idx: &[usize], grid_points: usize, out: &mut [f64]) {
    let (lo, hi) = bounds;
    for i in 0..out.len() {
        out[i] = axis_value(lo[i], hi[i], idx[i], grid_points);
    }
}

/// Max over a `(2n)`-dimensional grid of
/// `<x, f(x,y)> + Δ(x)/2 |f(x,y)|^2 - alpha (1 + |x|^2 + |y|^2)`.
///
/// A nonpositive return certifies the step condition for `Δ` and `alpha` on
/// the grid.
pub fn check_step_condition(
    problem: &SdepcaProblem,
    step_fn: &StepFn,
    alpha: f64,
    domain: &Domain,
    grid_points: usize,
) -> Result<f64> {
    if grid_points < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 grid points per axis, got {grid_points}"
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    let n = problem.state_dim();
    if domain.state_dim() != n {
        return Err(Error::Parameter("domain dimension does not match the problem".into()));
    }
    let total = (grid_points as u128).pow(2 * n as u32);
    if total > MAX_GRID_POINTS {
        return Err(Error::Parameter(format!(
            "grid of {total} points is too large; reduce grid_points"
        )));
    }

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    let mut iter = GridIter::new(2 * n, grid_points);
    loop {
        {
            let idx = match iter.current() {
                Some(i) => i,
                None => break,
            };
            fill_point(domain.x_bounds(), &idx[..n], grid_points, &mut x);
            fill_point(domain.y_bounds(), &idx[n..], grid_points, &mut y);
        }
        problem.drift(&x, &y, &mut f);
        ensure_finite("drift", &f, &x, &y)?;
        let dx = step_fn(&x);
        if !dx.is_finite() {
            return Err(Error::Evaluation { what: "step function", point: x.clone() });
        }
        let lhs = math::dot(&x, &f) + 0.5 * dx * math::norm2sq(&f);
        let residual = lhs - alpha * (1.0 + math::norm2sq(&x) + math::norm2sq(&y));
        if residual > worst {
            worst = residual;
        }
        iter.advance();
    }
    Ok(worst)
}

/// Report of [`check_step_lower_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBoundReport {
    /// Max of `(a|x|^q + b)^-1 - Δ(x)`; nonpositive means the bound holds.
    pub max_violation: f64,
    /// Max of `|(a|x|^q + b)^-1 - Δ(x)|`; zero means equality everywhere on
    /// the grid.
    pub max_abs_gap: f64,
}

/// Checks `Δ(x) >= (a|x|^q + b)^-1` over a grid on the domain's `x` box.
pub fn check_step_lower_bound(
    step_fn: &StepFn,
    lower_bound: (f64, f64, f64),
    domain: &Domain,
    grid_points: usize,
) -> Result<StepBoundReport> {
    if grid_points < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 grid points per axis, got {grid_points}"
        )));
    }
    let (a, b, q) = lower_bound;
    let n = domain.state_dim();
    let total = (grid_points as u128).pow(n as u32);
    if total > MAX_GRID_POINTS {
        return Err(Error::Parameter(format!(
            "grid of {total} points is too large; reduce grid_points"
        )));
    }
    let mut x = vec![0.0; n];
    let mut report = StepBoundReport {
        max_violation: f64::NEG_INFINITY,
        max_abs_gap: 0.0,
    };
    let mut iter = GridIter::new(n, grid_points);
    loop {
        {
            let idx = match iter.current() {
                Some(i) => i,
                None => break,
            };
            fill_point(domain.x_bounds(), idx, grid_points, &mut x);
        }
        let dx = step_fn(&x);
        if !dx.is_finite() {
            return Err(Error::Evaluation { what: "step function", point: x.clone() });
        }
        let bound = 1.0 / (a * math::norm_pow(&x, q) + b);
        let gap = bound - dx;
        if gap > report.max_violation {
            report.max_violation = gap;
        }
        let abs_gap = math::abs(gap);
        if abs_gap > report.max_abs_gap {
            report.max_abs_gap = abs_gap;
        }
        iter.advance();
    }
    Ok(report)
}

/// Commutativity defect at a single point:
/// `max_{j<r} |D_x g_j(x,y) g_r(x,y) - D_x g_r(x,y) g_j(x,y)|`.
pub fn commutativity_defect(problem: &SdepcaProblem, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = problem.state_dim();
    let d = problem.noise_dim();
    let mut cols = vec![0.0; d * n];
    let mut jacs = vec![0.0; d * n * n];
    for j in 0..d {
        problem.diffusion_col(j, x, y, &mut cols[j * n..(j + 1) * n]);
        problem.diffusion_jac(j, x, y, &mut jacs[j * n * n..(j + 1) * n * n]);
    }
    ensure_finite("diffusion column", &cols, x, y)?;
    ensure_finite("diffusion Jacobian", &jacs, x, y)?;
    let mut worst: f64 = 0.0;
    let mut diff = vec![0.0; n];
    for j in 0..d {
        for r in j + 1..d {
            diff.fill(0.0);
            math::matvec_acc(1.0, &jacs[j * n * n..(j + 1) * n * n], &cols[r * n..(r + 1) * n], &mut diff);
            math::matvec_acc(-1.0, &jacs[r * n * n..(r + 1) * n * n], &cols[j * n..(j + 1) * n], &mut diff);
            let defect = math::norm(&diff);
            if defect > worst {
                worst = defect;
            }
        }
    }
    Ok(worst)
}

/// Max commutativity defect over seeded random samples drawn uniformly from
/// `[-10, 10]` per coordinate. Returns exactly `0` for single-channel
/// problems (no pairs) and for commutative noise whose products evaluate
/// identically.
pub fn check_commutativity(problem: &SdepcaProblem, sample_count: u64, seed: u64) -> Result<f64> {
    if sample_count < 1 {
        return Err(Error::Parameter("sample_count must be at least 1".into()));
    }
    if problem.noise_dim() < 2 {
        return Ok(0.0);
    }
    let n = problem.state_dim();
    let mut rng = stream_rng(seed, 0);
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for _ in 0..sample_count {
        for v in x.iter_mut().chain(y.iter_mut()) {
            *v = rng.random_range(-10.0..=10.0);
        }
        let defect = commutativity_defect(problem, &x, &y)?;
        if defect > worst {
            worst = defect;
        }
    }
    Ok(worst)
}

fn sample_box(rng: &mut impl Rng, bounds: (&[f64], &[f64]), out: &mut [f64]) {
    let (lo, hi) = bounds;
    for i in 0..out.len() {
        out[i] = rng.random_range(lo[i]..=hi[i]);
    }
}

/// Max over sampled pairs of
/// `<x - x̄, f(x,y) - f(x̄,ȳ)> - L1 (|x - x̄|^2 + |y - ȳ|^2)`.
pub fn check_monotone_drift(
    problem: &SdepcaProblem,
    l1: f64,
    domain: &Domain,
    sample_count: u64,
    seed: u64,
) -> Result<f64> {
    pairwise_check(problem, domain, sample_count, seed, |ctx| {
        let dx2 = math::norm2sq(ctx.dx);
        let dy2 = math::norm2sq(ctx.dy);
        math::dot(ctx.dx, ctx.df) - l1 * (dx2 + dy2)
    })
}

/// Max over sampled pairs and columns of
/// `|g_j(x,y) - g_j(x̄,ȳ)| - K3 (|x - x̄| + |y - ȳ|)`.
pub fn check_diffusion_lipschitz(
    problem: &SdepcaProblem,
    k3: f64,
    domain: &Domain,
    sample_count: u64,
    seed: u64,
) -> Result<f64> {
    pairwise_check(problem, domain, sample_count, seed, |ctx| {
        let scale = k3 * (math::norm(ctx.dx) + math::norm(ctx.dy));
        ctx.dg.iter().map(|d| d - scale).fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Max over sampled pairs of
/// `|f(x,y) - f(x̄,ȳ)| - L2 (1 + |x|^γ + |y|^γ + |x̄|^γ + |ȳ|^γ)(|x - x̄| + |y - ȳ|)`.
pub fn check_drift_poly_growth(
    problem: &SdepcaProblem,
    l2: f64,
    gamma: f64,
    domain: &Domain,
    sample_count: u64,
    seed: u64,
) -> Result<f64> {
    pairwise_check(problem, domain, sample_count, seed, |ctx| {
        let growth = 1.0
            + math::norm_pow(ctx.x, gamma)
            + math::norm_pow(ctx.y, gamma)
            + math::norm_pow(ctx.xb, gamma)
            + math::norm_pow(ctx.yb, gamma);
        math::norm(ctx.df) - l2 * growth * (math::norm(ctx.dx) + math::norm(ctx.dy))
    })
}

/// Max over sampled points and columns of `|g_j(x,y)| - K1 (1 + |x| + |y|)`.
pub fn check_diffusion_growth(
    problem: &SdepcaProblem,
    k1: f64,
    domain: &Domain,
    sample_count: u64,
    seed: u64,
) -> Result<f64> {
    if sample_count < 1 {
        return Err(Error::Parameter("sample_count must be at least 1".into()));
    }
    let n = problem.state_dim();
    let d = problem.noise_dim();
    let mut rng = stream_rng(seed, 0);
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        sample_box(&mut rng, domain.x_bounds(), &mut x);
        sample_box(&mut rng, domain.y_bounds(), &mut y);
        let scale = k1 * (1.0 + math::norm(&x) + math::norm(&y));
        for j in 0..d {
            problem.diffusion_col(j, &x, &y, &mut g);
            ensure_finite("diffusion column", &g, &x, &y)?;
            let residual = math::norm(&g) - scale;
            if residual > worst {
                worst = residual;
            }
        }
    }
    Ok(worst)
}

/// Data handed to a pairwise residual: the two sample points and the
/// coefficient differences between them.
struct PairCtx<'a> {
    x: &'a [f64],
    y: &'a [f64],
    xb: &'a [f64],
    yb: &'a [f64],
    dx: &'a [f64],
    dy: &'a [f64],
    /// `f(x,y) - f(x̄,ȳ)`.
    df: &'a [f64],
    /// `|g_j(x,y) - g_j(x̄,ȳ)|` per column.
    dg: &'a [f64],
}

fn pairwise_check(
    problem: &SdepcaProblem,
    domain: &Domain,
    sample_count: u64,
    seed: u64,
    residual: impl Fn(&PairCtx<'_>) -> f64,
) -> Result<f64> {
    if sample_count < 1 {
        return Err(Error::Parameter("sample_count must be at least 1".into()));
    }
    let n = problem.state_dim();
    if domain.state_dim() != n {
        return Err(Error::Parameter("domain dimension does not match the problem".into()));
    }
    let d = problem.noise_dim();
    let mut rng = stream_rng(seed, 0);
    let (mut x, mut y) = (vec![0.0; n], vec![0.0; n]);
    let (mut xb, mut yb) = (vec![0.0; n], vec![0.0; n]);
    let (mut dx, mut dy) = (vec![0.0; n], vec![0.0; n]);
    let (mut f, mut fb, mut df) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut g, mut gb) = (vec![0.0; n], vec![0.0; n]);
    let mut dg = vec![0.0; d];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        sample_box(&mut rng, domain.x_bounds(), &mut x);
        sample_box(&mut rng, domain.y_bounds(), &mut y);
        sample_box(&mut rng, domain.x_bounds(), &mut xb);
        sample_box(&mut rng, domain.y_bounds(), &mut yb);
        for i in 0..n {
            dx[i] = x[i] - xb[i];
            dy[i] = y[i] - yb[i];
        }
        problem.drift(&x, &y, &mut f);
        problem.drift(&xb, &yb, &mut fb);
        ensure_finite("drift", &f, &x, &y)?;
        ensure_finite("drift", &fb, &xb, &yb)?;
        for i in 0..n {
            df[i] = f[i] - fb[i];
        }
        for j in 0..d {
            problem.diffusion_col(j, &x, &y, &mut g);
            problem.diffusion_col(j, &xb, &yb, &mut gb);
            ensure_finite("diffusion column", &g, &x, &y)?;
            ensure_finite("diffusion column", &gb, &xb, &yb)?;
            let mut s = 0.0;
            for i in 0..n {
                let diff = g[i] - gb[i];
                s += diff * diff;
            }
            dg[j] = math::sqrt(s);
        }
        let r = residual(&PairCtx {
            x: &x,
            y: &y,
            xb: &xb,
            yb: &yb,
            dx: &dx,
            dy: &dy,
            df: &df,
            dg: &dg,
        });
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}
