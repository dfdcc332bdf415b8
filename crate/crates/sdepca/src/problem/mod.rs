//! The SDEPCA problem class, built-in example systems, and numerical
//! validators for the coefficient assumptions.
//!
//! A problem is the autonomous system
//!
//! ```text
//! dx(t) = f(x(t), y) dt + sum_j g_j(x(t), y) dB^j(t),   y = x([t]),
//! ```
//!
//! described by pure coefficient callbacks `f`, `g_j` and the exact diffusion
//! Jacobians `D_x g_j` (the Milstein correction needs them analytically).
//! Problems are immutable after construction and safe to share across
//! concurrent workers.

mod validate;

pub use validate::{
    check_commutativity, check_diffusion_growth, check_diffusion_lipschitz,
    check_drift_poly_growth, check_monotone_drift, check_step_condition, check_step_lower_bound,
    commutativity_defect, StepBoundReport,
};

use crate::error::{Error, Result};
use crate::math;
use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

/// Adaptive step function `Δ(x)`.
pub type StepFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Drift-style callback: `(x, y, out)` with `out` of length `n`.
pub type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Jacobian callback: `(x, y, out)` with `out` a row-major `n x n` matrix.
pub type JacFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Per-column diffusion callback: `(j, x, y, out)`; for columns the output has
/// length `n`, for column Jacobians it is row-major `n x n`.
pub type ColumnFn = dyn Fn(usize, &[f64], &[f64], &mut [f64]) + Send + Sync;

/// An SDEPCA with analytic coefficients.
///
/// Output buffers are zero-filled before each callback invocation, so
/// callbacks only need to write nonzero entries.
pub struct SdepcaProblem {
    state_dim: usize,
    noise_dim: usize,
    drift: Box<DriftFn>,
    diffusion: Box<ColumnFn>,
    diffusion_jac: Box<ColumnFn>,
    drift_jac: Option<Box<JacFn>>,
    initial: Vec<f64>,
    horizon: f64,
}

impl SdepcaProblem {
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        initial: Vec<f64>,
        horizon: f64,
        drift: Box<DriftFn>,
        diffusion: Box<ColumnFn>,
        diffusion_jac: Box<ColumnFn>,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(Error::Parameter(format!(
                "dimensions must be positive (state {state_dim}, noise {noise_dim})"
            )));
        }
        if initial.len() != state_dim {
            return Err(Error::Parameter(format!(
                "initial value has length {}, expected {state_dim}",
                initial.len()
            )));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Parameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(SdepcaProblem {
            state_dim,
            noise_dim,
            drift,
            diffusion,
            diffusion_jac,
            drift_jac: None,
            initial,
            horizon,
        })
    }

    /// Attaches the drift Jacobian `D_x f`, required by the drift-implicit
    /// reference solvers. Absence is only an error at solver construction.
    pub fn with_drift_jac(mut self, jac: Box<JacFn>) -> Self {
        self.drift_jac = Some(jac);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn initial_value(&self) -> &[f64] {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn has_drift_jac(&self) -> bool {
        self.drift_jac.is_some()
    }

    /// Evaluates `f(x, y)` into `out` (length `n`).
    pub fn drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.drift)(x, y, out);
    }

    /// Evaluates the diffusion column `g_j(x, y)` into `out` (length `n`).
    pub fn diffusion_col(&self, j: usize, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.diffusion)(j, x, y, out);
    }

    /// Evaluates `D_x g_j(x, y)` into `out` (row-major `n x n`).
    pub fn diffusion_jac(&self, j: usize, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.diffusion_jac)(j, x, y, out);
    }

    /// Evaluates `D_x f(x, y)` into `out` (row-major `n x n`); errors when the
    /// Jacobian was not supplied.
    pub fn drift_jac(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.drift_jac {
            Some(jac) => {
                out.fill(0.0);
                jac(x, y, out);
                Ok(())
            }
            None => Err(Error::Config(
                "problem has no drift Jacobian (required by implicit solvers)".into(),
            )),
        }
    }
}

impl core::fmt::Debug for SdepcaProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SdepcaProblem")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("initial", &self.initial)
            .field("horizon", &self.horizon)
            .field("has_drift_jac", &self.has_drift_jac())
            .finish()
    }
}

/// Step-policy parameters shipped with a built-in example: the step function
/// `Δ(x) = 2 / (1 + |x|^2)` together with the constants it is certified for.
#[derive(Clone)]
pub struct ExampleStepParams {
    /// `Δ(x)`, shared so experiment plans can reuse it across candidates.
    pub step_fn: Arc<StepFn>,
    /// Certified constant for the step-condition inequality.
    pub alpha: f64,
    /// `(a, b, q)` with `Δ(x) >= (a |x|^q + b)^-1`; equality for the built-in
    /// step function.
    pub lower_bound: (f64, f64, f64),
}

/// Axis-aligned box in `R^n x R^n` over which numerical validation runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    y_lo: Vec<f64>,
    y_hi: Vec<f64>,
}

impl Domain {
    pub fn new(x_lo: Vec<f64>, x_hi: Vec<f64>, y_lo: Vec<f64>, y_hi: Vec<f64>) -> Result<Self> {
        if x_lo.len() != x_hi.len() || y_lo.len() != y_hi.len() || x_lo.len() != y_lo.len() {
            return Err(Error::Parameter("domain bound lengths differ".into()));
        }
        if x_lo.is_empty() {
            return Err(Error::Parameter("domain must have at least one axis".into()));
        }
        for (lo, hi) in x_lo.iter().zip(&x_hi).chain(y_lo.iter().zip(&y_hi)) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Parameter(format!("bad domain interval [{lo}, {hi}]")));
            }
        }
        Ok(Domain { x_lo, x_hi, y_lo, y_hi })
    }

    /// `[-w, w]^n` for both the `x` and the `y` argument.
    pub fn symmetric(n: usize, half_width: f64) -> Result<Self> {
        Domain::new(
            vec![-half_width; n],
            vec![half_width; n],
            vec![-half_width; n],
            vec![half_width; n],
        )
    }

    pub fn state_dim(&self) -> usize {
        self.x_lo.len()
    }

    pub(crate) fn x_bounds(&self) -> (&[f64], &[f64]) {
        (&self.x_lo, &self.x_hi)
    }

    pub(crate) fn y_bounds(&self) -> (&[f64], &[f64]) {
        (&self.y_lo, &self.y_hi)
    }
}

/// Constants under which a problem's assumptions are numerically certified.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCertificate {
    /// Step-condition constant.
    pub alpha: f64,
    /// `(a, b, q)` of the step lower bound.
    pub lower_bound: (f64, f64, f64),
    /// One-sided Lipschitz constant of the drift, when certified.
    pub monotone_const: Option<f64>,
    /// Global Lipschitz constant of the diffusion columns, when certified.
    pub diffusion_lip: Option<f64>,
    /// `(L2, gamma)` polynomial-growth Lipschitz constants of the drift.
    pub poly_growth: Option<(f64, f64)>,
    /// Box over which the numerical checks run.
    pub check_domain: Domain,
}

impl AssumptionCertificate {
    pub fn new(
        alpha: f64,
        lower_bound: (f64, f64, f64),
        monotone_const: Option<f64>,
        diffusion_lip: Option<f64>,
        poly_growth: Option<(f64, f64)>,
        check_domain: Domain,
    ) -> Result<Self> {
        let (a, b, q) = lower_bound;
        for (name, v) in [("alpha", alpha), ("a", a), ("b", b), ("q", q)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if let Some(l1) = monotone_const {
            if !l1.is_finite() || l1 <= 0.0 {
                return Err(Error::Parameter(format!("L1 must be strictly positive, got {l1}")));
            }
        }
        if let Some(k3) = diffusion_lip {
            if !k3.is_finite() || k3 <= 0.0 {
                return Err(Error::Parameter(format!("K3 must be strictly positive, got {k3}")));
            }
        }
        if let Some((l2, gamma)) = poly_growth {
            if !l2.is_finite() || l2 <= 0.0 {
                return Err(Error::Parameter(format!("L2 must be strictly positive, got {l2}")));
            }
            if !(gamma >= 1.0) {
                return Err(Error::Parameter(format!("gamma must be >= 1, got {gamma}")));
            }
        }
        Ok(AssumptionCertificate {
            alpha,
            lower_bound,
            monotone_const,
            diffusion_lip,
            poly_growth,
            check_domain,
        })
    }

    /// The constants the built-in examples are certified under.
    pub fn for_example(id: u32) -> Result<Self> {
        let (monotone, poly) = match id {
            1 => (1.0, (2.0, 2.0)),
            2 => (1.5, (2.5, 2.0)),
            3 => (1.0, (2.0, 2.0)),
            _ => return Err(Error::Parameter(format!("unknown example id {id}"))),
        };
        AssumptionCertificate::new(
            2.5,
            (0.5, 0.5, 2.0),
            Some(monotone),
            Some(6.0),
            Some(poly),
            Domain::symmetric(1, 50.0)?,
        )
    }
}

/// The step function shared by all built-in examples, `Δ(x) = 2 / (1 + |x|^2)`.
pub fn example_step_fn() -> Arc<StepFn> {
    Arc::new(|x: &[f64]| 2.0 / (1.0 + math::norm2sq(x)))
}

/// Builds one of the three built-in example systems, all scalar with
/// `x(0) = 2` and `T = 2`:
///
/// 1. `f = -x^3 + y`, `g = x + y` (one Brownian channel);
/// 2. `f = -x^3 + x + y`, `g = (5x + y, 0.5x + 0.1y)` (commutative noise);
/// 3. `f = -x^3 + sin(y)`, `g = (x + y, -x + y)` (non-commutative noise).
pub fn make_example(id: u32) -> Result<(SdepcaProblem, ExampleStepParams)> {
    let problem = match id {
        1 => SdepcaProblem::new(
            1,
            1,
            vec![2.0],
            2.0,
            Box::new(|x, y, out| out[0] = -(x[0] * x[0] * x[0]) + y[0]),
            Box::new(|_j, x, y, out| out[0] = x[0] + y[0]),
            Box::new(|_j, _x, _y, out| out[0] = 1.0),
        )?
        .with_drift_jac(Box::new(|x, _y, out| out[0] = -3.0 * x[0] * x[0])),
        2 => SdepcaProblem::new(
            1,
            2,
            vec![2.0],
            2.0,
            Box::new(|x, y, out| out[0] = -(x[0] * x[0] * x[0]) + x[0] + y[0]),
            // g1 = 5x + y evaluated as 10*(0.5x + 0.1y): sharing the g2
            // expression makes the two commutation products
            // 5*g2 and 0.5*g1 bitwise equal for every (x, y).
            Box::new(|j, x, y, out| {
                let g2 = 0.5 * x[0] + 0.1 * y[0];
                out[0] = if j == 0 { 10.0 * g2 } else { g2 };
            }),
            Box::new(|j, _x, _y, out| out[0] = if j == 0 { 5.0 } else { 0.5 }),
        )?
        .with_drift_jac(Box::new(|x, _y, out| out[0] = -3.0 * x[0] * x[0] + 1.0)),
        3 => SdepcaProblem::new(
            1,
            2,
            vec![2.0],
            2.0,
            Box::new(|x, y, out| out[0] = -(x[0] * x[0] * x[0]) + math::sin(y[0])),
            Box::new(|j, x, y, out| {
                out[0] = if j == 0 { x[0] + y[0] } else { -x[0] + y[0] };
            }),
            Box::new(|j, _x, _y, out| out[0] = if j == 0 { 1.0 } else { -1.0 }),
        )?
        .with_drift_jac(Box::new(|x, _y, out| out[0] = -3.0 * x[0] * x[0])),
        _ => return Err(Error::Parameter(format!("unknown example id {id}"))),
    };
    Ok((
        problem,
        ExampleStepParams {
            step_fn: example_step_fn(),
            alpha: 2.5,
            lower_bound: (0.5, 0.5, 2.0),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example_coefficients() {
        let (p1, sp) = make_example(1).unwrap();
        assert_eq!((p1.state_dim(), p1.noise_dim()), (1, 1));
        assert_eq!(p1.initial_value(), &[2.0]);
        assert_eq!(p1.horizon(), 2.0);
        let mut out = [0.0];
        p1.drift(&[2.0], &[2.0], &mut out);
        assert_eq!(out[0], -6.0);
        p1.diffusion_col(0, &[2.0], &[2.0], &mut out);
        assert_eq!(out[0], 4.0);
        p1.diffusion_jac(0, &[2.0], &[2.0], &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!((sp.step_fn)(&[2.0]), 0.4);
        assert_eq!(sp.alpha, 2.5);

        let (p2, _) = make_example(2).unwrap();
        assert_eq!(p2.noise_dim(), 2);
        p2.drift(&[2.0], &[1.0], &mut out);
        assert_eq!(out[0], -8.0 + 2.0 + 1.0);
        p2.diffusion_col(0, &[1.0], &[1.0], &mut out);
        assert_relative_eq!(out[0], 6.0, epsilon = 1e-14);
        p2.diffusion_col(1, &[1.0], &[1.0], &mut out);
        assert_relative_eq!(out[0], 0.6, epsilon = 1e-14);

        let (p3, _) = make_example(3).unwrap();
        p3.drift(&[0.0], &[core::f64::consts::FRAC_PI_2], &mut out);
        assert_relative_eq!(out[0], 1.0, epsilon = 1e-14);
        p3.diffusion_col(1, &[1.0], &[1.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn unknown_example_rejected() {
        assert!(matches!(make_example(0), Err(Error::Parameter(_))));
        assert!(matches!(make_example(4), Err(Error::Parameter(_))));
    }

    #[test]
    fn step_fn_matches_lower_bound_exactly() {
        // Δ(x) = 2/(1+x²) equals (0.5|x|² + 0.5)^-1 bitwise, not just to
        // rounding: both reduce to RN(2/RN(1+s)).
        let step = example_step_fn();
        let mut x = -50.0;
        while x <= 50.0 {
            let lb = 1.0 / (0.5 * (x * x) + 0.5);
            assert_eq!((step)(&[x]), lb, "x = {x}");
            x += 0.0703125;
        }
    }

    #[test]
    fn drift_jac_missing_is_config_error() {
        let p = SdepcaProblem::new(
            1,
            1,
            vec![0.0],
            1.0,
            Box::new(|_x, _y, out| out[0] = 0.0),
            Box::new(|_j, _x, _y, out| out[0] = 0.0),
            Box::new(|_j, _x, _y, out| out[0] = 0.0),
        )
        .unwrap();
        let mut out = [0.0];
        assert!(matches!(p.drift_jac(&[0.0], &[0.0], &mut out), Err(Error::Config(_))));
    }

    #[test]
    fn certificate_validation() {
        assert!(AssumptionCertificate::for_example(1).is_ok());
        assert!(AssumptionCertificate::for_example(9).is_err());
        let dom = Domain::symmetric(1, 1.0).unwrap();
        // gamma < 1 rejected
        assert!(AssumptionCertificate::new(
            1.0,
            (1.0, 1.0, 2.0),
            None,
            None,
            Some((1.0, 0.5)),
            dom.clone()
        )
        .is_err());
        // nonpositive constants rejected
        assert!(
            AssumptionCertificate::new(0.0, (1.0, 1.0, 2.0), None, None, None, dom).is_err()
        );
    }

    #[test]
    fn bad_domains_rejected() {
        assert!(Domain::new(vec![0.0], vec![1.0], vec![3.0], vec![2.0]).is_err());
        assert!(Domain::new(vec![0.0, 0.0], vec![1.0], vec![0.0], vec![1.0]).is_err());
    }
}
