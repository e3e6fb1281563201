//! Min-norm safe output feedback: `min ‖u‖` subject to `q(u,y,t) ≥ 0`.
//!
//! With Euclidean norms `q(u) = A + ⟨b,u⟩ − κ‖u‖`, so the minimiser is either
//! `u = 0` or lies on the ray spanned by `b`.

use serde::{Deserialize, Serialize};

use crate::barrier::{compute_b_terms, eval_q, RffBarrier, RobustnessConsts};
use crate::error::{check_dim, Error, Result};
use crate::linalg::norm2;
use crate::model::{ControlAffine, InputVec, Measurement, TimePoint};

/// Accepted slack on `q ≥ 0` when declaring an input feasible.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSet {
    Unbounded,
    Ball { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl InputSet {
    pub fn symmetric_box(m: usize, half_width: f64) -> Self {
        Self::Box {
            lower: vec![-half_width; m],
            upper: vec![half_width; m],
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Self::Unbounded => Ok(()),
            Self::Ball { radius } if *radius > 0.0 => Ok(()),
            Self::Ball { .. } => Err(Error::InvalidArgument("ball radius must be positive".into())),
            Self::Box { lower, upper } => {
                check_dim("box lower bound", m, lower.len())?;
                check_dim("box upper bound", m, upper.len())?;
                if lower.iter().zip(upper).all(|(l, u)| l < u) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("box needs lower < upper".into()))
                }
            }
        }
    }

    /// Nearest point of the set; `None` when `u` already lies inside.
    pub fn project(&self, u: &[f64]) -> Option<Vec<f64>> {
        match self {
            Self::Unbounded => None,
            Self::Ball { radius } => {
                let n = norm2(u);
                (n > *radius).then(|| u.iter().map(|v| v * radius / n).collect())
            }
            Self::Box { lower, upper } => {
                let p: Vec<f64> = u
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect();
                (p.as_slice() != u).then_some(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeControlResult {
    pub u: InputVec,
    pub q_value: f64,
    pub feasible: bool,
    pub clamped: bool,
}

/// `q(u) = a + ⟨b,u⟩ − κ‖u‖` at a fixed output and time.
#[derive(Debug, Clone, PartialEq)]
pub struct QAffine {
    pub a: f64,
    pub b: Vec<f64>,
    pub kappa: f64,
}

impl QAffine {
    pub fn from_model(
        y: &[f64],
        t: TimePoint,
        bar: &RffBarrier,
        sys: &dyn ControlAffine,
        meas: &dyn Measurement,
        consts: &RobustnessConsts,
    ) -> Result<Self> {
        check_dim("output", meas.output_dim(), y.len())?;
        let x = meas.xhat(y);
        let bt = compute_b_terms(&x, t, sys, bar)?;
        let dx = meas.delta_x(y);
        let out = Self {
            a: bt.b1 - consts.lbar1 * dx,
            b: bt.b2,
            kappa: -bt.b3 + (consts.lbar2 + consts.lbar3) * dx,
        };
        if !out.a.is_finite() || !out.kappa.is_finite() || out.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite barrier constraint".into()));
        }
        Ok(out)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.a + crate::linalg::dot(&self.b, u) - self.kappa * norm2(u)
    }

    /// Closed-form minimiser over `ℝᵐ`, or `None` when no input satisfies `q ≥ 0`.
    pub fn unconstrained_min_norm(&self) -> Option<Vec<f64>> {
        if self.a >= 0.0 {
            return Some(vec![0.0; self.b.len()]);
        }
        let bn = norm2(&self.b);
        if bn > self.kappa {
            let tau = -self.a / (bn - self.kappa);
            Some(self.b.iter().map(|v| tau * v / bn).collect())
        } else {
            None
        }
    }

    /// Minimum-norm input within `uset`; bounded sets are handled by
    /// projecting the unconstrained solution and re-checking `q`.
    pub fn solve(&self, uset: &InputSet) -> (Vec<f64>, bool, bool) {
        let m = self.b.len();
        match self.unconstrained_min_norm() {
            None => (vec![0.0; m], false, false),
            Some(u) => match uset.project(&u) {
                None => (u, true, false),
                Some(p) => {
                    let ok = self.eval(&p) >= -FEAS_TOL;
                    (p, ok, true)
                }
            },
        }
    }
}

/// Closed-form min-norm safe input. Infeasibility is reported in the result.
pub fn safe_control(
    y: &[f64],
    t: TimePoint,
    bar: &RffBarrier,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    uset: &InputSet,
) -> Result<SafeControlResult> {
    uset.validate(sys.input_dim())?;
    let qa = QAffine::from_model(y, t, bar, sys, meas, consts)?;
    let (u, ok, clamped) = qa.solve(uset);
    let q_value = eval_q(&u, y, t, sys, meas, bar, consts)?;
    if !q_value.is_finite() {
        return Err(Error::Numerical("non-finite q at the returned input".into()));
    }
    Ok(SafeControlResult {
        u: u.into(),
        q_value,
        feasible: ok && q_value >= -FEAS_TOL,
        clamped,
    })
}

/// Grid used by [`grid_oracle`]; `extent` bounds an unbounded input set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub extent: f64,
}

fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
    let steps = ((hi - lo) / res).floor() as usize;
    let mut v: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * res).collect();
    v.push(hi);
    if lo < 0.0 && hi > 0.0 {
        v.push(0.0);
    }
    v
}

/// Exhaustive grid search for the minimum-norm input with `q ≥ 0`, using the
/// direct definition of `q` at every grid point. Only `m ≤ 2`.
#[allow(clippy::too_many_arguments)]
pub fn grid_oracle(
    y: &[f64],
    t: TimePoint,
    bar: &RffBarrier,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    uset: &InputSet,
    grid: GridSpec,
) -> Result<SafeControlResult> {
    let m = sys.input_dim();
    if m == 0 || m > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle supports one or two inputs, got {m}"
        )));
    }
    if !(grid.resolution > 0.0) || !(grid.extent > 0.0) {
        return Err(Error::InvalidArgument("grid resolution and extent must be positive".into()));
    }
    uset.validate(m)?;
    let (lo, hi): (Vec<f64>, Vec<f64>) = match uset {
        InputSet::Unbounded => (vec![-grid.extent; m], vec![grid.extent; m]),
        InputSet::Ball { radius } => (vec![-radius; m], vec![*radius; m]),
        InputSet::Box { lower, upper } => (lower.clone(), upper.clone()),
    };
    let x = meas.xhat(y);
    let bt = compute_b_terms(&x, t, sys, bar)?;
    let dx = meas.delta_x(y);
    let q = |u: &[f64]| {
        let un = norm2(u);
        bt.eval(u) - (consts.lbar1 + consts.lbar2 * un + consts.lbar3 * un) * dx
    };
    let axes: Vec<Vec<f64>> = (0..m).map(|j| axis(lo[j], hi[j], grid.resolution)).collect();
    let inside = |u: &[f64]| match uset {
        InputSet::Ball { radius } => norm2(u) <= *radius,
        _ => true,
    };

    let mut best_feasible: Option<(f64, Vec<f64>, f64)> = None;
    let mut best_q: Option<(f64, Vec<f64>)> = None;
    let mut visit = |u: Vec<f64>| {
        if !inside(&u) {
            return;
        }
        let qv = q(&u);
        let un = norm2(&u);
        if qv >= -FEAS_TOL && best_feasible.as_ref().is_none_or(|(n, _, _)| un < *n) {
            best_feasible = Some((un, u.clone(), qv));
        }
        if best_q.as_ref().is_none_or(|(b, _)| qv > *b) {
            best_q = Some((qv, u));
        }
    };
    if m == 1 {
        for &a in &axes[0] {
            visit(vec![a]);
        }
    } else {
        for &a in &axes[0] {
            for &b in &axes[1] {
                visit(vec![a, b]);
            }
        }
    }
    Ok(match best_feasible {
        Some((_, u, qv)) => SafeControlResult {
            u: u.into(),
            q_value: qv,
            feasible: true,
            clamped: false,
        },
        None => {
            let (qv, u) = best_q.expect("grid is never empty");
            SafeControlResult {
                u: u.into(),
                q_value: qv,
                feasible: false,
                clamped: false,
            }
        }
    })
}
