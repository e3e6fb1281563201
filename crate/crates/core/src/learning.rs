//! Hinge-relaxed training of the barrier weights.
//!
//! The loss is
//! `‖θ‖² + λ_s Σ[γ_s − h(x)]₊ + λ_u Σ[h(x) + γ_u]₊ + λ_d Σ[γ_d − q(u,y,t)]₊`,
//! which is convex in `θ` because `h` is linear in `θ` and `q` is concave.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{eval_q, QCoefficients, RffBarrier, RobustnessConsts};
use crate::datasets::DatasetBundle;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{ControlAffine, Measurement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma_safe: f64,
    pub gamma_unsafe: f64,
    pub gamma_dyn: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_d: f64,
    pub step_size: f64,
    /// Step at iteration `k` is `step_size / (1 + k / step_decay_iters)`; 0 disables decay.
    pub step_decay_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    pub max_iters: usize,
    /// Samples per family per step; `None` means full batch.
    pub batch_size: Option<usize>,
    /// Stop when the best loss improved by less than `tol` over `patience` iterations.
    pub patience: usize,
    pub tol: f64,
    /// Replace `⟨B₂,u⟩` by `‖B₂‖` (unit-ball input set). Requires all error bounds zero.
    pub unit_ball_sup: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma_safe: 0.05,
            gamma_unsafe: 0.05,
            gamma_dyn: 0.01,
            lambda_s: 100.0,
            lambda_u: 100.0,
            lambda_d: 100.0,
            step_size: 0.01,
            step_decay_iters: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            max_iters: 20_000,
            batch_size: None,
            patience: 200,
            tol: 1e-10,
            unit_ball_sup: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("gamma_safe", self.gamma_safe),
            ("gamma_unsafe", self.gamma_unsafe),
            ("gamma_dyn", self.gamma_dyn),
            ("step_size", self.step_size),
            ("epsilon_adam", self.epsilon_adam),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_u", self.lambda_u), ("lambda_d", self.lambda_d)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Violations of one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub total: usize,
    pub violated: usize,
    /// Most negative margin (positive when every constraint holds).
    pub worst_margin: f64,
}

impl FamilyReport {
    fn from_margins(margins: impl Iterator<Item = f64>) -> Self {
        let mut r = Self {
            total: 0,
            violated: 0,
            worst_margin: f64::INFINITY,
        };
        for m in margins {
            r.total += 1;
            if !(m >= 0.0) {
                r.violated += 1;
            }
            r.worst_margin = r.worst_margin.min(m);
        }
        r
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.violated as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `h(x) ≥ γ_safe` on the buffered safe set.
    pub safe: FamilyReport,
    /// `h(x) ≤ −γ_unsafe` on the unsafe set.
    #[serde(rename = "unsafe")]
    pub unsafe_: FamilyReport,
    /// `q(u,y,t) ≥ γ_dyn` on the demonstrations.
    pub dynamics: FamilyReport,
}

impl ConstraintReport {
    /// Violated constraints over all constraints.
    pub fn overall_fraction(&self) -> f64 {
        let tot = self.safe.total + self.unsafe_.total + self.dynamics.total;
        let bad = self.safe.violated + self.unsafe_.violated + self.dynamics.violated;
        if tot == 0 {
            0.0
        } else {
            bad as f64 / tot as f64
        }
    }

    pub fn max_family_fraction(&self) -> f64 {
        self.safe
            .fraction()
            .max(self.unsafe_.fraction())
            .max(self.dynamics.fraction())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub constraints: ConstraintReport,
    /// Full-batch loss after each iteration.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Per-sample quantities that do not depend on `θ`, precomputed once.
pub struct TrainingProblem {
    ell: usize,
    w: Matrix,
    safe_phi: Vec<f64>,
    unsafe_phi: Vec<f64>,
    dynamics: Vec<QCoefficients>,
    cfg: TrainConfig,
}

impl TrainingProblem {
    pub fn new(
        bundle: &DatasetBundle,
        sys: &dyn ControlAffine,
        meas: &dyn Measurement,
        bar: &RffBarrier,
        consts: &RobustnessConsts,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        consts.validate()?;
        check_dim("barrier state dimension", sys.state_dim(), bar.n())?;
        let flat = |set: &[crate::model::StateVec]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(set.len() * bar.ell());
            for x in set {
                out.extend(bar.features(x)?);
            }
            Ok(out)
        };
        let dynamics = bundle
            .z_dyn
            .iter()
            .map(|d| {
                if cfg.unit_ball_sup {
                    if meas.delta_x(&d.y) != 0.0 {
                        return Err(Error::InvalidArgument(
                            "unit-ball supremum mode requires zero measurement error".into(),
                        ));
                    }
                    QCoefficients::build_unit_ball(&meas.xhat(&d.y), d.time_point(), sys, bar)
                } else {
                    QCoefficients::build(&d.u, &d.y, d.time_point(), sys, meas, bar, consts)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ell: bar.ell(),
            w: bar.frequencies().clone(),
            safe_phi: flat(&bundle.z_safe_buffered)?,
            unsafe_phi: flat(&bundle.z_unsafe)?,
            dynamics,
            cfg: cfg.clone(),
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    fn n_safe(&self) -> usize {
        self.safe_phi.len() / self.ell
    }

    fn n_unsafe(&self) -> usize {
        self.unsafe_phi.len() / self.ell
    }

    fn safe_row(&self, i: usize) -> &[f64] {
        &self.safe_phi[i * self.ell..(i + 1) * self.ell]
    }

    fn unsafe_row(&self, i: usize) -> &[f64] {
        &self.unsafe_phi[i * self.ell..(i + 1) * self.ell]
    }

    /// Loss and one subgradient over the given index subsets, with each
    /// hinge sum rescaled by `scale`.
    fn eval_subset(
        &self,
        theta: &[f64],
        safe: &[usize],
        unsafe_: &[usize],
        dynamics: &[usize],
        scale: [f64; 3],
        want_grad: bool,
    ) -> (f64, Vec<f64>) {
        let c = &self.cfg;
        let mut loss = dot(theta, theta);
        let mut grad = if want_grad {
            theta.iter().map(|t| 2.0 * t).collect()
        } else {
            Vec::new()
        };
        let (ls, lu, ld) = (c.lambda_s * scale[0], c.lambda_u * scale[1], c.lambda_d * scale[2]);
        let mut hinge = 0.0;
        for &i in safe {
            let phi = self.safe_row(i);
            let v = c.gamma_safe - dot(phi, theta);
            if v > 0.0 {
                hinge += v;
                if want_grad {
                    grad.iter_mut().zip(phi).for_each(|(g, p)| *g -= ls * p);
                }
            }
        }
        loss += ls * hinge;
        hinge = 0.0;
        for &i in unsafe_ {
            let phi = self.unsafe_row(i);
            let v = dot(phi, theta) + c.gamma_unsafe;
            if v > 0.0 {
                hinge += v;
                if want_grad {
                    grad.iter_mut().zip(phi).for_each(|(g, p)| *g += lu * p);
                }
            }
        }
        loss += lu * hinge;
        hinge = 0.0;
        for &i in dynamics {
            let qc = &self.dynamics[i];
            let (q, gh) = qc.value_parts(&self.w, theta);
            let v = c.gamma_dyn - q;
            if v > 0.0 {
                hinge += v;
                if want_grad {
                    qc.add_subgradient_at(&self.w, &gh, -ld, &mut grad);
                }
            }
        }
        loss += ld * hinge;
        (loss, grad)
    }

    fn all(&self) -> [Vec<usize>; 3] {
        [
            (0..self.n_safe()).collect(),
            (0..self.n_unsafe()).collect(),
            (0..self.dynamics.len()).collect(),
        ]
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let [s, u, d] = self.all();
        self.eval_subset(theta, &s, &u, &d, [1.0; 3], false).0
    }

    pub fn subgradient(&self, theta: &[f64]) -> Vec<f64> {
        self.loss_and_subgradient(theta).1
    }

    pub fn loss_and_subgradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let [s, u, d] = self.all();
        self.eval_subset(theta, &s, &u, &d, [1.0; 3], true)
    }
}

/// Relaxed training loss at `θ`.
pub fn loss(
    theta: &[f64],
    bundle: &DatasetBundle,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    bar: &RffBarrier,
    consts: &RobustnessConsts,
    cfg: &TrainConfig,
) -> Result<f64> {
    check_dim("weights", bar.ell(), theta.len())?;
    Ok(TrainingProblem::new(bundle, sys, meas, bar, consts, cfg)?.loss(theta))
}

/// One subgradient of [`loss`] at `θ`.
pub fn loss_subgradient(
    theta: &[f64],
    bundle: &DatasetBundle,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    bar: &RffBarrier,
    consts: &RobustnessConsts,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    check_dim("weights", bar.ell(), theta.len())?;
    Ok(TrainingProblem::new(bundle, sys, meas, bar, consts, cfg)?.subgradient(theta))
}

const DIVERGENCE_LOSS: f64 = 1e12;

/// Adam on the relaxed loss starting from `θ = 0`; returns the best iterate.
pub fn train(
    bundle: &DatasetBundle,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    bar_init: &RffBarrier,
    consts: &RobustnessConsts,
    cfg: &TrainConfig,
) -> Result<(RffBarrier, TrainReport)> {
    let start = Instant::now();
    let prob = TrainingProblem::new(bundle, sys, meas, bar_init, consts, cfg)?;
    let theta = train_problem(&prob, cfg)?;
    let bar = bar_init.with_theta(theta.theta)?;
    let constraints = check_constraints(&bar, bundle, sys, meas, consts, cfg)?;
    Ok((
        bar,
        TrainReport {
            final_loss: theta.best_loss,
            iterations: theta.iterations,
            stop_reason: theta.stop_reason,
            constraints,
            loss_trace: theta.trace,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Raw optimizer output.
pub struct Optimized {
    pub theta: Vec<f64>,
    pub best_loss: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<f64>,
}

pub fn train_problem(prob: &TrainingProblem, cfg: &TrainConfig) -> Result<Optimized> {
    let ell = prob.ell();
    let mut theta = vec![0.0; ell];
    let mut m = vec![0.0; ell];
    let mut v = vec![0.0; ell];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full = prob.all();
    let sizes = [full[0].len(), full[1].len(), full[2].len()];

    let (mut loss, mut grad) = prob.loss_and_subgradient(&theta);
    let mut best = (loss, theta.clone());
    let mut best_history = vec![loss];
    let mut trace = Vec::new();
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations = 0;
    let (mut b1t, mut b2t) = (1.0, 1.0);

    for it in 0..cfg.max_iters {
        if let Some(bs) = cfg.batch_size {
            let mut picks: [Vec<usize>; 3] = Default::default();
            let mut scale = [1.0; 3];
            for f in 0..3 {
                let take = bs.min(sizes[f]);
                picks[f] = sample(&mut rng, sizes[f], take).into_vec();
                picks[f].sort_unstable();
                if take > 0 {
                    scale[f] = sizes[f] as f64 / take as f64;
                }
            }
            grad = prob
                .eval_subset(&theta, &picks[0], &picks[1], &picks[2], scale, true)
                .1;
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let lr = if cfg.step_decay_iters > 0 {
            cfg.step_size / (1.0 + it as f64 / cfg.step_decay_iters as f64)
        } else {
            cfg.step_size
        };
        for i in 0..ell {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            theta[i] -= lr * mh / (vh.sqrt() + cfg.epsilon_adam);
        }
        iterations = it + 1;

        if cfg.batch_size.is_some() {
            loss = prob.loss(&theta);
        } else {
            (loss, grad) = prob.loss_and_subgradient(&theta);
        }
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::TrainingDiverged {
                iteration: iterations,
                loss,
                last_theta: best.1,
            });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        best_history.push(best.0);
        if cfg.patience > 0 && best_history.len() > cfg.patience {
            let then = best_history[best_history.len() - 1 - cfg.patience];
            if then - best.0 < cfg.tol {
                stop_reason = StopReason::Converged;
                break;
            }
        }
    }
    Ok(Optimized {
        theta: best.1,
        best_loss: best.0,
        iterations,
        stop_reason,
        trace,
    })
}

/// Counts violated constraints by direct evaluation of `h` and `q`.
pub fn check_constraints(
    bar: &RffBarrier,
    bundle: &DatasetBundle,
    sys: &dyn ControlAffine,
    meas: &dyn Measurement,
    consts: &RobustnessConsts,
    cfg: &TrainConfig,
) -> Result<ConstraintReport> {
    let safe = FamilyReport::from_margins(
        bundle
            .z_safe_buffered
            .iter()
            .map(|x| bar.eval_h(x) - cfg.gamma_safe),
    );
    let unsafe_ = FamilyReport::from_margins(
        bundle
            .z_unsafe
            .iter()
            .map(|x| -cfg.gamma_unsafe - bar.eval_h(x)),
    );
    let margins = bundle
        .z_dyn
        .iter()
        .map(|d| {
            if cfg.unit_ball_sup {
                let x = meas.xhat(&d.y);
                QCoefficients::build_unit_ball(&x, d.time_point(), sys, bar)
                    .map(|qc| qc.value(bar.frequencies(), bar.theta()) - cfg.gamma_dyn)
            } else {
                eval_q(&d.u, &d.y, d.time_point(), sys, meas, bar, consts).map(|q| q - cfg.gamma_dyn)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConstraintReport {
        safe,
        unsafe_,
        dynamics: FamilyReport::from_margins(margins.into_iter()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DatasetBundle, DemoRecord};
    use crate::model::{IdentityMeasurement, LinearModel, StateVec};

    fn toy_bundle() -> (DatasetBundle, LinearModel, IdentityMeasurement) {
        let sys = LinearModel::integrator(1);
        let meas = IdentityMeasurement { n: 1, delta_x: 0.0 };
        let safe: Vec<StateVec> = (0..11).map(|i| StateVec(vec![-0.5 + 0.1 * i as f64])).collect();
        let unsafe_ = vec![StateVec(vec![-1.0]), StateVec(vec![1.0])];
        let demos = safe
            .iter()
            .map(|x| DemoRecord::new(0.0, 0.0, vec![-x[0]], x.to_vec()))
            .collect();
        let b = DatasetBundle::from_sets(demos, safe.clone(), unsafe_, safe, &meas);
        (b, sys, meas)
    }

    #[test]
    fn empty_sets_leave_ridge_only() {
        let meas = IdentityMeasurement { n: 1, delta_x: 0.0 };
        let sys = LinearModel::integrator(1);
        let b = DatasetBundle::from_sets(vec![], vec![], vec![], vec![], &meas);
        let bar = RffBarrier::sample(1, 4, 1.0, 1.0, None, 0).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let th = vec![0.5, -1.0, 2.0, 0.0];
        let l = loss(&th, &b, &sys, &meas, &bar, &c, &TrainConfig::default()).unwrap();
        assert_eq!(l, 5.25);
    }

    #[test]
    fn zero_weights_hinges() {
        let (b, sys, meas) = toy_bundle();
        let bar = RffBarrier::sample(1, 8, 1.0, 1.0, None, 0).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            lambda_d: 0.0,
            ..Default::default()
        };
        let l = loss(&[0.0; 8], &b, &sys, &meas, &bar, &c, &cfg).unwrap();
        let expected = 100.0 * 0.05 * 11.0 + 100.0 * 0.05 * 2.0;
        assert!((l - expected).abs() < 1e-9);
    }

    #[test]
    fn inactive_hinges_give_ridge_gradient() {
        let (b, sys, meas) = toy_bundle();
        let bar = RffBarrier::sample(1, 8, 1.0, 1.0, None, 0).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            lambda_s: 0.0,
            lambda_u: 0.0,
            lambda_d: 0.0,
            ..Default::default()
        };
        let th: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let g = loss_subgradient(&th, &b, &sys, &meas, &bar, &c, &cfg).unwrap();
        let two: Vec<f64> = th.iter().map(|t| 2.0 * t).collect();
        assert_eq!(g, two);
    }

    #[test]
    fn ridge_only_converges_to_zero() {
        let (b, sys, meas) = toy_bundle();
        let mut bar = RffBarrier::sample(1, 8, 1.0, 1.0, None, 0).unwrap();
        bar.set_theta(vec![0.0; 8]).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            lambda_s: 0.0,
            lambda_u: 0.0,
            lambda_d: 0.0,
            ..Default::default()
        };
        let (trained, rep) = train(&b, &sys, &meas, &bar, &c, &cfg).unwrap();
        assert!(trained.theta().iter().all(|t| *t == 0.0));
        assert_eq!(rep.final_loss, 0.0);
    }

    #[test]
    fn toy_signs() {
        let (b, sys, meas) = toy_bundle();
        let bar = RffBarrier::sample(1, 32, 4.0, 1.0, None, 3).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            max_iters: 4000,
            ..Default::default()
        };
        let (trained, rep) = train(&b, &sys, &meas, &bar, &c, &cfg).unwrap();
        for x in &b.z_safe {
            assert!(trained.eval_h(x) > 0.0, "h({}) = {}", x[0], trained.eval_h(x));
        }
        for x in &b.z_unsafe {
            assert!(trained.eval_h(x) < 0.0);
        }
        assert_eq!(rep.constraints.safe.violated, 0);
        assert_eq!(rep.constraints.unsafe_.violated, 0);
    }

    #[test]
    fn constraint_report_at_zero() {
        let (b, sys, meas) = toy_bundle();
        let bar = RffBarrier::sample(1, 8, 1.0, 1.0, None, 0).unwrap();
        let c = RobustnessConsts::new(1.0, 1.0, 1.0).unwrap();
        let r = check_constraints(&bar, &b, &sys, &meas, &c, &TrainConfig::default()).unwrap();
        assert_eq!(r.safe.violated, 11);
        assert_eq!(r.safe.worst_margin, -0.05);
        assert_eq!(r.unsafe_.violated, 2);
        assert_eq!(r.unsafe_.worst_margin, -0.05);
        assert_eq!(r.dynamics.violated, 11);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            gamma_dyn: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
