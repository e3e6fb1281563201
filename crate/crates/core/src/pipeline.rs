//! Stage functions shared by the command line tool and the tests, plus the
//! full learn-verify-evaluate run.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::RffBarrier;
use crate::config::PipelineConfig;
use crate::datasets::{build_bundle, BundleMeta, DatasetBundle, DemoRecord};
use crate::error::Result;
use crate::io;
use crate::learning::{train, TrainReport};
use crate::model::{lane, LaneModel, RedundantMeasurement};
use crate::sim::{collect_demos, compare_grid, rollout, CompareRow, Controller, RolloutTrace, Scenario, Track};
use crate::verification::{verify, VerificationReport};

/// Track, nominal model and measurement map built from a configuration.
pub struct LaneSetup {
    pub cfg: PipelineConfig,
    pub track: Track,
    pub sys: LaneModel,
    pub meas: RedundantMeasurement,
}

impl LaneSetup {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            track: cfg.build_track()?,
            sys: cfg.lane_model()?,
            meas: cfg.measurement_model()?,
            cfg: cfg.clone(),
        })
    }

    pub fn scenario(&self) -> Scenario<'_> {
        Scenario {
            track: &self.track,
            params: &self.cfg.vehicle,
            sys: &self.sys,
            meas: &self.meas,
        }
    }

    pub fn collect(&self) -> Result<Vec<DemoRecord>> {
        collect_demos(&self.scenario(), &self.cfg.rollout, &self.cfg.demos)
    }

    pub fn datasets(&self, demos: &[DemoRecord]) -> Result<DatasetBundle> {
        let t = &self.cfg.train;
        build_bundle(demos, &self.meas, &self.cfg.datasets, t.gamma_safe, t.gamma_unsafe)
    }

    /// Untrained barrier with the configured random features.
    pub fn initial_barrier(&self) -> Result<RffBarrier> {
        let b = &self.cfg.barrier;
        RffBarrier::sample(lane::N, b.ell, b.sigma2, b.alpha_slope, self.cfg.length_scales(), b.seed)
    }

    pub fn train(&self, bundle: &DatasetBundle) -> Result<(RffBarrier, TrainReport)> {
        let bar0 = self.initial_barrier()?;
        train(bundle, &self.sys, &self.meas, &bar0, &self.cfg.consts, &self.cfg.train)
    }

    pub fn verify(&self, bar: &RffBarrier, bundle: &DatasetBundle) -> Result<VerificationReport> {
        let t = &self.cfg.train;
        verify(
            bar,
            bundle,
            &self.sys,
            &self.meas,
            &self.cfg.consts,
            (t.gamma_safe, t.gamma_unsafe, t.gamma_dyn),
            &self.cfg.verify,
        )
    }

    /// Barrier-controlled rollout from `(c_e, θ_e)` with the configured speed state.
    pub fn rocbf_rollout(&self, bar: &RffBarrier, c_e: f64, theta_e: f64) -> Result<RolloutTrace> {
        let mut rc = self.cfg.rollout.clone();
        rc.initial.c_e = c_e;
        rc.initial.theta_e = theta_e;
        rollout(
            &self.scenario(),
            &rc,
            Controller::Rocbf {
                bar,
                consts: &self.cfg.consts,
                uset: &self.cfg.controller.input_set,
            },
        )
    }

    /// Closed-loop runs from random initial errors in the configured box.
    pub fn evaluate(&self, bar: &RffBarrier) -> Result<(EvalReport, Vec<RolloutTrace>)> {
        let e = &self.cfg.evaluation;
        let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
        let mut runs = Vec::with_capacity(e.n_rollouts);
        let mut traces = Vec::with_capacity(e.n_rollouts);
        for _ in 0..e.n_rollouts {
            let c = rng.random_range(-e.ce_max..=e.ce_max);
            let th = rng.random_range(-e.theta_max..=e.theta_max);
            let tr = self.rocbf_rollout(bar, c, th)?;
            let s = &tr.summary;
            let h0 = tr.steps.first().map_or(f64::NAN, |st| st.h);
            runs.push(EvalRun {
                c_e0: c,
                theta_e0: th,
                h0,
                min_h: s.min_h,
                max_abs_ce: s.max_abs_ce,
                infeasible_steps: s.infeasible_steps,
                pass: s.min_h >= -e.h_tolerance && s.safe_set_violations == 0,
            });
            traces.push(tr);
        }
        let passed = runs.iter().filter(|r| r.pass).count();
        let fraction = if runs.is_empty() { 0.0 } else { passed as f64 / runs.len() as f64 };
        Ok((
            EvalReport {
                passed,
                total: runs.len(),
                fraction,
                pass: !runs.is_empty() && fraction >= e.min_pass_fraction,
                runs,
            },
            traces,
        ))
    }

    pub fn compare(&self, bar: &RffBarrier) -> Result<Vec<CompareRow>> {
        compare_grid(
            &self.scenario(),
            &self.cfg.rollout,
            &self.cfg.compare,
            bar,
            &self.cfg.consts,
            &self.cfg.controller.input_set,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub c_e0: f64,
    pub theta_e0: f64,
    /// Barrier value at the initial state.
    pub h0: f64,
    pub min_h: f64,
    pub max_abs_ce: f64,
    pub infeasible_steps: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub passed: usize,
    pub total: usize,
    pub fraction: f64,
    pub pass: bool,
    pub runs: Vec<EvalRun>,
}

/// Which success conditions held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub constraints: bool,
    pub certificate: bool,
    pub evaluation: bool,
    pub success: bool,
}

/// Why a run is not successful, in the order the gates are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateFailure {
    Constraints,
    Certificate,
    Evaluation,
}

impl GateOutcome {
    pub fn first_failure(&self, cfg: &PipelineConfig) -> Option<GateFailure> {
        if !self.constraints {
            Some(GateFailure::Constraints)
        } else if cfg.gates.require_certificate && !self.certificate {
            Some(GateFailure::Certificate)
        } else if cfg.gates.require_evaluation && !self.evaluation {
            Some(GateFailure::Evaluation)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub demos: usize,
    pub bundle: BundleMeta,
    pub eps: f64,
    pub eps_n: f64,
    pub eps_bar: f64,
    pub train: TrainReport,
    pub verification: VerificationReport,
    pub evaluation: Option<EvalReport>,
    pub gates: GateOutcome,
}

pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub barrier: RffBarrier,
    pub bundle: DatasetBundle,
    pub traces: Vec<RolloutTrace>,
    pub demos: Vec<DemoRecord>,
}

/// Artifact paths inside an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub demos: PathBuf,
    pub bundle: PathBuf,
    pub barrier: PathBuf,
    pub train_report: PathBuf,
    pub verification: PathBuf,
    pub evaluation: PathBuf,
    pub summary: PathBuf,
    pub traces: Vec<PathBuf>,
}

impl ArtifactPaths {
    pub fn in_dir(dir: &Path, n_traces: usize) -> Self {
        Self {
            demos: dir.join("demos.txt"),
            bundle: dir.join("bundle.json"),
            barrier: dir.join("barrier.txt"),
            train_report: dir.join("train_report.json"),
            verification: dir.join("verification.json"),
            evaluation: dir.join("evaluation.json"),
            summary: dir.join("summary.json"),
            traces: (0..n_traces).map(|i| dir.join(format!("trace_{i:03}.txt"))).collect(),
        }
    }
}

/// Collection, datasets, training, verification and (optionally) closed-loop
/// evaluation, with pre-collected demonstrations when given.
pub fn run(cfg: &PipelineConfig, demos: Option<Vec<DemoRecord>>, evaluate: bool) -> Result<PipelineOutcome> {
    let setup = LaneSetup::new(cfg)?;
    let demos = match demos {
        Some(d) => d,
        None => setup.collect()?,
    };
    let bundle = setup.datasets(&demos)?;
    let (bar, train_report) = setup.train(&bundle)?;
    let verification = setup.verify(&bar, &bundle)?;
    let (evaluation, traces) = if evaluate {
        let (r, t) = setup.evaluate(&bar)?;
        (Some(r), t)
    } else {
        (None, Vec::new())
    };
    let constraints = train_report.constraints.overall_fraction() <= cfg.gates.max_violation_fraction;
    let certificate = verification.overall;
    let eval_ok = evaluation.as_ref().is_none_or(|e| e.pass);
    let mut gates = GateOutcome {
        constraints,
        certificate,
        evaluation: eval_ok,
        success: false,
    };
    gates.success = gates.first_failure(cfg).is_none();
    Ok(PipelineOutcome {
        summary: PipelineSummary {
            demos: demos.len(),
            bundle: bundle.meta.clone(),
            eps: bundle.eps,
            eps_n: bundle.eps_n,
            eps_bar: bundle.eps_bar,
            train: train_report,
            verification,
            evaluation,
            gates,
        },
        barrier: bar,
        bundle,
        traces,
        demos,
    })
}

/// Writes every artifact of a run; `n_traces` evaluation traces are kept.
pub fn write_artifacts(out: &PipelineOutcome, cfg: &PipelineConfig, dir: &Path, n_traces: usize) -> Result<ArtifactPaths> {
    let n = n_traces.min(out.traces.len());
    let paths = ArtifactPaths::in_dir(dir, n);
    io::write_demos(&paths.demos, &out.demos)?;
    io::write_json(&paths.bundle, &out.bundle)?;
    io::write_barrier(&paths.barrier, &out.barrier, &cfg.consts)?;
    io::write_json(&paths.train_report, &out.summary.train)?;
    io::write_json(&paths.verification, &out.summary.verification)?;
    if let Some(e) = &out.summary.evaluation {
        io::write_json(&paths.evaluation, e)?;
    }
    io::write_json(&paths.summary, &out.summary)?;
    for (p, t) in paths.traces.iter().zip(&out.traces) {
        io::write_text(p, &io::trace_to_text(t))?;
    }
    Ok(paths)
}
