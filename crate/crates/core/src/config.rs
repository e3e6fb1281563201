//! Run configuration. Every section has defaults, so an empty document is a
//! valid configuration; the command line tool reads it from TOML.

use serde::{Deserialize, Serialize};

use crate::barrier::RobustnessConsts;
use crate::controller::InputSet;
use crate::datasets::DatasetConfig;
use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::model::{lane, LaneModel, RedundantMeasurement, VehicleParams};
use crate::sim::{
    default_track, make_track, CompareGridSpec, DemoConfig, InitialState, RolloutConfig, Segment, Track,
};
use crate::verification::VerifyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub delta_f: f64,
    pub delta_g: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            delta_f: 0.1,
            delta_g: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    pub delta_x: f64,
    /// Size of the deterministic error on the first `c_e` read.
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            delta_x: 0.1,
            amplitude: 0.15,
            frequency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Empty means the built-in S-shaped course.
    pub segments: Vec<Segment>,
    pub spacing: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            segments: Vec::new(),
            spacing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierConfig {
    pub ell: usize,
    pub sigma2: f64,
    pub alpha_slope: f64,
    /// Per-coordinate length scales of the frequency distribution; empty means all ones.
    pub length_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            ell: 200,
            sigma2: 1.0,
            alpha_slope: 1.0,
            length_scales: vec![0.35, 100.0, 0.35, 0.25],
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub input_set: InputSet,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            input_set: InputSet::symmetric_box(lane::M, 1.0),
        }
    }
}

/// Closed-loop evaluation of a trained barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub ce_max: f64,
    pub theta_max: f64,
    /// A run passes when `min_t h ≥ −h_tolerance` and `|c_e|` stays in bounds.
    pub h_tolerance: f64,
    pub min_pass_fraction: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 100,
            ce_max: 0.75,
            theta_max: 0.3,
            h_tolerance: 0.02,
            min_pass_fraction: 0.95,
            seed: 101,
        }
    }
}

/// Conditions under which a pipeline run counts as successful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Largest tolerated violated fraction over all training constraints.
    pub max_violation_fraction: f64,
    /// Also require every validity condition of the verifier to hold.
    pub require_certificate: bool,
    /// Also require the closed-loop evaluation to pass.
    pub require_evaluation: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            max_violation_fraction: 0.05,
            require_certificate: true,
            require_evaluation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub vehicle: VehicleParams,
    pub model: ModelConfig,
    pub measurement: MeasurementConfig,
    pub track: TrackConfig,
    pub rollout: RolloutConfig,
    pub demos: DemoConfig,
    pub datasets: DatasetConfig,
    pub barrier: BarrierConfig,
    pub consts: RobustnessConsts,
    pub train: TrainConfig,
    pub verify: VerifyConfig,
    pub controller: ControllerConfig,
    pub evaluation: EvalConfig,
    pub compare: CompareGridSpec,
    pub gates: GateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        let (v, d) = vehicle.plant_longitudinal.equilibrium();
        Self {
            rollout: RolloutConfig {
                initial: InitialState {
                    v,
                    d,
                    c_e: 0.0,
                    theta_e: 0.0,
                },
                ..RolloutConfig::default()
            },
            vehicle,
            model: ModelConfig::default(),
            measurement: MeasurementConfig::default(),
            track: TrackConfig::default(),
            // Short expert runs from a low-discrepancy spread of initial
            // states; the first sample of every run is used for learning.
            demos: DemoConfig {
                n_rollouts: 6000,
                max_attempt_factor: 2,
                ce_range: 0.9,
                theta_range: 0.7,
                speed_range: 0.5,
                record_horizon: Some(0.1),
                ..DemoConfig::default()
            },
            datasets: DatasetConfig {
                stride: 5,
                ..DatasetConfig::default()
            },
            barrier: BarrierConfig::default(),
            consts: RobustnessConsts {
                lbar1: 1.0,
                lbar2: 0.5,
                lbar3: 0.5,
            },
            train: TrainConfig::default(),
            verify: VerifyConfig::default(),
            controller: ControllerConfig::default(),
            evaluation: EvalConfig::default(),
            compare: CompareGridSpec::default(),
            gates: GateConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.consts.validate()?;
        self.train.validate()?;
        self.rollout.validate()?;
        self.controller.input_set.validate(lane::M)?;
        if self.model.delta_f < 0.0 || self.model.delta_g < 0.0 {
            return Err(Error::InvalidArgument("model error bounds must be non-negative".into()));
        }
        if self.barrier.ell == 0 {
            return Err(Error::InvalidArgument("barrier needs at least one feature".into()));
        }
        if !self.barrier.length_scales.is_empty() && self.barrier.length_scales.len() != lane::N {
            return Err(Error::InvalidArgument(format!(
                "expected {} length scales, got {}",
                lane::N,
                self.barrier.length_scales.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.gates.max_violation_fraction) {
            return Err(Error::InvalidArgument("violation fraction gate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn lane_model(&self) -> Result<LaneModel> {
        LaneModel::new(self.vehicle.clone(), self.model.delta_f, self.model.delta_g)
    }

    pub fn measurement_model(&self) -> Result<RedundantMeasurement> {
        let mut m = RedundantMeasurement::lane(self.measurement.amplitude, self.measurement.delta_x);
        m.frequency = self.measurement.frequency;
        RedundantMeasurement::new(m.n, m.extra_reads, m.perturbed, m.amplitude, m.frequency, m.delta_x)
    }

    pub fn build_track(&self) -> Result<Track> {
        if self.track.segments.is_empty() {
            Ok(default_track())
        } else {
            make_track(&self.track.segments, self.track.spacing)
        }
    }

    /// Every seed in the configuration, by section.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("rollout", self.rollout.seed),
            ("datasets", self.datasets.seed),
            ("barrier", self.barrier.seed),
            ("train", self.train.seed),
            ("verify", self.verify.seed),
            ("evaluation", self.evaluation.seed),
        ]
    }

    pub fn length_scales(&self) -> Option<&[f64]> {
        (!self.barrier.length_scales.is_empty()).then_some(self.barrier.length_scales.as_slice())
    }
}
