//! States, outputs, inputs and the uncertainty-bounded models.
//!
//! A [`ControlAffine`] model supplies the nominal drift `F̂`, input matrix `Ĝ`
//! and the error bounds `Δ_F`, `Δ_G`; a [`Measurement`] model supplies the
//! state estimate `X̂(y)` and its error bound `Δ_X(y)`. The lane-keeping
//! vehicle used by the simulator lives here as well.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm2, Matrix};

macro_rules! vec_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(v: Vec<f64>) -> Self {
                Self(v)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vec_newtype!(
    /// Plant state `x`. For the lane instance the layout is `[v, d, c_e, θ_e]`.
    StateVec
);
vec_newtype!(
    /// Output measurement `y = Y(x)`.
    OutputVec
);
vec_newtype!(
    /// Control input `u`. For the lane instance `u = tan(δ)`.
    InputVec
);

/// Lane-keeping state indices.
pub mod lane {
    pub const V: usize = 0;
    pub const D: usize = 1;
    pub const CE: usize = 2;
    pub const THETA_E: usize = 3;
    pub const N: usize = 4;
    pub const M: usize = 1;
}

/// Time argument of the model maps.
///
/// `exo` carries the value of the exogenous channel at time `t` (the path
/// heading rate `θ̇_t` for the lane model). Time-invariant models ignore both.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimePoint {
    pub t: f64,
    pub exo: f64,
}

impl TimePoint {
    pub fn at(t: f64) -> Self {
        Self { t, exo: 0.0 }
    }

    pub fn with_exo(t: f64, exo: f64) -> Self {
        Self { t, exo }
    }
}

/// Control-affine nominal model with error bounds.
///
/// The true dynamics satisfy `‖F(x,t) − F̂(x,t)‖ ≤ Δ_F(x,t)` and
/// `‖G(x,t) − Ĝ(x,t)‖ ≤ Δ_G(x,t)`.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn fhat(&self, x: &[f64], t: TimePoint) -> Vec<f64>;
    /// `n × m` input matrix.
    fn ghat(&self, x: &[f64], t: TimePoint) -> Matrix;
    fn delta_f(&self, x: &[f64], t: TimePoint) -> f64;
    fn delta_g(&self, x: &[f64], t: TimePoint) -> f64;
    /// True when neither the maps nor the bounds depend on `t`.
    fn time_invariant(&self) -> bool {
        true
    }
}

/// Output measurement model `(X̂, Δ_X)` plus the simulator's ground truth `Y`.
pub trait Measurement: Send + Sync {
    fn output_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn xhat(&self, y: &[f64]) -> Vec<f64>;
    fn delta_x(&self, y: &[f64]) -> f64;
    /// Ground-truth output map; only the simulator calls this.
    fn y_true(&self, x: &[f64]) -> Vec<f64>;
    /// Declared upper bound on the Lipschitz constant of `Y`.
    fn lip_y_bound(&self) -> f64;
}

// ───────────────────────────── Vehicle ─────────────────────────────

/// Longitudinal model `v̇ = −a1 v − a2 v² − a3 d + a4`, `ḋ = b1 v − b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalCoeffs {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub b1: f64,
    pub b2: f64,
}

impl LongitudinalCoeffs {
    /// Coefficients used in the nominal model `F̂`.
    pub const MODEL: Self = Self {
        a1: 1.095,
        a2: 0.007,
        a3: 0.152,
        a4: 3.74,
        b1: 3.6,
        b2: 20.0,
    };

    /// Identified coefficients driving the simulated plant.
    pub const IDENTIFIED: Self = Self {
        a1: 1.0954,
        a2: 0.007,
        a3: 0.1521,
        a4: 3.7387,
        b1: 3.6,
        b2: 20.0,
    };

    pub fn vdot(&self, v: f64, d: f64) -> f64 {
        -self.a1 * v - self.a2 * v * v - self.a3 * d + self.a4
    }

    pub fn ddot(&self, v: f64) -> f64 {
        self.b1 * v - self.b2
    }

    /// Cruise equilibrium `(v*, d*)` where both derivatives vanish.
    pub fn equilibrium(&self) -> (f64, f64) {
        let v = self.b2 / self.b1;
        let d = (self.a4 - self.a1 * v - self.a2 * v * v) / self.a3;
        (v, d)
    }
}

/// PID-style lateral expert gains: `u = clamp(−(kp c_e + k_theta θ_e + kd v sin θ_e))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertGains {
    pub kp: f64,
    pub k_theta: f64,
    pub kd: f64,
    /// Symmetric bound on `|u|`.
    pub clamp: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            k_theta: 1.2,
            kd: 0.1,
            clamp: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Axle distance `L` in metres.
    pub wheelbase: f64,
    pub longitudinal: LongitudinalCoeffs,
    pub plant_longitudinal: LongitudinalCoeffs,
    pub expert: ExpertGains,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.51,
            longitudinal: LongitudinalCoeffs::MODEL,
            plant_longitudinal: LongitudinalCoeffs::IDENTIFIED,
            expert: ExpertGains::default(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "wheelbase must be positive, got {}",
                self.wheelbase
            )));
        }
        if !(self.expert.clamp > 0.0) {
            return Err(Error::InvalidArgument("expert clamp must be positive".into()));
        }
        Ok(())
    }
}

/// Local lane model drift `F̂(x, t)` with `θ̇_t` supplied externally.
pub fn eval_fhat_lane(
    x: &StateVec,
    _t: f64,
    params: &VehicleParams,
    theta_dot_t: f64,
) -> Result<StateVec> {
    check_dim("lane state", lane::N, x.len())?;
    Ok(StateVec(fhat_lane_raw(x, params, theta_dot_t)))
}

fn fhat_lane_raw(x: &[f64], params: &VehicleParams, theta_dot_t: f64) -> Vec<f64> {
    let (v, d, theta_e) = (x[lane::V], x[lane::D], x[lane::THETA_E]);
    let c = &params.longitudinal;
    vec![
        c.vdot(v, d),
        c.ddot(v),
        v * theta_e.sin(),
        -theta_dot_t,
    ]
}

/// Local lane model input column `Ĝ(x) = [0, 0, 0, v/L]ᵀ`.
pub fn eval_ghat_lane(x: &StateVec, params: &VehicleParams) -> Result<Matrix> {
    check_dim("lane state", lane::N, x.len())?;
    Ok(ghat_lane_raw(x, params))
}

fn ghat_lane_raw(x: &[f64], params: &VehicleParams) -> Matrix {
    Matrix::column(vec![0.0, 0.0, 0.0, x[lane::V] / params.wheelbase])
}

/// Planar pose in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Kinematic bicycle: `(v cos θ, v sin θ, v u / L)` with `u = tan δ`.
pub fn eval_global_bicycle(pose: &Pose, v: f64, u: f64, wheelbase: f64) -> (f64, f64, f64) {
    (
        v * pose.heading.cos(),
        v * pose.heading.sin(),
        v * u / wheelbase,
    )
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

/// Signed cross-track error and heading error relative to the segment `wp1 → wp2`.
///
/// `c_e` is positive when the car is to the left of the segment direction.
pub fn cross_track_error(pose: &Pose, wp1: [f64; 2], wp2: [f64; 2]) -> Result<(f64, f64)> {
    let dir = [wp2[0] - wp1[0], wp2[1] - wp1[1]];
    let len = norm2(&dir);
    if !(len > 0.0) {
        return Err(Error::InvalidArgument(
            "cross-track error needs distinct waypoints".into(),
        ));
    }
    let w = [pose.x - wp1[0], pose.y - wp1[1]];
    // ‖w‖ sin(θ_w) = (dir × w) / ‖dir‖
    let c_e = (dir[0] * w[1] - dir[1] * w[0]) / len;
    let theta_t = dir[1].atan2(dir[0]);
    Ok((c_e, wrap_angle(pose.heading - theta_t)))
}

/// Nominal lane-keeping model with constant error bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneModel {
    pub params: VehicleParams,
    pub delta_f: f64,
    pub delta_g: f64,
}

impl LaneModel {
    pub fn new(params: VehicleParams, delta_f: f64, delta_g: f64) -> Result<Self> {
        params.validate()?;
        if !(delta_f >= 0.0 && delta_g >= 0.0) {
            return Err(Error::InvalidArgument("error bounds must be non-negative".into()));
        }
        Ok(Self {
            params,
            delta_f,
            delta_g,
        })
    }
}

impl ControlAffine for LaneModel {
    fn state_dim(&self) -> usize {
        lane::N
    }
    fn input_dim(&self) -> usize {
        lane::M
    }
    fn fhat(&self, x: &[f64], t: TimePoint) -> Vec<f64> {
        fhat_lane_raw(x, &self.params, t.exo)
    }
    fn ghat(&self, x: &[f64], _t: TimePoint) -> Matrix {
        ghat_lane_raw(x, &self.params)
    }
    fn delta_f(&self, _x: &[f64], _t: TimePoint) -> f64 {
        self.delta_f
    }
    fn delta_g(&self, _x: &[f64], _t: TimePoint) -> f64 {
        self.delta_g
    }
    fn time_invariant(&self) -> bool {
        // θ̇_t enters the drift.
        false
    }
}

/// `ẋ = f0 + A x + B u` with constant error bounds. Used for toy instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f0: Vec<f64>,
    pub a: Matrix,
    pub b: Matrix,
    pub delta_f: f64,
    pub delta_g: f64,
}

impl LinearModel {
    pub fn new(f0: Vec<f64>, a: Matrix, b: Matrix, delta_f: f64, delta_g: f64) -> Result<Self> {
        let n = f0.len();
        check_dim("linear model A rows", n, a.rows())?;
        check_dim("linear model A cols", n, a.cols())?;
        check_dim("linear model B rows", n, b.rows())?;
        if !(delta_f >= 0.0 && delta_g >= 0.0) {
            return Err(Error::InvalidArgument("error bounds must be non-negative".into()));
        }
        Ok(Self {
            f0,
            a,
            b,
            delta_f,
            delta_g,
        })
    }

    /// `ẋ = u` in `n` dimensions.
    pub fn integrator(n: usize) -> Self {
        let mut b = Matrix::zeros(n, n);
        for i in 0..n {
            b.set(i, i, 1.0);
        }
        Self {
            f0: vec![0.0; n],
            a: Matrix::zeros(n, n),
            b,
            delta_f: 0.0,
            delta_g: 0.0,
        }
    }
}

impl ControlAffine for LinearModel {
    fn state_dim(&self) -> usize {
        self.f0.len()
    }
    fn input_dim(&self) -> usize {
        self.b.cols()
    }
    fn fhat(&self, x: &[f64], _t: TimePoint) -> Vec<f64> {
        self.a
            .mul_vec(x)
            .into_iter()
            .zip(&self.f0)
            .map(|(ax, f)| ax + f)
            .collect()
    }
    fn ghat(&self, _x: &[f64], _t: TimePoint) -> Matrix {
        self.b.clone()
    }
    fn delta_f(&self, _x: &[f64], _t: TimePoint) -> f64 {
        self.delta_f
    }
    fn delta_g(&self, _x: &[f64], _t: TimePoint) -> f64 {
        self.delta_g
    }
}

// ─────────────────────────── Measurements ───────────────────────────

/// `y = x`, `X̂(y) = y`, constant `Δ_X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityMeasurement {
    pub n: usize,
    pub delta_x: f64,
}

impl Measurement for IdentityMeasurement {
    fn output_dim(&self) -> usize {
        self.n
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn xhat(&self, y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
    fn delta_x(&self, _y: &[f64]) -> f64 {
        self.delta_x
    }
    fn y_true(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn lip_y_bound(&self) -> f64 {
        1.0
    }
}

/// Synthetic sensor with redundant reads.
///
/// `Y(x)` is `x` followed by one extra read of each coordinate listed in
/// `extra_reads`; the first read of `perturbed` carries the bounded
/// deterministic error `amplitude · sin(frequency · x_perturbed)`. `X̂`
/// averages all reads of a coordinate, so the estimate error is at most
/// `amplitude / reads(perturbed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundantMeasurement {
    pub n: usize,
    pub extra_reads: Vec<usize>,
    pub perturbed: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub delta_x: f64,
}

impl RedundantMeasurement {
    pub fn new(
        n: usize,
        extra_reads: Vec<usize>,
        perturbed: usize,
        amplitude: f64,
        frequency: f64,
        delta_x: f64,
    ) -> Result<Self> {
        if extra_reads.iter().any(|&j| j >= n) || perturbed >= n {
            return Err(Error::InvalidArgument("read index out of range".into()));
        }
        if !(delta_x >= 0.0 && amplitude >= 0.0 && frequency >= 0.0) {
            return Err(Error::InvalidArgument(
                "measurement bounds must be non-negative".into(),
            ));
        }
        Ok(Self {
            n,
            extra_reads,
            perturbed,
            amplitude,
            frequency,
            delta_x,
        })
    }

    /// Lane default: second reads of `c_e` and `θ_e`, error on `c_e`.
    pub fn lane(amplitude: f64, delta_x: f64) -> Self {
        Self {
            n: lane::N,
            extra_reads: vec![lane::CE, lane::THETA_E],
            perturbed: lane::CE,
            amplitude,
            frequency: 1.0,
            delta_x,
        }
    }

    fn reads_of(&self, j: usize) -> usize {
        1 + self.extra_reads.iter().filter(|&&r| r == j).count()
    }

    /// Largest possible `‖X̂(Y(x)) − x‖`.
    pub fn max_estimate_error(&self) -> f64 {
        self.amplitude / self.reads_of(self.perturbed) as f64
    }
}

impl Measurement for RedundantMeasurement {
    fn output_dim(&self) -> usize {
        self.n + self.extra_reads.len()
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn xhat(&self, y: &[f64]) -> Vec<f64> {
        let mut x = y[..self.n].to_vec();
        let mut counts = vec![1.0; self.n];
        for (k, &j) in self.extra_reads.iter().enumerate() {
            x[j] += y[self.n + k];
            counts[j] += 1.0;
        }
        x.iter_mut().zip(&counts).for_each(|(v, c)| *v /= c);
        x
    }
    fn delta_x(&self, _y: &[f64]) -> f64 {
        self.delta_x
    }
    fn y_true(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.output_dim());
        y.extend_from_slice(x);
        y.extend(self.extra_reads.iter().map(|&j| x[j]));
        y[self.perturbed] += self.amplitude * (self.frequency * x[self.perturbed]).sin();
        y
    }
    fn lip_y_bound(&self) -> f64 {
        // ‖R‖₂ = sqrt(max reads) for the 0/1 read matrix, plus the perturbation slope.
        let max_reads = (0..self.n).map(|j| self.reads_of(j)).max().unwrap_or(1);
        (max_reads as f64).sqrt() + self.amplitude * self.frequency
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fhat_at_origin() {
        let p = VehicleParams::default();
        let f = eval_fhat_lane(&StateVec(vec![0.0; 4]), 0.0, &p, 0.0).unwrap();
        assert_eq!(f.0, vec![3.74, -20.0, 0.0, -0.0]);
    }

    #[test]
    fn fhat_third_component_vanishes_on_heading() {
        let p = VehicleParams::default();
        for &(v, d) in &[(1.0, -3.0), (5.5, -16.0), (0.2, 4.0)] {
            let f = eval_fhat_lane(&StateVec(vec![v, d, 0.0, 0.0]), 0.0, &p, 0.0).unwrap();
            assert_eq!(f[2], 0.0);
        }
    }

    #[test]
    fn fhat_scalar_oracle() {
        // Row-by-row arithmetic for x = [2, 1, 0.5, 0.1], θ̇_t = 0.05.
        let p = VehicleParams::default();
        let f = eval_fhat_lane(&StateVec(vec![2.0, 1.0, 0.5, 0.1]), 0.0, &p, 0.05).unwrap();
        let expected: [f64; 4] = [
            -1.095 * 2.0 - 0.007 * 4.0 - 0.152 * 1.0 + 3.74, // 1.37
            3.6 * 2.0 - 20.0,                                // -12.8
            2.0 * 0.099_833_416_646_828_15,                  // 2 sin(0.1)
            -0.05,
        ];
        assert!((expected[0] - 1.37).abs() < 1e-12);
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fhat_dimension_error() {
        let p = VehicleParams::default();
        assert!(matches!(
            eval_fhat_lane(&StateVec(vec![0.0; 3]), 0.0, &p, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(eval_ghat_lane(&StateVec(vec![0.0; 5]), &p).is_err());
    }

    #[test]
    fn ghat_values() {
        let p = VehicleParams::default();
        let g = eval_ghat_lane(&StateVec(vec![2.51, 0.0, 0.0, 0.0]), &p).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let g = eval_ghat_lane(&StateVec(vec![0.0, 3.0, 1.0, 1.0]), &p).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
        let g = eval_ghat_lane(&StateVec(vec![5.02, 0.0, 0.0, 0.0]), &p).unwrap();
        assert!((g.get(3, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bicycle_examples() {
        let pose = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        assert_eq!(eval_global_bicycle(&pose, 1.0, 0.0, 2.51), (1.0, 0.0, 0.0));
        let pose = Pose { heading: PI / 2.0, ..pose };
        let (a, b, c) = eval_global_bicycle(&pose, 2.0, 0.0, 2.51);
        assert!(a.abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && c == 0.0);
        let (_, _, w) = eval_global_bicycle(&pose, 2.51, 1.0, 2.51);
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_track_examples() {
        let on = Pose { x: 0.4, y: 0.0, heading: 0.0 };
        assert_eq!(cross_track_error(&on, [0.0, 0.0], [1.0, 0.0]).unwrap(), (0.0, 0.0));

        let p = Pose { x: 0.5, y: 0.3, heading: 0.0 };
        let (c, th) = cross_track_error(&p, [0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((c - 0.3).abs() < 1e-12 && th == 0.0);

        // Left of a north-pointing segment is west.
        let p = Pose { x: -0.2, y: 0.5, heading: PI / 2.0 };
        let (c, th) = cross_track_error(&p, [0.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((c - 0.2).abs() < 1e-12 && th.abs() < 1e-12);
        let p = Pose { x: 0.2, ..p };
        assert!((cross_track_error(&p, [0.0, 0.0], [0.0, 1.0]).unwrap().0 + 0.2).abs() < 1e-12);
    }

    #[test]
    fn cross_track_coincident_waypoints() {
        let p = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        assert!(matches!(
            cross_track_error(&p, [1.0, 1.0], [1.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_zeroes_plant() {
        let c = LongitudinalCoeffs::IDENTIFIED;
        let (v, d) = c.equilibrium();
        assert!(c.vdot(v, d).abs() < 1e-12 && c.ddot(v).abs() < 1e-12);
    }

    #[test]
    fn redundant_measurement_roundtrip_bound() {
        let m = RedundantMeasurement::lane(0.1, 0.1);
        assert_eq!(m.output_dim(), 6);
        let x = [5.0, -16.0, 0.3, -0.1];
        let y = m.y_true(&x);
        let e = crate::linalg::dist2(&m.xhat(&y), &x);
        assert!(e <= m.max_estimate_error() + 1e-15);
        assert!(m.max_estimate_error() <= m.delta_x(&y));
        assert!((m.lip_y_bound() - (2f64.sqrt() + 0.1)).abs() < 1e-12);
    }
}
