//! Lane-keeping simulator: track geometry, the expert, closed-loop rollouts
//! and the cross-track comparison metric.
//!
//! The plant is the global kinematic bicycle driven by the identified
//! longitudinal model, with bounded disturbances injected into the lateral
//! and yaw channels. Controllers only ever see the local state
//! `[v, d, c_e, θ_e]` (expert) or the measurement `y` (barrier controller).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barrier::{eval_q, RffBarrier, RobustnessConsts};
use crate::controller::{safe_control, InputSet};
use crate::datasets::DemoRecord;
use crate::error::{Error, Result};
use crate::model::{
    cross_track_error, eval_global_bicycle, lane, wrap_angle, ControlAffine, ExpertGains, Measurement,
    Pose, TimePoint, VehicleParams,
};

// ───────────────────────────── Track ─────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length: f64 },
    /// Positive `angle` turns left.
    Arc { radius: f64, angle: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    waypoints: Vec<[f64; 2]>,
    /// Curvature of the piece `waypoints[i] → waypoints[i+1]`.
    curvature: Vec<f64>,
    closed: bool,
}

/// Waypoints at (approximately) `spacing` metres of arclength, starting at the
/// origin heading along `+x`.
pub fn make_track(segments: &[Segment], spacing: f64) -> Result<Track> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("waypoint spacing must be positive".into()));
    }
    if segments.is_empty() {
        return Err(Error::InvalidArgument("track needs at least one segment".into()));
    }
    let mut pts = vec![[0.0, 0.0]];
    let mut curvature = Vec::new();
    let mut psi = 0.0f64;
    for seg in segments {
        let p0 = *pts.last().expect("non-empty");
        match *seg {
            Segment::Straight { length } => {
                if !(length > 0.0) || !length.is_finite() {
                    return Err(Error::InvalidArgument(format!("straight length {length}")));
                }
                let k = (length / spacing).round().max(1.0) as usize;
                for j in 1..=k {
                    let s = length * j as f64 / k as f64;
                    pts.push([p0[0] + s * psi.cos(), p0[1] + s * psi.sin()]);
                    curvature.push(0.0);
                }
            }
            Segment::Arc { radius, angle } => {
                if !(radius > 0.0) || !radius.is_finite() || angle == 0.0 || !angle.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "arc radius {radius}, angle {angle}"
                    )));
                }
                let sign = angle.signum();
                // centre to the left for left turns, to the right otherwise
                let c = [p0[0] - sign * radius * psi.sin(), p0[1] + sign * radius * psi.cos()];
                let k = (radius * angle.abs() / spacing).round().max(1.0) as usize;
                for j in 1..=k {
                    let h = psi + angle * j as f64 / k as f64;
                    pts.push([c[0] + sign * radius * h.sin(), c[1] - sign * radius * h.cos()]);
                    curvature.push(sign / radius);
                }
                psi += angle;
            }
        }
    }
    let first = pts[0];
    let last = *pts.last().expect("non-empty");
    let closed = pts.len() > 2 && ((first[0] - last[0]).hypot(first[1] - last[1]) < 1e-6 * spacing);
    if closed {
        pts.pop();
        // the dropped point closes the final piece back to the start
    }
    Ok(Track {
        waypoints: pts,
        curvature,
        closed,
    })
}

impl Track {
    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Number of pieces between consecutive waypoints.
    pub fn pieces(&self) -> usize {
        self.curvature.len()
    }

    pub fn piece(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        let n = self.waypoints.len();
        (self.waypoints[i % n], self.waypoints[(i + 1) % n])
    }

    pub fn curvature(&self, i: usize) -> f64 {
        self.curvature[i]
    }

    pub fn heading(&self, i: usize) -> f64 {
        let (a, b) = self.piece(i);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn length(&self) -> f64 {
        (0..self.pieces())
            .map(|i| {
                let (a, b) = self.piece(i);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum()
    }

    /// Moves the piece index forward while the car has passed the end of the
    /// current piece.
    fn advance(&self, mut i: usize, x: f64, y: f64) -> usize {
        for _ in 0..self.pieces() {
            let (a, b) = self.piece(i);
            let dir = [b[0] - a[0], b[1] - a[1]];
            let past = (x - b[0]) * dir[0] + (y - b[1]) * dir[1] > 0.0;
            let can_move = self.closed || i + 1 < self.pieces();
            if past && can_move {
                i = (i + 1) % self.pieces();
            } else {
                break;
            }
        }
        i
    }
}

/// S-shaped test course: left and right bends of radius 40 m joined by straights.
pub fn default_track() -> Track {
    make_track(
        &[
            Segment::Straight { length: 20.0 },
            Segment::Arc {
                radius: 40.0,
                angle: PI / 3.0,
            },
            Segment::Straight { length: 20.0 },
            Segment::Arc {
                radius: 40.0,
                angle: -2.0 * PI / 3.0,
            },
            Segment::Straight { length: 20.0 },
            Segment::Arc {
                radius: 40.0,
                angle: PI / 3.0,
            },
            Segment::Straight { length: 60.0 },
        ],
        1.0,
    )
    .expect("valid built-in track")
}

// ───────────────────────────── Expert ─────────────────────────────

/// `u = clamp(−(K_p c_e + K_θ θ_e + K_d v sin θ_e))`.
pub fn expert_pid(x: &[f64], gains: &ExpertGains) -> f64 {
    let (v, c, th) = (x[lane::V], x[lane::CE], x[lane::THETA_E]);
    let raw = -(gains.kp * c + gains.k_theta * th + gains.kd * v * th.sin());
    raw.clamp(-gains.clamp, gains.clamp)
}

// ───────────────────────────── Rollouts ─────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Euler,
}

/// Local initial condition `[v, d, c_e, θ_e]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialState {
    pub v: f64,
    pub d: f64,
    pub c_e: f64,
    pub theta_e: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            v: 0.0,
            d: 0.0,
            c_e: 0.0,
            theta_e: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub initial: InitialState,
    /// Disturbance size as a fraction of the declared model error bounds.
    pub perturbation: f64,
    /// Angular frequency of the injected disturbances (rad/s).
    pub perturbation_freq: f64,
    /// Geometric safe set `|c_e| ≤ safe_bound`.
    pub safe_bound: f64,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            horizon: 30.0,
            integrator: Integrator::Rk4,
            initial: InitialState::default(),
            perturbation: 0.5,
            perturbation_freq: 0.7,
            safe_bound: 1.0,
            seed: 1,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(Error::InvalidArgument("need dt > 0 and horizon ≥ dt".into()));
        }
        if !(self.perturbation >= 0.0) || !(self.safe_bound > 0.0) {
            return Err(Error::InvalidArgument(
                "perturbation must be non-negative and the safe bound positive".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Who chooses the input.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    Expert {
        gains: ExpertGains,
        /// Lateral reference excursion added to the expert (see [`Excursion`]).
        excursion: Option<&'a Excursion>,
    },
    Rocbf {
        bar: &'a RffBarrier,
        consts: &'a RobustnessConsts,
        uset: &'a InputSet,
    },
    /// Open-loop constant input.
    Constant(f64),
}

/// Smooth lateral reference `r(t) = A/K Σ_k sin(ω_k t + φ_k)` that the expert
/// tracks instead of the lane centre, used to spread demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub amplitude: f64,
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Excursion {
    pub fn random(amplitude: f64, freqs: &[f64], rng: &mut impl Rng) -> Self {
        Self {
            amplitude,
            freqs: freqs.to_vec(),
            phases: freqs.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect(),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if self.freqs.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .freqs
            .iter()
            .zip(&self.phases)
            .map(|(w, p)| (w * t + p).sin())
            .sum();
        self.amplitude * s / self.freqs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: f64,
    /// Path turn rate supplied to the nominal model.
    pub exo: f64,
    /// True local state `[v, d, c_e, θ_e]`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    /// `h(x)` at the true state; NaN without a barrier.
    pub h: f64,
    /// `q(u,y,t)`; NaN without a barrier.
    pub q: f64,
    pub feasible: bool,
    /// Global pose `(p_x, p_y, ψ)`.
    pub pose: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub max_abs_ce: f64,
    /// NaN when the trace carries no barrier values.
    pub min_h: f64,
    /// Steps with `h(x) < 0`.
    pub h_violations: usize,
    /// Steps outside `|c_e| ≤ safe_bound`.
    pub safe_set_violations: usize,
    pub infeasible_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub steps: Vec<TraceStep>,
    pub summary: TraceSummary,
    pub safe_bound: f64,
}

impl RolloutTrace {
    pub fn summarize(steps: &[TraceStep], safe_bound: f64) -> TraceSummary {
        let mut s = TraceSummary {
            steps: steps.len(),
            min_h: f64::NAN,
            ..Default::default()
        };
        for st in steps {
            let ce = st.x[lane::CE].abs();
            s.max_abs_ce = s.max_abs_ce.max(ce);
            if ce > safe_bound {
                s.safe_set_violations += 1;
            }
            if !st.h.is_nan() {
                s.min_h = if s.min_h.is_nan() { st.h } else { s.min_h.min(st.h) };
                if st.h < 0.0 {
                    s.h_violations += 1;
                }
            }
            if !st.feasible {
                s.infeasible_steps += 1;
            }
        }
        s
    }

    fn from_steps(steps: Vec<TraceStep>, safe_bound: f64) -> Self {
        Self {
            summary: Self::summarize(&steps, safe_bound),
            steps,
            safe_bound,
        }
    }
}

/// `max_t |c_e^{barrier}| − max_t |c_e^{expert}|`.
pub fn compare_metric(trace_rocbf: &RolloutTrace, trace_expert: &RolloutTrace) -> f64 {
    trace_rocbf.summary.max_abs_ce - trace_expert.summary.max_abs_ce
}

/// Plant state in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plant {
    px: f64,
    py: f64,
    psi: f64,
    v: f64,
    d: f64,
}

impl Plant {
    fn to_array(self) -> [f64; 5] {
        [self.px, self.py, self.psi, self.v, self.d]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            px: a[0],
            py: a[1],
            psi: a[2],
            v: a[3],
            d: a[4],
        }
    }
}

/// Bounded disturbance injected into the plant.
#[derive(Debug, Clone, Copy)]
struct Disturbance {
    f_mag: f64,
    g_mag: f64,
    omega: f64,
    phase_f: f64,
    phase_g: f64,
}

impl Disturbance {
    fn new(cfg: &RolloutConfig, delta_f: f64, delta_g: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00d1_57ab);
        Self {
            f_mag: cfg.perturbation * delta_f,
            g_mag: cfg.perturbation * delta_g,
            omega: cfg.perturbation_freq,
            phase_f: rng.random::<f64>() * 2.0 * PI,
            phase_g: rng.random::<f64>() * 2.0 * PI,
        }
    }

    /// (lateral slip velocity, yaw rate, input gain offset); the first two
    /// have joint norm `f_mag`.
    fn at(&self, t: f64) -> (f64, f64, f64) {
        let a = self.omega * t + self.phase_f;
        (
            self.f_mag * a.cos(),
            self.f_mag * a.sin(),
            self.g_mag * (1.3 * self.omega * t + self.phase_g).sin(),
        )
    }
}

fn plant_deriv(s: [f64; 5], u: f64, t: f64, params: &VehicleParams, dist: &Disturbance) -> [f64; 5] {
    let p = Plant::from_array(s);
    let pose = Pose {
        x: p.px,
        y: p.py,
        heading: p.psi,
    };
    let (dx, dy, dpsi) = eval_global_bicycle(&pose, p.v, u, params.wheelbase);
    let (slip, yaw, gain) = dist.at(t);
    let lon = &params.plant_longitudinal;
    [
        dx - slip * p.psi.sin(),
        dy + slip * p.psi.cos(),
        dpsi + yaw + gain * u,
        lon.vdot(p.v, p.d),
        lon.ddot(p.v),
    ]
}

fn step_plant(
    s: [f64; 5],
    u: f64,
    t: f64,
    dt: f64,
    integ: Integrator,
    params: &VehicleParams,
    dist: &Disturbance,
) -> [f64; 5] {
    let f = |s: [f64; 5], t: f64| plant_deriv(s, u, t, params, dist);
    let add = |a: [f64; 5], b: [f64; 5], h: f64| -> [f64; 5] {
        let mut o = a;
        for i in 0..5 {
            o[i] += h * b[i];
        }
        o
    };
    match integ {
        Integrator::Euler => add(s, f(s, t), dt),
        Integrator::Rk4 => {
            let k1 = f(s, t);
            let k2 = f(add(s, k1, dt / 2.0), t + dt / 2.0);
            let k3 = f(add(s, k2, dt / 2.0), t + dt / 2.0);
            let k4 = f(add(s, k3, dt), t + dt);
            let mut o = s;
            for i in 0..5 {
                o[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            o
        }
    }
}

/// Simulated lane-keeping scenario: plant parameters plus the nominal model
/// and measurement the controllers use.
pub struct Scenario<'a> {
    pub track: &'a Track,
    pub params: &'a VehicleParams,
    pub sys: &'a dyn ControlAffine,
    pub meas: &'a dyn Measurement,
}

/// Closed-loop simulation from `cfg.initial`.
pub fn rollout(sc: &Scenario<'_>, cfg: &RolloutConfig, controller: Controller<'_>) -> Result<RolloutTrace> {
    cfg.validate()?;
    sc.params.validate()?;
    let track = sc.track;
    let x0 = [0.0, 0.0, 0.0, 0.0];
    let dist = Disturbance::new(cfg, sc.sys.delta_f(&x0, TimePoint::at(0.0)), sc.sys.delta_g(&x0, TimePoint::at(0.0)));

    // place the car relative to the first piece
    let (a, _) = track.piece(0);
    let h0 = track.heading(0);
    let init = &cfg.initial;
    let mut state = Plant {
        px: a[0] - init.c_e * h0.sin(),
        py: a[1] + init.c_e * h0.cos(),
        psi: h0 + init.theta_e,
        v: init.v,
        d: init.d,
    }
    .to_array();

    let mut piece = 0usize;
    let mut last_feasible: Option<f64> = None;
    let n_steps = cfg.steps();
    let mut steps = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = k as f64 * cfg.dt;
        let p = Plant::from_array(state);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationDiverged {
                t,
                steps: k,
                partial: Box::new(RolloutTrace::from_steps(steps, cfg.safe_bound)),
            });
        }
        piece = track.advance(piece, p.px, p.py);
        let (w1, w2) = track.piece(piece);
        let pose = Pose {
            x: p.px,
            y: p.py,
            heading: p.psi,
        };
        let (c_e, theta_e) = cross_track_error(&pose, w1, w2)?;
        let x = vec![p.v, p.d, c_e, theta_e];
        let exo = p.v * track.curvature(piece);
        let tp = TimePoint::with_exo(t, exo);
        let y = sc.meas.y_true(&x);

        let (u, h, q, feasible) = match controller {
            Controller::Expert { gains, excursion } => {
                let mut xs = x.clone();
                if let Some(e) = excursion {
                    xs[lane::CE] -= e.at(t);
                }
                (expert_pid(&xs, &gains), f64::NAN, f64::NAN, true)
            }
            Controller::Constant(u) => (u, f64::NAN, f64::NAN, true),
            Controller::Rocbf { bar, consts, uset } => {
                let res = safe_control(&y, tp, bar, sc.sys, sc.meas, consts, uset)?;
                let (u, q) = if res.feasible {
                    last_feasible = Some(res.u[0]);
                    (res.u[0], res.q_value)
                } else {
                    let fb = last_feasible.unwrap_or(0.0);
                    (fb, eval_q(&[fb], &y, tp, sc.sys, sc.meas, bar, consts)?)
                };
                (u, bar.eval_h(&x), q, res.feasible)
            }
        };
        steps.push(TraceStep {
            t,
            exo,
            x,
            y,
            u: vec![u],
            h,
            q,
            feasible,
            pose: [p.px, p.py, wrap_angle(p.psi)],
        });
        state = step_plant(state, u, t, cfg.dt, cfg.integrator, sc.params, &dist);
    }
    Ok(RolloutTrace::from_steps(steps, cfg.safe_bound))
}

// ───────────────────────────── Demonstrations ─────────────────────────────

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Point `i ≥ 1` of the 2-D Halton sequence mapped to `[−1, 1]²`.
pub fn halton2(i: u64) -> (f64, f64) {
    (2.0 * radical_inverse(i, 2) - 1.0, 2.0 * radical_inverse(i, 3) - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    /// Accepted rollouts to collect.
    pub n_rollouts: usize,
    /// Rollout attempts before giving up, as a multiple of `n_rollouts`.
    pub max_attempt_factor: usize,
    /// Initial `|c_e|` and `|θ_e|` ranges, covered by a Halton sequence.
    pub ce_range: f64,
    pub theta_range: f64,
    /// Weighted initial-condition boxes. When non-empty they replace the
    /// single box above; nesting them shapes the density of demonstrations.
    pub boxes: Vec<InitialBox>,
    /// Initial speeds spread over `v₀ ± speed_range` (third Halton coordinate).
    pub speed_range: f64,
    /// Excursion amplitude (m); 0 makes the expert regulate to the centre line.
    pub excursion: f64,
    pub excursion_freqs: Vec<f64>,
    /// Only the first `record_horizon` seconds of each accepted rollout are
    /// kept; acceptance still looks at the whole rollout. `None` keeps all.
    pub record_horizon: Option<f64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 20,
            max_attempt_factor: 4,
            ce_range: 0.75,
            theta_range: 0.3,
            boxes: Vec::new(),
            speed_range: 0.0,
            excursion: 0.0,
            excursion_freqs: vec![0.31, 0.53, 0.89],
            record_horizon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialBox {
    pub weight: f64,
    pub ce_range: f64,
    pub theta_range: f64,
}

/// The origin first, then each box's own Halton stream, boxes interleaved by
/// weighted round robin.
struct InitialSampler {
    boxes: Vec<InitialBox>,
    drawn: Vec<u64>,
    total_weight: f64,
    speed_range: f64,
}

impl InitialSampler {
    fn new(cfg: &DemoConfig) -> Self {
        let boxes = if cfg.boxes.is_empty() {
            vec![InitialBox {
                weight: 1.0,
                ce_range: cfg.ce_range,
                theta_range: cfg.theta_range,
            }]
        } else {
            cfg.boxes.clone()
        };
        Self {
            drawn: vec![0; boxes.len()],
            total_weight: boxes.iter().map(|b| b.weight).sum(),
            speed_range: cfg.speed_range,
            boxes,
        }
    }

    /// `(c_e, θ_e, speed offset)`.
    fn next(&mut self, i: usize) -> (f64, f64, f64) {
        if i == 0 {
            return (0.0, 0.0, 0.0);
        }
        // box furthest behind its share
        let j = (0..self.boxes.len())
            .max_by(|&a, &b| {
                let lag = |k: usize| i as f64 * self.boxes[k].weight / self.total_weight - self.drawn[k] as f64;
                lag(a).total_cmp(&lag(b)).then(b.cmp(&a))
            })
            .expect("at least one box");
        self.drawn[j] += 1;
        let n = self.drawn[j];
        let (a, b) = halton2(n);
        let s = 2.0 * radical_inverse(n, 5) - 1.0;
        (a * self.boxes[j].ce_range, b * self.boxes[j].theta_range, s * self.speed_range)
    }
}

/// Runs the expert from spread-out initial conditions and records
/// `(t, θ̇_t, u, y)` at every step of every accepted rollout.
pub fn collect_demos(
    sc: &Scenario<'_>,
    rollout_cfg: &RolloutConfig,
    demo_cfg: &DemoConfig,
) -> Result<Vec<DemoRecord>> {
    if demo_cfg.n_rollouts == 0 {
        return Err(Error::InvalidArgument("need at least one rollout".into()));
    }
    if demo_cfg.boxes.iter().any(|b| !(b.weight > 0.0) || !(b.ce_range >= 0.0) || !(b.theta_range >= 0.0)) {
        return Err(Error::InvalidArgument("initial boxes need positive weights and non-negative ranges".into()));
    }
    let mut sampler = InitialSampler::new(demo_cfg);
    let attempts = demo_cfg.n_rollouts * demo_cfg.max_attempt_factor.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_cfg.seed);
    let mut out = Vec::new();
    let mut accepted = 0;
    for i in 0..attempts {
        if accepted == demo_cfg.n_rollouts {
            break;
        }
        let (c0, th0, dv) = sampler.next(i);
        let mut cfg = rollout_cfg.clone();
        cfg.initial.c_e = c0;
        cfg.initial.theta_e = th0;
        cfg.initial.v += dv;
        cfg.seed = rollout_cfg.seed.wrapping_add(i as u64);
        let exc = Excursion::random(demo_cfg.excursion, &demo_cfg.excursion_freqs, &mut rng);
        let ctl = Controller::Expert {
            gains: sc.params.expert,
            excursion: (demo_cfg.excursion > 0.0).then_some(&exc),
        };
        let trace = rollout(sc, &cfg, ctl)?;
        if trace.summary.safe_set_violations > 0 {
            continue;
        }
        accepted += 1;
        let keep = demo_cfg
            .record_horizon
            .map_or(usize::MAX, |h| ((h / cfg.dt).round() as usize).max(1));
        out.extend(
            trace
                .steps
                .into_iter()
                .take(keep)
                .map(|s| DemoRecord::new(s.t, s.exo, s.u, s.y)),
        );
    }
    if accepted == 0 {
        return Err(Error::CollectionFailed(format!(
            "all {attempts} expert rollouts left the safe set"
        )));
    }
    if accepted < demo_cfg.n_rollouts {
        return Err(Error::CollectionFailed(format!(
            "only {accepted} of {} rollouts stayed safe after {attempts} attempts",
            demo_cfg.n_rollouts
        )));
    }
    Ok(out)
}

// ───────────────────────────── Comparison grid ─────────────────────────────

/// `n_ce × n_theta` initial conditions on a symmetric grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareGridSpec {
    pub n_ce: usize,
    pub n_theta: usize,
    pub ce_max: f64,
    pub theta_max: f64,
}

impl Default for CompareGridSpec {
    fn default() -> Self {
        Self {
            n_ce: 25,
            n_theta: 10,
            ce_max: 0.75,
            theta_max: 0.3,
        }
    }
}

impl CompareGridSpec {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let lin = |n: usize, m: f64| -> Vec<f64> {
            if n == 1 {
                vec![0.0]
            } else {
                (0..n).map(|i| -m + 2.0 * m * i as f64 / (n - 1) as f64).collect()
            }
        };
        let ce = lin(self.n_ce, self.ce_max);
        let th = lin(self.n_theta, self.theta_max);
        ce.iter().flat_map(|c| th.iter().map(move |t| (*c, *t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub c_e0: f64,
    pub theta_e0: f64,
    pub metric: f64,
}

/// Barrier-controller metric against the expert for every grid point.
pub fn compare_grid(
    sc: &Scenario<'_>,
    base: &RolloutConfig,
    grid: &CompareGridSpec,
    bar: &RffBarrier,
    consts: &RobustnessConsts,
    uset: &InputSet,
) -> Result<Vec<CompareRow>> {
    if grid.n_ce == 0 || grid.n_theta == 0 {
        return Err(Error::InvalidArgument("comparison grid is empty".into()));
    }
    grid.points()
        .into_iter()
        .map(|(c, th)| {
            let mut cfg = base.clone();
            cfg.initial.c_e = c;
            cfg.initial.theta_e = th;
            let r = rollout(sc, &cfg, Controller::Rocbf { bar, consts, uset })?;
            let e = rollout(
                sc,
                &cfg,
                Controller::Expert {
                    gains: sc.params.expert,
                    excursion: None,
                },
            )?;
            Ok(CompareRow {
                c_e0: c,
                theta_e0: th,
                metric: compare_metric(&r, &e),
            })
        })
        .collect()
}
