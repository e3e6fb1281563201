use rocbf::config::PipelineConfig;
use rocbf::model::{lane, ControlAffine, LaneModel, LongitudinalCoeffs, Measurement, TimePoint, VehicleParams};
use rocbf::pipeline::{self, LaneSetup};
use rocbf::sim::{make_track, rollout, Controller, InitialState, RolloutConfig, RolloutTrace, Scenario, Segment};

fn straight() -> rocbf::sim::Track {
    make_track(&[Segment::Straight { length: 400.0 }], 1.0).unwrap()
}

/// Vehicle whose plant uses exactly the nominal longitudinal coefficients.
fn matched_vehicle() -> VehicleParams {
    VehicleParams {
        plant_longitudinal: LongitudinalCoeffs::MODEL,
        ..VehicleParams::default()
    }
}

fn cruise(params: &VehicleParams, c_e: f64, theta_e: f64) -> InitialState {
    let (v, d) = params.plant_longitudinal.equilibrium();
    InitialState { v, d, c_e, theta_e }
}

#[test]
fn expert_holds_an_on_path_start() {
    let cfg = PipelineConfig::default();
    let params = matched_vehicle();
    let track = straight();
    let sys = LaneModel::new(params.clone(), 0.0, 0.0).unwrap();
    let meas = cfg.measurement_model().unwrap();
    let sc = Scenario {
        track: &track,
        params: &params,
        sys: &sys,
        meas: &meas,
    };
    let rc = RolloutConfig {
        perturbation: 0.0,
        initial: cruise(&params, 0.0, 0.0),
        ..RolloutConfig::default()
    };
    let tr = rollout(
        &sc,
        &rc,
        Controller::Expert {
            gains: params.expert,
            excursion: None,
        },
    )
    .unwrap();
    assert_eq!(tr.steps.len(), 1500);
    assert!(tr.summary.max_abs_ce <= 1e-3, "max |c_e| = {}", tr.summary.max_abs_ce);
}

#[test]
fn free_rolling_matches_local_kinematics() {
    let params = matched_vehicle();
    let track = straight();
    let sys = LaneModel::new(params.clone(), 0.0, 0.0).unwrap();
    let meas = PipelineConfig::default().measurement_model().unwrap();
    let sc = Scenario {
        track: &track,
        params: &params,
        sys: &sys,
        meas: &meas,
    };
    let dt = 0.005;
    let rc = RolloutConfig {
        dt,
        horizon: 5.0,
        perturbation: 0.0,
        initial: cruise(&params, 0.2, 0.1),
        ..RolloutConfig::default()
    };
    let tr = rollout(&sc, &rc, Controller::Constant(0.0)).unwrap();

    // integrate the nominal local model with u = 0 and a straight path
    let f = |x: &[f64]| sys.fhat(x, TimePoint::with_exo(0.0, 0.0));
    let mut x = tr.steps[0].x.clone();
    let sub = 10;
    let h = dt / sub as f64;
    let mut worst = 0.0f64;
    for st in &tr.steps {
        worst = worst.max((st.x[lane::CE] - x[lane::CE]).abs());
        worst = worst.max((st.x[lane::THETA_E] - x[lane::THETA_E]).abs());
        for _ in 0..sub {
            let k1 = f(&x);
            let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
            let k2 = f(&x2);
            let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
            let k3 = f(&x3);
            let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
            let k4 = f(&x4);
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    assert!(worst <= 1e-3, "local and global models differ by {worst}");
    // θ_e is constant without steering
    assert!(tr.steps.iter().all(|s| (s.x[lane::THETA_E] - 0.1).abs() < 1e-9));
}

fn pose_at(tr: &RolloutTrace, t: f64) -> [f64; 3] {
    tr.steps
        .iter()
        .find(|s| (s.t - t).abs() < 1e-9)
        .map(|s| s.pose)
        .expect("time on grid")
}

fn pose_error(a: &RolloutTrace, b: &RolloutTrace, times: &[f64]) -> f64 {
    times
        .iter()
        .map(|&t| {
            let (p, q) = (pose_at(a, t), pose_at(b, t));
            (0..3).map(|i| (p[i] - q[i]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn rk4_refinement_shows_fourth_order() {
    let cfg = PipelineConfig::default();
    let setup = LaneSetup::new(&cfg).unwrap();
    let sc = setup.scenario();
    let run = |dt: f64, integrator| {
        let rc = RolloutConfig {
            dt,
            horizon: 4.0,
            integrator,
            ..cfg.rollout.clone()
        };
        rollout(&sc, &rc, Controller::Constant(0.15)).unwrap()
    };
    let times: Vec<f64> = (1..8).map(|k| k as f64 * 0.5).collect();
    use rocbf::sim::Integrator::{Euler, Rk4};
    let (a, b, c) = (run(0.1, Rk4), run(0.05, Rk4), run(0.025, Rk4));
    let ratio = pose_error(&a, &b, &times) / pose_error(&b, &c, &times);
    assert!((12.0..22.0).contains(&ratio), "RK4 refinement ratio {ratio}");
    let (a, b, c) = (run(0.1, Euler), run(0.05, Euler), run(0.025, Euler));
    let ratio = pose_error(&a, &b, &times) / pose_error(&b, &c, &times);
    assert!((1.6..2.5).contains(&ratio), "Euler refinement ratio {ratio}");
}

#[test]
fn estimates_stay_within_the_declared_error() {
    let cfg = PipelineConfig::default();
    let setup = LaneSetup::new(&cfg).unwrap();
    let rc = RolloutConfig {
        initial: InitialState {
            c_e: 0.6,
            theta_e: -0.2,
            ..cfg.rollout.initial
        },
        horizon: 10.0,
        ..cfg.rollout.clone()
    };
    let tr = rollout(
        &setup.scenario(),
        &rc,
        Controller::Expert {
            gains: cfg.vehicle.expert,
            excursion: None,
        },
    )
    .unwrap();
    for s in &tr.steps {
        let xh = setup.meas.xhat(&s.y);
        let err = xh.iter().zip(&s.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= setup.meas.delta_x(&s.y), "estimate error {err} at t = {}", s.t);
    }
    // expert traces carry NaN barrier values, so compare renderings
    assert_eq!(
        format!("{:?}", RolloutTrace::summarize(&tr.steps, tr.safe_bound)),
        format!("{:?}", tr.summary)
    );
}

#[test]
fn rollouts_and_collection_are_deterministic() {
    let mut cfg = PipelineConfig::default();
    cfg.demos.n_rollouts = 50;
    let setup = LaneSetup::new(&cfg).unwrap();
    assert_eq!(setup.collect().unwrap(), setup.collect().unwrap());
    let go = || {
        rollout(
            &setup.scenario(),
            &cfg.rollout,
            Controller::Expert {
                gains: cfg.vehicle.expert,
                excursion: None,
            },
        )
        .unwrap()
    };
    assert_eq!(
        rocbf::io::trace_to_text(&go()),
        rocbf::io::trace_to_text(&go())
    );
}

#[test]
fn learned_barrier_keeps_safe_starts_safe() {
    let mut cfg = PipelineConfig::default();
    cfg.demos.n_rollouts = 3000;
    cfg.train.max_iters = 4000;
    cfg.verify.pairs_per_ball = 200;
    cfg.verify.lbar_pairs = 200;
    cfg.verify.cross_check_pairs = 200;
    cfg.verify.max_demos = Some(5);
    let out = pipeline::run(&cfg, None, false).unwrap();
    let setup = LaneSetup::new(&cfg).unwrap();
    let bar = &out.barrier;

    // starts inside {h ≥ 0.1} on a coarse grid of initial errors
    let mut starts = Vec::new();
    for i in 0..9 {
        for j in 0..5 {
            let c = -0.6 + 0.15 * i as f64;
            let th = -0.2 + 0.1 * j as f64;
            let mut x = vec![0.0; lane::N];
            x[lane::V] = cfg.rollout.initial.v;
            x[lane::D] = cfg.rollout.initial.d;
            x[lane::CE] = c;
            x[lane::THETA_E] = th;
            if bar.eval_h(&x) >= 0.1 {
                starts.push((c, th));
            }
        }
    }
    assert!(starts.len() >= 10, "only {} interior starts", starts.len());
    let kept = starts
        .iter()
        .filter(|(c, th)| {
            let tr = setup.rocbf_rollout(bar, *c, *th).unwrap();
            tr.summary.min_h >= -0.02
        })
        .count();
    assert!(
        kept as f64 >= 0.95 * starts.len() as f64,
        "{kept} of {} rollouts kept h above tolerance",
        starts.len()
    );
}
