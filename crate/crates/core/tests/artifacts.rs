use proptest::prelude::*;

use rocbf::barrier::{barrier_from_text, barrier_to_text, RffBarrier, RobustnessConsts};
use rocbf::config::PipelineConfig;
use rocbf::datasets::{DatasetBundle, DemoRecord};
use rocbf::io;
use rocbf::pipeline::LaneSetup;

proptest! {
    #[test]
    fn barrier_text_is_bit_exact(
        n in 1usize..5,
        ell in 1usize..30,
        seed in any::<u64>(),
        sigma2 in 0.01f64..10.0,
        slope in 0.01f64..10.0,
        scale in -1e6f64..1e6,
        l in (0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0),
    ) {
        let bar = RffBarrier::sample(n, ell, sigma2, slope, None, seed).unwrap();
        let theta: Vec<f64> = (0..ell).map(|i| scale / (i as f64 + 0.7)).collect();
        let bar = bar.with_theta(theta).unwrap();
        let consts = RobustnessConsts::new(l.0, l.1, l.2).unwrap();
        let text = barrier_to_text(&bar, &consts);
        let (back, c2) = barrier_from_text(&text).unwrap();
        prop_assert_eq!(&back, &bar);
        prop_assert_eq!(c2, consts);
        prop_assert_eq!(barrier_to_text(&back, &c2), text);
    }

    #[test]
    fn demo_text_is_bit_exact(rows in proptest::collection::vec(
        (any::<f64>(), any::<f64>(), any::<f64>(), proptest::collection::vec(any::<f64>(), 3)), 1..20)
    ) {
        let demos: Vec<DemoRecord> = rows
            .into_iter()
            .filter(|r| r.0.is_finite() && r.1.is_finite() && r.2.is_finite() && r.3.iter().all(|v| v.is_finite()))
            .map(|(t, e, u, y)| DemoRecord::new(t, e, vec![u], y))
            .collect();
        let back = io::demos_from_text(&io::demos_to_text(&demos).unwrap()).unwrap();
        prop_assert_eq!(back, demos);
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.demos.n_rollouts = 600;
    cfg.barrier.ell = 30;
    let setup = LaneSetup::new(&cfg).unwrap();
    let demos = setup.collect().unwrap();
    let p = dir.path().join("nested/demos.txt");
    io::write_demos(&p, &demos).unwrap();
    assert_eq!(io::read_demos(&p).unwrap(), demos);

    let bundle = setup.datasets(&demos).unwrap();
    let bp = dir.path().join("bundle.json");
    io::write_json(&bp, &bundle).unwrap();
    let back: DatasetBundle = io::read_json(&bp).unwrap();
    assert_eq!(back, bundle);

    let bar = setup.initial_barrier().unwrap();
    let hp = dir.path().join("barrier.txt");
    io::write_barrier(&hp, &bar, &cfg.consts).unwrap();
    assert_eq!(io::read_barrier(&hp).unwrap(), (bar, cfg.consts));

    let missing = io::read_demos(&dir.path().join("absent.txt")).unwrap_err();
    assert!(missing.to_string().contains("absent.txt"));
}

#[test]
fn configuration_survives_serialization() {
    let cfg = PipelineConfig::default();
    let json = serde_json::to_string(&cfg).unwrap();
    let back: PipelineConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, cfg);
    let partial: PipelineConfig = serde_json::from_str(r#"{"train": {"max_iters": 7}}"#).unwrap();
    assert_eq!(partial.train.max_iters, 7);
    assert_eq!(partial.barrier, cfg.barrier);
}
