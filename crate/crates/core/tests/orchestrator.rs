mod common;

use std::io::Write;

use common::checks;
use common::scenarios::*;
use ecco_sim::accuracy::CameraId;
use ecco_sim::allocator::Policy;
use ecco_sim::metrics::{write_metrics, EventKind, MetricsTrace, Summary};
use ecco_sim::scenario::synth::{correlated, CorrelatedSpec};
use ecco_sim::scenario::{load_scenario, GroupingMode, ScenarioConfig};
use ecco_sim::sim::run_scenario;
use ecco_sim::SimError;

fn csv_bytes(trace: &MetricsTrace) -> Vec<u8> {
    let mut out = Vec::new();
    trace.write_trace_csv(&mut out).unwrap();
    trace.write_jobs_csv(&mut out).unwrap();
    trace.write_events_csv(&mut out).unwrap();
    out
}

fn staggered() -> ScenarioConfig {
    let mut cfg = correlated(&CorrelatedSpec {
        cameras: 9,
        regions: 3,
        region_stagger: 90.0,
        ..Default::default()
    });
    cfg.eval_noise = 0.01;
    cfg
}

#[test]
fn conservation_ordering_and_sampling_hold() {
    for cfg in [staggered(), divergence(), correlated(&CorrelatedSpec::default())] {
        let trace = run_scenario(&cfg).unwrap();
        checks::conservation(&trace, cfg.allocator.micro_windows).unwrap();
        checks::pipeline_order(&trace).unwrap();
        checks::samples(&trace, cfg.cameras.len(), cfg.windows).unwrap();
    }
}

#[test]
fn trace_is_a_pure_function_of_the_config() {
    let cfg = staggered();
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(csv_bytes(&a), csv_bytes(&b));

    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(csv_bytes(&a), csv_bytes(&run_scenario(&other).unwrap()));
}

#[test]
fn empty_drift_schedule_is_flat() {
    let mut cfg = staggered();
    cfg.drift_events.clear();
    let trace = run_scenario(&cfg).unwrap();
    assert!(trace.jobs.is_empty());
    assert!(trace.events.is_empty());
    assert!(trace.mean_accuracy().windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn single_job_follows_saturating_curve() {
    let cfg = single_job(0.005);
    let trace = run_scenario(&cfg).unwrap();
    let p = &cfg.accuracy;
    let acc0: f64 = 0.45 - 0.25;
    let prof0 = (acc0 - p.floor) / (p.ceil - p.floor);
    let effort = cfg.allocator.gpu_count as f64 * cfg.window_seconds;
    for (w, got) in trace.camera_accuracy(CameraId(0)).into_iter().enumerate() {
        let prof = 1.0 - (1.0 - prof0) * (-p.k * effort * (w + 1) as f64).exp();
        let want = p.floor + (p.ceil - p.floor) * prof;
        assert!((got - want).abs() < 1e-9, "window {w}: {got} vs {want}");
    }
}

#[test]
fn identical_scenes_group_dominates_independent() {
    for gpus in [1, 2] {
        let mut group = one_site(4, gpus, GroupingMode::Group);
        let mut indep = one_site(4, gpus, GroupingMode::Independent);
        for c in [&mut group, &mut indep] {
            for d in c.drift_events.iter_mut() {
                d.new_scene = scene(0.1, 0.8);
            }
            for cam in c.cameras.iter_mut() {
                cam.scene = scene(0.1, 0.2);
            }
        }
        let g = run_scenario(&group).unwrap().mean_accuracy();
        let i = run_scenario(&indep).unwrap().mean_accuracy();
        for (w, (a, b)) in g.iter().zip(&i).enumerate() {
            assert!(a >= b, "gpus {gpus} window {w}: group {a} < independent {b}");
        }
    }
}

#[test]
fn dissimilar_scenes_erase_the_group_advantage() {
    let build = |mode| {
        let mut cfg = one_site(4, 1, mode);
        cfg.accuracy.lambda = 0.05;
        for (i, d) in cfg.drift_events.iter_mut().enumerate() {
            d.new_scene = scene(0.1 + 0.25 * i as f64, 0.8);
        }
        cfg
    };
    let g = run_scenario(&build(GroupingMode::Group)).unwrap().mean_accuracy();
    let i = run_scenario(&build(GroupingMode::Independent)).unwrap().mean_accuracy();
    for (a, b) in g.iter().zip(&i) {
        assert!((a - b).abs() <= 0.02, "group {a} vs independent {b}");
    }
}

#[test]
fn ecco_beats_naive_after_first_window() {
    let mut cfg = correlated(&CorrelatedSpec::default());
    let ecco = run_scenario(&cfg).unwrap().mean_accuracy();
    cfg.policy = Policy::Naive;
    let naive = run_scenario(&cfg).unwrap().mean_accuracy();
    for w in 1..ecco.len() {
        assert!(ecco[w] >= naive[w], "window {w}: {} < {}", ecco[w], naive[w]);
    }
}

#[test]
fn divergent_camera_is_split_off() {
    let trace = run_scenario(&divergence()).unwrap();
    let removals: Vec<_> = trace.events.iter().filter(|e| e.kind == EventKind::Removal).collect();
    assert_eq!(removals.len(), 1);
    assert_eq!(removals[0].camera, Some(CameraId(2)));
    assert_eq!(removals[0].window, 5);
}

#[test]
fn infeasible_schedule_names_the_window() {
    let mut cfg = correlated(&CorrelatedSpec {
        cameras: 6,
        regions: 2,
        region_stagger: 120.0,
        ..Default::default()
    });
    cfg.grouping_mode = Some(GroupingMode::Independent);
    cfg.allocator.micro_windows = 4;
    match run_scenario(&cfg) {
        Err(SimError::Window { window, source }) => {
            assert_eq!(window, 2);
            assert!(matches!(*source, SimError::InfeasibleSchedule { .. }));
        }
        other => panic!("expected a window error, got {other:?}"),
    }
}

#[test]
fn malformed_scenario_reports_field_path() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(
        f,
        r#"{{"cameras": [{{"id": 0, "location": [0, 0], "scene": [0.1], "local_model_acc": 0.4,
            "local_uplink_cap": 1e6, "gpu_pixel_throughput": "fast"}}]}}"#
    )
    .unwrap();
    match load_scenario(f.path()) {
        Err(SimError::Schema { path, .. }) => assert_eq!(path, "cameras[0].gpu_pixel_throughput"),
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn metrics_files_round_trip() {
    let cfg = staggered();
    let trace = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_metrics(&trace, &Summary::new("s", "ecco", &trace, Some(0.5)), dir.path()).unwrap();
    let back = MetricsTrace::read_trace_csv(std::fs::File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(back.accuracy.len(), trace.accuracy.len());
    assert_eq!(back.requests.len(), trace.requests.iter().map(|r| r.camera).collect::<std::collections::BTreeSet<_>>().len());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["windows"], cfg.windows);
}
