#![allow(dead_code)]

use std::collections::BTreeMap;

use ecco_sim::allocator::{AllocatorConfig, JobId, JobSlot, Policy, TrainingEnv};
use ecco_sim::Result;
use proptest::prelude::*;

/// Environment whose accuracy gains come from fixed per-job tables: the k-th
/// training of job j adds `gains[j][k]` (the last entry repeats).
#[derive(Debug, Clone)]
pub struct ScriptedEnv {
    pub acc: BTreeMap<JobId, f64>,
    pub gains: BTreeMap<JobId, Vec<f64>>,
    pub trained: BTreeMap<JobId, usize>,
}

impl ScriptedEnv {
    pub fn new(initial: &[(u32, f64, Vec<f64>)]) -> Self {
        Self {
            acc: initial.iter().map(|(id, a, _)| (JobId(*id), *a)).collect(),
            gains: initial.iter().map(|(id, _, g)| (JobId(*id), g.clone())).collect(),
            trained: BTreeMap::new(),
        }
    }

    /// Saturating curve `a(k) = top - (top - a0) * r^k`, sampled per micro-window.
    pub fn concave(initial: &[(u32, f64, f64, f64)], steps: usize) -> Self {
        let rows: Vec<(u32, f64, Vec<f64>)> = initial
            .iter()
            .map(|&(id, a0, top, r)| {
                let curve: Vec<f64> = (0..=steps).map(|k| top - (top - a0) * r.powi(k as i32)).collect();
                (id, a0, curve.windows(2).map(|w| w[1] - w[0]).collect())
            })
            .collect();
        Self::new(&rows)
    }

    pub fn next_gain(&self, job: JobId) -> f64 {
        let g = &self.gains[&job];
        let k = self.trained.get(&job).copied().unwrap_or(0);
        g.get(k).or(g.last()).copied().unwrap_or(0.0)
    }
}

impl TrainingEnv for ScriptedEnv {
    fn eval(&mut self, job: JobId) -> f64 {
        self.acc[&job]
    }

    fn train(&mut self, job: JobId, _gpu_seconds: f64) -> Result<()> {
        let g = self.next_gain(job);
        *self.acc.get_mut(&job).unwrap() += g;
        *self.trained.entry(job).or_default() += 1;
        Ok(())
    }
}

/// Step-by-step re-statement of the window allocation rule, written without
/// reference to the library's scoring helpers.
pub fn reference_schedule(
    policy: Policy,
    jobs: &[JobSlot],
    cfg: &AllocatorConfig,
    env: &ScriptedEnv,
) -> Vec<JobId> {
    let mut env = env.clone();
    let mut order: Vec<JobSlot> = jobs.to_vec();
    order.sort_by_key(|j| j.id.0);
    let mut acc: Vec<f64> = vec![0.0; order.len()];
    let mut gain: Vec<f64> = vec![0.0; order.len()];
    let mut seq = Vec::new();

    let step = |i: usize, env: &mut ScriptedEnv, acc: &mut Vec<f64>, gain: &mut Vec<f64>| {
        let id = order[i].id;
        let before = env.eval(id);
        env.train(id, 0.0).unwrap();
        let after = env.eval(id);
        acc[i] = after;
        gain[i] = after - before;
        id
    };

    for i in 0..order.len() {
        seq.push(step(i, &mut env, &mut acc, &mut gain));
    }
    let sizes: Vec<f64> = order.iter().map(|j| j.size as f64).collect();
    let total_w: f64 = sizes.iter().map(|n| n.powf(cfg.size_exponent_beta)).sum();
    let mut rr = order.len();
    while seq.len() < cfg.micro_windows {
        let pick = match policy {
            Policy::Naive => {
                let i = rr % order.len();
                rr += 1;
                i
            }
            Policy::TotalAccGreedy => first_max(&(0..order.len()).map(|i| sizes[i] * gain[i]).collect::<Vec<_>>()),
            Policy::Ecco => {
                let mut worst = 0;
                for i in 1..order.len() {
                    if acc[i] < acc[worst] {
                        worst = i;
                    }
                }
                let score: Vec<f64> = (0..order.len())
                    .map(|i| {
                        let mut s = cfg.obj_alpha * sizes[i].powf(cfg.size_exponent_beta) / total_w * gain[i];
                        if cfg.fairness_bonus && i == worst {
                            s += gain[i];
                        }
                        s
                    })
                    .collect();
                first_max(&score)
            }
        };
        seq.push(step(pick, &mut env, &mut acc, &mut gain));
    }
    seq
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn slots(sizes: &[usize]) -> Vec<JobSlot> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| JobSlot {
            id: JobId(i as u32),
            size: n,
        })
        .collect()
}

pub fn alloc_cfg(w: usize, beta: f64, bonus: bool) -> AllocatorConfig {
    AllocatorConfig {
        micro_windows: w,
        size_exponent_beta: beta,
        fairness_bonus: bonus,
        ..Default::default()
    }
}

/// Random instance with at most `max_jobs` jobs and `max_w` micro-windows.
/// Gains are drawn on a coarse grid so exact ties occur regularly.
pub fn instance(max_jobs: usize, max_w: usize) -> impl Strategy<Value = (Vec<usize>, usize, Vec<(u32, f64, Vec<f64>)>)> {
    (1..=max_jobs).prop_flat_map(move |j| {
        (
            prop::collection::vec(1usize..=5, j),
            j..=max_w.max(j),
            prop::collection::vec(
                (0u32..=10, prop::collection::vec(-2i32..=10, 1..=max_w)),
                j,
            ),
        )
            .prop_map(|(sizes, w, rows)| {
                let rows = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (a, g))| (i as u32, a as f64 * 0.05, g.into_iter().map(|x| x as f64 * 0.01).collect()))
                    .collect();
                (sizes, w, rows)
            })
    })
}

pub mod scenarios {
    use ecco_sim::accuracy::{CameraId, CameraKind, CameraState, DriftEvent, SceneVector};
    use ecco_sim::scenario::synth::{correlated, CorrelatedSpec};
    use ecco_sim::scenario::{GroupingMode, ScenarioConfig};

    pub fn scene(x: f64, y: f64) -> SceneVector {
        SceneVector::new(vec![x, y]).unwrap()
    }

    pub fn camera(id: u32, loc: [f64; 2], s: SceneVector, acc: f64) -> CameraState {
        CameraState {
            id: CameraId(id),
            location: loc,
            scene: s,
            local_model_acc: acc,
            local_uplink_cap: 10e6,
            gpu_pixel_throughput: 20e6,
            kind: CameraKind::Neutral,
        }
    }

    pub fn drift(id: u32, time: f64, s: SceneVector, drop: f64) -> DriftEvent {
        DriftEvent {
            camera: CameraId(id),
            time,
            new_scene: s,
            acc_drop: drop,
        }
    }

    /// Three co-located cameras drift together at t = 0; camera 2 alone moves
    /// to a scene 0.15 away at the start of window index 5.
    pub fn divergence() -> ScenarioConfig {
        let cams = (0..3)
            .map(|i| camera(i, [i as f64 * 40.0, 0.0], scene(0.3 + 0.002 * i as f64, 0.3), 0.45))
            .collect();
        let mut cfg = ScenarioConfig::new(cams);
        cfg.name = "divergence".into();
        cfg.windows = 8;
        cfg.drift_events = (0..3)
            .map(|i| drift(i, 0.0, scene(0.3 + 0.002 * i as f64, 0.7), 0.30 + 0.004 * i as f64))
            .collect();
        cfg.drift_events.push(drift(2, 300.0, scene(0.454, 0.7), 0.0));
        cfg
    }

    /// Correlated cameras in a single region.
    pub fn one_site(cameras: usize, gpus: usize, mode: GroupingMode) -> ScenarioConfig {
        let mut cfg = correlated(&CorrelatedSpec {
            cameras,
            regions: 1,
            ..Default::default()
        });
        cfg.allocator.gpu_count = gpus;
        cfg.grouping_mode = Some(mode);
        cfg.equal_bandwidth = Some(false);
        cfg
    }

    /// One camera with a top sampling configuration that exactly fills its
    /// pixel throughput at the full window budget.
    pub fn single_job(k: f64) -> ScenarioConfig {
        let mut cam = camera(0, [0.0, 0.0], scene(0.5, 0.2), 0.45);
        cam.gpu_pixel_throughput = 15.0 * 2.0 * 960.0 * 960.0;
        let mut cfg = ScenarioConfig::new(vec![cam]);
        cfg.name = "single".into();
        cfg.accuracy.aspect = 2.0;
        cfg.accuracy.k = k;
        cfg.windows = 5;
        cfg.drift_events = vec![drift(0, 0.0, scene(0.5, 0.8), 0.25)];
        cfg
    }
}

pub mod checks {
    use std::collections::BTreeMap;

    use ecco_sim::metrics::{EventKind, MetricsTrace};

    /// Micro-windows per window sum to `w`, shares sum to 1.
    pub fn conservation(trace: &MetricsTrace, w: usize) -> std::result::Result<(), String> {
        let mut per: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for j in &trace.jobs {
            let e = per.entry(j.window).or_default();
            e.0 += j.micro_windows;
            e.1 += j.p_j;
        }
        for (win, (mw, p)) in per {
            if mw != w {
                return Err(format!("window {win}: {mw} micro-windows, expected {w}"));
            }
            if (p - 1.0).abs() > 1e-9 {
                return Err(format!("window {win}: shares sum to {p}"));
            }
        }
        Ok(())
    }

    fn phase(kind: EventKind, seen_alloc: bool) -> u8 {
        match kind {
            EventKind::Drift | EventKind::Request => 0,
            EventKind::Join | EventKind::NewJob if !seen_alloc => 1,
            EventKind::Shares => 2,
            EventKind::MicroWindow => 3,
            _ => 4,
        }
    }

    /// Within every window: detection, then grouping, then share estimation,
    /// then micro-windows, then regrouping.
    pub fn pipeline_order(trace: &MetricsTrace) -> std::result::Result<(), String> {
        let mut last_window = 0;
        let mut last_phase = 0;
        let mut seen_alloc = false;
        for (i, e) in trace.events.iter().enumerate() {
            if e.window < last_window {
                return Err(format!("event {i}: window went backwards"));
            }
            if e.window > last_window {
                last_window = e.window;
                last_phase = 0;
                seen_alloc = false;
            }
            let p = phase(e.kind, seen_alloc);
            if p < last_phase {
                return Err(format!("event {i} ({}) out of order in window {}", e.kind.name(), e.window));
            }
            seen_alloc |= matches!(e.kind, EventKind::Shares | EventKind::MicroWindow);
            last_phase = p;
        }
        Ok(())
    }

    /// One sample per camera per window, window ends increasing.
    pub fn samples(trace: &MetricsTrace, cameras: usize, windows: usize) -> std::result::Result<(), String> {
        if trace.accuracy.len() != cameras * windows {
            return Err(format!("{} samples, expected {}", trace.accuracy.len(), cameras * windows));
        }
        for pair in trace.accuracy.windows(2) {
            if pair[1].window_end < pair[0].window_end {
                return Err("window ends not monotone".into());
            }
        }
        Ok(())
    }
}
