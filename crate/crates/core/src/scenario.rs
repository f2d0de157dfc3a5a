//! Scenario files: the declarative input of a simulation run.
//!
//! Scenarios are JSON. Every section except `cameras` has defaults; see
//! `scenarios/` at the repository root for complete examples.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::{AccuracyParams, CameraState, DriftEvent};
use crate::allocator::{AllocatorConfig, Policy};
use crate::error::{Result, SimError};
use crate::grouping::GroupingConfig;
use crate::netsim::Topology;
use crate::transmission::TransmissionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// Correlated cameras share one job.
    Group,
    /// Every request gets its own job.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// bits/sec
    pub shared_capacity: f64,
    /// seconds
    pub rtt: f64,
    pub buffer_bdp: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            shared_capacity: 20e6,
            rtt: 0.05,
            buffer_bdp: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub accuracy: AccuracyParams,
    pub cameras: Vec<CameraState>,
    #[serde(default)]
    pub drift_events: Vec<DriftEvent>,
    #[serde(default)]
    pub allocator: AllocatorConfig,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub transmission: TransmissionConfig,
    /// Retraining window length in seconds; split evenly into the allocator's micro-windows.
    #[serde(default = "default_window_seconds")]
    pub window_seconds: f64,
    #[serde(default = "default_windows")]
    pub windows: usize,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    /// Defaults to `group` for the ecco policy and `independent` for baselines.
    #[serde(default)]
    pub grouping_mode: Option<GroupingMode>,
    /// Force identical GAIMD parameters on every camera. Defaults to false
    /// for the ecco policy and true for baselines.
    #[serde(default)]
    pub equal_bandwidth: Option<bool>,
    #[serde(default = "default_drift_threshold")]
    pub drift_threshold: f64,
    /// Amplitude of uniform noise on the accuracy measurements the allocator sees.
    #[serde(default)]
    pub eval_noise: f64,
    /// GPU budget levels (GPU-seconds) for the profile tables. Defaults to
    /// every whole number of micro-windows.
    #[serde(default)]
    pub budget_levels: Option<Vec<f64>>,
    /// Accuracy target used for the response-time summary.
    #[serde(default)]
    pub target_acc: Option<f64>,
}

fn default_window_seconds() -> f64 {
    60.0
}
fn default_windows() -> usize {
    10
}
fn default_policy() -> Policy {
    Policy::Ecco
}
fn default_drift_threshold() -> f64 {
    0.25
}

impl ScenarioConfig {
    pub fn new(cameras: Vec<CameraState>) -> Self {
        Self {
            name: String::new(),
            seed: 0,
            accuracy: AccuracyParams::default(),
            cameras,
            drift_events: Vec::new(),
            allocator: AllocatorConfig::default(),
            grouping: GroupingConfig::default(),
            network: NetworkConfig::default(),
            transmission: TransmissionConfig::default(),
            window_seconds: default_window_seconds(),
            windows: default_windows(),
            policy: default_policy(),
            grouping_mode: None,
            equal_bandwidth: None,
            drift_threshold: default_drift_threshold(),
            eval_noise: 0.0,
            budget_levels: None,
            target_acc: None,
        }
    }

    pub fn effective_grouping(&self) -> GroupingMode {
        self.grouping_mode.unwrap_or(match self.policy {
            Policy::Ecco => GroupingMode::Group,
            _ => GroupingMode::Independent,
        })
    }

    pub fn effective_equal_bandwidth(&self) -> bool {
        self.equal_bandwidth.unwrap_or(self.policy != Policy::Ecco)
    }

    /// Allocator settings with the micro-window length derived from the window length.
    pub fn allocator_config(&self) -> AllocatorConfig {
        AllocatorConfig {
            micro_window_duration: self.window_seconds / self.allocator.micro_windows.max(1) as f64,
            ..self.allocator.clone()
        }
    }

    pub fn budget_levels(&self) -> Vec<f64> {
        match &self.budget_levels {
            Some(levels) => levels.clone(),
            None => {
                let a = self.allocator_config();
                (1..=a.micro_windows)
                    .map(|k| k as f64 * a.micro_window_gpu_seconds())
                    .collect()
            }
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            shared_capacity: self.network.shared_capacity,
            local_caps: self
                .cameras
                .iter()
                .map(|c| (c.id, c.local_uplink_cap))
                .collect(),
            rtt: self.network.rtt,
            buffer_bdp: self.network.buffer_bdp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |path: &str, r: Result<()>| {
            r.map_err(|e| match e {
                SimError::InvalidInput(msg) => SimError::schema(path, msg),
                other => other,
            })
        };
        wrap("accuracy", self.accuracy.validate())?;
        wrap("allocator", self.allocator.validate())?;
        wrap("grouping", self.grouping.validate())?;
        wrap("transmission", self.transmission.validate())?;
        wrap("network", self.topology().validate())?;

        if self.cameras.is_empty() {
            return Err(SimError::schema("cameras", "at least one camera is required"));
        }
        if !(self.window_seconds > 0.0) {
            return Err(SimError::schema("window_seconds", "must be positive"));
        }
        if self.windows == 0 {
            return Err(SimError::schema("windows", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.drift_threshold) {
            return Err(SimError::schema("drift_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.eval_noise) {
            return Err(SimError::schema("eval_noise", "must lie in [0, 1]"));
        }
        if let Some(t) = self.target_acc {
            if !(t > 0.0 && t < 1.0) {
                return Err(SimError::schema("target_acc", "must lie in (0, 1)"));
            }
        }
        if let Some(levels) = &self.budget_levels {
            if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0)) {
                return Err(SimError::schema("budget_levels", "must be non-empty and positive"));
            }
        }

        let dim = self.cameras[0].scene.dim();
        let mut ids = BTreeSet::new();
        for (i, c) in self.cameras.iter().enumerate() {
            let path = |field: &str| format!("cameras[{i}].{field}");
            if !ids.insert(c.id) {
                return Err(SimError::schema(path("id"), format!("duplicate camera id {}", c.id)));
            }
            check_scene(c.scene.coords(), dim, &path("scene"))?;
            if !(0.0..=1.0).contains(&c.local_model_acc) {
                return Err(SimError::schema(path("local_model_acc"), "must lie in [0, 1]"));
            }
            if !(c.local_uplink_cap > 0.0) {
                return Err(SimError::schema(path("local_uplink_cap"), "must be positive"));
            }
            if !(c.gpu_pixel_throughput > 0.0) {
                return Err(SimError::schema(path("gpu_pixel_throughput"), "must be positive"));
            }
            if c.location.iter().any(|v| !v.is_finite()) {
                return Err(SimError::schema(path("location"), "must be finite"));
            }
        }
        for (i, e) in self.drift_events.iter().enumerate() {
            let path = |field: &str| format!("drift_events[{i}].{field}");
            if !ids.contains(&e.camera) {
                return Err(SimError::schema(path("camera"), format!("unknown camera id {}", e.camera)));
            }
            if !(e.time >= 0.0) {
                return Err(SimError::schema(path("time"), "must be non-negative"));
            }
            if !(0.0..=1.0).contains(&e.acc_drop) {
                return Err(SimError::schema(path("acc_drop"), "must lie in [0, 1]"));
            }
            check_scene(e.new_scene.coords(), dim, &path("new_scene"))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SimError::schema(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

fn check_scene(coords: &[f64], dim: usize, path: &str) -> Result<()> {
    if coords.len() != dim {
        return Err(SimError::schema(
            path,
            format!("expected {dim} coordinates, found {}", coords.len()),
        ));
    }
    if coords.is_empty() || coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(SimError::schema(path, "coordinates must lie in [0, 1]"));
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}

/// Programmatic scenario builders.
pub mod synth {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::accuracy::{CameraId, CameraKind, SceneVector};

    /// Knobs for [`correlated`].
    #[derive(Debug, Clone)]
    pub struct CorrelatedSpec {
        pub cameras: usize,
        pub regions: usize,
        /// Max per-coordinate jitter of a camera's scene around its region's scene.
        pub scene_jitter: f64,
        /// Seconds between the drift of consecutive regions.
        pub region_stagger: f64,
        pub initial_acc: f64,
        pub acc_drop: f64,
        /// Extra drop per camera within a region, so later requesters sit
        /// strictly below the first one.
        pub drop_step: f64,
        pub seed: u64,
    }

    impl Default for CorrelatedSpec {
        fn default() -> Self {
            Self {
                cameras: 6,
                regions: 2,
                scene_jitter: 0.004,
                region_stagger: 0.0,
                initial_acc: 0.45,
                acc_drop: 0.30,
                drop_step: 0.004,
                seed: 1,
            }
        }
    }

    /// Cameras spread over `regions` well-separated sites. All cameras of a
    /// site drift together at the start of the run to a site-specific scene,
    /// so they are correlated in time, place and content.
    pub fn correlated(spec: &CorrelatedSpec) -> ScenarioConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let regions = spec.regions.max(1);
        let mut cameras = Vec::with_capacity(spec.cameras);
        let mut drift = Vec::with_capacity(spec.cameras);
        for i in 0..spec.cameras {
            let region = i % regions;
            let center = [region as f64 * 5_000.0, 0.0];
            let base_old = [0.1 + 0.8 * region as f64 / regions as f64, 0.2];
            let base_new = [0.1 + 0.8 * region as f64 / regions as f64, 0.8];
            let mut jitter = |b: [f64; 2]| {
                SceneVector::new(
                    b.iter()
                        .map(|c| (c + rng.gen_range(-spec.scene_jitter..=spec.scene_jitter)).clamp(0.0, 1.0))
                        .collect(),
                )
                .expect("scene in range")
            };
            let old = jitter(base_old);
            let new = jitter(base_new);
            let id = CameraId(i as u32);
            cameras.push(CameraState {
                id,
                location: [
                    center[0] + rng.gen_range(-100.0..100.0),
                    center[1] + rng.gen_range(-100.0..100.0),
                ],
                scene: old,
                local_model_acc: spec.initial_acc,
                local_uplink_cap: 10e6,
                gpu_pixel_throughput: 20e6,
                kind: CameraKind::Neutral,
            });
            drift.push(DriftEvent {
                camera: id,
                time: region as f64 * spec.region_stagger,
                new_scene: new,
                acc_drop: spec.acc_drop + spec.drop_step * (i / regions) as f64,
            });
        }
        let mut cfg = ScenarioConfig::new(cameras);
        cfg.name = format!("correlated-{}x{}", spec.cameras, regions);
        cfg.seed = spec.seed;
        cfg.drift_events = drift;
        cfg
    }
}
