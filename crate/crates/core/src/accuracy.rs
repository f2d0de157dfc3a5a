//! Parametric stand-in for DNN retraining.
//!
//! A group model is described by how proficient it is on each scene cluster
//! and by the centroid of the data it was trained on. A camera's accuracy
//! under a model is
//!
//! ```text
//! floor + (ceil - floor) * proficiency(cluster(scene)) * similarity(scene, centroid)
//! ```
//!
//! and training moves proficiency along a saturating exponential in the
//! effective GPU effort, so gains show diminishing returns.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub u32);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

/// Planar camera position in meters.
pub type Location = [f64; 2];

/// Point in the normalized scene space standing in for a camera's data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneVector(Vec<f64>);

impl SceneVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(SimError::invalid("scene vector must have at least one coordinate"));
        }
        if let Some(c) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SimError::invalid(format!(
                "scene coordinate {c} outside [0, 1]"
            )));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &SceneVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(SimError::invalid(format!(
                "scene dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Weighted mean of scenes. Weights need not be normalized.
    pub fn weighted_mean<'a>(items: impl IntoIterator<Item = (&'a SceneVector, f64)>) -> Option<Self> {
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (scene, w) in items {
            let sum = acc.get_or_insert_with(|| vec![0.0; scene.dim()]);
            if sum.len() != scene.dim() {
                return None;
            }
            for (s, c) in sum.iter_mut().zip(&scene.0) {
                *s += w * c;
            }
            total += w;
        }
        let sum = acc?;
        if total <= 0.0 {
            return None;
        }
        Some(Self(sum.into_iter().map(|s| (s / total).clamp(0.0, 1.0)).collect()))
    }
}

/// How a camera's training value depends on its sampling configuration.
///
/// Static, high-mounted cameras need resolution to resolve distant objects;
/// mobile cameras need frame rate to keep up with scene changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    #[default]
    Neutral,
    Static,
    Mobile,
}

impl CameraKind {
    fn exponents(self) -> (f64, f64) {
        // (resolution, frame rate)
        match self {
            CameraKind::Neutral => (0.0, 0.0),
            CameraKind::Static => (1.5, 0.2),
            CameraKind::Mobile => (0.2, 1.0),
        }
    }

    /// Relative training value in (0, 1] of sampling at `fps` and vertical
    /// resolution `res`, against the largest frame rate and resolution on offer.
    pub fn sampling_utility(self, fps: f64, res: f64, max_fps: f64, max_res: f64) -> f64 {
        let (res_exp, fps_exp) = self.exponents();
        let r = (res / max_res).clamp(0.0, 1.0);
        let f = (fps / max_fps).clamp(0.0, 1.0);
        r.powf(res_exp) * f.powf(fps_exp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub id: CameraId,
    pub location: Location,
    pub scene: SceneVector,
    pub local_model_acc: f64,
    /// bits/sec
    pub local_uplink_cap: f64,
    /// Pixels one GPU-second of training consumes.
    pub gpu_pixel_throughput: f64,
    #[serde(default)]
    pub kind: CameraKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub camera: CameraId,
    pub time: f64,
    pub new_scene: SceneVector,
    pub acc_drop: f64,
}

/// Aggregate statistics of the data a job trains on during one window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatchStats {
    /// Frames supplied per unit of GPU time.
    pub delivered_frame_rate: f64,
    /// Vertical resolution in pixels.
    pub resolution: f64,
    pub quality_factor: f64,
    /// Mean training value of the sampling configurations used (1 = no penalty).
    pub sampling_utility: f64,
    pub source_mix: BTreeMap<CameraId, f64>,
}

impl TrainingBatchStats {
    pub fn supplied_pixel_rate(&self, aspect: f64) -> f64 {
        self.delivered_frame_rate * pixels(self.resolution, aspect)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delivered_frame_rate >= 0.0) {
            return Err(SimError::invalid("delivered frame rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.quality_factor) {
            return Err(SimError::invalid("quality factor must lie in [0, 1]"));
        }
        if !self.source_mix.is_empty() {
            let total: f64 = self.source_mix.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(SimError::invalid(format!(
                    "source mix fractions sum to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Pixels in one frame of vertical resolution `res` at the given width/height ratio.
pub fn pixels(res: f64, aspect: f64) -> f64 {
    res * res * aspect
}

pub const DEFAULT_ASPECT: f64 = 16.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyParams {
    /// Learning-rate constant, per GPU-second.
    pub k: f64,
    pub lambda: f64,
    pub floor: f64,
    pub ceil: f64,
    /// Minimum similarity to a cluster centroid for a scene to join that cluster.
    pub cluster_similarity: f64,
    pub aspect: f64,
}

impl Default for AccuracyParams {
    fn default() -> Self {
        Self {
            k: 0.05,
            lambda: 0.5,
            floor: 0.1,
            ceil: 0.6,
            cluster_similarity: 0.9,
            aspect: DEFAULT_ASPECT,
        }
    }
}

impl AccuracyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(self.lambda > 0.0) {
            return Err(SimError::invalid("k and lambda must be positive"));
        }
        if !(0.0 <= self.floor && self.floor < self.ceil && self.ceil <= 1.0) {
            return Err(SimError::invalid("accuracy bounds need 0 <= floor < ceil <= 1"));
        }
        if !(self.cluster_similarity > 0.0 && self.cluster_similarity <= 1.0) {
            return Err(SimError::invalid("cluster similarity threshold must lie in (0, 1]"));
        }
        if !(self.aspect > 0.0) {
            return Err(SimError::invalid("aspect ratio must be positive"));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.ceil - self.floor
    }
}

/// `exp(-|a - b| / lambda)`.
pub fn similarity(a: &SceneVector, b: &SceneVector, lambda: f64) -> Result<f64> {
    Ok((-a.distance(b)? / lambda).exp())
}

/// Registry of scene clusters; each cluster is anchored at the first scene that created it.
#[derive(Debug, Clone, Default)]
pub struct SceneClusters {
    centroids: Vec<SceneVector>,
}

impl SceneClusters {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClusterId> {
        (0..self.centroids.len() as u32).map(ClusterId)
    }

    pub fn anchor(&self, id: ClusterId) -> Option<&SceneVector> {
        self.centroids.get(id.0 as usize)
    }

    fn nearest(&self, scene: &SceneVector, params: &AccuracyParams) -> Option<ClusterId> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.centroids.iter().enumerate() {
            let Ok(s) = similarity(scene, c, params.lambda) else {
                continue;
            };
            if s >= params.cluster_similarity && best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| ClusterId(i as u32))
    }
}

/// Accuracy model: constants plus the cluster registry.
#[derive(Debug, Clone, Default)]
pub struct AccuracyModel {
    pub params: AccuracyParams,
    clusters: SceneClusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub proficiency: BTreeMap<ClusterId, f64>,
    pub centroid: SceneVector,
}

impl ModelState {
    pub fn untrained(dim: usize) -> Self {
        Self {
            proficiency: BTreeMap::new(),
            centroid: SceneVector::zeros(dim),
        }
    }

    pub fn proficiency(&self, cluster: ClusterId) -> f64 {
        self.proficiency.get(&cluster).copied().unwrap_or(0.0)
    }
}

impl AccuracyModel {
    pub fn new(params: AccuracyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            clusters: SceneClusters::default(),
        })
    }

    pub fn clusters(&self) -> &SceneClusters {
        &self.clusters
    }

    /// Cluster of `scene`, creating a new one if no existing centroid is similar enough.
    pub fn register(&mut self, scene: &SceneVector) -> ClusterId {
        if let Some(id) = self.clusters.nearest(scene, &self.params) {
            return id;
        }
        self.clusters.centroids.push(scene.clone());
        ClusterId(self.clusters.centroids.len() as u32 - 1)
    }

    pub fn cluster_of(&self, scene: &SceneVector) -> Option<ClusterId> {
        self.clusters.nearest(scene, &self.params)
    }

    pub fn similarity(&self, a: &SceneVector, b: &SceneVector) -> Result<f64> {
        similarity(a, b, self.params.lambda)
    }

    pub fn eval_scene(&self, model: &ModelState, scene: &SceneVector) -> f64 {
        let p = &self.params;
        let prof = self
            .cluster_of(scene)
            .map_or(0.0, |c| model.proficiency(c));
        let sim = self.similarity(scene, &model.centroid).unwrap_or(0.0);
        p.floor + p.span() * prof * sim
    }

    pub fn eval(&self, model: &ModelState, camera: &CameraState) -> f64 {
        self.eval_scene(model, &camera.scene)
    }

    /// Effort in GPU-seconds after discounting for data starvation, compression
    /// quality, and sampling utility.
    pub fn effective_effort(
        &self,
        batch: &TrainingBatchStats,
        gpu_time: f64,
        cameras: &[CameraState],
    ) -> f64 {
        let required = required_pixel_rate(batch, cameras);
        let supplied = batch.supplied_pixel_rate(self.params.aspect);
        let sufficiency = if required > 0.0 {
            (supplied / required).min(1.0)
        } else {
            1.0
        };
        gpu_time * sufficiency * batch.quality_factor * batch.sampling_utility
    }

    pub fn train_step(
        &self,
        model: &ModelState,
        batch: &TrainingBatchStats,
        gpu_time: f64,
        cameras: &[CameraState],
    ) -> Result<ModelState> {
        if !(gpu_time >= 0.0) {
            return Err(SimError::invalid(format!("negative GPU time {gpu_time}")));
        }
        batch.validate()?;
        let effort = self.effective_effort(batch, gpu_time, cameras);
        if effort <= 0.0 {
            return Ok(model.clone());
        }

        let mut weights: BTreeMap<ClusterId, f64> = BTreeMap::new();
        let mut scenes = Vec::with_capacity(batch.source_mix.len());
        for (id, frac) in &batch.source_mix {
            let Some(cam) = cameras.iter().find(|c| c.id == *id) else {
                return Err(SimError::invalid(format!("source mix names unknown camera {id}")));
            };
            scenes.push((&cam.scene, *frac));
            if let Some(cluster) = self.cluster_of(&cam.scene) {
                *weights.entry(cluster).or_default() += frac;
            }
        }

        let mut next = model.clone();
        for (cluster, w) in weights {
            let prev = model.proficiency(cluster);
            let updated = 1.0 - (1.0 - prev) * (-self.params.k * effort * w).exp();
            next.proficiency.insert(cluster, updated.clamp(0.0, 1.0));
        }
        if let Some(c) = SceneVector::weighted_mean(scenes) {
            next.centroid = c;
        }
        Ok(next)
    }

    pub fn apply_drift(&self, camera: &CameraState, event: &DriftEvent) -> CameraState {
        debug_assert_eq!(camera.id, event.camera);
        CameraState {
            scene: event.new_scene.clone(),
            local_model_acc: (camera.local_model_acc - event.acc_drop).max(self.params.floor),
            ..camera.clone()
        }
    }

    /// Model whose accuracy on `scene` reproduces `acc`; used when a device's own
    /// model seeds a new job.
    pub fn seeded_model(&self, scene: &SceneVector, acc: f64) -> ModelState {
        let mut model = ModelState {
            proficiency: BTreeMap::new(),
            centroid: scene.clone(),
        };
        if let Some(c) = self.cluster_of(scene) {
            let prof = ((acc - self.params.floor) / self.params.span()).clamp(0.0, 1.0);
            model.proficiency.insert(c, prof);
        }
        model
    }
}

/// Pixel rate the GPU side can consume, as the mix-weighted mean of the
/// source cameras' throughputs.
fn required_pixel_rate(batch: &TrainingBatchStats, cameras: &[CameraState]) -> f64 {
    if batch.source_mix.is_empty() {
        if cameras.is_empty() {
            return 0.0;
        }
        return cameras.iter().map(|c| c.gpu_pixel_throughput).sum::<f64>() / cameras.len() as f64;
    }
    batch
        .source_mix
        .iter()
        .filter_map(|(id, f)| {
            cameras
                .iter()
                .find(|c| c.id == *id)
                .map(|c| f * c.gpu_pixel_throughput)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scene(c: &[f64]) -> SceneVector {
        SceneVector::new(c.to_vec()).unwrap()
    }

    fn camera(id: u32, s: &[f64]) -> CameraState {
        CameraState {
            id: CameraId(id),
            location: [0.0, 0.0],
            scene: scene(s),
            local_model_acc: 0.4,
            local_uplink_cap: 1e6,
            gpu_pixel_throughput: 1e6,
            kind: CameraKind::Neutral,
        }
    }

    fn full_batch(ids: &[u32]) -> TrainingBatchStats {
        let frac = 1.0 / ids.len() as f64;
        TrainingBatchStats {
            // 1e6 px/s at 16:9 needs 750 rows; use a 1-row frame and scale the rate.
            delivered_frame_rate: 1e6 / pixels(1.0, DEFAULT_ASPECT),
            resolution: 1.0,
            quality_factor: 1.0,
            sampling_utility: 1.0,
            source_mix: ids.iter().map(|i| (CameraId(*i), frac)).collect(),
        }
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&scene(&[0.3, 0.7]), &scene(&[0.3, 0.7]), 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(
            similarity(&scene(&[0.0, 0.0]), &scene(&[1.0, 0.0]), 1.0).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            similarity(&scene(&[0.0, 0.0]), &scene(&[0.0, 0.5]), 0.5).unwrap(),
            0.3679,
            epsilon = 1e-4
        );
    }

    #[test]
    fn similarity_rejects_dimension_mismatch() {
        assert!(matches!(
            similarity(&scene(&[0.1]), &scene(&[0.1, 0.2]), 0.5),
            Err(SimError::InvalidInput(_))
        ));
    }

    #[test]
    fn scene_coordinates_must_be_unit_interval() {
        assert!(SceneVector::new(vec![0.2, 1.2]).is_err());
        assert!(SceneVector::new(vec![]).is_err());
    }

    #[test]
    fn eval_examples() {
        let mut m = AccuracyModel::default();
        let cam = camera(1, &[0.2, 0.2]);
        let c = m.register(&cam.scene);

        let untrained = ModelState::untrained(2);
        assert_eq!(m.eval(&untrained, &cam), 0.1);

        let perfect = ModelState {
            proficiency: [(c, 1.0)].into(),
            centroid: cam.scene.clone(),
        };
        assert_abs_diff_eq!(m.eval(&perfect, &cam), 0.6, epsilon = 1e-12);

        // similarity 0.8 => distance lambda * ln(1/0.8)
        let d = 0.5 * (1.0f64 / 0.8).ln();
        let half = ModelState {
            proficiency: [(c, 0.5)].into(),
            centroid: scene(&[0.2 + d, 0.2]),
        };
        assert_abs_diff_eq!(m.eval(&half, &cam), 0.30, epsilon = 1e-12);
    }

    #[test]
    fn zero_gpu_time_leaves_model_unchanged() {
        let mut m = AccuracyModel::default();
        let cam = camera(1, &[0.5, 0.5]);
        let c = m.register(&cam.scene);
        let model = ModelState {
            proficiency: [(c, 0.3)].into(),
            centroid: scene(&[0.1, 0.9]),
        };
        let next = m.train_step(&model, &full_batch(&[1]), 0.0, &[cam]).unwrap();
        assert_eq!(next, model);
    }

    #[test]
    fn train_step_saturating_update() {
        let mut m = AccuracyModel::new(AccuracyParams {
            k: 0.1,
            ..Default::default()
        })
        .unwrap();
        let cam = camera(1, &[0.5, 0.5]);
        let c = m.register(&cam.scene);
        let model = ModelState {
            proficiency: [(c, 0.2)].into(),
            centroid: cam.scene.clone(),
        };
        let next = m.train_step(&model, &full_batch(&[1]), 10.0, &[cam.clone()]).unwrap();
        assert_abs_diff_eq!(next.proficiency(c), 0.7057, epsilon = 1e-4);
        assert_abs_diff_eq!(next.proficiency(c), 1.0 - 0.8 * (-1.0f64).exp(), epsilon = 1e-12);

        let mut starved = full_batch(&[1]);
        starved.delivered_frame_rate /= 2.0;
        let next = m.train_step(&model, &starved, 10.0, &[cam]).unwrap();
        assert_abs_diff_eq!(next.proficiency(c), 0.5148, epsilon = 1e-4);
    }

    #[test]
    fn train_step_rejects_negative_time() {
        let m = AccuracyModel::default();
        let cam = camera(1, &[0.5]);
        let err = m
            .train_step(&ModelState::untrained(1), &full_batch(&[1]), -1.0, &[cam])
            .unwrap_err();
        assert!(matches!(err, SimError::InvalidInput(_)));
    }

    #[test]
    fn centroid_follows_source_mix() {
        let mut m = AccuracyModel::default();
        let a = camera(1, &[0.0, 0.0]);
        let b = camera(2, &[1.0, 0.5]);
        m.register(&a.scene);
        m.register(&b.scene);
        let mut batch = full_batch(&[1, 2]);
        batch.source_mix = [(CameraId(1), 0.25), (CameraId(2), 0.75)].into();
        let next = m
            .train_step(&ModelState::untrained(2), &batch, 1.0, &[a, b])
            .unwrap();
        assert_abs_diff_eq!(next.centroid.coords()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(next.centroid.coords()[1], 0.375, epsilon = 1e-12);
    }

    #[test]
    fn drift_examples() {
        let m = AccuracyModel::default();
        let mut cam = camera(3, &[0.1, 0.1]);
        let ev = |drop| DriftEvent {
            camera: CameraId(3),
            time: 10.0,
            new_scene: scene(&[0.9, 0.9]),
            acc_drop: drop,
        };
        cam.local_model_acc = 0.45;
        let same = m.apply_drift(&cam, &ev(0.0));
        assert_eq!(same.local_model_acc, 0.45);
        assert_eq!(same.scene, scene(&[0.9, 0.9]));
        assert_abs_diff_eq!(m.apply_drift(&cam, &ev(0.30)).local_model_acc, 0.15, epsilon = 1e-12);
        cam.local_model_acc = 0.15;
        assert_eq!(m.apply_drift(&cam, &ev(0.30)).local_model_acc, 0.10);
    }

    #[test]
    fn clusters_share_nearby_scenes() {
        let mut m = AccuracyModel::default();
        let a = m.register(&scene(&[0.5, 0.5]));
        let b = m.register(&scene(&[0.51, 0.5]));
        let c = m.register(&scene(&[0.9, 0.1]));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(m.clusters().len(), 2);
    }

    #[test]
    fn seeded_model_reproduces_device_accuracy() {
        let mut m = AccuracyModel::default();
        let s = scene(&[0.4, 0.6]);
        m.register(&s);
        let model = m.seeded_model(&s, 0.35);
        assert_abs_diff_eq!(m.eval_scene(&model, &s), 0.35, epsilon = 1e-12);
    }

    fn arb_scene(dim: usize) -> impl Strategy<Value = SceneVector> {
        prop::collection::vec(0.0f64..=1.0, dim).prop_map(|v| SceneVector::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(a in arb_scene(3), b in arb_scene(3), lambda in 0.05f64..2.0) {
            let ab = similarity(&a, &b, lambda).unwrap();
            let ba = similarity(&b, &a, lambda).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn eval_within_bounds(s in arb_scene(2), c in arb_scene(2), prof in 0.0f64..=1.0) {
            let mut m = AccuracyModel::default();
            let id = m.register(&s);
            let model = ModelState { proficiency: [(id, prof)].into(), centroid: c };
            let acc = m.eval_scene(&model, &s);
            prop_assert!(acc >= m.params.floor && acc <= m.params.ceil);
        }

        #[test]
        fn more_gpu_time_never_hurts(
            s in arb_scene(2), prof in 0.0f64..=1.0, g1 in 0.0f64..200.0, g2 in 0.0f64..200.0,
        ) {
            let mut m = AccuracyModel::default();
            let cam = camera(1, s.coords());
            let id = m.register(&cam.scene);
            let model = ModelState { proficiency: [(id, prof)].into(), centroid: s.clone() };
            let (hi, lo) = if g1 >= g2 { (g1, g2) } else { (g2, g1) };
            let batch = full_batch(&[1]);
            let a = m.train_step(&model, &batch, hi, &[cam.clone()]).unwrap();
            let b = m.train_step(&model, &batch, lo, &[cam.clone()]).unwrap();
            prop_assert!(m.eval(&a, &cam) >= m.eval(&b, &cam));
        }

        #[test]
        fn gains_diminish_over_equal_steps(prof in 0.0f64..=1.0, g in 0.0f64..50.0, steps in 2usize..8) {
            let mut m = AccuracyModel::default();
            let cam = camera(1, &[0.3, 0.3]);
            let id = m.register(&cam.scene);
            let batch = full_batch(&[1]);
            let mut model = ModelState { proficiency: [(id, prof)].into(), centroid: cam.scene.clone() };
            let mut last_gain = f64::INFINITY;
            for _ in 0..steps {
                let next = m.train_step(&model, &batch, g, &[cam.clone()]).unwrap();
                let gain = next.proficiency(id) - model.proficiency(id);
                prop_assert!(gain <= last_gain + 1e-15);
                prop_assert!((0.0..=1.0).contains(&next.proficiency(id)));
                last_gain = gain;
                model = next;
            }
        }

        #[test]
        fn train_step_is_deterministic(prof in 0.0f64..=1.0, g in 0.0f64..100.0) {
            let mut m = AccuracyModel::default();
            let cam = camera(1, &[0.6, 0.2]);
            let id = m.register(&cam.scene);
            let model = ModelState { proficiency: [(id, prof)].into(), centroid: cam.scene.clone() };
            let batch = full_batch(&[1]);
            let a = m.train_step(&model, &batch, g, &[cam.clone()]).unwrap();
            let b = m.train_step(&model, &batch, g, &[cam]).unwrap();
            prop_assert_eq!(a.proficiency.get(&id).map(|v| v.to_bits()), b.proficiency.get(&id).map(|v| v.to_bits()));
        }
    }
}
