//! Window-by-window simulation driver.

use std::collections::{BTreeMap, VecDeque};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accuracy::{pixels, AccuracyModel, CameraId, CameraState, DriftEvent, TrainingBatchStats};
use crate::allocator::{AllocatorConfig, GpuAllocation, JobId, RetrainJob, TrainingEnv, WindowAllocator};
use crate::error::{Result, SimError};
use crate::grouping::{GroupingEvent, GroupingEventKind, Groups, RetrainRequest};
use crate::metrics::{AccuracySample, EventKind, EventRecord, JobWindowRecord, MetricsTrace, RequestRecord};
use crate::netsim::{simulate_means, FlowParams, Topology};
use crate::scenario::{GroupingMode, ScenarioConfig};
use crate::transmission::{
    adapt_compression, build_profile_table, reference_probe, select_config, set_aimd_params, ProfileBook,
    ProfileTable, SamplingConfig, TieBreak, GAIMD_BETA,
};

/// Smallest GPU share handed to the transport layer, so every active job
/// keeps a positive additive increase.
const MIN_SHARE: f64 = 1e-3;

/// Emit a retraining request when the camera's local model has fallen below
/// `threshold` and it is not already part of a job.
pub fn detect_drift(
    camera: &CameraState,
    threshold: f64,
    already_grouped: bool,
    now: f64,
) -> Option<RetrainRequest> {
    if already_grouped || camera.local_model_acc >= threshold {
        return None;
    }
    Some(RetrainRequest {
        camera: camera.id,
        t: now,
        loc: camera.location,
        subsamples: camera.scene.clone(),
        acc: camera.local_model_acc,
        acc_history: Vec::new(),
    })
}

/// Profile table for one camera using the reference probe.
pub fn profile_camera(cfg: &ScenarioConfig, model: &AccuracyModel, camera: &CameraState) -> Result<ProfileTable> {
    build_profile_table(
        camera,
        &cfg.budget_levels(),
        &cfg.transmission.grid(),
        cfg.window_seconds,
        model.params.aspect,
        TieBreak::for_kind(camera.kind),
        |s, budget| reference_probe(model, camera, &cfg.transmission, cfg.window_seconds, s, budget),
    )
}

/// Per-job planning output of the transmission stage.
#[derive(Debug, Clone)]
struct JobPlan {
    share: GpuAllocation,
    members: Vec<CameraId>,
    configs: BTreeMap<CameraId, SamplingConfig>,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    alloc_cfg: AllocatorConfig,
    topology: Topology,
    model: AccuracyModel,
    cameras: BTreeMap<CameraId, CameraState>,
    groups: Groups,
    profiles: ProfileBook,
    pending: Vec<RetrainRequest>,
    drift: VecDeque<DriftEvent>,
    last_batch: BTreeMap<JobId, TrainingBatchStats>,
    rng: ChaCha8Rng,
    trace: MetricsTrace,
    window: usize,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = AccuracyModel::new(cfg.accuracy.clone())?;
        for c in &cfg.cameras {
            model.register(&c.scene);
        }
        let mut profiles = ProfileBook::new();
        for c in &cfg.cameras {
            profiles.insert(c.id, profile_camera(&cfg, &model, c)?);
        }
        let mut drift: Vec<DriftEvent> = cfg.drift_events.clone();
        drift.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.camera.cmp(&b.camera)));
        Ok(Self {
            alloc_cfg: cfg.allocator_config(),
            topology: cfg.topology(),
            cameras: cfg.cameras.iter().map(|c| (c.id, c.clone())).collect(),
            groups: Groups::new(),
            profiles,
            pending: Vec::new(),
            drift: drift.into(),
            last_batch: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            trace: MetricsTrace {
                window_seconds: cfg.window_seconds,
                ..Default::default()
            },
            window: 0,
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn groups(&self) -> &Groups {
        &self.groups
    }

    pub fn cameras(&self) -> &BTreeMap<CameraId, CameraState> {
        &self.cameras
    }

    pub fn profiles(&self) -> &ProfileBook {
        &self.profiles
    }

    pub fn model(&self) -> &AccuracyModel {
        &self.model
    }

    pub fn trace(&self) -> &MetricsTrace {
        &self.trace
    }

    pub fn into_trace(self) -> MetricsTrace {
        self.trace
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_done(&self) -> bool {
        self.window >= self.cfg.windows
    }

    /// Accuracy camera `id` currently sees: its job's model if grouped,
    /// otherwise its own local model.
    pub fn camera_accuracy(&self, id: CameraId) -> Option<f64> {
        let cam = self.cameras.get(&id)?;
        Some(match self.groups.job_of(id).and_then(|j| self.groups.get(j)) {
            Some(job) => self.model.eval(&job.model, cam),
            None => cam.local_model_acc,
        })
    }

    pub fn run(mut self) -> Result<MetricsTrace> {
        while !self.is_done() {
            self.run_window()?;
        }
        Ok(self.trace)
    }

    /// Advance one retraining window.
    pub fn run_window(&mut self) -> Result<()> {
        let w = self.window;
        self.run_window_inner().map_err(|e| SimError::Window {
            window: w,
            source: Box::new(e),
        })?;
        self.window += 1;
        Ok(())
    }

    fn log(&mut self, time: f64, kind: EventKind, camera: Option<CameraId>, job: Option<JobId>, value: Option<f64>) {
        self.trace.events.push(EventRecord {
            window: self.window,
            time,
            kind,
            camera,
            job,
            value,
        });
    }

    fn log_grouping(&mut self, events: Vec<GroupingEvent>) {
        for e in events {
            let kind = match e.kind {
                GroupingEventKind::Join => EventKind::Join,
                GroupingEventKind::NewJob => EventKind::NewJob,
                GroupingEventKind::Removal => EventKind::Removal,
                GroupingEventKind::Termination => EventKind::Termination,
            };
            self.log(e.time, kind, e.camera, Some(e.job), None);
        }
    }

    fn request(&mut self, req: RetrainRequest) {
        self.log(req.t, EventKind::Request, Some(req.camera), None, Some(req.acc));
        self.trace.requests.push(RequestRecord {
            camera: req.camera,
            time: req.t,
            acc: req.acc,
        });
        self.pending.push(req);
    }

    fn is_waiting(&self, id: CameraId) -> bool {
        self.groups.job_of(id).is_some() || self.pending.iter().any(|r| r.camera == id)
    }

    fn run_window_inner(&mut self) -> Result<()> {
        let t0 = self.window as f64 * self.cfg.window_seconds;
        let t1 = t0 + self.cfg.window_seconds;

        self.detect_and_drift(t0, t1);
        self.group_pending();

        let slots: Vec<_> = self.groups.jobs().values().map(RetrainJob::slot).collect();
        let mut schedule = None;
        if !slots.is_empty() {
            let mut alloc = WindowAllocator::new(self.cfg.policy, &slots, &self.alloc_cfg)?;
            {
                let mut env = self.env();
                alloc.initial_pass(&mut env)?;
            }
            let shares = alloc.shares();
            for s in &shares {
                self.log(t0, EventKind::Shares, None, Some(s.job), Some(s.p_j));
            }
            let plans = self.plan_transmission(&shares)?;
            let rates = self.transmit(&plans)?;
            self.build_batches(&plans, &rates);
            {
                let mut env = self.env();
                alloc.finish(&mut env)?;
            }
            let sched = alloc.into_schedule();
            let d = self.alloc_cfg.micro_window_duration;
            for e in &sched.entries {
                self.log(
                    t0 + (e.index + 1) as f64 * d,
                    EventKind::MicroWindow,
                    None,
                    Some(e.job),
                    Some(e.acc_after),
                );
            }
            for p in &plans {
                self.trace.jobs.push(JobWindowRecord {
                    window: self.window,
                    job: p.share.job,
                    members: p.members.len(),
                    micro_windows: sched.received(p.share.job),
                    p_j: p.share.p_j,
                    c_j: p.share.c_j,
                    mean_rate: p.members.iter().map(|c| rates.get(c).copied().unwrap_or(0.0)).sum(),
                });
            }
            schedule = Some(sched);
        }

        self.deploy();
        if self.cfg.effective_grouping() == GroupingMode::Group {
            let cameras = &self.cameras;
            let locate = |id: CameraId| cameras.get(&id).map(|c| c.location).unwrap_or([0.0, 0.0]);
            let moved = self
                .groups
                .update_grouping(&self.cfg.grouping, t1, &locate, &self.model);
            if !moved.is_empty() {
                debug!("window {}: {} cameras regrouped", self.window, moved.len());
            }
            let events = self.groups.drain_events();
            self.log_grouping(events);
        }
        let live: Vec<JobId> = self.groups.jobs().keys().copied().collect();
        self.last_batch.retain(|j, _| live.contains(j));

        for (&id, _) in self.cameras.iter() {
            let accuracy = self.camera_accuracy(id).expect("camera exists");
            self.trace.accuracy.push(AccuracySample {
                window: self.window,
                window_end: t1,
                camera: id,
                job: self.groups.job_of(id),
                accuracy,
            });
        }
        if let Some(s) = schedule {
            info!(
                "window {}: {} jobs, schedule {:?}, mean acc {:.4}",
                self.window,
                s.totals.len(),
                s.sequence().iter().map(|j| j.0).collect::<Vec<_>>(),
                self.trace.mean_accuracy().last().copied().unwrap_or(0.0)
            );
        }
        Ok(())
    }

    /// Start-of-window detection sweep, then every drift event that lands
    /// inside this window.
    fn detect_and_drift(&mut self, t0: f64, t1: f64) {
        let ids: Vec<CameraId> = self.cameras.keys().copied().collect();
        for id in ids {
            if self.is_waiting(id) {
                continue;
            }
            if let Some(req) = detect_drift(&self.cameras[&id], self.cfg.drift_threshold, false, t0) {
                self.request(req);
            }
        }
        while self.drift.front().is_some_and(|e| e.time < t1) {
            let event = self.drift.pop_front().expect("checked");
            let Some(cam) = self.cameras.get(&event.camera) else {
                continue;
            };
            let updated = self.model.apply_drift(cam, &event);
            self.model.register(&updated.scene);
            let acc = updated.local_model_acc;
            self.cameras.insert(event.camera, updated);
            self.log(event.time, EventKind::Drift, Some(event.camera), None, Some(acc));
            let waiting = self.is_waiting(event.camera);
            if let Some(req) = detect_drift(
                &self.cameras[&event.camera],
                self.cfg.drift_threshold,
                waiting,
                event.time.max(0.0),
            ) {
                self.request(req);
            }
        }
    }

    fn group_pending(&mut self) {
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.camera.cmp(&b.camera)));
        for req in pending {
            match self.cfg.effective_grouping() {
                GroupingMode::Group => {
                    self.groups.group_request(req, &self.cfg.grouping, &self.model);
                }
                GroupingMode::Independent => {
                    self.groups.open_job(req, &self.model);
                }
            }
        }
        let events = self.groups.drain_events();
        self.log_grouping(events);
    }

    fn plan_transmission(&self, shares: &[GpuAllocation]) -> Result<Vec<JobPlan>> {
        let mut plans = Vec::with_capacity(shares.len());
        for share in shares {
            let job = self
                .groups
                .get(share.job)
                .ok_or_else(|| SimError::invalid(format!("share for unknown job {}", share.job)))?;
            let mut members = job.member_ids();
            members.sort();
            let n = members.len();
            let mut configs = BTreeMap::new();
            for &cam in &members {
                let table = self
                    .profiles
                    .get(&cam)
                    .ok_or_else(|| SimError::invalid(format!("no profile table for camera {cam}")))?;
                let sel = select_config(table, share.c_j, n)?;
                if sel.below_table {
                    debug!("camera {cam}: budget {:.2} below profile table", share.c_j);
                }
                configs.insert(cam, sel.config);
            }
            plans.push(JobPlan {
                share: *share,
                members,
                configs,
            });
        }
        Ok(plans)
    }

    /// Configure the flows and return each camera's mean delivered rate.
    fn transmit(&self, plans: &[JobPlan]) -> Result<BTreeMap<CameraId, f64>> {
        let alpha_unit = self.cfg.transmission.alpha_unit;
        let mut flows = Vec::new();
        for p in plans {
            for &cam in &p.members {
                flows.push(if self.cfg.effective_equal_bandwidth() {
                    FlowParams {
                        flow: cam,
                        aimd_alpha: alpha_unit,
                        aimd_beta: GAIMD_BETA,
                    }
                } else {
                    set_aimd_params(cam, p.share.p_j.clamp(MIN_SHARE, 1.0), p.members.len(), alpha_unit)?
                });
            }
        }
        let trace = simulate_means(&flows, &self.topology, self.cfg.window_seconds)?;
        if trace.short_window {
            warn!("window {}: window shorter than the network warm-up horizon", self.window);
        }
        Ok(trace.mean_rates)
    }

    fn build_batches(&mut self, plans: &[JobPlan], rates: &BTreeMap<CameraId, f64>) {
        let aspect = self.model.params.aspect;
        let tx = &self.cfg.transmission;
        let floor_gpu = self.alloc_cfg.micro_window_gpu_seconds();
        for p in plans {
            let mut total_pix = 0.0;
            let mut total_fps = 0.0;
            let mut quality = 0.0;
            let mut utility = 0.0;
            let mut mix = BTreeMap::new();
            for &cam in &p.members {
                let s = p.configs[&cam];
                let pix = s.pixel_rate(aspect);
                let rate = rates.get(&cam).copied().unwrap_or(0.0);
                let comp = adapt_compression(rate, &s, tx.bpp_ref, aspect);
                let kind = self.cameras[&cam].kind;
                total_pix += pix;
                total_fps += s.fps;
                quality += pix * comp.quality_factor;
                utility += pix * kind.sampling_utility(s.fps, s.resolution, tx.max_fps(), tx.max_resolution());
                mix.insert(cam, pix);
            }
            if total_pix <= 0.0 || total_fps <= 0.0 {
                continue;
            }
            for v in mix.values_mut() {
                *v /= total_pix;
            }
            let batch = TrainingBatchStats {
                delivered_frame_rate: total_fps * self.cfg.window_seconds / p.share.c_j.max(floor_gpu),
                resolution: (total_pix / total_fps / aspect).sqrt(),
                quality_factor: (quality / total_pix).clamp(0.0, 1.0),
                sampling_utility: utility / total_pix,
                source_mix: mix,
            };
            debug_assert!((batch.delivered_frame_rate * pixels(batch.resolution, aspect)
                - total_pix * self.cfg.window_seconds / p.share.c_j.max(floor_gpu))
            .abs()
                <= 1e-6 * total_pix.max(1.0) * self.cfg.window_seconds);
            self.last_batch.insert(p.share.job, batch);
        }
    }

    /// Push each job's model to its members and refresh their snapshots.
    fn deploy(&mut self) {
        let model = &self.model;
        let cameras = &mut self.cameras;
        for job in self.groups.jobs_mut().values_mut() {
            for m in job.members.iter_mut() {
                let Some(cam) = cameras.get_mut(&m.camera) else {
                    continue;
                };
                cam.local_model_acc = model.eval(&job.model, cam);
                m.subsamples = cam.scene.clone();
                m.loc = cam.location;
            }
        }
    }

    fn env(&mut self) -> SimEnv<'_> {
        SimEnv {
            model: &self.model,
            cameras: &self.cameras,
            jobs: self.groups.jobs_mut(),
            batches: &self.last_batch,
            rng: &mut self.rng,
            noise: self.cfg.eval_noise,
            max_resolution: self.cfg.transmission.max_resolution(),
        }
    }
}

/// Training environment over the live jobs.
struct SimEnv<'a> {
    model: &'a AccuracyModel,
    cameras: &'a BTreeMap<CameraId, CameraState>,
    jobs: &'a mut BTreeMap<JobId, RetrainJob>,
    batches: &'a BTreeMap<JobId, TrainingBatchStats>,
    rng: &'a mut ChaCha8Rng,
    noise: f64,
    max_resolution: f64,
}

impl SimEnv<'_> {
    fn members(&self, job: &RetrainJob) -> Vec<CameraState> {
        job.members
            .iter()
            .filter_map(|m| self.cameras.get(&m.camera).cloned())
            .collect()
    }

    /// Batch for a job with no delivered data yet: the members' full-rate
    /// stream at top resolution, uncompressed.
    fn ideal_batch(&self, members: &[CameraState]) -> TrainingBatchStats {
        let aspect = self.model.params.aspect;
        let n = members.len().max(1) as f64;
        let mean_thr = members.iter().map(|c| c.gpu_pixel_throughput).sum::<f64>() / n;
        TrainingBatchStats {
            delivered_frame_rate: mean_thr / pixels(self.max_resolution, aspect),
            resolution: self.max_resolution,
            quality_factor: 1.0,
            sampling_utility: 1.0,
            source_mix: members.iter().map(|c| (c.id, 1.0 / n)).collect(),
        }
    }
}

impl TrainingEnv for SimEnv<'_> {
    fn eval(&mut self, job: JobId) -> f64 {
        let Some(j) = self.jobs.get(&job) else {
            return 0.0;
        };
        let members = self.members(j);
        if members.is_empty() {
            return 0.0;
        }
        let mean = members.iter().map(|c| self.model.eval(&j.model, c)).sum::<f64>() / members.len() as f64;
        if self.noise > 0.0 {
            (mean + self.rng.gen_range(-self.noise..=self.noise)).clamp(0.0, 1.0)
        } else {
            mean
        }
    }

    fn train(&mut self, job: JobId, gpu_seconds: f64) -> Result<()> {
        let j = self
            .jobs
            .get(&job)
            .ok_or_else(|| SimError::invalid(format!("unknown job {job}")))?;
        let members = self.members(j);
        let batch = match self.batches.get(&job).and_then(|b| restrict_mix(b, &members)) {
            Some(b) => b,
            None => self.ideal_batch(&members),
        };
        let next = self.model.train_step(&j.model, &batch, gpu_seconds, &members)?;
        self.jobs.get_mut(&job).expect("checked").model = next;
        Ok(())
    }
}

/// Carried-over batch limited to the job's current members, or `None` if none
/// of its sources remain.
fn restrict_mix(batch: &TrainingBatchStats, members: &[CameraState]) -> Option<TrainingBatchStats> {
    let mix: BTreeMap<CameraId, f64> = batch
        .source_mix
        .iter()
        .filter(|(id, _)| members.iter().any(|c| c.id == **id))
        .map(|(id, f)| (*id, *f))
        .collect();
    let total: f64 = mix.values().sum();
    if !(total > 0.0) {
        return None;
    }
    if mix.len() == batch.source_mix.len() {
        return Some(batch.clone());
    }
    Some(TrainingBatchStats {
        source_mix: mix.into_iter().map(|(id, f)| (id, f / total)).collect(),
        ..batch.clone()
    })
}

/// Run every window of `config`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<MetricsTrace> {
    Simulation::new(config.clone())?.run()
}
