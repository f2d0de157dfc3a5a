//! GPU time-sharing across retraining jobs.
//!
//! A retraining window is cut into `W` micro-windows, each granted exclusively
//! to one job on all GPUs. After an initial pass over every job, the
//! remaining micro-windows go greedily to the job with the largest objective
//! gain: its accuracy gain weighted by `alpha * n^beta / sum(n^beta)`, plus a
//! fairness bonus equal to the raw gain for the job that currently has the
//! lowest accuracy.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::accuracy::{CameraId, ModelState};
use crate::error::{Result, SimError};
use crate::grouping::RetrainRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u32);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One camera group and its shared model.
#[derive(Debug, Clone)]
pub struct RetrainJob {
    pub id: JobId,
    pub members: Vec<RetrainRequest>,
    pub model: ModelState,
    pub acc_per_member: BTreeMap<CameraId, f64>,
    pub acc_history: Vec<BTreeMap<CameraId, f64>>,
}

impl RetrainJob {
    pub fn new(id: JobId, first: RetrainRequest, model: ModelState) -> Self {
        Self {
            id,
            members: vec![first],
            model,
            acc_per_member: BTreeMap::new(),
            acc_history: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn member_ids(&self) -> Vec<CameraId> {
        self.members.iter().map(|m| m.camera).collect()
    }

    pub fn slot(&self) -> JobSlot {
        JobSlot {
            id: self.id,
            size: self.size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Ecco,
    Naive,
    TotalAccGreedy,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Ecco => "ecco",
            Policy::Naive => "naive",
            Policy::TotalAccGreedy => "total_acc_greedy",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecco" => Ok(Policy::Ecco),
            "naive" => Ok(Policy::Naive),
            "total_acc_greedy" => Ok(Policy::TotalAccGreedy),
            other => Err(SimError::invalid(format!("unknown policy `{other}`"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocatorConfig {
    pub obj_alpha: f64,
    pub size_exponent_beta: f64,
    pub micro_windows: usize,
    /// Seconds.
    pub micro_window_duration: f64,
    pub gpu_count: usize,
    pub fairness_bonus: bool,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            obj_alpha: 1.0,
            size_exponent_beta: 0.5,
            micro_windows: 10,
            micro_window_duration: 6.0,
            gpu_count: 1,
            fairness_bonus: true,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.obj_alpha >= 0.0) {
            return Err(SimError::invalid("obj_alpha must be non-negative"));
        }
        if !(self.size_exponent_beta <= 1.0) {
            return Err(SimError::invalid("size_exponent_beta must not exceed 1"));
        }
        if self.micro_windows == 0 || self.gpu_count == 0 {
            return Err(SimError::invalid("micro_windows and gpu_count must be positive"));
        }
        if !(self.micro_window_duration > 0.0) {
            return Err(SimError::invalid("micro_window_duration must be positive"));
        }
        Ok(())
    }

    /// `||T||`, seconds.
    pub fn window_duration(&self) -> f64 {
        self.micro_windows as f64 * self.micro_window_duration
    }

    /// `G * ||T||`, GPU-seconds.
    pub fn window_capacity(&self) -> f64 {
        self.gpu_count as f64 * self.window_duration()
    }

    /// GPU-seconds in one micro-window on all GPUs.
    pub fn micro_window_gpu_seconds(&self) -> f64 {
        self.gpu_count as f64 * self.micro_window_duration
    }
}

/// A job as seen by the allocator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobSlot {
    pub id: JobId,
    pub size: usize,
}

/// Training and evaluation hooks the allocator drives.
pub trait TrainingEnv {
    /// Mean accuracy of the job's model over its members.
    fn eval(&mut self, job: JobId) -> f64;
    fn train(&mut self, job: JobId, gpu_seconds: f64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuAllocation {
    pub job: JobId,
    /// GPU-seconds.
    pub c_j: f64,
    pub p_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroWindowRecord {
    pub index: usize,
    pub job: JobId,
    pub acc_before: f64,
    pub acc_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSchedule {
    pub entries: Vec<MicroWindowRecord>,
    pub totals: BTreeMap<JobId, usize>,
}

impl WindowSchedule {
    pub fn sequence(&self) -> Vec<JobId> {
        self.entries.iter().map(|e| e.job).collect()
    }

    pub fn received(&self, job: JobId) -> usize {
        self.totals.get(&job).copied().unwrap_or(0)
    }
}

/// `alpha * sum(n^beta * A) / sum(n^beta) + min(A)` over `(n_j, A_j)` pairs.
pub fn objective_value(jobs: &[(usize, f64)], cfg: &AllocatorConfig) -> Result<f64> {
    if jobs.is_empty() {
        return Err(SimError::invalid("objective needs at least one job"));
    }
    let mut weighted = 0.0;
    let mut norm = 0.0;
    let mut min = f64::INFINITY;
    for &(n, a) in jobs {
        if n == 0 || !(0.0..=1.0).contains(&a) {
            return Err(SimError::invalid(format!("bad job (n={n}, A={a})")));
        }
        let w = (n as f64).powf(cfg.size_exponent_beta);
        weighted += w * a;
        norm += w;
        min = min.min(a);
    }
    Ok(cfg.obj_alpha * weighted / norm + min)
}

fn argmax(values: &BTreeMap<JobId, f64>) -> Option<JobId> {
    let mut best: Option<(JobId, f64)> = None;
    for (&id, &v) in values {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    best.map(|(id, _)| id)
}

fn argmin(values: &BTreeMap<JobId, f64>) -> Option<JobId> {
    let mut best: Option<(JobId, f64)> = None;
    for (&id, &v) in values {
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((id, v));
        }
    }
    best.map(|(id, _)| id)
}

/// Objective gain per job. Jobs without a measured gain are skipped.
pub fn cal_objective_gain(
    jobs: &[JobSlot],
    acc: &BTreeMap<JobId, f64>,
    acc_gain: &BTreeMap<JobId, f64>,
    cfg: &AllocatorConfig,
) -> BTreeMap<JobId, f64> {
    let norm: f64 = jobs
        .iter()
        .map(|j| (j.size as f64).powf(cfg.size_exponent_beta))
        .sum();
    let mut out = BTreeMap::new();
    for j in jobs {
        if let Some(g) = acc_gain.get(&j.id) {
            let w = cfg.obj_alpha * (j.size as f64).powf(cfg.size_exponent_beta) / norm;
            out.insert(j.id, w * g);
        }
    }
    if cfg.fairness_bonus {
        if let Some(worst) = argmin(acc) {
            if let (Some(g), Some(o)) = (acc_gain.get(&worst), out.get_mut(&worst)) {
                *o += g;
            }
        }
    }
    out
}

/// Size-weighted total gain `n_j * AccGain[j]`, the score of accuracy-sum maximizers.
pub fn total_accuracy_gain(
    jobs: &[JobSlot],
    acc_gain: &BTreeMap<JobId, f64>,
) -> BTreeMap<JobId, f64> {
    jobs.iter()
        .filter_map(|j| acc_gain.get(&j.id).map(|g| (j.id, j.size as f64 * g)))
        .collect()
}

/// Normalize objective gains into GPU shares. Negative gains count as zero; if
/// nothing is positive the shares fall back to uniform.
pub fn estimate_shares(obj_gain: &BTreeMap<JobId, f64>, cfg: &AllocatorConfig) -> Vec<GpuAllocation> {
    let capacity = cfg.window_capacity();
    let total: f64 = obj_gain.values().map(|g| g.max(0.0)).sum();
    let n = obj_gain.len();
    if n == 0 {
        return Vec::new();
    }
    if !(total > 0.0) {
        warn!("all objective gains are non-positive; using uniform GPU shares");
        let p = 1.0 / n as f64;
        return obj_gain
            .keys()
            .map(|&job| GpuAllocation {
                job,
                c_j: p * capacity,
                p_j: p,
            })
            .collect();
    }
    obj_gain
        .iter()
        .map(|(&job, &g)| {
            let p = g.max(0.0) / total;
            GpuAllocation {
                job,
                c_j: p * capacity,
                p_j: p,
            }
        })
        .collect()
}

/// Stateful allocator for one retraining window, split so the caller can act
/// on the share estimate between the initial pass and the greedy phase.
#[derive(Debug, Clone)]
pub struct WindowAllocator {
    policy: Policy,
    cfg: AllocatorConfig,
    jobs: Vec<JobSlot>,
    acc: BTreeMap<JobId, f64>,
    acc_gain: BTreeMap<JobId, f64>,
    score: BTreeMap<JobId, f64>,
    schedule: WindowSchedule,
    initial_done: bool,
}

impl WindowAllocator {
    pub fn new(policy: Policy, jobs: &[JobSlot], cfg: &AllocatorConfig) -> Result<Self> {
        cfg.validate()?;
        if jobs.len() > cfg.micro_windows {
            return Err(SimError::InfeasibleSchedule {
                jobs: jobs.len(),
                micro_windows: cfg.micro_windows,
            });
        }
        if let Some(j) = jobs.iter().find(|j| j.size == 0) {
            return Err(SimError::invalid(format!("job {} has no members", j.id)));
        }
        let mut jobs = jobs.to_vec();
        jobs.sort_by_key(|j| j.id);
        jobs.dedup_by_key(|j| j.id);
        Ok(Self {
            policy,
            cfg: cfg.clone(),
            jobs,
            acc: BTreeMap::new(),
            acc_gain: BTreeMap::new(),
            score: BTreeMap::new(),
            schedule: WindowSchedule::default(),
            initial_done: false,
        })
    }

    pub fn remaining(&self) -> usize {
        if self.jobs.is_empty() {
            return 0;
        }
        self.cfg.micro_windows - self.schedule.entries.len()
    }

    fn micro_retrain(&mut self, job: JobId, env: &mut dyn TrainingEnv) -> Result<()> {
        let before = env.eval(job);
        env.train(job, self.cfg.micro_window_gpu_seconds())?;
        let after = env.eval(job);
        self.acc.insert(job, after);
        self.acc_gain.insert(job, after - before);
        let index = self.schedule.entries.len();
        self.schedule.entries.push(MicroWindowRecord {
            index,
            job,
            acc_before: before,
            acc_after: after,
        });
        *self.schedule.totals.entry(job).or_default() += 1;
        self.rescore();
        Ok(())
    }

    fn rescore(&mut self) {
        self.score = match self.policy {
            Policy::Ecco => cal_objective_gain(&self.jobs, &self.acc, &self.acc_gain, &self.cfg),
            Policy::TotalAccGreedy => total_accuracy_gain(&self.jobs, &self.acc_gain),
            Policy::Naive => self.jobs.iter().map(|j| (j.id, 1.0)).collect(),
        };
    }

    /// One micro-window for every job, in id order.
    pub fn initial_pass(&mut self, env: &mut dyn TrainingEnv) -> Result<()> {
        if self.initial_done {
            return Ok(());
        }
        let ids: Vec<JobId> = self.jobs.iter().map(|j| j.id).collect();
        for id in ids {
            self.micro_retrain(id, env)?;
        }
        self.initial_done = true;
        Ok(())
    }

    /// Current per-job scores (objective gains for the ECCO policy).
    pub fn scores(&self) -> &BTreeMap<JobId, f64> {
        &self.score
    }

    pub fn accuracies(&self) -> &BTreeMap<JobId, f64> {
        &self.acc
    }

    /// GPU share estimate from the current scores.
    pub fn shares(&self) -> Vec<GpuAllocation> {
        match self.policy {
            Policy::Naive => {
                let uniform: BTreeMap<JobId, f64> = self.jobs.iter().map(|j| (j.id, 1.0)).collect();
                estimate_shares(&uniform, &self.cfg)
            }
            _ => estimate_shares(&self.score, &self.cfg),
        }
    }

    fn next_job(&self) -> JobId {
        match self.policy {
            Policy::Naive => {
                let i = self.schedule.entries.len() % self.jobs.len();
                self.jobs[i].id
            }
            _ => argmax(&self.score).unwrap_or(self.jobs[0].id),
        }
    }

    /// Spend the rest of the window.
    pub fn finish(&mut self, env: &mut dyn TrainingEnv) -> Result<()> {
        self.initial_pass(env)?;
        while self.remaining() > 0 {
            let job = self.next_job();
            self.micro_retrain(job, env)?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> &WindowSchedule {
        &self.schedule
    }

    pub fn into_schedule(self) -> WindowSchedule {
        self.schedule
    }
}

/// Greedy objective-gain allocation of one window.
pub fn allocate_window(
    jobs: &[JobSlot],
    cfg: &AllocatorConfig,
    env: &mut dyn TrainingEnv,
) -> Result<WindowSchedule> {
    let mut alloc = WindowAllocator::new(Policy::Ecco, jobs, cfg)?;
    alloc.finish(env)?;
    Ok(alloc.into_schedule())
}

/// Allocation under one of the comparison policies.
pub fn baseline_allocate(
    policy: Policy,
    jobs: &[JobSlot],
    cfg: &AllocatorConfig,
    env: &mut dyn TrainingEnv,
) -> Result<WindowSchedule> {
    if policy == Policy::Ecco {
        return Err(SimError::invalid("ecco is not a baseline policy"));
    }
    let mut alloc = WindowAllocator::new(policy, jobs, cfg)?;
    alloc.finish(env)?;
    Ok(alloc.into_schedule())
}
