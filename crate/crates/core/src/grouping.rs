//! Dynamic camera grouping.
//!
//! A new retraining request first goes through a cheap metadata filter (every
//! current member of a job must be close in request time and location), then a
//! performance check: the job's model must do at least as well on the
//! request's sample as the device's own model. The request joins the best
//! passing job, or seeds a new one.
//!
//! At each window boundary members whose accuracy fell by more than a relative
//! threshold are pulled out and regrouped.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::accuracy::{AccuracyModel, CameraId, Location, ModelState, SceneVector};
use crate::allocator::{JobId, RetrainJob};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRequest {
    pub camera: CameraId,
    /// Request time, seconds.
    pub t: f64,
    pub loc: Location,
    pub subsamples: SceneVector,
    pub acc: f64,
    #[serde(default)]
    pub acc_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    /// Seconds.
    pub epsilon: f64,
    /// Meters.
    pub delta: f64,
    pub drop_threshold_p: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            epsilon: 120.0,
            delta: 500.0,
            drop_threshold_p: 0.2,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.delta > 0.0 && self.drop_threshold_p > 0.0) {
            return Err(SimError::invalid("grouping epsilon, delta and p must be positive"));
        }
        Ok(())
    }
}

/// Evaluation and seeding hooks the grouping logic needs from the model side.
pub trait ModelOracle {
    fn eval(&self, model: &ModelState, scene: &SceneVector) -> f64;
    /// Initial model for a job created from `req` (the device's own model).
    fn seed_model(&self, req: &RetrainRequest) -> ModelState;
}

impl ModelOracle for AccuracyModel {
    fn eval(&self, model: &ModelState, scene: &SceneVector) -> f64 {
        self.eval_scene(model, scene)
    }

    fn seed_model(&self, req: &RetrainRequest) -> ModelState {
        self.seeded_model(&req.subsamples, req.acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingEventKind {
    Join,
    NewJob,
    Removal,
    Termination,
}

impl GroupingEventKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupingEventKind::Join => "join",
            GroupingEventKind::NewJob => "new_job",
            GroupingEventKind::Removal => "removal",
            GroupingEventKind::Termination => "termination",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingEvent {
    pub time: f64,
    pub kind: GroupingEventKind,
    pub camera: Option<CameraId>,
    pub job: JobId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Joined(JobId),
    NewJob(JobId),
}

impl Assignment {
    pub fn job(self) -> JobId {
        match self {
            Assignment::Joined(j) | Assignment::NewJob(j) => j,
        }
    }
}

fn distance(a: &Location, b: &Location) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// True iff every member of `job` is within `epsilon` seconds and `delta`
/// meters of the request.
pub fn correlation_filter(job: &RetrainJob, req: &RetrainRequest, cfg: &GroupingConfig) -> bool {
    job.members
        .iter()
        .all(|r| (r.t - req.t).abs() <= cfg.epsilon && distance(&r.loc, &req.loc) <= cfg.delta)
}

/// The set of live retraining jobs.
#[derive(Debug, Clone, Default)]
pub struct Groups {
    jobs: BTreeMap<JobId, RetrainJob>,
    next_id: u32,
    events: Vec<GroupingEvent>,
}

impl Groups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn jobs(&self) -> &BTreeMap<JobId, RetrainJob> {
        &self.jobs
    }

    pub fn jobs_mut(&mut self) -> &mut BTreeMap<JobId, RetrainJob> {
        &mut self.jobs
    }

    pub fn get(&self, id: JobId) -> Option<&RetrainJob> {
        self.jobs.get(&id)
    }

    pub fn job_of(&self, camera: CameraId) -> Option<JobId> {
        self.jobs
            .values()
            .find(|j| j.members.iter().any(|m| m.camera == camera))
            .map(|j| j.id)
    }

    pub fn drain_events(&mut self) -> Vec<GroupingEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn events(&self) -> &[GroupingEvent] {
        &self.events
    }

    /// Start a job for `req` alone, seeded from the device's model.
    pub fn open_job(&mut self, req: RetrainRequest, oracle: &dyn ModelOracle) -> JobId {
        let id = JobId(self.next_id);
        self.next_id += 1;
        let model = oracle.seed_model(&req);
        self.events.push(GroupingEvent {
            time: req.t,
            kind: GroupingEventKind::NewJob,
            camera: Some(req.camera),
            job: id,
        });
        let mut req = req;
        req.acc_history.clear();
        self.jobs.insert(id, RetrainJob::new(id, req, model));
        id
    }

    /// Candidate jobs for `req` with their evaluated accuracy.
    pub fn candidates(
        &self,
        req: &RetrainRequest,
        cfg: &GroupingConfig,
        oracle: &dyn ModelOracle,
        exclude: Option<JobId>,
    ) -> BTreeMap<JobId, f64> {
        self.jobs
            .values()
            .filter(|j| Some(j.id) != exclude && correlation_filter(j, req, cfg))
            .filter_map(|j| {
                let acc = oracle.eval(&j.model, &req.subsamples);
                (acc >= req.acc).then_some((j.id, acc))
            })
            .collect()
    }

    pub fn group_request(
        &mut self,
        req: RetrainRequest,
        cfg: &GroupingConfig,
        oracle: &dyn ModelOracle,
    ) -> Assignment {
        self.group_request_excluding(req, cfg, oracle, None)
    }

    fn group_request_excluding(
        &mut self,
        mut req: RetrainRequest,
        cfg: &GroupingConfig,
        oracle: &dyn ModelOracle,
        exclude: Option<JobId>,
    ) -> Assignment {
        debug_assert!(self.job_of(req.camera).is_none(), "camera already grouped");
        let candidates = self.candidates(&req, cfg, oracle, exclude);
        let mut best: Option<(JobId, f64)> = None;
        for (id, acc) in candidates {
            if best.map_or(true, |(_, b)| acc > b) {
                best = Some((id, acc));
            }
        }
        match best {
            Some((id, _)) => {
                self.events.push(GroupingEvent {
                    time: req.t,
                    kind: GroupingEventKind::Join,
                    camera: Some(req.camera),
                    job: id,
                });
                req.acc_history.clear();
                self.jobs
                    .get_mut(&id)
                    .expect("candidate job exists")
                    .members
                    .push(req);
                Assignment::Joined(id)
            }
            None => Assignment::NewJob(self.open_job(req, oracle)),
        }
    }

    /// Window-end regrouping pass.
    ///
    /// Each member's accuracy under its job's model is appended to its history;
    /// members whose relative drop exceeds `p` are removed, their request time
    /// and location refreshed, and regrouped immediately (never back into the
    /// job they just left). Emptied jobs are terminated.
    pub fn update_grouping(
        &mut self,
        cfg: &GroupingConfig,
        now: f64,
        locate: &dyn Fn(CameraId) -> Location,
        oracle: &dyn ModelOracle,
    ) -> Vec<RetrainRequest> {
        let snapshot: Vec<(JobId, Vec<CameraId>)> = self
            .jobs
            .values()
            .map(|j| {
                let mut ids = j.member_ids();
                ids.sort();
                (j.id, ids)
            })
            .collect();

        // Measure everyone first so the histories reflect the window's end state.
        for job in self.jobs.values_mut() {
            let mut accs = BTreeMap::new();
            for m in job.members.iter_mut() {
                let acc = oracle.eval(&job.model, &m.subsamples);
                m.acc_history.push(acc);
                accs.insert(m.camera, acc);
            }
            job.acc_per_member = accs.clone();
            job.acc_history.push(accs);
        }

        let mut reprocessed = Vec::new();
        for (job_id, members) in snapshot {
            for cam in members {
                let Some(job) = self.jobs.get(&job_id) else {
                    break;
                };
                let Some(pos) = job.members.iter().position(|m| m.camera == cam) else {
                    continue;
                };
                let hist = &job.members[pos].acc_history;
                if hist.len() < 2 {
                    continue;
                }
                let (prev, cur) = (hist[hist.len() - 2], hist[hist.len() - 1]);
                let dropped = if prev <= 0.0 {
                    warn!("camera {cam}: previous accuracy is zero; treating as a drop");
                    true
                } else {
                    (cur - prev) / prev < -cfg.drop_threshold_p
                };
                if !dropped {
                    continue;
                }

                let job = self.jobs.get_mut(&job_id).expect("checked above");
                let mut req = job.members.remove(pos);
                job.acc_per_member.remove(&cam);
                self.events.push(GroupingEvent {
                    time: now,
                    kind: GroupingEventKind::Removal,
                    camera: Some(cam),
                    job: job_id,
                });
                if job.members.is_empty() {
                    self.jobs.remove(&job_id);
                    self.events.push(GroupingEvent {
                        time: now,
                        kind: GroupingEventKind::Termination,
                        camera: None,
                        job: job_id,
                    });
                }

                req.t = req.t.max(now);
                req.loc = locate(cam);
                req.acc = cur;
                req.acc_history.clear();
                self.group_request_excluding(req.clone(), cfg, oracle, Some(job_id));
                reprocessed.push(req);
            }
        }
        reprocessed
    }
}
