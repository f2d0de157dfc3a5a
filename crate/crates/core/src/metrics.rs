//! Metrics trace, its CSV/JSON serialization, and response-time analysis.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::accuracy::CameraId;
use crate::allocator::JobId;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySample {
    pub window: usize,
    pub window_end: f64,
    pub camera: CameraId,
    pub job: Option<JobId>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobWindowRecord {
    pub window: usize,
    pub job: JobId,
    pub members: usize,
    pub micro_windows: usize,
    pub p_j: f64,
    pub c_j: f64,
    /// Sum of the members' mean delivered rates, bits/sec.
    pub mean_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Drift,
    Request,
    Join,
    NewJob,
    Removal,
    Termination,
    Shares,
    MicroWindow,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Drift => "drift",
            EventKind::Request => "request",
            EventKind::Join => "join",
            EventKind::NewJob => "new_job",
            EventKind::Removal => "removal",
            EventKind::Termination => "termination",
            EventKind::Shares => "shares",
            EventKind::MicroWindow => "micro_window",
        }
    }

    pub fn is_grouping(self) -> bool {
        matches!(
            self,
            EventKind::Join | EventKind::NewJob | EventKind::Removal | EventKind::Termination
        )
    }
}

/// One line of the ordered event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub window: usize,
    pub time: f64,
    pub kind: EventKind,
    pub camera: Option<CameraId>,
    pub job: Option<JobId>,
    /// Kind-specific payload: accuracy for requests, `p_j` for shares,
    /// accuracy after training for micro-windows.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestRecord {
    pub camera: CameraId,
    pub time: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub window_seconds: f64,
    pub accuracy: Vec<AccuracySample>,
    pub jobs: Vec<JobWindowRecord>,
    pub events: Vec<EventRecord>,
    pub requests: Vec<RequestRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "seconds")]
pub enum ResponseTime {
    Attained(f64),
    Unattained,
}

impl MetricsTrace {
    pub fn windows(&self) -> usize {
        self.accuracy.iter().map(|s| s.window + 1).max().unwrap_or(0)
    }

    /// Mean camera accuracy per window.
    pub fn mean_accuracy(&self) -> Vec<f64> {
        let mut sums = vec![(0.0, 0usize); self.windows()];
        for s in &self.accuracy {
            sums[s.window].0 += s.accuracy;
            sums[s.window].1 += 1;
        }
        sums.into_iter()
            .map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect()
    }

    pub fn final_mean_accuracy(&self) -> f64 {
        self.mean_accuracy().last().copied().unwrap_or(0.0)
    }

    pub fn camera_accuracy(&self, camera: CameraId) -> Vec<f64> {
        self.accuracy
            .iter()
            .filter(|s| s.camera == camera)
            .map(|s| s.accuracy)
            .collect()
    }

    pub fn final_accuracy(&self) -> BTreeMap<CameraId, f64> {
        let last = self.windows().saturating_sub(1);
        self.accuracy
            .iter()
            .filter(|s| s.window == last)
            .map(|s| (s.camera, s.accuracy))
            .collect()
    }

    pub fn first_request(&self, camera: CameraId) -> Option<RequestRecord> {
        self.requests.iter().find(|r| r.camera == camera).copied()
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "window",
            "window_end_s",
            "camera_id",
            "job_id",
            "accuracy",
            "request_time_s",
            "request_acc",
        ])?;
        for s in &self.accuracy {
            let req = self
                .first_request(s.camera)
                .filter(|r| r.time <= s.window_end);
            w.write_record([
                s.window.to_string(),
                s.window_end.to_string(),
                s.camera.to_string(),
                opt(s.job),
                s.accuracy.to_string(),
                opt(req.map(|r| r.time)),
                opt(req.map(|r| r.acc)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jobs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "window",
            "job_id",
            "n_members",
            "micro_windows",
            "p_j",
            "c_j_gpu_s",
            "mean_rate_bps",
        ])?;
        for j in &self.jobs {
            w.write_record([
                j.window.to_string(),
                j.job.to_string(),
                j.members.to_string(),
                j.micro_windows.to_string(),
                j.p_j.to_string(),
                j.c_j.to_string(),
                j.mean_rate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seq", "window", "time_s", "kind", "camera_id", "job_id", "value"])?;
        for (i, e) in self.events.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.window.to_string(),
                e.time.to_string(),
                e.kind.name().to_string(),
                opt(e.camera),
                opt(e.job),
                opt(e.value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild the accuracy samples and request records from a `trace.csv`.
    pub fn read_trace_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut trace = MetricsTrace::default();
        let mut seen = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |col: &str| SimError::invalid(format!("trace row {}: bad `{col}`", line + 1));
            let get = |i: usize| rec.get(i).unwrap_or("").trim();
            let num = |i: usize, col: &str| get(i).parse::<f64>().map_err(|_| bad(col));
            let window: usize = get(0).parse().map_err(|_| bad("window"))?;
            let window_end = num(1, "window_end_s")?;
            let camera = CameraId(get(2).parse().map_err(|_| bad("camera_id"))?);
            let job = match get(3) {
                "" => None,
                s => Some(JobId(s.parse().map_err(|_| bad("job_id"))?)),
            };
            let accuracy = num(4, "accuracy")?;
            if !get(5).is_empty() && !seen.contains_key(&camera) {
                let r = RequestRecord {
                    camera,
                    time: num(5, "request_time_s")?,
                    acc: num(6, "request_acc")?,
                };
                seen.insert(camera, r);
                trace.requests.push(r);
            }
            if window == 0 && trace.window_seconds == 0.0 {
                trace.window_seconds = window_end;
            }
            trace.accuracy.push(AccuracySample {
                window,
                window_end,
                camera,
                job,
                accuracy,
            });
        }
        Ok(trace)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Time from each camera's first retraining request to the first window end
/// at which its accuracy reaches `target_acc`.
pub fn response_time(trace: &MetricsTrace, target_acc: f64) -> BTreeMap<CameraId, ResponseTime> {
    let mut out = BTreeMap::new();
    for req in &trace.requests {
        if out.contains_key(&req.camera) {
            continue;
        }
        if req.acc >= target_acc {
            out.insert(req.camera, ResponseTime::Attained(0.0));
            continue;
        }
        let hit = trace
            .accuracy
            .iter()
            .filter(|s| s.camera == req.camera && s.window_end >= req.time)
            .find(|s| s.accuracy >= target_acc);
        out.insert(
            req.camera,
            match hit {
                Some(s) => ResponseTime::Attained(s.window_end - req.time),
                None => ResponseTime::Unattained,
            },
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub policy: String,
    pub windows: usize,
    pub cameras: usize,
    pub mean_accuracy_per_window: Vec<f64>,
    pub final_mean_accuracy: f64,
    pub final_min_accuracy: f64,
    pub time_avg_accuracy: f64,
    pub target_acc: Option<f64>,
    pub response_times: BTreeMap<CameraId, ResponseTime>,
    pub mean_response_time_s: Option<f64>,
    pub unattained: usize,
}

impl Summary {
    pub fn new(scenario: &str, policy: &str, trace: &MetricsTrace, target_acc: Option<f64>) -> Self {
        let per_window = trace.mean_accuracy();
        let finals = trace.final_accuracy();
        let response_times = target_acc
            .map(|t| response_time(trace, t))
            .unwrap_or_default();
        let attained: Vec<f64> = response_times
            .values()
            .filter_map(|r| match r {
                ResponseTime::Attained(s) => Some(*s),
                ResponseTime::Unattained => None,
            })
            .collect();
        Self {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            windows: per_window.len(),
            cameras: finals.len(),
            final_mean_accuracy: per_window.last().copied().unwrap_or(0.0),
            final_min_accuracy: finals.values().cloned().fold(f64::INFINITY, f64::min).min(1.0),
            time_avg_accuracy: if per_window.is_empty() {
                0.0
            } else {
                per_window.iter().sum::<f64>() / per_window.len() as f64
            },
            mean_accuracy_per_window: per_window,
            target_acc,
            mean_response_time_s: (!attained.is_empty())
                .then(|| attained.iter().sum::<f64>() / attained.len() as f64),
            unattained: response_times.len() - attained.len(),
            response_times,
        }
    }
}

/// Write `trace.csv`, `jobs.csv`, `events.csv` and `summary.json` into `dir`.
pub fn write_metrics(trace: &MetricsTrace, summary: &Summary, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    trace.write_trace_csv(BufWriter::new(File::create(dir.join("trace.csv"))?))?;
    trace.write_jobs_csv(BufWriter::new(File::create(dir.join("jobs.csv"))?))?;
    trace.write_events_csv(BufWriter::new(File::create(dir.join("events.csv"))?))?;
    let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, summary).map_err(|e| SimError::invalid(e.to_string()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
