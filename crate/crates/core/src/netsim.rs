//! Flow-level GAIMD simulation over one shared bottleneck plus per-camera
//! local links.
//!
//! Time advances in RTT steps. Each flow keeps a congestion window expressed as
//! a rate at the base RTT. Queueing at the shared link stretches the RTT, so the
//! rate a flow actually sends is its window scaled by `rtt / (rtt + q / C)` and
//! then clamped to its local link. The shared link has a drop-tail buffer of
//! `buffer_bdp` bandwidth-delay products. When the aggregate send rate reaches
//! capacity and the buffer is full, every flow cuts its window by its own
//! `beta` in the same step (synchronized loss). Otherwise windows grow by
//! `alpha`, except flows pinned at their local cap while the shared link is
//! idle-queued and below capacity, which hold still.
//!
//! With `buffer_bdp = 0` the queue never forms and this is the plain
//! synchronized-loss sawtooth where the aggregate swings between `beta * C` and
//! `C`. With one BDP of buffer and `beta = 0.5` the queue drains just as the
//! halved windows fit the pipe, so the link stays close to fully used.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::accuracy::CameraId;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub flow: CameraId,
    /// Rate increase per RTT, bits/sec.
    pub aimd_alpha: f64,
    pub aimd_beta: f64,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.aimd_alpha > 0.0) || !(self.aimd_beta > 0.0 && self.aimd_beta < 1.0) {
            return Err(SimError::invalid(format!(
                "flow {}: need alpha > 0 and 0 < beta < 1",
                self.flow
            )));
        }
        Ok(())
    }

    /// Steady-state weight `alpha / (1 - beta)`.
    pub fn weight(&self) -> f64 {
        self.aimd_alpha / (1.0 - self.aimd_beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// bits/sec
    pub shared_capacity: f64,
    #[serde(default)]
    pub local_caps: BTreeMap<CameraId, f64>,
    /// seconds
    pub rtt: f64,
    /// Bottleneck buffer in multiples of `shared_capacity * rtt`.
    #[serde(default = "default_buffer_bdp")]
    pub buffer_bdp: f64,
}

fn default_buffer_bdp() -> f64 {
    1.0
}

impl Topology {
    pub fn new(shared_capacity: f64, rtt: f64) -> Self {
        Self {
            shared_capacity,
            local_caps: BTreeMap::new(),
            rtt,
            buffer_bdp: default_buffer_bdp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shared_capacity > 0.0 && self.rtt > 0.0) {
            return Err(SimError::invalid("shared capacity and rtt must be positive"));
        }
        if !(self.buffer_bdp >= 0.0) {
            return Err(SimError::invalid("buffer_bdp must be non-negative"));
        }
        if let Some((id, _)) = self.local_caps.iter().find(|(_, c)| !(**c > 0.0)) {
            return Err(SimError::invalid(format!("local cap of flow {id} must be positive")));
        }
        Ok(())
    }

    pub fn cap(&self, flow: CameraId) -> f64 {
        self.local_caps.get(&flow).copied().unwrap_or(f64::INFINITY)
    }

    fn buffer_bits(&self) -> f64 {
        self.buffer_bdp * self.shared_capacity * self.rtt
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetState {
    /// Congestion window per flow, as a rate in bits/sec.
    pub windows: BTreeMap<CameraId, f64>,
    /// Bits queued at the shared bottleneck.
    pub queue: f64,
}

impl NetState {
    /// Sending rate of `flow` after queueing delay and the local-link clamp.
    pub fn rate(&self, flow: CameraId, topo: &Topology) -> f64 {
        let w = self.windows.get(&flow).copied().unwrap_or(0.0);
        (w * self.rtt_scale(topo)).min(topo.cap(flow))
    }

    fn rtt_scale(&self, topo: &Topology) -> f64 {
        let bdp = topo.shared_capacity * topo.rtt;
        if self.queue > 0.0 {
            bdp / (bdp + self.queue)
        } else {
            1.0
        }
    }
}

/// Advance every flow by one RTT.
pub fn step(state: &NetState, flows: &[FlowParams], topo: &Topology) -> NetState {
    if flows.is_empty() {
        return state.clone();
    }
    let rates: Vec<f64> = flows.iter().map(|f| state.rate(f.flow, topo)).collect();
    let total: f64 = rates.iter().sum();
    let capacity = topo.shared_capacity;
    let buffer = topo.buffer_bits();

    let mut queue = (state.queue + (total - capacity) * topo.rtt).max(0.0);
    let congested = total >= capacity && queue >= buffer;
    let saturated = total > capacity || state.queue > 0.0;

    let mut next = NetState {
        windows: state.windows.clone(),
        queue: 0.0,
    };
    for (f, rate) in flows.iter().zip(&rates) {
        let w = next.windows.entry(f.flow).or_insert(0.0);
        if congested {
            *w *= f.aimd_beta;
        } else if *rate >= topo.cap(f.flow) && !saturated {
            // pinned by its own link
        } else {
            *w += f.aimd_alpha;
        }
    }
    if congested {
        queue = queue.min(buffer);
    }
    next.queue = queue;
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSample {
    pub time: f64,
    pub flow: CameraId,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    pub samples: Vec<RateSample>,
    /// Time-mean rate per flow over the second half of the window.
    pub mean_rates: BTreeMap<CameraId, f64>,
    /// Set when the window was too short (< 100 RTTs) to trust the means.
    pub short_window: bool,
}

impl FlowTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "flow_id", "rate_bps"])?;
        for s in &self.samples {
            w.write_record([s.time.to_string(), s.flow.to_string(), s.rate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run(flows: &[FlowParams], topo: &Topology, duration: f64, record: bool) -> Result<FlowTrace> {
    topo.validate()?;
    for f in flows {
        f.validate()?;
    }
    let steps = (duration / topo.rtt).floor() as usize;
    let short_window = steps < 100;
    if short_window {
        warn!("window of {duration}s is shorter than 100 RTTs; rate means are unreliable");
    }
    let measure_from = steps / 2;

    let mut state = NetState::default();
    let mut sums: BTreeMap<CameraId, f64> = flows.iter().map(|f| (f.flow, 0.0)).collect();
    let mut samples = Vec::new();
    for i in 0..steps {
        state = step(&state, flows, topo);
        let t = (i + 1) as f64 * topo.rtt;
        for f in flows {
            let r = state.rate(f.flow, topo);
            if record {
                samples.push(RateSample {
                    time: t,
                    flow: f.flow,
                    rate: r,
                });
            }
            if i >= measure_from {
                *sums.get_mut(&f.flow).expect("flow registered") += r;
            }
        }
    }
    let measured = (steps - measure_from).max(1) as f64;
    Ok(FlowTrace {
        samples,
        mean_rates: sums.into_iter().map(|(id, s)| (id, s / measured)).collect(),
        short_window,
    })
}

/// Simulate one window from idle and record every step.
pub fn simulate_window(flows: &[FlowParams], topo: &Topology, duration: f64) -> Result<FlowTrace> {
    run(flows, topo, duration, true)
}

/// Like [`simulate_window`] but keeps only the mean rates.
pub fn simulate_means(flows: &[FlowParams], topo: &Topology, duration: f64) -> Result<FlowTrace> {
    run(flows, topo, duration, false)
}

/// Weighted water-filling: capped flows get their caps, the rest split the
/// remaining shared capacity in proportion to `alpha / (1 - beta)`.
pub fn analytic_steady_state(flows: &[FlowParams], topo: &Topology) -> BTreeMap<CameraId, f64> {
    let mut out = BTreeMap::new();
    let mut open: Vec<&FlowParams> = flows.iter().collect();
    let mut residual = topo.shared_capacity;
    loop {
        let total_w: f64 = open.iter().map(|f| f.weight()).sum();
        if open.is_empty() || total_w <= 0.0 {
            break;
        }
        let (capped, free): (Vec<&FlowParams>, Vec<&FlowParams>) = open
            .iter()
            .partition(|f| topo.cap(f.flow) <= residual * f.weight() / total_w);
        if capped.is_empty() {
            for f in free {
                out.insert(f.flow, residual * f.weight() / total_w);
            }
            break;
        }
        for f in capped {
            let c = topo.cap(f.flow);
            out.insert(f.flow, c);
            residual -= c;
        }
        residual = residual.max(0.0);
        open = free;
    }
    out
}
