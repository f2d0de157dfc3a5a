//! Camera-side transmission control: sampling configuration from the GPU
//! budget, GAIMD parameters from the GPU share, and compression that fits the
//! configuration into whatever bandwidth the network delivers.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::accuracy::{
    pixels, AccuracyModel, CameraId, CameraKind, CameraState, ModelState, TrainingBatchStats,
};
use crate::error::{Result, SimError};
use crate::netsim::FlowParams;

pub const GAIMD_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub fps: f64,
    /// Vertical resolution in pixels.
    pub resolution: f64,
}

impl SamplingConfig {
    pub fn pixel_rate(&self, aspect: f64) -> f64 {
        self.fps * pixels(self.resolution, aspect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransmissionConfig {
    /// GAIMD additive increase for a full share, bits/sec per RTT.
    pub alpha_unit: f64,
    /// Bits per pixel at which compression stops hurting training.
    pub bpp_ref: f64,
    pub resolutions: Vec<f64>,
    pub frame_rates: Vec<f64>,
    /// Bitrate used while profiling, bits/sec.
    pub reference_bitrate: f64,
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        Self {
            alpha_unit: 0.5e6,
            bpp_ref: 0.1,
            resolutions: vec![360.0, 480.0, 720.0, 960.0],
            frame_rates: vec![1.0, 2.0, 5.0, 10.0, 15.0],
            reference_bitrate: 1e6,
        }
    }
}

impl TransmissionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_unit > 0.0 && self.bpp_ref > 0.0 && self.reference_bitrate > 0.0) {
            return Err(SimError::invalid("alpha_unit, bpp_ref and reference_bitrate must be positive"));
        }
        if self.resolutions.is_empty() || self.frame_rates.is_empty() {
            return Err(SimError::invalid("sampling grid must be non-empty"));
        }
        if self.resolutions.iter().chain(&self.frame_rates).any(|v| !(*v > 0.0)) {
            return Err(SimError::invalid("frame rates and resolutions must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<SamplingConfig> {
        let mut out = Vec::new();
        for &resolution in &self.resolutions {
            for &fps in &self.frame_rates {
                out.push(SamplingConfig { fps, resolution });
            }
        }
        out
    }

    pub fn max_fps(&self) -> f64 {
        self.frame_rates.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_resolution(&self) -> f64 {
        self.resolutions.iter().cloned().fold(0.0, f64::max)
    }
}

/// Pixels per second a GPU budget can absorb over one window.
pub fn pixel_budget(camera: &CameraState, budget_gpu_s: f64, window_seconds: f64) -> f64 {
    camera.gpu_pixel_throughput * budget_gpu_s / window_seconds
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub budget_gpu_s: f64,
    pub config: SamplingConfig,
    /// No configuration fit this budget; `config` is the grid minimum.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub camera: CameraId,
    /// Sorted by budget.
    pub rows: Vec<ProfileRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    HigherResolution,
    HigherFrameRate,
}

impl TieBreak {
    pub fn for_kind(kind: CameraKind) -> Self {
        match kind {
            CameraKind::Mobile => TieBreak::HigherFrameRate,
            _ => TieBreak::HigherResolution,
        }
    }

    /// True when `a` should win a tie against `b`.
    fn prefers(self, a: &SamplingConfig, b: &SamplingConfig) -> bool {
        let key = |c: &SamplingConfig| match self {
            TieBreak::HigherResolution => (c.resolution, c.fps),
            TieBreak::HigherFrameRate => (c.fps, c.resolution),
        };
        key(a) > key(b)
    }
}

/// Profile every feasible grid configuration at every budget level and keep
/// the most accurate one.
pub fn build_profile_table(
    camera: &CameraState,
    budget_levels: &[f64],
    grid: &[SamplingConfig],
    window_seconds: f64,
    aspect: f64,
    tie: TieBreak,
    mut probe: impl FnMut(&SamplingConfig, f64) -> f64,
) -> Result<ProfileTable> {
    if grid.is_empty() {
        return Err(SimError::invalid("sampling grid is empty"));
    }
    let minimal = *grid
        .iter()
        .min_by(|a, b| {
            a.pixel_rate(aspect)
                .total_cmp(&b.pixel_rate(aspect))
                .then(a.fps.total_cmp(&b.fps))
        })
        .expect("non-empty grid");
    let mut levels = budget_levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let mut rows = Vec::with_capacity(levels.len());
    for budget in levels {
        let limit = pixel_budget(camera, budget, window_seconds);
        let mut best: Option<(SamplingConfig, f64)> = None;
        for cfg in grid.iter().filter(|c| c.pixel_rate(aspect) <= limit) {
            let acc = probe(cfg, budget);
            let better = match best {
                None => true,
                Some((b, b_acc)) => acc > b_acc || (acc == b_acc && tie.prefers(cfg, &b)),
            };
            if better {
                best = Some((*cfg, acc));
            }
        }
        rows.push(match best {
            Some((config, _)) => ProfileRow {
                budget_gpu_s: budget,
                config,
                flagged: false,
            },
            None => ProfileRow {
                budget_gpu_s: budget,
                config: minimal,
                flagged: true,
            },
        });
    }
    Ok(ProfileTable {
        camera: camera.id,
        rows,
    })
}

/// Accuracy a fresh model reaches on `camera` after training with `budget`
/// GPU-seconds on data sampled at `cfg` and sent at the reference bitrate.
pub fn reference_probe(
    model: &AccuracyModel,
    camera: &CameraState,
    tx: &TransmissionConfig,
    window_seconds: f64,
    cfg: &SamplingConfig,
    budget: f64,
) -> f64 {
    let aspect = model.params.aspect;
    let mut model = model.clone();
    model.register(&camera.scene);
    let quality = adapt_compression(tx.reference_bitrate, cfg, tx.bpp_ref, aspect).quality_factor;
    let batch = TrainingBatchStats {
        delivered_frame_rate: cfg.fps * window_seconds / budget.max(f64::MIN_POSITIVE),
        resolution: cfg.resolution,
        quality_factor: quality,
        sampling_utility: camera.kind.sampling_utility(
            cfg.fps,
            cfg.resolution,
            tx.max_fps(),
            tx.max_resolution(),
        ),
        source_mix: [(camera.id, 1.0)].into(),
    };
    let start = ModelState::untrained(camera.scene.dim());
    match model.train_step(&start, &batch, budget, std::slice::from_ref(camera)) {
        Ok(trained) => model.eval(&trained, camera),
        Err(_) => model.params.floor,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub config: SamplingConfig,
    /// The budget was below every table level.
    pub below_table: bool,
}

/// Row at the largest budget level not exceeding `c_j`, with the frame rate
/// split across the group's `n_j` cameras.
pub fn select_config(table: &ProfileTable, c_j: f64, n_j: usize) -> Result<Selection> {
    if n_j == 0 {
        return Err(SimError::invalid("group size must be at least 1"));
    }
    if table.rows.is_empty() {
        return Err(SimError::invalid(format!("profile table for camera {} is empty", table.camera)));
    }
    let (row, below_table) = match table.rows.iter().rev().find(|r| r.budget_gpu_s <= c_j) {
        Some(r) => (r, false),
        None => (&table.rows[0], true),
    };
    Ok(Selection {
        config: SamplingConfig {
            fps: row.config.fps / n_j as f64,
            resolution: row.config.resolution,
        },
        below_table,
    })
}

/// GAIMD parameters for one camera of a group with share `p_j` and `n_j` members.
pub fn set_aimd_params(camera: CameraId, p_j: f64, n_j: usize, alpha_unit: f64) -> Result<FlowParams> {
    if !(p_j > 0.0 && p_j <= 1.0) {
        return Err(SimError::invalid(format!("GPU share {p_j} outside (0, 1]")));
    }
    if n_j == 0 {
        return Err(SimError::invalid("group size must be at least 1"));
    }
    Ok(FlowParams {
        flow: camera,
        aimd_alpha: p_j / n_j as f64 * alpha_unit,
        aimd_beta: GAIMD_BETA,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionState {
    pub target_rate: f64,
    pub bits_per_pixel: f64,
    pub quality_factor: f64,
}

/// Compression level that fits `cfg` into `achieved_rate`; frame rate and
/// resolution are left as they are.
pub fn adapt_compression(achieved_rate: f64, cfg: &SamplingConfig, bpp_ref: f64, aspect: f64) -> CompressionState {
    let pixel_rate = cfg.pixel_rate(aspect);
    let bits_per_pixel = if pixel_rate > 0.0 {
        achieved_rate.max(0.0) / pixel_rate
    } else {
        0.0
    };
    let reference_rate = bpp_ref * pixel_rate;
    let quality_factor = if reference_rate > 0.0 {
        (achieved_rate.max(0.0) / reference_rate).clamp(0.0, 1.0)
    } else {
        1.0
    };
    CompressionState {
        target_rate: achieved_rate.max(0.0),
        bits_per_pixel,
        quality_factor,
    }
}

impl ProfileTable {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# camera: {}", self.camera)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget_gpu_s", "fps", "resolution"])?;
        for r in &self.rows {
            w.write_record([
                r.budget_gpu_s.to_string(),
                r.config.fps.to_string(),
                r.config.resolution.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let camera = first
            .trim()
            .strip_prefix("# camera:")
            .and_then(|s| s.trim().parse::<u32>().ok())
            .map(CameraId)
            .ok_or_else(|| SimError::invalid("profile table must start with `# camera: <id>`"))?;
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| SimError::invalid(format!("bad profile row {:?}", rec)))
            };
            rows.push(ProfileRow {
                budget_gpu_s: field(0)?,
                config: SamplingConfig {
                    fps: field(1)?,
                    resolution: field(2)?,
                },
                flagged: false,
            });
        }
        rows.sort_by(|a, b| a.budget_gpu_s.total_cmp(&b.budget_gpu_s));
        Ok(Self { camera, rows })
    }
}

/// Profile tables for a set of cameras, keyed by camera.
pub type ProfileBook = BTreeMap<CameraId, ProfileTable>;
