//! Sequence-length scaling of temporal layers: peak activation bytes (from
//! the tensor arena) and median wall time of one forward pass, plus log-log
//! exponent fits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::memory::ArenaScope;
use crate::params::ParamStore;
use crate::rng::{gaussian_sample, Rng};
use crate::ssm::{Direction, MambaParams, SsmConfig};
use crate::tensor::Tensor;
use crate::unet::TemporalKind;

pub const CSV_HEADER: &str = "layer,L,groups,channels,peak_bytes,wall_ns";
/// Written in both measurement columns of a row whose run hit the budget.
pub const CAPACITY_MARKER: &str = "capacity";
/// The standard grid of sequence lengths.
pub const STANDARD_GRID: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    Measured { peak_bytes: u64, wall_ns: u64 },
    CapacityExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRecord {
    pub layer: TemporalKind,
    pub seq_len: usize,
    pub groups: usize,
    pub channels: usize,
    pub measurement: Measurement,
}

impl BenchRecord {
    pub fn peak_bytes(&self) -> Option<u64> {
        match self.measurement {
            Measurement::Measured { peak_bytes, .. } => Some(peak_bytes),
            Measurement::CapacityExceeded => None,
        }
    }

    pub fn wall_ns(&self) -> Option<u64> {
        match self.measurement {
            Measurement::Measured { wall_ns, .. } => Some(wall_ns),
            Measurement::CapacityExceeded => None,
        }
    }
}

enum Layer {
    Attention(AttentionParams),
    Ssm(MambaParams),
}

impl Layer {
    fn build(kind: TemporalKind, store: &mut ParamStore<f32>, channels: usize) -> Result<Self> {
        let rng = Rng::new(0);
        Ok(match kind {
            TemporalKind::Attention => {
                Layer::Attention(AttentionParams::new(store, &rng, "attn", channels, AttentionConfig::from_base_channels(channels)?)?)
            }
            TemporalKind::SsmBidirectional => Layer::Ssm(MambaParams::bidirectional(store, &rng, "ssm", channels, SsmConfig::default())?),
            TemporalKind::SsmUnidirectional => {
                Layer::Ssm(MambaParams::new(store, &rng, "ssm", channels, SsmConfig::default(), &[Direction::Forward])?)
            }
            TemporalKind::None => return Err(Error::config("there is no temporal layer to benchmark for kind `none`")),
        })
    }

    fn forward(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        match self {
            Layer::Attention(p) => p.temporal_forward(g, x),
            Layer::Ssm(p) => p.forward(g, x),
        }
    }
}

/// One recorded forward pass; the tape (and every activation it keeps for
/// the backward pass) is alive when this returns.
fn run_once(layer: &Layer, store: &ParamStore<f32>, x: &Tensor<f32>) -> Result<Graph<f32>> {
    let mut g = Graph::new();
    g.bind_params(store, true)?;
    let xv = g.input(x.clone())?;
    layer.forward(&mut g, xv)?;
    Ok(g)
}

/// Peak bytes of one training-mode forward pass, or the capacity error when
/// `budget` is exceeded. Parameters and the input exist before the arena
/// opens and are not counted.
fn peak_of(layer: &Layer, store: &ParamStore<f32>, x: &Tensor<f32>, budget: Option<usize>, seq_len: usize) -> Result<u64> {
    let scope = ArenaScope::open(budget);
    let run = run_once(layer, store, x);
    let peak = scope.peak_bytes() as u64;
    if let (true, Some(b)) = (scope.exceeded(), budget) {
        return Err(Error::Capacity { seq_len, budget: b });
    }
    drop(run?);
    Ok(peak)
}

/// Measures `kind` on `[groups, seq_len, channels]` inputs with a
/// single-threaded pool: one warm-up pass that also records peak activation
/// bytes, then the median wall time of `reps` forward passes.
pub fn measure_layer(kind: TemporalKind, seq_len: usize, groups: usize, channels: usize, reps: usize) -> Result<BenchRecord> {
    measure_layer_with_budget(kind, seq_len, groups, channels, reps, None)
}

/// As [`measure_layer`], failing with [`Error::Capacity`] once live
/// activation bytes exceed `budget`.
pub fn measure_layer_with_budget(
    kind: TemporalKind,
    seq_len: usize,
    groups: usize,
    channels: usize,
    reps: usize,
    budget: Option<usize>,
) -> Result<BenchRecord> {
    if reps == 0 || seq_len == 0 || groups == 0 || channels == 0 {
        return Err(Error::config("bench extents and repetitions must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::config(format!("cannot build the timing thread pool: {e}")))?;
    pool.install(|| {
        let mut store = ParamStore::new();
        let layer = Layer::build(kind, &mut store, channels)?;
        let x: Tensor<f32> = gaussian_sample(&mut Rng::new(1), &[groups, seq_len, channels])?;
        let peak_bytes = peak_of(&layer, &store, &x, budget, seq_len)?;
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let g = run_once(&layer, &store, &x)?;
            times.push(start.elapsed().as_nanos().max(1) as u64);
            drop(g);
        }
        times.sort_unstable();
        let wall_ns = times[times.len() / 2];
        Ok(BenchRecord { layer: kind, seq_len, groups, channels, measurement: Measurement::Measured { peak_bytes, wall_ns } })
    })
}

/// Like [`measure_layer_with_budget`] but turns a capacity error into a
/// failure row.
pub fn measure_or_mark(kind: TemporalKind, seq_len: usize, groups: usize, channels: usize, reps: usize, budget: Option<usize>) -> Result<BenchRecord> {
    match measure_layer_with_budget(kind, seq_len, groups, channels, reps, budget) {
        Err(Error::Capacity { .. }) => {
            Ok(BenchRecord { layer: kind, seq_len, groups, channels, measurement: Measurement::CapacityExceeded })
        }
        other => other,
    }
}

/// Least-squares slope of `ln(peak bytes)` against `ln(L)` over the measured
/// records; needs at least 4 distinct lengths of a single layer kind.
pub fn fit_scaling_exponent(records: &[BenchRecord]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.peak_bytes().map(|b| ((r.seq_len as f64).ln(), (b as f64).ln())))
        .collect();
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.layer != first.layer) {
            return Err(Error::Data("scaling fit mixes layer kinds".into()));
        }
    }
    let mut lens: Vec<usize> = records.iter().filter(|r| r.peak_bytes().is_some()).map(|r| r.seq_len).collect();
    lens.sort_unstable();
    lens.dedup();
    if lens.len() < 4 {
        return Err(Error::Data(format!("scaling fit needs at least 4 distinct measured lengths, got {}", lens.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in records {
        let (peak, wall) = match r.measurement {
            Measurement::Measured { peak_bytes, wall_ns } => (peak_bytes.to_string(), wall_ns.to_string()),
            Measurement::CapacityExceeded => (CAPACITY_MARKER.to_string(), CAPACITY_MARKER.to_string()),
        };
        let _ = writeln!(out, "{},{},{},{},{peak},{wall}", r.layer, r.seq_len, r.groups, r.channels);
    }
    out
}

pub fn write_bench_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    fs::write(path, bench_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Malformed { what: "bench csv", detail: format!("header must be `{CSV_HEADER}`") });
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Malformed { what: "bench csv", detail: format!("bad row `{line}`") };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let measurement = if f[4] == CAPACITY_MARKER && f[5] == CAPACITY_MARKER {
                Measurement::CapacityExceeded
            } else {
                Measurement::Measured { peak_bytes: f[4].parse().map_err(|_| bad())?, wall_ns: f[5].parse().map_err(|_| bad())? }
            };
            Ok(BenchRecord { layer: f[0].parse().map_err(|_| bad())?, seq_len: num(f[1])?, groups: num(f[2])?, channels: num(f[3])?, measurement })
        })
        .collect()
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    parse_bench_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
