//! Benchmark plans, measured-throughput ingestion, and sweep exports.
//!
//! Wire formats (UTF-8 CSV, header row required, column order normative):
//!
//! * plan: `gpu,dtype,batch,m,k,n`
//! * measurements: `gpu,dtype,batch,m,k,n,tflops,repeats`
//! * sweep export: `<x_name>,role,predicted_tflops,predicted_latency_us,wave_efficiency,aligned`

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::GemmShape;
use crate::hardware::{DType, GpuSpec};
use crate::transformer::{decompose, GemmRole, TransformerConfig};

pub const PLAN_HEADER: [&str; 6] = ["gpu", "dtype", "batch", "m", "k", "n"];
pub const MEASUREMENT_HEADER: [&str; 8] = ["gpu", "dtype", "batch", "m", "k", "n", "tflops", "repeats"];
const SWEEP_COLUMNS: [&str; 5] = [
    "role",
    "predicted_tflops",
    "predicted_latency_us",
    "wave_efficiency",
    "aligned",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShapeKey {
    pub gpu: String,
    pub dtype: DType,
    pub batch: u64,
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

impl ShapeKey {
    pub fn for_gemm(gpu: &str, g: &GemmShape) -> Self {
        ShapeKey {
            gpu: gpu.to_string(),
            dtype: g.dtype,
            batch: g.batch,
            m: g.m,
            k: g.k,
            n: g.n,
        }
    }

    fn log_distance(&self, other: &ShapeKey) -> f64 {
        [
            (self.batch, other.batch),
            (self.m, other.m),
            (self.k, other.k),
            (self.n, other.n),
        ]
        .iter()
        .map(|&(x, y)| ((x as f64).ln() - (y as f64).ln()).abs())
        .sum()
    }
}

/// One row of a benchmark plan: a GEMM shape to time on `gpu`.
pub type PlanRow = ShapeKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub key: ShapeKey,
    pub measured_tflops: f64,
    pub repeats: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    ExactOnly,
    /// Fall back to the stored shape closest in `Σ |ln x - ln y|` over
    /// `(batch, m, k, n)`, restricted to the same GPU and dtype.
    #[default]
    NearestLogShape,
}

/// Measured GEMM throughputs keyed by `(gpu, dtype, batch, m, k, n)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationTable {
    records: BTreeMap<ShapeKey, MeasurementRecord>,
    pub policy: Interpolation,
}

impl CalibrationTable {
    pub fn new(policy: Interpolation) -> Self {
        CalibrationTable {
            records: BTreeMap::new(),
            policy,
        }
    }

    /// Inserts `record`; an existing entry with more repeats is kept.
    pub fn insert(&mut self, record: MeasurementRecord) {
        match self.records.get(&record.key) {
            Some(old) if old.repeats > record.repeats => {}
            _ => {
                self.records.insert(record.key.clone(), record);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &MeasurementRecord> {
        self.records.values()
    }

    pub fn get(&self, key: &ShapeKey) -> Option<&MeasurementRecord> {
        self.records.get(key)
    }

    /// Measured TFLOP/s for `g` on the GPU named `gpu`, per the table policy.
    pub fn lookup(&self, gpu: &str, g: &GemmShape) -> Option<f64> {
        let key = ShapeKey::for_gemm(gpu, g);
        if let Some(r) = self.records.get(&key) {
            return Some(r.measured_tflops);
        }
        if self.policy == Interpolation::ExactOnly {
            return None;
        }
        let mut best: Option<(f64, &MeasurementRecord)> = None;
        for r in self.records.values() {
            if r.key.gpu != key.gpu || r.key.dtype != key.dtype {
                continue;
            }
            let d = key.log_distance(&r.key);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        best.map(|(_, r)| r.measured_tflops)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDim {
    A,
    B,
    H,
    S,
    V,
    DFf,
}

impl SweepDim {
    pub fn name(self) -> &'static str {
        match self {
            SweepDim::A => "a",
            SweepDim::B => "b",
            SweepDim::H => "h",
            SweepDim::S => "s",
            SweepDim::V => "v",
            SweepDim::DFf => "d_ff",
        }
    }
}

impl std::str::FromStr for SweepDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(SweepDim::A),
            "b" => Ok(SweepDim::B),
            "h" => Ok(SweepDim::H),
            "s" => Ok(SweepDim::S),
            "v" => Ok(SweepDim::V),
            "d_ff" | "dff" | "d-ff" => Ok(SweepDim::DFf),
            other => Err(Error::Parse {
                what: "sweep dimension".into(),
                message: format!("unknown dimension `{other}` (expected a, b, h, s, v or d_ff)"),
            }),
        }
    }
}

/// A one-dimensional sweep of `dimension` over `start..=end` in `step`s,
/// applied to `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: TransformerConfig,
    pub dimension: SweepDim,
    pub start: u64,
    pub end: u64,
    pub step: u64,
    /// Keep `h/a` at this value by deriving `a` from `h` at every point.
    pub fixed_head_dim: Option<u64>,
    /// Roles to include; `None` means every role.
    pub roles: Option<Vec<GemmRole>>,
}

impl SweepSpec {
    pub fn new(base: TransformerConfig, dimension: SweepDim, start: u64, end: u64, step: u64) -> Self {
        SweepSpec {
            base,
            dimension,
            start,
            end,
            step,
            fixed_head_dim: None,
            roles: None,
        }
    }

    fn includes(&self, role: GemmRole) -> bool {
        self.roles.as_ref().is_none_or(|r| r.contains(&role))
    }

    /// The sweep's grid points and their configs. An empty range is not an
    /// error.
    pub fn points(&self) -> Result<Vec<(u64, TransformerConfig)>> {
        if self.step == 0 {
            return Err(Error::invariant("step", "sweep step must be >= 1"));
        }
        if self.start > self.end {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let mut x = self.start;
        while x <= self.end {
            let mut cfg = self.base.clone();
            match self.dimension {
                SweepDim::A => cfg.a = x,
                SweepDim::B => cfg.b = x,
                SweepDim::H => cfg.h = x,
                SweepDim::S => cfg.s = x,
                SweepDim::V => cfg.v = x,
                SweepDim::DFf => cfg.d_ff = Some(x),
            }
            if let Some(hd) = self.fixed_head_dim {
                if hd == 0 || !cfg.h.is_multiple_of(hd) {
                    return Err(Error::NotIntegral(format!("h/{hd} at h={}", cfg.h)));
                }
                cfg.a = cfg.h / hd;
            }
            out.push((x, cfg));
            match x.checked_add(self.step) {
                Some(next) => x = next,
                None => break,
            }
        }
        Ok(out)
    }
}

pub enum PlanSource<'a> {
    Config(&'a TransformerConfig),
    Sweep(&'a SweepSpec),
}

/// Deduplicated GEMM shapes to benchmark, in first-appearance order.
/// Fused attention kernels are not GEMMs and are left out.
pub fn emit_bench_plan(source: PlanSource<'_>, gpu: &GpuSpec) -> Result<Vec<PlanRow>> {
    let configs = match source {
        PlanSource::Config(cfg) => vec![(cfg.clone(), None)],
        PlanSource::Sweep(spec) => spec
            .points()?
            .into_iter()
            .map(|(_, cfg)| (cfg, Some(spec)))
            .collect(),
    };
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (cfg, spec) in configs {
        let d = decompose(&cfg)?;
        for op in d.all_ops() {
            if spec.is_some_and(|s| !s.includes(op.role)) {
                continue;
            }
            if let Some(g) = op.kernel.gemm() {
                let key = ShapeKey::for_gemm(&gpu.name, g);
                if seen.insert(key.clone()) {
                    rows.push(key);
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_plan<W: Write>(rows: &[PlanRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLAN_HEADER)?;
    for r in rows {
        w.write_record([
            r.gpu.clone(),
            r.dtype.to_string(),
            r.batch.to_string(),
            r.m.to_string(),
            r.k.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<plan output>", e))?;
    Ok(())
}

pub fn write_measurements<W: Write>(records: &[MeasurementRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEASUREMENT_HEADER)?;
    for r in records {
        let k = &r.key;
        w.write_record([
            k.gpu.clone(),
            k.dtype.to_string(),
            k.batch.to_string(),
            k.m.to_string(),
            k.k.to_string(),
            k.n.to_string(),
            r.measured_tflops.to_string(),
            r.repeats.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<measurement output>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// Line number in the file; the header is row 1.
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub table: CalibrationTable,
    pub skipped: Vec<SkippedRow>,
}

fn parse_measurement(rec: &csv::StringRecord) -> std::result::Result<MeasurementRecord, String> {
    if rec.len() != MEASUREMENT_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            MEASUREMENT_HEADER.len(),
            rec.len()
        ));
    }
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let dim = |i: usize| -> std::result::Result<u64, String> {
        match field(i).parse::<u64>() {
            Ok(0) => Err(format!("`{}` must be >= 1", MEASUREMENT_HEADER[i])),
            Ok(v) => Ok(v),
            Err(_) => Err(format!("`{}` is not an integer: `{}`", MEASUREMENT_HEADER[i], field(i))),
        }
    };
    let gpu = field(0);
    if gpu.is_empty() {
        return Err("empty `gpu`".into());
    }
    let dtype: DType = field(1).parse().map_err(|e: Error| e.to_string())?;
    let key = ShapeKey {
        gpu: gpu.to_string(),
        dtype,
        batch: dim(2)?,
        m: dim(3)?,
        k: dim(4)?,
        n: dim(5)?,
    };
    let tflops: f64 = field(6)
        .parse()
        .map_err(|_| format!("`tflops` is not a number: `{}`", field(6)))?;
    if !(tflops.is_finite() && tflops > 0.0) {
        return Err(format!("non-positive throughput {tflops}"));
    }
    let repeats = field(7)
        .parse()
        .map_err(|_| format!("`repeats` is not an integer: `{}`", field(7)))?;
    Ok(MeasurementRecord {
        key,
        measured_tflops: tflops,
        repeats,
    })
}

/// Reads a measurement CSV. A wrong header fails the whole file; bad data
/// rows are skipped and reported.
pub fn ingest_reader<R: Read>(input: R, policy: Interpolation) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Schema {
                row: 1,
                message: "missing header row".into(),
            })
        }
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != MEASUREMENT_HEADER {
        return Err(Error::Schema {
            row: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                MEASUREMENT_HEADER.join(","),
                names.join(",")
            ),
        });
    }
    let mut table = CalibrationTable::new(policy);
    let mut skipped = Vec::new();
    for rec in records {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        match parse_measurement(&rec) {
            Ok(m) => table.insert(m),
            Err(reason) => skipped.push(SkippedRow { row, reason }),
        }
    }
    Ok(Ingested { table, skipped })
}

pub fn ingest_measurements(path: impl AsRef<Path>, policy: Interpolation) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: u64,
    pub role: GemmRole,
    pub predicted_tflops: f64,
    pub predicted_latency_us: f64,
    /// Absent for roofline-only kernels.
    pub wave_efficiency: Option<f64>,
    pub aligned: Option<bool>,
}

/// Predicted throughput of every selected role at every sweep point.
pub fn run_sweep(
    spec: &SweepSpec,
    gpu: &GpuSpec,
    calibration: Option<&CalibrationTable>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for (x, cfg) in spec.points()? {
        let d = decompose(&cfg)?;
        for op in d.all_ops().filter(|op| spec.includes(op.role)) {
            let e = op.kernel.estimate(gpu, calibration)?;
            out.push(SweepPoint {
                x,
                role: op.role,
                predicted_tflops: e.tflops,
                predicted_latency_us: e.latency_us,
                wave_efficiency: e.wave_efficiency(),
                aligned: e.aligned(),
            });
        }
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(x_name: &str, points: &[SweepPoint], out: W) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no sweep results to export".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once(x_name).chain(SWEEP_COLUMNS))?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.role.to_string(),
            p.predicted_tflops.to_string(),
            p.predicted_latency_us.to_string(),
            p.wave_efficiency.map(|v| v.to_string()).unwrap_or_default(),
            p.aligned.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep output>", e))?;
    Ok(())
}

pub fn export_sweep(x_name: &str, points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_sweep(x_name, points, file)
}

/// Reads back an exported sweep; returns the x column name and the points.
pub fn read_sweep<R: Read>(input: R) -> Result<(String, Vec<SweepPoint>)> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() != 6 || header.iter().skip(1).ne(SWEEP_COLUMNS) {
        return Err(Error::Schema {
            row: 1,
            message: "not a sweep export".into(),
        });
    }
    let x_name = header[0].to_string();
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Schema {
            row,
            message: format!("invalid `{what}`"),
        };
        let opt = |i: usize| Some(&rec[i]).filter(|s| !s.is_empty());
        points.push(SweepPoint {
            x: rec[0].parse().map_err(|_| bad(&x_name))?,
            role: rec[1].parse().map_err(|_| bad("role"))?,
            predicted_tflops: rec[2].parse().map_err(|_| bad("predicted_tflops"))?,
            predicted_latency_us: rec[3].parse().map_err(|_| bad("predicted_latency_us"))?,
            wave_efficiency: opt(4)
                .map(|s| s.parse().map_err(|_| bad("wave_efficiency")))
                .transpose()?,
            aligned: opt(5)
                .map(|s| s.parse().map_err(|_| bad("aligned")))
                .transpose()?,
        });
    }
    Ok((x_name, points))
}
