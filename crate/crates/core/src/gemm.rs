//! GEMM/BMM arithmetic: operation counts, tile-grid decomposition, tile and
//! wave quantization, tensor-core alignment, and a roofline throughput model.
//!
//! Tiles partition the output matrix only; `k` never participates in tiling.
//! Block and FLOP counts are exact integers and overflow is reported as an
//! error.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::hardware::{alignment_elements, DType, GpuSpec, TileSpec};

/// `C_i = alpha * A_i B_i + beta * C_i` for `i in 0..batch`, with `A_i` of
/// shape `m x k` and `B_i` of shape `k x n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub batch: u64,
    pub dtype: DType,
    pub alpha: f64,
    pub beta: f64,
}

impl GemmShape {
    pub fn new(m: u64, k: u64, n: u64, dtype: DType) -> Self {
        GemmShape {
            m,
            k,
            n,
            batch: 1,
            dtype,
            alpha: 1.0,
            beta: 0.0,
        }
    }

    pub fn batched(batch: u64, m: u64, k: u64, n: u64, dtype: DType) -> Self {
        GemmShape {
            batch,
            ..GemmShape::new(m, k, n, dtype)
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("m", self.m), ("k", self.k), ("n", self.n), ("batch", self.batch)] {
            if value == 0 {
                return Err(Error::invariant(field, "GEMM dimensions must be >= 1"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GemmShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.batch > 1 {
            write!(f, "{} x ", self.batch)?;
        }
        write!(f, "({}, {}) x ({}, {}) {}", self.m, self.k, self.k, self.n, self.dtype)
    }
}

fn checked_product(what: &'static str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow(what))
}

/// Multiply-add count: `2 * batch * m * k * n`.
pub fn flops(g: &GemmShape) -> Result<u64> {
    checked_product("flops", &[2, g.batch, g.m, g.k, g.n])
}

/// Bytes read and written, assuming every operand crosses memory once.
/// The output is read as well when `beta != 0`.
pub fn bytes_moved(g: &GemmShape) -> Result<u64> {
    let overflow = || Error::Overflow("bytes moved");
    let mk = g.m.checked_mul(g.k).ok_or_else(overflow)?;
    let kn = g.k.checked_mul(g.n).ok_or_else(overflow)?;
    let mn = g.m.checked_mul(g.n).ok_or_else(overflow)?;
    let output_passes = if g.beta != 0.0 { 2 } else { 1 };
    let elements = mk
        .checked_add(kn)
        .and_then(|s| s.checked_add(mn.checked_mul(output_passes)?))
        .ok_or_else(overflow)?;
    checked_product("bytes moved", &[g.batch, elements, g.dtype.bytes_per_element()])
}

/// `(ceil(m / t1), ceil(n / t2))`.
pub fn tile_grid(m: u64, n: u64, tile: TileSpec) -> (u64, u64) {
    (m.div_ceil(tile.t1), n.div_ceil(tile.t2))
}

/// Fraction of the tiled output area that computes padding.
pub fn tile_waste(m: u64, n: u64, tile: TileSpec) -> f64 {
    let (rows, cols) = tile_grid(m, n, tile);
    let covered = (rows * tile.t1) as f64 * (cols * tile.t2) as f64;
    1.0 - (m as f64 * n as f64) / covered
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveStats {
    pub tile: TileSpec,
    pub grid_rows: u64,
    pub grid_cols: u64,
    pub total_blocks: u64,
    pub full_waves: u64,
    pub tail_blocks: u64,
    pub wave_count: u64,
    pub wave_efficiency: f64,
}

/// Thread-block waves needed to cover the output of `g` with `tile` on a
/// device with `sm_count` SMs, one block per SM per wave.
pub fn wave_stats(g: &GemmShape, tile: TileSpec, sm_count: u64) -> Result<WaveStats> {
    if sm_count == 0 {
        return Err(Error::invariant("sm_count", "must be > 0"));
    }
    let (grid_rows, grid_cols) = tile_grid(g.m, g.n, tile);
    let total_blocks = checked_product("thread blocks", &[g.batch, grid_rows, grid_cols])?;
    let full_waves = total_blocks / sm_count;
    let tail_blocks = total_blocks % sm_count;
    let wave_count = total_blocks.div_ceil(sm_count);
    let wave_efficiency = if wave_count == 0 {
        1.0
    } else {
        total_blocks as f64 / (wave_count as f64 * sm_count as f64)
    };
    Ok(WaveStats {
        tile,
        grid_rows,
        grid_cols,
        total_blocks,
        full_waves,
        tail_blocks,
        wave_count,
        wave_efficiency,
    })
}

/// True when an `m x n` output splits into a whole number of waves with the
/// tile in either orientation.
pub fn is_wave_free(m: u64, n: u64, tile: TileSpec, sm_count: u64) -> bool {
    if sm_count == 0 {
        return false;
    }
    let blocks = |t: TileSpec| {
        let (r, c) = tile_grid(m, n, t);
        r as u128 * c as u128
    };
    let sms = sm_count as u128;
    blocks(tile) % sms == 0 || blocks(tile.transposed()) % sms == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    M,
    K,
    N,
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dim::M => "m",
            Dim::K => "k",
            Dim::N => "n",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimAlignment {
    pub dim: Dim,
    pub value: u64,
    pub pow2_divisor: u64,
    pub required: u64,
    pub aligned: bool,
}

impl DimAlignment {
    /// `pow2_divisor / required`, capped at 1.
    pub fn ratio(&self) -> f64 {
        (self.pow2_divisor as f64 / self.required as f64).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub dims: Vec<DimAlignment>,
}

impl AlignmentReport {
    pub fn all_aligned(&self) -> bool {
        self.dims.iter().all(|d| d.aligned)
    }

    pub fn unaligned(&self) -> impl Iterator<Item = &DimAlignment> {
        self.dims.iter().filter(|d| !d.aligned)
    }

    /// Worst-dimension alignment ratio in (0, 1].
    pub fn worst_ratio(&self) -> f64 {
        self.dims.iter().map(DimAlignment::ratio).fold(1.0, f64::min)
    }
}

/// Largest power of two dividing `value` (0 maps to 0).
pub fn pow2_divisor(value: u64) -> u64 {
    if value == 0 {
        0
    } else {
        1 << value.trailing_zeros()
    }
}

pub fn alignment_report(g: &GemmShape, gpu: &GpuSpec) -> AlignmentReport {
    let required = alignment_elements(gpu, g.dtype);
    let dims = [(Dim::M, g.m), (Dim::K, g.k), (Dim::N, g.n)]
        .into_iter()
        .map(|(dim, value)| DimAlignment {
            dim,
            value,
            pow2_divisor: pow2_divisor(value),
            required,
            aligned: value % required == 0,
        })
        .collect();
    AlignmentReport { dims }
}

/// Picks the tile minimizing `wave_count * t1 * t2 * k`; ties go to the
/// larger tile, then to the earlier entry in `gpu.tile_candidates`.
pub fn select_tile(g: &GemmShape, gpu: &GpuSpec) -> TileSpec {
    let sms = gpu.sm_count.max(1) as u128;
    let cost = |tile: TileSpec| {
        let (rows, cols) = tile_grid(g.m, g.n, tile);
        let blocks = g.batch as u128 * rows as u128 * cols as u128;
        blocks.div_ceil(sms) * tile.area() as u128 * g.k as u128
    };
    let mut best: Option<(u128, u64, TileSpec)> = None;
    for &tile in &gpu.tile_candidates {
        let c = cost(tile);
        let better = match best {
            None => true,
            Some((bc, area, _)) => c < bc || (c == bc && tile.area() > area),
        };
        if better {
            best = Some((c, tile.area(), tile));
        }
    }
    best.map(|(_, _, t)| t)
        .expect("GPU spec must have at least one tile candidate")
}

/// Roofline bound in TFLOP/s: `min(peak, intensity * bandwidth)`.
pub fn roofline_tflops(flops: u64, bytes: u64, peak_tflops: f64, bandwidth_gbps: f64) -> f64 {
    if bytes == 0 {
        return peak_tflops;
    }
    let intensity = flops as f64 / bytes as f64;
    // FLOP/byte * GB/s = GFLOP/s
    peak_tflops.min(intensity * bandwidth_gbps / 1_000.0)
}

/// Microseconds needed to execute `flops` at `tflops`.
pub fn latency_us(flops: u64, tflops: f64) -> f64 {
    flops as f64 / (tflops * 1e6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemmAnalysis {
    pub shape: GemmShape,
    pub flops: u64,
    pub bytes: u64,
    pub arithmetic_intensity: f64,
    pub alignment: AlignmentReport,
    pub chosen_tile: TileSpec,
    pub waves: WaveStats,
    pub tile_waste_fraction: f64,
    pub alignment_penalty: f64,
    pub predicted_tflops: f64,
    pub predicted_latency_us: f64,
    pub calibrated: bool,
}

/// Multiplicative throughput penalty for tensor-core misalignment.
pub fn alignment_penalty(report: &AlignmentReport, floor: f64) -> f64 {
    if report.all_aligned() {
        1.0
    } else {
        report.worst_ratio().max(floor)
    }
}

/// Full analysis of one GEMM on `gpu`.
///
/// A calibration hit (exact, or nearest neighbour when the table allows it)
/// replaces the analytical throughput; otherwise the roofline bound is scaled
/// by wave efficiency, tile utilisation and the alignment penalty. Either way
/// the result is capped at the dtype's peak.
pub fn analyze(
    g: &GemmShape,
    gpu: &GpuSpec,
    calibration: Option<&CalibrationTable>,
) -> Result<GemmAnalysis> {
    g.validate()?;
    let peak = gpu.peak_tflops(g.dtype)?;
    let flops = flops(g)?;
    let bytes = bytes_moved(g)?;
    let alignment = alignment_report(g, gpu);
    let chosen_tile = select_tile(g, gpu);
    let waves = wave_stats(g, chosen_tile, gpu.sm_count)?;
    let waste = tile_waste(g.m, g.n, chosen_tile);
    let penalty = alignment_penalty(&alignment, gpu.cost_model.alignment_penalty_floor);

    let measured = calibration.and_then(|c| c.lookup(&gpu.name, g));
    let predicted_tflops = match measured {
        Some(value) => value.min(peak),
        None => {
            let roof = roofline_tflops(flops, bytes, peak, gpu.mem_bandwidth_gbps);
            (roof * waves.wave_efficiency * (1.0 - waste) * penalty).min(peak)
        }
    };
    Ok(GemmAnalysis {
        shape: *g,
        flops,
        bytes,
        arithmetic_intensity: flops as f64 / bytes as f64,
        alignment,
        chosen_tile,
        waves,
        tile_waste_fraction: waste,
        alignment_penalty: penalty,
        predicted_tflops,
        predicted_latency_us: latency_us(flops, predicted_tflops),
        calibrated: measured.is_some(),
    })
}

/// `(predicted_tflops, predicted_latency_us)` for `g` on `gpu`.
pub fn estimate_throughput(
    g: &GemmShape,
    gpu: &GpuSpec,
    calibration: Option<&CalibrationTable>,
) -> Result<(f64, f64)> {
    let a = analyze(g, gpu, calibration)?;
    Ok((a.predicted_tflops, a.predicted_latency_us))
}
