//! GPU and numeric-format descriptors.
//!
//! Peak rates and bandwidth are plain data: the built-in entries carry vendor
//! datasheet figures (dense, no sparsity) and can be replaced by loading a
//! spec file. SM counts and tensor-core alignment of the built-ins are fixed
//! hardware facts.
//!
//! Spec file format (TOML):
//!
//! ```toml
//! name = "A100"
//! sm_count = 108
//! tc_alignment_bytes = 128
//! mem_bandwidth_gbps = 2039.0
//! tile_candidates = ["256x128", "128x256", "128x128"]
//!
//! [peak_matmul_tflops]
//! fp16 = 312.0
//!
//! [cost_model]            # optional
//! alignment_penalty_floor = 0.5
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric element format of GEMM operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DType {
    Fp8,
    Fp16,
    Bf16,
    Fp32,
    Fp64,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::Fp8, DType::Fp16, DType::Bf16, DType::Fp32, DType::Fp64];

    pub fn name(self) -> &'static str {
        match self {
            DType::Fp8 => "fp8",
            DType::Fp16 => "fp16",
            DType::Bf16 => "bf16",
            DType::Fp32 => "fp32",
            DType::Fp64 => "fp64",
        }
    }

    pub fn bytes_per_element(self) -> u64 {
        match self {
            DType::Fp8 => 1,
            DType::Fp16 | DType::Bf16 => 2,
            DType::Fp32 => 4,
            DType::Fp64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        DType::ALL
            .into_iter()
            .find(|d| d.name() == lower)
            .ok_or_else(|| Error::UnknownDType(s.to_string()))
    }
}

impl TryFrom<String> for DType {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<DType> for String {
    fn from(value: DType) -> Self {
        value.name().to_string()
    }
}

/// Thread-block tile covering `t1` output rows by `t2` output columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TileSpec {
    pub t1: u64,
    pub t2: u64,
}

impl TileSpec {
    pub fn new(t1: u64, t2: u64) -> Result<Self> {
        if t1 == 0 || !t1.is_power_of_two() {
            return Err(Error::invariant("t1", format!("{t1} is not a positive power of two")));
        }
        if t2 == 0 || !t2.is_power_of_two() {
            return Err(Error::invariant("t2", format!("{t2} is not a positive power of two")));
        }
        Ok(TileSpec { t1, t2 })
    }

    /// The same tile with rows and columns swapped.
    pub fn transposed(self) -> Self {
        TileSpec {
            t1: self.t2,
            t2: self.t1,
        }
    }

    pub fn area(self) -> u64 {
        self.t1 * self.t2
    }
}

impl fmt::Display for TileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.t1, self.t2)
    }
}

impl FromStr for TileSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_err = || Error::Parse {
            what: "tile".into(),
            message: format!("expected `<rows>x<cols>`, got `{s}`"),
        };
        let (a, b) = s.trim().split_once(['x', 'X']).ok_or_else(parse_err)?;
        let t1 = a.trim().parse().map_err(|_| parse_err())?;
        let t2 = b.trim().parse().map_err(|_| parse_err())?;
        TileSpec::new(t1, t2)
    }
}

impl TryFrom<String> for TileSpec {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<TileSpec> for String {
    fn from(value: TileSpec) -> Self {
        value.to_string()
    }
}

/// Heuristic constants of the analytical throughput model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    /// Lower bound of the multiplicative penalty applied to misaligned GEMMs.
    pub alignment_penalty_floor: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alignment_penalty_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSpec {
    pub name: String,
    pub sm_count: u64,
    pub tc_alignment_bytes: u64,
    pub tile_candidates: Vec<TileSpec>,
    pub peak_matmul_tflops: BTreeMap<String, f64>,
    pub mem_bandwidth_gbps: f64,
    /// Set on entries whose figures are placeholders that must be overridden.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub provisional: bool,
    #[serde(default)]
    pub cost_model: CostModel,
}

impl GpuSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invariant("name", "must not be empty"));
        }
        if self.sm_count == 0 {
            return Err(Error::invariant("sm_count", "must be > 0"));
        }
        if self.tc_alignment_bytes == 0 || !self.tc_alignment_bytes.is_power_of_two() {
            return Err(Error::invariant(
                "tc_alignment_bytes",
                format!("{} is not a positive power of two", self.tc_alignment_bytes),
            ));
        }
        if self.tile_candidates.is_empty() {
            return Err(Error::invariant("tile_candidates", "must not be empty"));
        }
        for tile in &self.tile_candidates {
            TileSpec::new(tile.t1, tile.t2)
                .map_err(|e| Error::invariant("tile_candidates", e.to_string()))?;
        }
        for (dtype, rate) in &self.peak_matmul_tflops {
            dtype
                .parse::<DType>()
                .map_err(|e| Error::invariant("peak_matmul_tflops", e.to_string()))?;
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::invariant(
                    "peak_matmul_tflops",
                    format!("rate for `{dtype}` must be a positive number, got {rate}"),
                ));
            }
        }
        if !(self.mem_bandwidth_gbps.is_finite() && self.mem_bandwidth_gbps > 0.0) {
            return Err(Error::invariant(
                "mem_bandwidth_gbps",
                format!("must be a positive number, got {}", self.mem_bandwidth_gbps),
            ));
        }
        let floor = self.cost_model.alignment_penalty_floor;
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(Error::invariant(
                "cost_model.alignment_penalty_floor",
                format!("must lie in (0, 1], got {floor}"),
            ));
        }
        Ok(())
    }

    pub fn peak_tflops(&self, dtype: DType) -> Result<f64> {
        self.peak_matmul_tflops
            .get(dtype.name())
            .copied()
            .ok_or_else(|| Error::MissingPeakRate {
                gpu: self.name.clone(),
                dtype: dtype.name().to_string(),
            })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: GpuSpec = toml::from_str(text).map_err(|e| Error::Parse {
            what: "GPU spec".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "GPU spec".into(),
            message: e.to_string(),
        })
    }
}

pub fn default_tile_candidates() -> Vec<TileSpec> {
    [
        (256, 128),
        (128, 256),
        (128, 128),
        (256, 64),
        (64, 256),
        (128, 64),
        (64, 128),
        (64, 64),
    ]
    .into_iter()
    .map(|(t1, t2)| TileSpec { t1, t2 })
    .collect()
}

fn rates(entries: &[(DType, f64)]) -> BTreeMap<String, f64> {
    entries
        .iter()
        .map(|(d, r)| (d.name().to_string(), *r))
        .collect()
}

/// Built-in hardware entries.
///
/// MI250X is provisional: it has no peak rates, so throughput estimates on it
/// fail until a spec file supplies them.
pub fn builtin_gpus() -> Vec<GpuSpec> {
    vec![
        GpuSpec {
            name: "V100".into(),
            sm_count: 80,
            tc_alignment_bytes: 16,
            tile_candidates: default_tile_candidates(),
            peak_matmul_tflops: rates(&[
                (DType::Fp16, 125.0),
                (DType::Fp32, 15.7),
                (DType::Fp64, 7.8),
            ]),
            mem_bandwidth_gbps: 900.0,
            provisional: false,
            cost_model: CostModel::default(),
        },
        GpuSpec {
            name: "A100".into(),
            sm_count: 108,
            tc_alignment_bytes: 128,
            tile_candidates: default_tile_candidates(),
            peak_matmul_tflops: rates(&[
                (DType::Fp16, 312.0),
                (DType::Bf16, 312.0),
                (DType::Fp32, 19.5),
                (DType::Fp64, 19.5),
            ]),
            mem_bandwidth_gbps: 2039.0,
            provisional: false,
            cost_model: CostModel::default(),
        },
        GpuSpec {
            name: "H100".into(),
            sm_count: 144,
            tc_alignment_bytes: 128,
            tile_candidates: default_tile_candidates(),
            peak_matmul_tflops: rates(&[
                (DType::Fp8, 1978.9),
                (DType::Fp16, 989.4),
                (DType::Bf16, 989.4),
                (DType::Fp32, 67.0),
                (DType::Fp64, 67.0),
            ]),
            mem_bandwidth_gbps: 3350.0,
            provisional: false,
            cost_model: CostModel::default(),
        },
        GpuSpec {
            name: "MI250X".into(),
            sm_count: 220,
            tc_alignment_bytes: 128,
            tile_candidates: default_tile_candidates(),
            peak_matmul_tflops: BTreeMap::new(),
            mem_bandwidth_gbps: 3276.8,
            provisional: true,
            cost_model: CostModel::default(),
        },
    ]
}

/// Case-insensitive lookup among the built-in entries.
pub fn builtin_gpu(name: &str) -> Option<GpuSpec> {
    builtin_gpus()
        .into_iter()
        .find(|g| g.name.eq_ignore_ascii_case(name.trim()))
}

/// Tensor-core alignment requirement expressed in elements of `dtype`.
pub fn alignment_elements(gpu: &GpuSpec, dtype: DType) -> u64 {
    (gpu.tc_alignment_bytes / dtype.bytes_per_element()).max(1)
}

pub fn load_gpu_spec(path: impl AsRef<Path>) -> Result<GpuSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GpuSpec::from_toml_str(&text)
}

pub fn save_gpu_spec(spec: &GpuSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    spec.validate()?;
    std::fs::write(path, spec.to_toml_string()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sm_counts_and_alignment() {
        let a100 = builtin_gpu("A100").unwrap();
        assert_eq!((a100.sm_count, a100.tc_alignment_bytes), (108, 128));
        let v100 = builtin_gpu("v100").unwrap();
        assert_eq!((v100.sm_count, v100.tc_alignment_bytes), (80, 16));
        assert_eq!(builtin_gpu("H100").unwrap().sm_count, 144);
        let mi = builtin_gpu("MI250X").unwrap();
        assert!(mi.provisional);
        assert!(mi.peak_tflops(DType::Fp16).is_err());
        for g in builtin_gpus() {
            g.validate().unwrap();
            assert!(g.tile_candidates.contains(&TileSpec { t1: 128, t2: 256 }));
        }
    }

    #[test]
    fn alignment_in_elements() {
        let a100 = builtin_gpu("A100").unwrap();
        let v100 = builtin_gpu("V100").unwrap();
        assert_eq!(alignment_elements(&a100, DType::Fp16), 64);
        assert_eq!(alignment_elements(&v100, DType::Fp16), 8);
        assert_eq!(alignment_elements(&a100, DType::Fp32), 32);
        assert_eq!(alignment_elements(&v100, DType::Fp64), 2);
        for g in builtin_gpus() {
            for d in DType::ALL {
                let e = alignment_elements(&g, d);
                assert!(e >= 1 && e.is_power_of_two());
            }
        }
        let mut tiny = a100.clone();
        tiny.tc_alignment_bytes = 4;
        assert_eq!(alignment_elements(&tiny, DType::Fp64), 1);
    }

    #[test]
    fn tile_parsing() {
        assert_eq!("128x256".parse::<TileSpec>().unwrap(), TileSpec { t1: 128, t2: 256 });
        assert!("96x128".parse::<TileSpec>().is_err());
        assert!("128".parse::<TileSpec>().is_err());
        assert_eq!("FP16".parse::<DType>().unwrap(), DType::Fp16);
        assert!(matches!("fp12".parse::<DType>(), Err(Error::UnknownDType(_))));
    }

    #[test]
    fn spec_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a100.toml");
        for g in builtin_gpus() {
            save_gpu_spec(&g, &path).unwrap();
            assert_eq!(load_gpu_spec(&path).unwrap(), g);
        }
    }

    const VALID: &str = r#"
name = "A100-custom"
sm_count = 108
tc_alignment_bytes = 128
mem_bandwidth_gbps = 1555.0
tile_candidates = ["128x256", "64x64"]

[peak_matmul_tflops]
fp16 = 312.0
"#;

    #[test]
    fn parse_valid_file() {
        let g = GpuSpec::from_toml_str(VALID).unwrap();
        assert_eq!(g.sm_count, 108);
        assert_eq!(g.cost_model, CostModel::default());
        assert_eq!(g.peak_tflops(DType::Fp16).unwrap(), 312.0);
    }

    #[test]
    fn missing_sm_count_is_named() {
        let text = VALID.replace("sm_count = 108\n", "");
        let err = GpuSpec::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("sm_count"), "{err}");
    }

    #[test]
    fn zero_sm_count_is_invariant_violation() {
        let text = VALID.replace("sm_count = 108", "sm_count = 0");
        match GpuSpec::from_toml_str(&text) {
            Err(Error::Invariant { field, .. }) => assert_eq!(field, "sm_count"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_alignment_and_tiles_rejected() {
        let text = VALID.replace("tc_alignment_bytes = 128", "tc_alignment_bytes = 96");
        assert!(matches!(
            GpuSpec::from_toml_str(&text),
            Err(Error::Invariant { field, .. }) if field == "tc_alignment_bytes"
        ));
        let text = VALID.replace("[\"128x256\", \"64x64\"]", "[]");
        assert!(matches!(
            GpuSpec::from_toml_str(&text),
            Err(Error::Invariant { field, .. }) if field == "tile_candidates"
        ));
        let text = VALID.replace("\"64x64\"", "\"48x64\"");
        let err = GpuSpec::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("48"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = VALID.replace("sm_count = 108", "sm_count = = 108");
        let err = GpuSpec::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }
}
