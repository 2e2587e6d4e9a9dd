//! Transformer shape analysis.
//!
//! Maps a transformer configuration onto its GEMM/BMM kernels, measures each
//! kernel against tensor-core alignment, tile quantization and wave
//! quantization on a given GPU, lints the configuration, and searches nearby
//! shapes that keep the parameter count while running faster.
//!
//! ```
//! use tfshape::{builtin_gpu, decompose, lint, GemmRole, TransformerConfig};
//!
//! let cfg = TransformerConfig::new(32, 4, 2560, 32, 2048, 1, 50304);
//! let layer = decompose(&cfg).unwrap();
//! let score = layer.gemm(GemmRole::AttentionScore).unwrap();
//! assert_eq!((score.batch, score.k), (128, 80));
//!
//! let report = lint(&cfg, &builtin_gpu("A100").unwrap());
//! assert!(!report.pass);
//! ```

pub mod calibration;
pub mod error;
pub mod gemm;
pub mod hardware;
pub mod optimizer;
pub mod rules;
pub mod transformer;

pub use calibration::{
    emit_bench_plan, export_sweep, ingest_measurements, run_sweep, CalibrationTable,
    Interpolation, MeasurementRecord, PlanRow, PlanSource, SweepDim, SweepPoint, SweepSpec,
};
pub use error::{Error, Result};
pub use gemm::{
    alignment_report, analyze, bytes_moved, estimate_throughput, flops, is_wave_free,
    select_tile, tile_grid, tile_waste, wave_stats, AlignmentReport, GemmAnalysis, GemmShape,
    WaveStats,
};
pub use hardware::{
    alignment_elements, builtin_gpu, builtin_gpus, load_gpu_spec, save_gpu_spec, DType, GpuSpec,
    TileSpec,
};
pub use optimizer::{fix_heads, pad_vocab, suggest, swiglu_dff_search, Candidate, Knob, SearchSpace};
pub use rules::{explain, lint, lint_with, Diagnostic, LintOptions, RuleId, RuleReport, Severity};
pub use transformer::{
    decompose, forward_flops_per_layer, latency_proportions, param_count, Decomposition,
    GemmRole, MlpRatio, TransformerConfig,
};
