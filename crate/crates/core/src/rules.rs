//! Shape lint for transformer configurations.
//!
//! Every rule reports through [`Diagnostic`]s. `Error` is reserved for
//! configurations that cannot be decomposed (a non-integral split); every
//! inefficiency is at most a `Warn`. Suggestions are concrete replacement
//! values for one config field; applying any of them silences the rule that
//! produced it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gemm::{alignment_report, pow2_divisor, select_tile, wave_stats};
use crate::hardware::GpuSpec;
use crate::optimizer::{fix_heads, pad_vocab};
use crate::transformer::{decompose, Activation, AttentionImpl, TransformerConfig};

/// Power-of-two divisor beyond which the shape rules see no further benefit.
pub const SHAPE_ALIGNMENT: u64 = 64;
pub const DEFAULT_WAVE_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
    R10,
    R11,
    R12,
}

impl RuleId {
    pub const ALL: [RuleId; 12] = [
        RuleId::R1,
        RuleId::R2,
        RuleId::R3,
        RuleId::R4,
        RuleId::R5,
        RuleId::R6,
        RuleId::R7,
        RuleId::R8,
        RuleId::R9,
        RuleId::R10,
        RuleId::R11,
        RuleId::R12,
    ];
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase();
        RuleId::ALL
            .into_iter()
            .find(|r| r.to_string() == wanted)
            .ok_or_else(|| Error::UnknownRule(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warn => "warn",
            Severity::Error => "error",
        })
    }
}

/// Config field a suggestion replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "h")]
    H,
    #[serde(rename = "L")]
    L,
    #[serde(rename = "s")]
    S,
    #[serde(rename = "t")]
    T,
    #[serde(rename = "v")]
    V,
    #[serde(rename = "d_ff")]
    DFf,
    #[serde(rename = "pipeline_stages")]
    PipelineStages,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::A => "a",
            Field::B => "b",
            Field::H => "h",
            Field::L => "L",
            Field::S => "s",
            Field::T => "t",
            Field::V => "v",
            Field::DFf => "d_ff",
            Field::PipelineStages => "pipeline_stages",
        }
    }

    pub fn get(self, cfg: &TransformerConfig) -> u64 {
        match self {
            Field::A => cfg.a,
            Field::B => cfg.b,
            Field::H => cfg.h,
            Field::L => cfg.layers,
            Field::S => cfg.s,
            Field::T => cfg.t,
            Field::V => cfg.v,
            Field::DFf => cfg.d_ff(),
            Field::PipelineStages => cfg.pipeline_stages.unwrap_or(1),
        }
    }

    pub fn apply(self, cfg: &TransformerConfig, value: u64) -> TransformerConfig {
        let mut out = cfg.clone();
        match self {
            Field::A => out.a = value,
            Field::B => out.b = value,
            Field::H => out.h = value,
            Field::L => out.layers = value,
            Field::S => out.s = value,
            Field::T => out.t = value,
            Field::V => out.v = value,
            Field::DFf => out.d_ff = Some(value),
            Field::PipelineStages => out.pipeline_stages = Some(value),
        }
        out
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub field: Field,
    /// Replacement values, best first.
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule_id: RuleId,
    pub severity: Severity,
    /// Config field or GEMM role the finding is about.
    pub subject: String,
    pub observed: String,
    pub message: String,
    pub suggestion: Option<Suggestion>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityCounts {
    pub error: usize,
    pub warn: usize,
    pub info: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub config: TransformerConfig,
    pub gpu: String,
    pub diagnostics: Vec<Diagnostic>,
    pub counts: SeverityCounts,
    /// Ungraded advice.
    pub notes: Vec<String>,
    pub pass: bool,
}

impl RuleReport {
    /// 0 = pass, 1 = warnings, 2 = errors.
    pub fn exit_code(&self) -> i32 {
        if self.counts.error > 0 {
            2
        } else if self.counts.warn > 0 {
            1
        } else {
            0
        }
    }

    pub fn for_rule(&self, rule: RuleId) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(move |d| d.rule_id == rule)
    }

    pub fn max_severity(&self, rule: RuleId) -> Option<Severity> {
        self.for_rule(rule).map(|d| d.severity).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LintOptions {
    /// R9 fires below this wave efficiency.
    pub wave_threshold: f64,
}

impl Default for LintOptions {
    fn default() -> Self {
        LintOptions {
            wave_threshold: DEFAULT_WAVE_THRESHOLD,
        }
    }
}

struct Collector {
    out: Vec<Diagnostic>,
}

impl Collector {
    fn push(
        &mut self,
        rule_id: RuleId,
        severity: Severity,
        subject: impl Into<String>,
        observed: impl ToString,
        message: impl Into<String>,
        suggestion: Option<Suggestion>,
    ) {
        self.out.push(Diagnostic {
            rule_id,
            severity,
            subject: subject.into(),
            observed: observed.to_string(),
            message: message.into(),
            suggestion,
        });
    }
}

fn suggest(field: Field, values: Vec<u64>) -> Option<Suggestion> {
    (!values.is_empty()).then_some(Suggestion { field, values })
}

/// Multiples of `unit` bracketing `x`, nearest first (lower first on ties).
fn nearest_multiples(x: u64, unit: u64) -> Vec<u64> {
    let lower = x / unit * unit;
    let upper = lower + unit;
    let mut out: Vec<u64> = [lower, upper]
        .into_iter()
        .filter(|&c| c > 0 && c != x)
        .collect();
    out.sort_by_key(|&c| (c.abs_diff(x), c));
    out
}

/// `None` when `value` has a power-of-two divisor of at least 64, else a
/// warning message describing the shortfall.
fn divisor_shortfall(label: &str, value: u64) -> Option<String> {
    let d = pow2_divisor(value);
    if d >= SHAPE_ALIGNMENT {
        None
    } else if d < 8 {
        Some(format!(
            "{label} = {value} has largest power-of-two divisor {d}; sizes this poorly aligned \
             leave tensor cores mostly idle"
        ))
    } else {
        Some(format!(
            "{label} = {value} has largest power-of-two divisor {d} (< {SHAPE_ALIGNMENT})"
        ))
    }
}

fn head_suggestions(h: u64, a: u64) -> Vec<u64> {
    let all = fix_heads(h, a);
    let window: Vec<u64> = all
        .iter()
        .copied()
        .filter(|&c| 2 * c >= a && 2 * c <= 3 * a)
        .collect();
    if window.is_empty() {
        all
    } else {
        window
    }
}

fn divisors_near(h: u64, a: u64, limit: usize) -> Vec<u64> {
    let mut divs: Vec<u64> = (1..=h).filter(|d| h.is_multiple_of(*d)).collect();
    divs.sort_by_key(|&d| (d.abs_diff(a), d));
    divs.truncate(limit);
    divs
}

fn positivity_errors(cfg: &TransformerConfig, c: &mut Collector) {
    let checks = [
        (RuleId::R1, "v", cfg.v),
        (RuleId::R2, "b", cfg.b),
        (RuleId::R2, "s", cfg.s),
        (RuleId::R3, "a", cfg.a),
        (RuleId::R4, "h", cfg.h),
        (RuleId::R4, "t", cfg.t),
        (RuleId::R7, "L", cfg.layers),
        (RuleId::R7, "pipeline_stages", cfg.pipeline_stages.unwrap_or(1)),
        (RuleId::R10, "d_ff", cfg.d_ff()),
    ];
    for (rule, field, value) in checks {
        if value == 0 {
            c.push(rule, Severity::Error, field, 0, format!("{field} must be >= 1"), None);
        }
    }
}

pub fn lint(cfg: &TransformerConfig, gpu: &GpuSpec) -> RuleReport {
    lint_with(cfg, gpu, &LintOptions::default())
}

pub fn lint_with(cfg: &TransformerConfig, gpu: &GpuSpec, opts: &LintOptions) -> RuleReport {
    let mut c = Collector { out: Vec::new() };
    let mut notes = vec!["use the largest microbatch size b that fits in memory".to_string()];
    if gpu.provisional {
        notes.push(format!(
            "GPU `{}` uses placeholder figures; supply a spec file for accurate results",
            gpu.name
        ));
    }

    positivity_errors(cfg, &mut c);
    if c.out.is_empty() {
        check_shapes(cfg, gpu, opts, &mut c);
    }

    let diagnostics = c.out;
    let count = |s| diagnostics.iter().filter(|d| d.severity == s).count();
    let counts = SeverityCounts {
        error: count(Severity::Error),
        warn: count(Severity::Warn),
        info: count(Severity::Info),
    };
    RuleReport {
        config: cfg.clone(),
        gpu: gpu.name.clone(),
        pass: counts.error == 0 && counts.warn == 0,
        diagnostics,
        counts,
        notes,
    }
}

fn check_shapes(cfg: &TransformerConfig, gpu: &GpuSpec, opts: &LintOptions, c: &mut Collector) {
    let TransformerConfig { a, b, h, s, t, v, .. } = *cfg;
    let flash = cfg.attention_impl == AttentionImpl::Flash;

    // R1
    if v % 64 != 0 {
        let padded = pad_vocab(v);
        c.push(
            RuleId::R1,
            Severity::Warn,
            "v",
            v,
            format!("vocabulary size {v} is not a multiple of 64; pad it to {padded}"),
            suggest(Field::V, vec![padded]),
        );
    }
    if cfg.vocab_parallel && v % t != 0 {
        c.push(
            RuleId::R1,
            Severity::Error,
            "v",
            v,
            format!("v/t = {v}/{t} is not integral with a vocab-parallel logit layer"),
            suggest(Field::V, vec![pad_vocab(v).div_ceil(64 * t) * 64 * t]),
        );
    }

    // R2
    if let Some(msg) = divisor_shortfall("b·s", b * s) {
        let need = SHAPE_ALIGNMENT >> s.trailing_zeros().min(6);
        c.push(
            RuleId::R2,
            Severity::Warn,
            "b·s",
            b * s,
            msg,
            suggest(Field::B, vec![b.div_ceil(need) * need]),
        );
    }

    // R3
    if h % a != 0 {
        let mut values = fix_heads(h, a);
        if values.is_empty() {
            values = divisors_near(h, a, 8);
        }
        c.push(
            RuleId::R3,
            Severity::Error,
            "h/a",
            format!("{h}/{a}"),
            format!("h/a = {h}/{a} is not integral"),
            suggest(Field::A, values),
        );
    } else if let Some(msg) = divisor_shortfall("h/a", h / a) {
        let severity = if flash { Severity::Info } else { Severity::Warn };
        c.push(
            RuleId::R3,
            severity,
            "h/a",
            h / a,
            format!("{msg}; head dimensions should be multiples of 64, with no further benefit beyond 64"),
            suggest(Field::A, head_suggestions(h, a)),
        );
    }

    // R4
    if h % t != 0 {
        c.push(
            RuleId::R4,
            Severity::Error,
            "h/t",
            format!("{h}/{t}"),
            format!("h/t = {h}/{t} is not integral"),
            suggest(Field::H, nearest_multiples(h, SHAPE_ALIGNMENT * t)),
        );
    } else if let Some(msg) = divisor_shortfall("h/t", h / t) {
        c.push(
            RuleId::R4,
            Severity::Warn,
            "h/t",
            h / t,
            msg,
            suggest(Field::H, nearest_multiples(h, SHAPE_ALIGNMENT * t)),
        );
    }

    // R5
    if (b * a) % t != 0 {
        let step = t / crate::transformer::gcd(a, t);
        c.push(
            RuleId::R5,
            Severity::Error,
            "(b·a)/t",
            format!("{}/{t}", b * a),
            format!("(b·a)/t = {}/{t} is not integral, so attention BMMs cannot be split", b * a),
            suggest(Field::B, vec![b.div_ceil(step) * step]),
        );
    }

    // R6
    if t > 1 {
        c.push(
            RuleId::R6,
            Severity::Info,
            "t",
            t,
            format!("tensor-parallel size {t}: t should be as small as possible"),
            None,
        );
    }

    // R7
    if let Some(stages) = cfg.pipeline_stages {
        if !cfg.layers.is_multiple_of(stages) {
            c.push(
                RuleId::R7,
                Severity::Warn,
                "L",
                cfg.layers,
                format!(
                    "{} layers do not split evenly over {stages} pipeline stages",
                    cfg.layers
                ),
                suggest(Field::L, nearest_multiples(cfg.layers, stages)),
            );
        }
    }

    // R10 integrality is needed by R8/R9, so it is checked before them.
    let d_ff = cfg.d_ff();
    let d_ff_integral = d_ff.is_multiple_of(t);
    if !d_ff_integral {
        c.push(
            RuleId::R10,
            Severity::Error,
            "d_ff/t",
            format!("{d_ff}/{t}"),
            format!("d_ff/t = {d_ff}/{t} is not integral"),
            suggest(Field::DFf, nearest_multiples(d_ff, SHAPE_ALIGNMENT * t)),
        );
    }

    // R8, R9 need a valid decomposition; any failure was reported above.
    if let Ok(d) = decompose(cfg) {
        for op in d.all_ops() {
            let Some(g) = op.kernel.gemm() else { continue };
            for dim in alignment_report(g, gpu).unaligned() {
                let emphatic = if dim.pow2_divisor < 8 { "; tensor cores mostly idle" } else { "" };
                c.push(
                    RuleId::R8,
                    Severity::Warn,
                    format!("{}.{}", op.role, dim.dim),
                    dim.value,
                    format!(
                        "{} {} = {} is not a multiple of {} elements (largest power-of-two divisor {}){emphatic}",
                        op.role, dim.dim, dim.value, dim.required, dim.pow2_divisor
                    ),
                    None,
                );
            }
            let tile = select_tile(g, gpu);
            if let Ok(w) = wave_stats(g, tile, gpu.sm_count) {
                if w.wave_efficiency < opts.wave_threshold {
                    c.push(
                        RuleId::R9,
                        Severity::Warn,
                        op.role.to_string(),
                        format!("{:.3}", w.wave_efficiency),
                        format!(
                            "{} runs {} blocks of {} in {} waves on {} SMs; the last wave holds {} blocks (efficiency {:.3})",
                            op.role,
                            w.total_blocks,
                            tile,
                            w.wave_count,
                            gpu.sm_count,
                            if w.tail_blocks == 0 { gpu.sm_count } else { w.tail_blocks },
                            w.wave_efficiency
                        ),
                        None,
                    );
                }
            }
        }
    }

    // R10 alignment
    let checks_dff = cfg.activation == Activation::Swiglu || cfg.d_ff.is_some();
    if d_ff_integral && checks_dff {
        if let Some(msg) = divisor_shortfall("d_ff/t", d_ff / t) {
            c.push(
                RuleId::R10,
                Severity::Warn,
                "d_ff/t",
                d_ff / t,
                format!("{msg}; a fractional MLP ratio such as 8/3 breaks the alignment of h"),
                suggest(Field::DFf, nearest_multiples(d_ff, SHAPE_ALIGNMENT * t)),
            );
        }
    }

    // R11
    if flash {
        c.push(
            RuleId::R11,
            Severity::Info,
            "attention_impl",
            "flash",
            "fused attention follows a roofline in h: maximize h rather than tuning h/a",
            None,
        );
    }

    // R12
    if t == 6 && h % (6 * SHAPE_ALIGNMENT) != 0 {
        c.push(
            RuleId::R12,
            Severity::Warn,
            "h",
            h,
            format!("with t = 6, h should be divisible by both 6 and 64 (a multiple of 384); h = {h} is not"),
            suggest(Field::H, nearest_multiples(h, 6 * SHAPE_ALIGNMENT)),
        );
    }
}

/// Rationale behind a rule.
pub fn explain(rule: &str) -> Result<&'static str> {
    Ok(match rule.parse::<RuleId>()? {
        RuleId::R1 => "R1 vocabulary size: the logit layer is a (b·s, h) x (h, v) GEMM. Its throughput \
            peaks when v is a multiple of 64, so pad the vocabulary to the next multiple of 64; \
            the extra rows are never sampled.",
        RuleId::R2 => "R2 tokens per microbatch: b·s is the outer dimension of every dense GEMM in the \
            layer. It should carry a power-of-two factor of at least 64. b itself needs no large \
            power of two when s already is one.",
        RuleId::R3 => "R3 head dimension: h/a is the inner dimension of the attention-score BMM and the \
            outer dimension of attention-over-value. Tensor cores are fully used when it is a \
            multiple of 64 FP16 elements; smaller power-of-two divisors are progressively slower, \
            and going beyond 64 brings no further alignment benefit. Fewer heads raise h/a.",
        RuleId::R4 => "R4 hidden size per GPU: h/t appears as a GEMM dimension of the QKV, projection \
            and MLP matrices on each tensor-parallel rank. It should be a multiple of 64.",
        RuleId::R5 => "R5 attention batch: the attention BMMs run (b·a)/t independent matrix products \
            per GPU. That count must be an integer or the heads cannot be split across ranks.",
        RuleId::R6 => "R6 tensor parallelism: every increase of t shrinks the per-GPU GEMMs and adds \
            communication, so t should be as small as memory allows.",
        RuleId::R7 => "R7 pipeline stages: the layer count should be divisible by the number of pipeline \
            stages so every stage does the same work.",
        RuleId::R8 => "R8 tensor-core alignment: each GEMM dimension m, k and n should be a multiple of \
            the GPU's tensor-core alignment (16 bytes on V100, 128 bytes on A100, i.e. 8 and 64 FP16 \
            elements). Misaligned dimensions fall back to slower paths.",
        RuleId::R9 => "R9 wave quantization: thread blocks are scheduled onto SMs in waves of at most \
            #SMs blocks. When the block count is not a multiple of the SM count the last, partially \
            filled wave still costs a full wave of latency. A GEMM avoids this when \
            ceil(X/t1)·ceil(Y/t2) or ceil(X/t2)·ceil(Y/t1) is divisible by the SM count.",
        RuleId::R10 => "R10 MLP intermediate size: d_ff/t is a GEMM dimension of all MLP matrices. \
            SwiGLU models often use d_ff = 8h/3, and the factor of 3 breaks the alignment a good h \
            provides. Search nearby for a multiple of 64 instead.",
        RuleId::R11 => "R11 fused attention: a fused attention kernel's throughput follows a roofline in \
            h, so head-dimension alignment matters much less; prefer the largest practical h.",
        RuleId::R12 => "R12 six-way tensor parallelism: on 6-GPU nodes t = 6 is common, and h/t then \
            loses its power-of-two factor unless h is divisible by both 6 and 64.",
    })
}
