//! Search for nearby configurations with a similar parameter count and
//! better-shaped GEMMs.
//!
//! The search is exhaustive over a small, explicitly bounded space. Candidates
//! are evaluated in parallel and then sorted by a total order, so the result
//! does not depend on evaluation order.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::Result;
use crate::gemm::{self, pow2_divisor, GemmShape};
use crate::hardware::GpuSpec;
use crate::rules::{lint_with, Field, LintOptions, RuleReport, SHAPE_ALIGNMENT};
use crate::transformer::{decompose, param_count, MlpRatio, TransformerConfig};

/// Caveat attached to every head-count change.
pub const FEWER_HEADS_CAVEAT: &str =
    "changing the head count alters the model and may affect accuracy";

/// Smallest multiple of 64 that is `>= v`.
pub fn pad_vocab(v: u64) -> u64 {
    v.max(1).div_ceil(64) * 64
}

/// Head counts `a'` dividing `h` with `h/a'` a multiple of 64, closest to `a`
/// first (fewer heads first on ties). Empty when `h` is not a multiple of 64.
pub fn fix_heads(h: u64, a: u64) -> Vec<u64> {
    if h == 0 || !h.is_multiple_of(SHAPE_ALIGNMENT) {
        return Vec::new();
    }
    // h/a' = 64·j  <=>  a' divides h/64
    let base = h / SHAPE_ALIGNMENT;
    let mut out: Vec<u64> = (1..=base).filter(|d| base.is_multiple_of(*d)).collect();
    out.sort_by_key(|&c| (c.abs_diff(a), c));
    out
}

/// Config fields the search may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    A,
    H,
    DFf,
    V,
    T,
}

impl std::str::FromStr for Knob {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Knob::A),
            "h" => Ok(Knob::H),
            "d_ff" | "dff" | "d-ff" => Ok(Knob::DFf),
            "v" => Ok(Knob::V),
            "t" => Ok(Knob::T),
            other => Err(crate::Error::Parse {
                what: "search knob".into(),
                message: format!("unknown knob `{other}` (expected a, h, d_ff, v or t)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    /// Among equally compliant candidates prefer the smallest change.
    #[default]
    Proximity,
    /// Among equally compliant candidates prefer the lowest predicted latency.
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub vary: BTreeSet<Knob>,
    pub h_step: u64,
    /// Relative half-width of the `h` range.
    pub h_window: f64,
    /// Explicit head counts; `None` uses divisors of `h` in `[a/2, 2a]`.
    pub a_candidates: Option<Vec<u64>>,
    pub d_ff_window: u64,
    pub d_ff_step: u64,
    pub budget_tolerance: f64,
    pub rank_by: RankBy,
    pub lint: LintOptions,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            vary: BTreeSet::new(),
            h_step: 64,
            h_window: 0.1,
            a_candidates: None,
            d_ff_window: 1024,
            d_ff_step: 64,
            budget_tolerance: 0.02,
            rank_by: RankBy::Proximity,
            lint: LintOptions::default(),
        }
    }
}

impl SearchSpace {
    pub fn varying(knobs: impl IntoIterator<Item = Knob>) -> Self {
        SearchSpace {
            vary: knobs.into_iter().collect(),
            ..Default::default()
        }
    }

    fn h_values(&self, h0: u64) -> Vec<u64> {
        if !self.vary.contains(&Knob::H) || self.h_step == 0 {
            return vec![h0];
        }
        let lo = (h0 as f64 * (1.0 - self.h_window)).ceil().max(1.0) as u64;
        let hi = (h0 as f64 * (1.0 + self.h_window)).floor() as u64;
        let mut out: BTreeSet<u64> = (lo.div_ceil(self.h_step)..=hi / self.h_step)
            .map(|j| j * self.h_step)
            .filter(|&h| h > 0)
            .collect();
        out.insert(h0);
        out.into_iter().collect()
    }

    fn a_values(&self, h: u64, a0: u64) -> Vec<u64> {
        if !self.vary.contains(&Knob::A) {
            return vec![a0];
        }
        let mut out: BTreeSet<u64> = match &self.a_candidates {
            Some(list) => list.iter().copied().filter(|&a| a > 0).collect(),
            None => (a0.div_ceil(2).max(1)..=a0.saturating_mul(2))
                .filter(|d| h.is_multiple_of(*d))
                .collect(),
        };
        out.insert(a0);
        out.into_iter().collect()
    }

    fn d_ff_values(&self, cfg: &TransformerConfig) -> Vec<Option<u64>> {
        if !self.vary.contains(&Knob::DFf) || self.d_ff_step == 0 {
            return vec![cfg.d_ff];
        }
        let d0 = cfg.d_ff();
        let lo = d0.saturating_sub(self.d_ff_window).max(1);
        let hi = d0 + self.d_ff_window;
        let mut out: BTreeSet<u64> = (lo.div_ceil(self.d_ff_step)..=hi / self.d_ff_step)
            .map(|j| j * self.d_ff_step)
            .collect();
        out.insert(d0);
        let mut values: Vec<Option<u64>> = out.into_iter().map(Some).collect();
        if cfg.d_ff.is_none() {
            // keep the implicit ratio too, so h changes still scale d_ff
            values.retain(|&d| d != Some(d0));
            values.insert(0, None);
        }
        values
    }

    fn v_values(&self, v0: u64) -> Vec<u64> {
        if self.vary.contains(&Knob::V) {
            BTreeSet::from([v0, pad_vocab(v0)]).into_iter().collect()
        } else {
            vec![v0]
        }
    }

    fn t_values(&self, t0: u64) -> Vec<u64> {
        if self.vary.contains(&Knob::T) {
            (1..=t0).filter(|d| t0.is_multiple_of(*d)).collect()
        } else {
            vec![t0]
        }
    }

    /// All configurations in the space, baseline included.
    pub fn enumerate(&self, cfg: &TransformerConfig) -> Vec<TransformerConfig> {
        let mut out = Vec::new();
        for h in self.h_values(cfg.h) {
            for t in self.t_values(cfg.t) {
                for a in self.a_values(h, cfg.a) {
                    for d_ff in self.d_ff_values(cfg) {
                        for v in self.v_values(cfg.v) {
                            let mut c = cfg.clone();
                            c.h = h;
                            c.t = t;
                            c.a = a;
                            c.d_ff = d_ff;
                            c.v = v;
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub field: Field,
    pub from: u64,
    pub to: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: TransformerConfig,
    /// Fields that differ from the baseline; empty for the baseline itself.
    pub changes: Vec<Change>,
    pub param_delta_fraction: f64,
    pub predicted_layer_latency_us: f64,
    /// `L` layers plus the logit GEMM.
    pub predicted_model_latency_us: f64,
    pub report: RuleReport,
    /// Sum of `|ln(new/old)|` over changed fields.
    pub distance: f64,
    pub caveats: Vec<String>,
    /// 1-based position in the ranking.
    pub rank: usize,
}

fn changes_between(base: &TransformerConfig, cfg: &TransformerConfig) -> Vec<Change> {
    [Field::A, Field::H, Field::DFf, Field::V, Field::T]
        .into_iter()
        .filter_map(|field| {
            let (from, to) = (field.get(base), field.get(cfg));
            (from != to).then_some(Change { field, from, to })
        })
        .collect()
}

fn evaluate(
    base: &TransformerConfig,
    base_params: u64,
    cfg: TransformerConfig,
    gpu: &GpuSpec,
    space: &SearchSpace,
    calibration: Option<&CalibrationTable>,
) -> Option<Result<Candidate>> {
    let d = decompose(&cfg).ok()?;
    let report = lint_with(&cfg, gpu, &space.lint);
    if report.counts.error > 0 {
        return None;
    }
    let params = param_count(&cfg).total;
    let delta = (params as f64 - base_params as f64) / base_params as f64;
    if delta.abs() > space.budget_tolerance {
        return None;
    }
    let latency = || -> Result<(f64, f64)> {
        let mut layer = 0.0;
        for op in d.layer_ops() {
            layer += op.kernel.estimate(gpu, calibration)?.latency_us;
        }
        let logit = d.logit.kernel.estimate(gpu, calibration)?.latency_us;
        Ok((layer, layer * cfg.layers as f64 + logit))
    };
    let (layer, model) = match latency() {
        Ok(v) => v,
        Err(e) => return Some(Err(e)),
    };
    let changes = changes_between(base, &cfg);
    let distance = changes
        .iter()
        .map(|c| ((c.to as f64).ln() - (c.from as f64).ln()).abs())
        .sum();
    let caveats = changes
        .iter()
        .any(|c| c.field == Field::A)
        .then(|| FEWER_HEADS_CAVEAT.to_string())
        .into_iter()
        .collect();
    Some(Ok(Candidate {
        config: cfg,
        changes,
        param_delta_fraction: delta,
        predicted_layer_latency_us: layer,
        predicted_model_latency_us: model,
        report,
        distance,
        caveats,
        rank: 0,
    }))
}

fn identity(c: &Candidate) -> (u64, u64, u64, u64, u64) {
    let cfg = &c.config;
    (cfg.h, cfg.a, cfg.d_ff(), cfg.v, cfg.t)
}

fn compare(x: &Candidate, y: &Candidate, rank_by: RankBy) -> Ordering {
    let warns = x.report.counts.warn.cmp(&y.report.counts.warn);
    let latency = x
        .predicted_model_latency_us
        .total_cmp(&y.predicted_model_latency_us);
    let distance = x.distance.total_cmp(&y.distance);
    let params = x
        .param_delta_fraction
        .abs()
        .total_cmp(&y.param_delta_fraction.abs());
    let tail = match rank_by {
        RankBy::Proximity => distance.then(latency).then(params),
        RankBy::Latency => latency.then(params).then(distance),
    };
    warns.then(tail).then_with(|| identity(x).cmp(&identity(y)))
}

/// Ranked candidates with no error diagnostics within the parameter budget.
/// An empty list means nothing in the space qualified.
pub fn suggest(
    cfg: &TransformerConfig,
    gpu: &GpuSpec,
    space: &SearchSpace,
    calibration: Option<&CalibrationTable>,
) -> Result<Vec<Candidate>> {
    let base_params = param_count(cfg).total;
    let mut candidates = space
        .enumerate(cfg)
        .into_par_iter()
        .filter_map(|c| evaluate(cfg, base_params, c, gpu, space, calibration))
        .collect::<Result<Vec<_>>>()?;
    candidates.sort_by(|x, y| compare(x, y, space.rank_by));
    candidates.dedup_by(|x, y| identity(x) == identity(y));
    for (i, c) in candidates.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(candidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DffCandidate {
    pub d_ff: u64,
    /// Predicted latency of the up, gate and down GEMMs of one layer.
    pub mlp_latency_us: f64,
    /// Largest power of two dividing `d_ff/t`.
    pub divisor: u64,
}

impl DffCandidate {
    pub fn aligned(&self) -> bool {
        self.divisor >= SHAPE_ALIGNMENT
    }
}

/// Scans `d_ff` around `round(ratio·h)` one value at a time, using `ctx`
/// for `b`, `s`, `t` and dtype. Aligned sizes come first, then faster ones,
/// then those closer to the target.
pub fn swiglu_dff_search(
    h: u64,
    target_ratio: MlpRatio,
    window: u64,
    gpu: &GpuSpec,
    ctx: &TransformerConfig,
    calibration: Option<&CalibrationTable>,
) -> Result<Vec<DffCandidate>> {
    if h < SHAPE_ALIGNMENT {
        return Err(crate::Error::invariant("h", "swiglu d_ff search needs h >= 64"));
    }
    let t = ctx.t.max(1);
    let bs = ctx.b * ctx.s;
    let target = target_ratio.scale_round(h);
    let lo = target.saturating_sub(window).max(1);
    let hi = target + window;

    let mut out = Vec::new();
    for d_ff in (lo..=hi).filter(|d| d % t == 0) {
        let per_gpu = d_ff / t;
        let up = GemmShape::new(bs, h, per_gpu, ctx.dtype);
        let down = GemmShape::new(bs, per_gpu, h, ctx.dtype);
        let mut latency = 0.0;
        // up and gate share a shape
        latency += 2.0 * gemm::analyze(&up, gpu, calibration)?.predicted_latency_us;
        latency += gemm::analyze(&down, gpu, calibration)?.predicted_latency_us;
        out.push(DffCandidate {
            d_ff,
            mlp_latency_us: latency,
            divisor: pow2_divisor(per_gpu),
        });
    }
    out.sort_by(|x, y| {
        y.aligned()
            .cmp(&x.aligned())
            .then(x.mlp_latency_us.total_cmp(&y.mlp_latency_us))
            .then(x.d_ff.abs_diff(target).cmp(&y.d_ff.abs_diff(target)))
            .then(x.d_ff.cmp(&y.d_ff))
    });
    Ok(out)
}
