//! Decoder-only transformer configurations and their GEMM/BMM decomposition.
//!
//! Per-GPU shapes assume `t`-way tensor parallelism. The logit layer is
//! `(b*s, h) x (h, v)` and is not split across GPUs unless
//! `vocab_parallel` is set.
//!
//! Config files are TOML with the same field names as [`TransformerConfig`]:
//!
//! ```toml
//! a = 32
//! b = 4
//! h = 2560
//! L = 32
//! s = 2048
//! t = 1
//! v = 50304
//! activation = "swiglu"      # or "glu_like"
//! d_ff = 6912                # optional, overrides mlp_ratio
//! mlp_ratio = "8/3"          # optional
//! attention_impl = "flash"   # or "standard"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::gemm::{self, GemmAnalysis, GemmShape};
use crate::hardware::{DType, GpuSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    GluLike,
    Swiglu,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionImpl {
    #[default]
    Standard,
    Flash,
}

/// Sequential or parallel attention/MLP blocks. Fusion in the parallel layout
/// changes kernel count, not GEMM shapes, so the decomposition is identical.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerLayout {
    #[default]
    Sequential,
    Parallel,
}

/// Metadata only, except that learned embeddings contribute `s*h` parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    #[default]
    Learned,
    Rotary,
    Alibi,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(Error::Parse {
                        what: stringify!($ty).to_string(),
                        message: format!("unknown value `{other}`"),
                    }),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $name,)+ })
            }
        }
    };
}

str_enum!(Activation { GluLike => "glu_like", Swiglu => "swiglu" });
str_enum!(AttentionImpl { Standard => "standard", Flash => "flash" });
str_enum!(LayerLayout { Sequential => "sequential", Parallel => "parallel" });
str_enum!(Positional { Learned => "learned", Rotary => "rotary", Alibi => "alibi" });

/// Positive rational `num / den` used for the MLP expansion factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MlpRatio {
    num: u64,
    den: u64,
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl MlpRatio {
    pub const FOUR: MlpRatio = MlpRatio { num: 4, den: 1 };
    pub const EIGHT_THIRDS: MlpRatio = MlpRatio { num: 8, den: 3 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invariant("mlp_ratio", "must be a positive rational"));
        }
        let g = gcd(num, den);
        Ok(MlpRatio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    /// `round(ratio * x)`, halves rounded up.
    pub fn scale_round(self, x: u64) -> u64 {
        let (num, den) = (self.num as u128, self.den as u128);
        ((2 * num * x as u128 + den) / (2 * den)) as u64
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for MlpRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for MlpRatio {
    type Err = Error;

    /// Accepts `"4"`, `"8/3"` or a decimal such as `"2.6875"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "mlp_ratio".into(),
            message: format!("expected an integer, `num/den` or decimal, got `{s}`"),
        };
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return MlpRatio::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10u64.pow(frac.len() as u32);
            let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
            let frac: u64 = frac.parse().map_err(|_| bad())?;
            let num = int
                .checked_mul(den)
                .and_then(|v| v.checked_add(frac))
                .ok_or_else(bad)?;
            return MlpRatio::new(num, den);
        }
        MlpRatio::new(s.parse().map_err(|_| bad())?, 1)
    }
}

impl TryFrom<String> for MlpRatio {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<MlpRatio> for String {
    fn from(value: MlpRatio) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Attention heads.
    pub a: u64,
    /// Microbatch size.
    pub b: u64,
    /// Hidden size.
    pub h: u64,
    /// Layer count.
    #[serde(rename = "L")]
    pub layers: u64,
    /// Sequence length.
    pub s: u64,
    /// Tensor-parallel size.
    pub t: u64,
    /// Vocabulary size.
    pub v: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_ratio: Option<MlpRatio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<u64>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub attention_impl: AttentionImpl,
    #[serde(default)]
    pub layer_layout: LayerLayout,
    #[serde(default)]
    pub positional: Positional,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline_stages: Option<u64>,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    /// Split the logit GEMM's vocabulary dimension across the `t` GPUs.
    #[serde(default)]
    pub vocab_parallel: bool,
}

fn default_dtype() -> DType {
    DType::Fp16
}

impl TransformerConfig {
    /// Sequential GLU-like FP16 model with learned positions and `d_ff = 4h`.
    pub fn new(a: u64, b: u64, h: u64, layers: u64, s: u64, t: u64, v: u64) -> Self {
        TransformerConfig {
            a,
            b,
            h,
            layers,
            s,
            t,
            v,
            mlp_ratio: None,
            d_ff: None,
            activation: Activation::GluLike,
            attention_impl: AttentionImpl::Standard,
            layer_layout: LayerLayout::Sequential,
            positional: Positional::Learned,
            pipeline_stages: None,
            dtype: DType::Fp16,
            vocab_parallel: false,
        }
    }

    /// Explicit ratio, else 8/3 for SwiGLU and 4 otherwise.
    pub fn effective_mlp_ratio(&self) -> MlpRatio {
        self.mlp_ratio.unwrap_or(match self.activation {
            Activation::Swiglu => MlpRatio::EIGHT_THIRDS,
            Activation::GluLike => MlpRatio::FOUR,
        })
    }

    /// MLP intermediate size.
    pub fn d_ff(&self) -> u64 {
        self.d_ff
            .unwrap_or_else(|| self.effective_mlp_ratio().scale_round(self.h))
    }

    /// GLU-like MLP with `d_ff = 4h`, the architecture the closed-form
    /// FLOP count describes.
    pub fn is_canonical_mlp(&self) -> bool {
        self.activation == Activation::GluLike && self.d_ff() == 4 * self.h
    }

    /// Checks that every size is at least one.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b),
            ("h", self.h),
            ("L", self.layers),
            ("s", self.s),
            ("t", self.t),
            ("v", self.v),
            ("d_ff", self.d_ff()),
            ("pipeline_stages", self.pipeline_stages.unwrap_or(1)),
        ];
        for (field, value) in fields {
            if value == 0 {
                return Err(Error::invariant(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        PartialConfig::from_toml_str(text)?.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PartialConfig::load(path)?.resolve()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "model config".into(),
            message: e.to_string(),
        })
    }
}

/// A config with every field optional, used to layer a file under inline
/// overrides before resolving defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub a: Option<u64>,
    pub b: Option<u64>,
    pub h: Option<u64>,
    #[serde(rename = "L")]
    pub layers: Option<u64>,
    pub s: Option<u64>,
    pub t: Option<u64>,
    pub v: Option<u64>,
    pub mlp_ratio: Option<MlpRatio>,
    pub d_ff: Option<u64>,
    pub activation: Option<Activation>,
    pub attention_impl: Option<AttentionImpl>,
    pub layer_layout: Option<LayerLayout>,
    pub positional: Option<Positional>,
    pub pipeline_stages: Option<u64>,
    pub dtype: Option<DType>,
    pub vocab_parallel: Option<bool>,
}

impl PartialConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "model config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Field-by-field overlay: values set in `top` win.
    pub fn overlay(self, top: PartialConfig) -> PartialConfig {
        PartialConfig {
            a: top.a.or(self.a),
            b: top.b.or(self.b),
            h: top.h.or(self.h),
            layers: top.layers.or(self.layers),
            s: top.s.or(self.s),
            t: top.t.or(self.t),
            v: top.v.or(self.v),
            mlp_ratio: top.mlp_ratio.or(self.mlp_ratio),
            d_ff: top.d_ff.or(self.d_ff),
            activation: top.activation.or(self.activation),
            attention_impl: top.attention_impl.or(self.attention_impl),
            layer_layout: top.layer_layout.or(self.layer_layout),
            positional: top.positional.or(self.positional),
            pipeline_stages: top.pipeline_stages.or(self.pipeline_stages),
            dtype: top.dtype.or(self.dtype),
            vocab_parallel: top.vocab_parallel.or(self.vocab_parallel),
        }
    }

    /// Fills defaults (`a = b = t = 1`) and requires `h`, `L`, `s`, `v`.
    pub fn resolve(self) -> Result<TransformerConfig> {
        let missing = |field: &str| Error::invariant(field, "missing required field");
        let cfg = TransformerConfig {
            a: self.a.unwrap_or(1),
            b: self.b.unwrap_or(1),
            h: self.h.ok_or_else(|| missing("h"))?,
            layers: self.layers.ok_or_else(|| missing("L"))?,
            s: self.s.ok_or_else(|| missing("s"))?,
            t: self.t.unwrap_or(1),
            v: self.v.ok_or_else(|| missing("v"))?,
            mlp_ratio: self.mlp_ratio,
            d_ff: self.d_ff,
            activation: self.activation.unwrap_or_default(),
            attention_impl: self.attention_impl.unwrap_or_default(),
            layer_layout: self.layer_layout.unwrap_or_default(),
            positional: self.positional.unwrap_or_default(),
            pipeline_stages: self.pipeline_stages,
            dtype: self.dtype.unwrap_or(DType::Fp16),
            vocab_parallel: self.vocab_parallel.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GemmRole {
    QkvTransform,
    AttentionScore,
    AttentionOverValue,
    FusedFlashAttention,
    LinearProjection,
    MlpUp,
    MlpGate,
    MlpDown,
    LogitOutput,
}

impl GemmRole {
    pub const ALL: [GemmRole; 9] = [
        GemmRole::QkvTransform,
        GemmRole::AttentionScore,
        GemmRole::AttentionOverValue,
        GemmRole::FusedFlashAttention,
        GemmRole::LinearProjection,
        GemmRole::MlpUp,
        GemmRole::MlpGate,
        GemmRole::MlpDown,
        GemmRole::LogitOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GemmRole::QkvTransform => "QkvTransform",
            GemmRole::AttentionScore => "AttentionScore",
            GemmRole::AttentionOverValue => "AttentionOverValue",
            GemmRole::FusedFlashAttention => "FusedFlashAttention",
            GemmRole::LinearProjection => "LinearProjection",
            GemmRole::MlpUp => "MlpUp",
            GemmRole::MlpGate => "MlpGate",
            GemmRole::MlpDown => "MlpDown",
            GemmRole::LogitOutput => "LogitOutput",
        }
    }
}

impl fmt::Display for GemmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GemmRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().replace(['_', '-'], "").to_ascii_lowercase();
        GemmRole::ALL
            .into_iter()
            .find(|r| r.name().to_ascii_lowercase() == wanted)
            .ok_or_else(|| Error::Parse {
                what: "GEMM role".into(),
                message: format!("unknown role `{s}`"),
            })
    }
}

/// Attention computed by a single fused kernel; costed on the roofline only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashAttentionShape {
    pub b: u64,
    /// `(b·a)/t`: independent attention problems on one GPU.
    pub batch_heads: u64,
    pub s: u64,
    pub head_dim: u64,
    pub dtype: DType,
}

impl FlashAttentionShape {
    /// Same FLOPs as the score and attention-over-value BMMs it replaces.
    pub fn flops(&self) -> Result<u64> {
        [4, self.batch_heads, self.s, self.s, self.head_dim]
            .iter()
            .try_fold(1u64, |acc, &f| acc.checked_mul(f))
            .ok_or(Error::Overflow("flash attention flops"))
    }

    /// Q, K, V read once and O written once.
    pub fn bytes(&self) -> Result<u64> {
        [
            4,
            self.batch_heads,
            self.s,
            self.head_dim,
            self.dtype.bytes_per_element(),
        ]
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow("flash attention bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Gemm(GemmShape),
    FlashAttention(FlashAttentionShape),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub tflops: f64,
    pub latency_us: f64,
    /// `None` for roofline-only kernels.
    pub analysis: Option<GemmAnalysis>,
}

impl KernelEstimate {
    pub fn wave_efficiency(&self) -> Option<f64> {
        self.analysis.as_ref().map(|a| a.waves.wave_efficiency)
    }

    pub fn aligned(&self) -> Option<bool> {
        self.analysis.as_ref().map(|a| a.alignment.all_aligned())
    }
}

impl Kernel {
    pub fn flops(&self) -> Result<u64> {
        match self {
            Kernel::Gemm(g) => gemm::flops(g),
            Kernel::FlashAttention(f) => f.flops(),
        }
    }

    pub fn gemm(&self) -> Option<&GemmShape> {
        match self {
            Kernel::Gemm(g) => Some(g),
            Kernel::FlashAttention(_) => None,
        }
    }

    pub fn estimate(
        &self,
        gpu: &GpuSpec,
        calibration: Option<&CalibrationTable>,
    ) -> Result<KernelEstimate> {
        match self {
            Kernel::Gemm(g) => {
                let a = gemm::analyze(g, gpu, calibration)?;
                Ok(KernelEstimate {
                    tflops: a.predicted_tflops,
                    latency_us: a.predicted_latency_us,
                    analysis: Some(a),
                })
            }
            Kernel::FlashAttention(f) => {
                let flops = f.flops()?;
                let peak = gpu.peak_tflops(f.dtype)?;
                let tflops = gemm::roofline_tflops(flops, f.bytes()?, peak, gpu.mem_bandwidth_gbps);
                Ok(KernelEstimate {
                    tflops,
                    latency_us: gemm::latency_us(flops, tflops),
                    analysis: None,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerOp {
    pub role: GemmRole,
    pub kernel: Kernel,
}

/// Layer components that involve no GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonGemm {
    InputEmbedding,
    LayerNorm1,
    LayerNorm2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerEntry {
    Marker(NonGemm),
    Op(LayerOp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// One transformer layer, in execution order.
    pub layer: Vec<LayerEntry>,
    /// Model-level output projection.
    pub logit: LayerOp,
}

impl Decomposition {
    pub fn layer_ops(&self) -> impl Iterator<Item = &LayerOp> {
        self.layer.iter().filter_map(|e| match e {
            LayerEntry::Op(op) => Some(op),
            LayerEntry::Marker(_) => None,
        })
    }

    /// Layer ops followed by the logit op.
    pub fn all_ops(&self) -> impl Iterator<Item = &LayerOp> {
        self.layer_ops().chain(std::iter::once(&self.logit))
    }

    pub fn op(&self, role: GemmRole) -> Option<&LayerOp> {
        self.all_ops().find(|op| op.role == role)
    }

    pub fn gemm(&self, role: GemmRole) -> Option<&GemmShape> {
        self.op(role).and_then(|op| op.kernel.gemm())
    }
}

fn exact_div(num: u64, den: u64, what: &str) -> Result<u64> {
    if den == 0 || !num.is_multiple_of(den) {
        Err(Error::NotIntegral(what.to_string()))
    } else {
        Ok(num / den)
    }
}

/// Per-GPU GEMMs of one layer plus the logit GEMM.
pub fn decompose(cfg: &TransformerConfig) -> Result<Decomposition> {
    cfg.validate()?;
    let TransformerConfig { a, b, h, s, t, v, dtype, .. } = *cfg;
    let d_ff = cfg.d_ff();

    let head_dim = exact_div(h, a, "h/a")?;
    let h_t = exact_div(h, t, "h/t")?;
    let qkv_t = exact_div(3 * h, t, "3h/t")?;
    let d_ff_t = exact_div(d_ff, t, "d_ff/t")?;
    let bmm_batch = exact_div(b * a, t, "(b·a)/t")?;
    let logit_n = if cfg.vocab_parallel {
        exact_div(v, t, "v/t")?
    } else {
        v
    };
    let bs = b * s;

    let op = |role, g: GemmShape| LayerEntry::Op(LayerOp {
        role,
        kernel: Kernel::Gemm(g),
    });

    let mut layer = vec![
        LayerEntry::Marker(NonGemm::InputEmbedding),
        LayerEntry::Marker(NonGemm::LayerNorm1),
        op(GemmRole::QkvTransform, GemmShape::new(bs, h, qkv_t, dtype)),
    ];
    match cfg.attention_impl {
        AttentionImpl::Standard => {
            layer.push(op(
                GemmRole::AttentionScore,
                GemmShape::batched(bmm_batch, s, head_dim, s, dtype),
            ));
            layer.push(op(
                GemmRole::AttentionOverValue,
                GemmShape::batched(bmm_batch, s, s, head_dim, dtype),
            ));
        }
        AttentionImpl::Flash => layer.push(LayerEntry::Op(LayerOp {
            role: GemmRole::FusedFlashAttention,
            kernel: Kernel::FlashAttention(FlashAttentionShape {
                b,
                batch_heads: bmm_batch,
                s,
                head_dim,
                dtype,
            }),
        })),
    }
    layer.push(op(GemmRole::LinearProjection, GemmShape::new(bs, h_t, h, dtype)));
    layer.push(LayerEntry::Marker(NonGemm::LayerNorm2));
    layer.push(op(GemmRole::MlpUp, GemmShape::new(bs, h, d_ff_t, dtype)));
    if cfg.activation == Activation::Swiglu {
        layer.push(op(GemmRole::MlpGate, GemmShape::new(bs, h, d_ff_t, dtype)));
    }
    layer.push(op(GemmRole::MlpDown, GemmShape::new(bs, d_ff_t, h, dtype)));

    Ok(Decomposition {
        layer,
        logit: LayerOp {
            role: GemmRole::LogitOutput,
            kernel: Kernel::Gemm(GemmShape::new(bs, h, logit_n, dtype)),
        },
    })
}

/// Whole-model parameter counts split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub qkv: u64,
    pub projection: u64,
    pub mlp: u64,
    /// Layer norm scales/shifts and every bias.
    pub norms_and_biases: u64,
    pub word_embedding: u64,
    pub position_embedding: u64,
}

impl ParamBreakdown {
    pub fn total(&self) -> u64 {
        self.qkv
            + self.projection
            + self.mlp
            + self.norms_and_biases
            + self.word_embedding
            + self.position_embedding
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Sum of the breakdown; valid for every architecture variant.
    pub total: u64,
    /// `12h²L + 13hL + (v+s)h`, present for the canonical architecture only.
    pub closed_form: Option<u64>,
    /// `12h²L`.
    pub approx: u64,
    pub breakdown: ParamBreakdown,
}

pub fn param_count(cfg: &TransformerConfig) -> ParamCount {
    let (h, l, v, s) = (cfg.h, cfg.layers, cfg.v, cfg.s);
    let d_ff = cfg.d_ff();
    let mlp_mats = match cfg.activation {
        Activation::GluLike => 2,
        Activation::Swiglu => 3,
    };
    let up_biases = match cfg.activation {
        Activation::GluLike => d_ff,
        Activation::Swiglu => 2 * d_ff,
    };
    // two layer norms (scale + shift), QKV/proj/MLP biases
    let per_layer_small = 4 * h + 3 * h + h + up_biases + h;
    let breakdown = ParamBreakdown {
        qkv: 3 * h * h * l,
        projection: h * h * l,
        mlp: mlp_mats * h * d_ff * l,
        norms_and_biases: per_layer_small * l,
        word_embedding: v * h,
        position_embedding: if cfg.positional == Positional::Learned { s * h } else { 0 },
    };
    let canonical = cfg.is_canonical_mlp() && cfg.positional == Positional::Learned;
    ParamCount {
        total: breakdown.total(),
        closed_form: canonical.then(|| 12 * h * h * l + 13 * h * l + (v + s) * h),
        approx: 12 * h * h * l,
        breakdown,
    }
}

/// Closed-form forward FLOPs of one full (all tensor-parallel ranks) layer:
/// `24bsh² + 4bs²h`. Requires the canonical MLP.
pub fn forward_flops_per_layer(cfg: &TransformerConfig) -> Result<u64> {
    if !cfg.is_canonical_mlp() {
        return Err(Error::InvalidInput(
            "closed-form layer FLOPs require a GLU-like MLP with d_ff = 4h".into(),
        ));
    }
    let (b, s, h) = (cfg.b as u128, cfg.s as u128, cfg.h as u128);
    let total = 24 * b * s * h * h + 4 * b * s * s * h;
    u64::try_from(total).map_err(|_| Error::Overflow("layer flops"))
}

/// Per-GPU forward FLOPs of one layer summed over its decomposed kernels.
pub fn decomposed_flops_per_layer(cfg: &TransformerConfig) -> Result<u64> {
    decompose(cfg)?.layer_ops().try_fold(0u64, |acc, op| {
        acc.checked_add(op.kernel.flops()?)
            .ok_or(Error::Overflow("layer flops"))
    })
}

/// Predicted latency of each layer op (logit excluded).
pub fn layer_latencies(
    cfg: &TransformerConfig,
    gpu: &GpuSpec,
    calibration: Option<&CalibrationTable>,
) -> Result<Vec<(GemmRole, KernelEstimate)>> {
    decompose(cfg)?
        .layer_ops()
        .map(|op| Ok((op.role, op.kernel.estimate(gpu, calibration)?)))
        .collect()
}

/// Share of one layer's predicted latency spent in each role.
///
/// The parallel layout is summed exactly like the sequential one.
pub fn latency_proportions(
    cfg: &TransformerConfig,
    gpu: &GpuSpec,
    calibration: Option<&CalibrationTable>,
) -> Result<BTreeMap<GemmRole, f64>> {
    let latencies = layer_latencies(cfg, gpu, calibration)?;
    let total: f64 = latencies.iter().map(|(_, e)| e.latency_us).sum();
    let mut out = BTreeMap::new();
    for (role, e) in latencies {
        *out.entry(role).or_insert(0.0) += e.latency_us / total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::builtin_gpu;

    fn gpt3_2_7b() -> TransformerConfig {
        TransformerConfig::new(32, 4, 2560, 32, 2048, 1, 50304)
    }

    #[test]
    fn attention_score_head_dim_80() {
        let d = decompose(&gpt3_2_7b()).unwrap();
        let g = d.gemm(GemmRole::AttentionScore).unwrap();
        assert_eq!((g.batch, g.m, g.k, g.n), (128, 2048, 80, 2048));
        let g = d.gemm(GemmRole::AttentionOverValue).unwrap();
        assert_eq!((g.batch, g.m, g.k, g.n), (128, 2048, 2048, 80));
    }

    #[test]
    fn qkv_with_tensor_parallelism() {
        let cfg = TransformerConfig::new(32, 1, 4096, 32, 2048, 2, 50304);
        let d = decompose(&cfg).unwrap();
        let g = d.gemm(GemmRole::QkvTransform).unwrap();
        assert_eq!((g.batch, g.m, g.k, g.n), (1, 2048, 4096, 6144));
        let g = d.gemm(GemmRole::LinearProjection).unwrap();
        assert_eq!((g.m, g.k, g.n), (2048, 2048, 4096));
        let g = d.gemm(GemmRole::AttentionScore).unwrap();
        assert_eq!(g.batch, 16);
    }

    #[test]
    fn swiglu_adds_gate_matching_up() {
        let mut cfg = TransformerConfig::new(32, 1, 4096, 32, 2048, 1, 32000);
        cfg.activation = Activation::Swiglu;
        cfg.d_ff = Some(11008);
        let d = decompose(&cfg).unwrap();
        let up = d.gemm(GemmRole::MlpUp).unwrap();
        assert_eq!((up.m, up.k, up.n), (2048, 4096, 11008));
        assert_eq!(d.gemm(GemmRole::MlpGate), Some(up));
        let down = d.gemm(GemmRole::MlpDown).unwrap();
        assert_eq!((down.m, down.k, down.n), (2048, 11008, 4096));

        let glu = decompose(&TransformerConfig::new(32, 1, 4096, 32, 2048, 1, 32000)).unwrap();
        assert_eq!(d.layer_ops().count(), glu.layer_ops().count() + 1);
        assert!(glu.gemm(GemmRole::MlpGate).is_none());
    }

    #[test]
    fn swiglu_default_dff() {
        let mut cfg = TransformerConfig::new(32, 1, 4096, 32, 2048, 1, 32000);
        cfg.activation = Activation::Swiglu;
        assert_eq!(cfg.d_ff(), 10923);
        cfg.mlp_ratio = Some("2.6875".parse().unwrap());
        assert_eq!(cfg.d_ff(), 11008);
    }

    #[test]
    fn flash_replaces_bmms() {
        let mut cfg = gpt3_2_7b();
        cfg.attention_impl = AttentionImpl::Flash;
        let d = decompose(&cfg).unwrap();
        assert!(d.op(GemmRole::AttentionScore).is_none());
        assert!(d.op(GemmRole::AttentionOverValue).is_none());
        let op = d.op(GemmRole::FusedFlashAttention).unwrap();
        match op.kernel {
            Kernel::FlashAttention(f) => {
                assert_eq!((f.b, f.batch_heads, f.s, f.head_dim), (4, 128, 2048, 80))
            }
            _ => panic!("expected fused kernel"),
        }
        assert_eq!(
            decomposed_flops_per_layer(&cfg).unwrap(),
            decomposed_flops_per_layer(&gpt3_2_7b()).unwrap()
        );
    }

    #[test]
    fn divisibility_errors_name_quotient() {
        let cases = [
            (TransformerConfig::new(30, 1, 2560, 1, 2048, 1, 64), "h/a"),
            (TransformerConfig::new(32, 1, 2560, 1, 2048, 3, 64), "h/t"),
            (TransformerConfig::new(2, 1, 2560, 1, 2048, 4, 64), "(b·a)/t"),
        ];
        for (cfg, what) in cases {
            let err = decompose(&cfg).unwrap_err().to_string();
            assert_eq!(err, format!("{what} not integral"));
        }
        let mut cfg = TransformerConfig::new(32, 1, 4096, 1, 2048, 2, 64);
        cfg.d_ff = Some(11001);
        assert_eq!(decompose(&cfg).unwrap_err().to_string(), "d_ff/t not integral");
        let mut cfg = TransformerConfig::new(32, 1, 4096, 1, 2048, 2, 50257);
        cfg.vocab_parallel = true;
        assert_eq!(decompose(&cfg).unwrap_err().to_string(), "v/t not integral");
        cfg.vocab_parallel = false;
        assert_eq!(decompose(&cfg).unwrap().gemm(GemmRole::LogitOutput).unwrap().n, 50257);
    }

    #[test]
    fn param_formula_values() {
        let cfg = TransformerConfig::new(32, 1, 2560, 32, 2048, 1, 50304);
        let p = param_count(&cfg);
        assert_eq!(p.closed_form, Some(2_651_668_480));
        assert_eq!(p.total, 2_651_668_480);
        assert_eq!(p.approx, 2_516_582_400);

        let unit = param_count(&TransformerConfig::new(1, 1, 1, 1, 1, 1, 1));
        assert_eq!((unit.total, unit.closed_form), (27, Some(27)));

        let mut swiglu = cfg.clone();
        swiglu.activation = Activation::Swiglu;
        let p = param_count(&swiglu);
        assert_eq!(p.closed_form, None);
        assert_eq!(p.breakdown.mlp, 3 * 2560 * swiglu.d_ff() * 32);
    }

    #[test]
    fn layer_flops_closed_form() {
        let cfg = TransformerConfig::new(32, 1, 2560, 32, 2048, 1, 50304);
        let one = forward_flops_per_layer(&cfg).unwrap();
        assert_eq!(one, 365_072_220_160);
        let mut two = cfg.clone();
        two.b = 2;
        assert_eq!(forward_flops_per_layer(&two).unwrap(), 2 * one);
        assert_eq!(decomposed_flops_per_layer(&cfg).unwrap(), one);

        // s = 6h makes the attention term equal to the dense term
        let sq = TransformerConfig::new(1, 1, 64, 1, 384, 1, 64);
        let dense = 24 * 384 * 64 * 64;
        assert_eq!(forward_flops_per_layer(&sq).unwrap(), 2 * dense);

        let mut swiglu = cfg.clone();
        swiglu.activation = Activation::Swiglu;
        assert!(forward_flops_per_layer(&swiglu).is_err());
    }

    #[test]
    fn bs_gemms_depend_on_product_bmms_on_b() {
        let x = decompose(&TransformerConfig::new(32, 2, 4096, 1, 2048, 1, 50304)).unwrap();
        let y = decompose(&TransformerConfig::new(32, 4, 4096, 1, 1024, 1, 50304)).unwrap();
        for role in [
            GemmRole::QkvTransform,
            GemmRole::LinearProjection,
            GemmRole::MlpUp,
            GemmRole::MlpDown,
            GemmRole::LogitOutput,
        ] {
            assert_eq!(x.gemm(role), y.gemm(role), "{role}");
        }
        for role in [GemmRole::AttentionScore, GemmRole::AttentionOverValue] {
            assert_ne!(x.gemm(role), y.gemm(role), "{role}");
        }
    }

    #[test]
    fn proportions() {
        let a100 = builtin_gpu("A100").unwrap();
        let p = latency_proportions(&gpt3_2_7b(), &a100, None).unwrap();
        assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let big = TransformerConfig::new(128, 1, 16384, 1, 2048, 1, 51200);
        let p = latency_proportions(&big, &a100, None).unwrap();
        let dense = p[&GemmRole::QkvTransform] + p[&GemmRole::MlpUp] + p[&GemmRole::MlpDown];
        let bmm = p[&GemmRole::AttentionScore] + p[&GemmRole::AttentionOverValue];
        assert!(dense > bmm, "{p:?}");

        let bmm_share = |s| {
            let cfg = TransformerConfig::new(32, 1, 4096, 1, s, 1, 51200);
            let p = latency_proportions(&cfg, &a100, None).unwrap();
            p[&GemmRole::AttentionScore] + p[&GemmRole::AttentionOverValue]
        };
        assert!(bmm_share(8192) > bmm_share(1024));

        let mut par = gpt3_2_7b();
        par.layer_layout = LayerLayout::Parallel;
        assert_eq!(
            latency_proportions(&par, &a100, None).unwrap(),
            latency_proportions(&gpt3_2_7b(), &a100, None).unwrap()
        );
    }

    #[test]
    fn config_file_and_overlay() {
        let text = r#"
a = 32
b = 4
h = 2560
L = 32
s = 2048
v = 50304
activation = "swiglu"
mlp_ratio = "8/3"
attention_impl = "flash"
"#;
        let cfg = TransformerConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.t, 1);
        assert_eq!(cfg.layers, 32);
        assert_eq!(cfg.activation, Activation::Swiglu);
        assert_eq!(cfg.effective_mlp_ratio(), MlpRatio::EIGHT_THIRDS);
        let round = TransformerConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);

        let base = PartialConfig::from_toml_str(text).unwrap();
        let top = PartialConfig {
            a: Some(40),
            ..Default::default()
        };
        let merged = base.overlay(top).resolve().unwrap();
        assert_eq!((merged.a, merged.h), (40, 2560));

        let err = TransformerConfig::from_toml_str("a = 1\nh = 64\nL = 1\ns = 1").unwrap_err();
        assert!(err.to_string().contains("`v`"), "{err}");
        assert!(PartialConfig::from_toml_str("hidden = 3").is_err());
        assert!(TransformerConfig::from_toml_str("h = 0\nL = 1\ns = 1\nv = 1").is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("8/3".parse::<MlpRatio>().unwrap(), MlpRatio::EIGHT_THIRDS);
        assert_eq!("16/6".parse::<MlpRatio>().unwrap(), MlpRatio::EIGHT_THIRDS);
        assert_eq!("3.5".parse::<MlpRatio>().unwrap(), MlpRatio::new(7, 2).unwrap());
        assert_eq!("4".parse::<MlpRatio>().unwrap(), MlpRatio::FOUR);
        assert!("0".parse::<MlpRatio>().is_err());
        assert!("x/3".parse::<MlpRatio>().is_err());
        assert_eq!(MlpRatio::EIGHT_THIRDS.scale_round(4096), 10923);
        assert_eq!(MlpRatio::new(7, 2).unwrap().scale_round(8192), 28672);
        assert_eq!(MlpRatio::new(1, 2).unwrap().scale_round(3), 2);
    }
}
