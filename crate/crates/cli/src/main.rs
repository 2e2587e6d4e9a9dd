mod table;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tfshape::calibration::{write_plan, write_sweep, SweepDim, SweepSpec};
use tfshape::gemm::{select_tile, wave_stats, GemmShape};
use tfshape::optimizer::{suggest, swiglu_dff_search, Knob, RankBy, SearchSpace};
use tfshape::rules::{lint_with, LintOptions, RuleReport, DEFAULT_WAVE_THRESHOLD};
use tfshape::transformer::{
    decompose, decomposed_flops_per_layer, forward_flops_per_layer, latency_proportions,
    param_count, Activation, AttentionImpl, GemmRole, LayerEntry, LayerLayout, MlpRatio,
    PartialConfig, Positional, TransformerConfig,
};
use tfshape::{
    builtin_gpu, emit_bench_plan, explain, ingest_measurements, is_wave_free, load_gpu_spec,
    run_sweep, CalibrationTable, DType, Error, GpuSpec, Interpolation, PlanSource, TileSpec,
};

use table::{Cell, Format, Table};

/// Environment variable naming a directory of `<gpu>.toml` specs.
const GPU_DIR_ENV: &str = "TFSHAPE_GPU_DIR";
const EXIT_USAGE: u8 = 64;
const EXIT_FAILURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "tfshape", version, about = "Shape analysis and linting for transformer models")]
struct Cli {
    /// Built-in GPU name (V100, A100, H100, MI250X), a spec file, or a name
    /// resolved in $TFSHAPE_GPU_DIR.
    #[arg(long, global = true, default_value = "A100")]
    gpu: String,

    #[arg(long, global = true, value_enum, default_value = "table")]
    format: Format,

    /// Measurement CSV used to calibrate estimates.
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "nearest")]
    interp: InterpArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InterpArg {
    Exact,
    Nearest,
}

impl From<InterpArg> for Interpolation {
    fn from(v: InterpArg) -> Self {
        match v {
            InterpArg::Exact => Interpolation::ExactOnly,
            InterpArg::Nearest => Interpolation::NearestLogShape,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RankArg {
    Proximity,
    Latency,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML model config; inline flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attention heads.
    #[arg(long)]
    a: Option<u64>,
    /// Microbatch size.
    #[arg(long)]
    b: Option<u64>,
    /// Hidden size.
    #[arg(long)]
    h: Option<u64>,
    /// Layer count.
    #[arg(long = "L", visible_alias = "layers")]
    layers: Option<u64>,
    /// Sequence length.
    #[arg(long)]
    s: Option<u64>,
    /// Tensor-parallel degree.
    #[arg(long)]
    t: Option<u64>,
    /// Vocabulary size.
    #[arg(long)]
    v: Option<u64>,
    #[arg(long = "d-ff")]
    d_ff: Option<u64>,
    /// MLP expansion ratio such as 4 or 8/3.
    #[arg(long)]
    mlp_ratio: Option<MlpRatio>,
    /// glu_like or swiglu.
    #[arg(long)]
    activation: Option<Activation>,
    /// standard or flash.
    #[arg(long)]
    attention: Option<AttentionImpl>,
    /// sequential or parallel.
    #[arg(long)]
    layout: Option<LayerLayout>,
    /// learned, rotary or alibi.
    #[arg(long)]
    positional: Option<Positional>,
    #[arg(long)]
    pipeline_stages: Option<u64>,
    #[arg(long)]
    dtype: Option<DType>,
    /// Split the logit GEMM across tensor-parallel ranks.
    #[arg(long)]
    vocab_parallel: bool,
}

impl ConfigArgs {
    fn inline(&self) -> PartialConfig {
        PartialConfig {
            a: self.a,
            b: self.b,
            h: self.h,
            layers: self.layers,
            s: self.s,
            t: self.t,
            v: self.v,
            mlp_ratio: self.mlp_ratio,
            d_ff: self.d_ff,
            activation: self.activation,
            attention_impl: self.attention,
            layer_layout: self.layout,
            positional: self.positional,
            pipeline_stages: self.pipeline_stages,
            dtype: self.dtype,
            vocab_parallel: self.vocab_parallel.then_some(true),
        }
    }

    fn merged(&self) -> Result<PartialConfig, Error> {
        let base = match &self.config {
            Some(path) => PartialConfig::load(path)?,
            None => PartialConfig::default(),
        };
        Ok(base.overlay(self.inline()))
    }

    fn resolve(&self) -> Result<TransformerConfig, Error> {
        self.merged()?.resolve()
    }
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    /// Dimension to sweep: a, b, h, s, v or d_ff.
    #[arg(long = "dim")]
    dimension: SweepDim,
    #[arg(long)]
    start: u64,
    #[arg(long)]
    end: u64,
    #[arg(long, default_value_t = 64)]
    step: u64,
    /// Hold h/a fixed by deriving a from h at every point.
    #[arg(long)]
    head_dim: Option<u64>,
    /// Restrict to these GEMM roles (comma separated).
    #[arg(long, value_delimiter = ',')]
    roles: Vec<GemmRole>,
}

/// Optional sweep flags for `bench-plan`; without `--dim` the plan covers
/// the config itself.
#[derive(Args, Debug, Clone)]
struct PlanSweepArgs {
    /// Dimension to sweep: a, b, h, s, v or d_ff.
    #[arg(long = "dim", requires_all = ["start", "end"])]
    dimension: Option<SweepDim>,
    #[arg(long, requires = "dimension")]
    start: Option<u64>,
    #[arg(long, requires = "dimension")]
    end: Option<u64>,
    #[arg(long, default_value_t = 64)]
    step: u64,
    /// Hold h/a fixed by deriving a from h at every point.
    #[arg(long)]
    head_dim: Option<u64>,
    /// Restrict to these GEMM roles (comma separated).
    #[arg(long, value_delimiter = ',')]
    roles: Vec<GemmRole>,
}

impl PlanSweepArgs {
    fn into_sweep(self) -> Option<SweepArgs> {
        Some(SweepArgs {
            dimension: self.dimension?,
            start: self.start?,
            end: self.end?,
            step: self.step,
            head_dim: self.head_dim,
            roles: self.roles,
        })
    }
}

impl SweepArgs {
    fn spec(&self, base: TransformerConfig) -> SweepSpec {
        let mut spec = SweepSpec::new(base, self.dimension, self.start, self.end, self.step);
        spec.fixed_head_dim = self.head_dim;
        if !self.roles.is_empty() {
            spec.roles = Some(self.roles.clone());
        }
        spec
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a config against the shape rules (exit 0 pass, 1 warnings, 2 errors).
    Lint {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = DEFAULT_WAVE_THRESHOLD)]
        wave_threshold: f64,
    },
    /// List the GEMMs of one layer and the logit layer with estimates.
    Decompose {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Show each role's share of layer latency instead.
        #[arg(long)]
        proportions: bool,
    },
    /// Parameter count by component.
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Forward FLOPs per layer and per model.
    Flops {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Tile grid and wave quantization for one GEMM.
    Wave {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 64)]
        k: u64,
        #[arg(long, default_value_t = 1)]
        batch: u64,
        /// Tile such as 128x256; chosen by the cost model when omitted.
        #[arg(long)]
        tile: Option<TileSpec>,
        /// SM count; defaults to the GPU's.
        #[arg(long)]
        sms: Option<u64>,
        #[arg(long, default_value = "fp16")]
        dtype: DType,
    },
    /// Rank nearby configs with a similar parameter count.
    Suggest {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Fields the search may change (comma separated: a, h, d_ff, v, t).
        #[arg(long, value_delimiter = ',', default_value = "a,v")]
        vary: Vec<Knob>,
        #[arg(long, value_enum, default_value = "proximity")]
        rank_by: RankArg,
        /// Maximum relative parameter change.
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
        /// Relative half-width of the h range.
        #[arg(long, default_value_t = 0.1)]
        h_window: f64,
        /// Half-width of the d_ff range.
        #[arg(long, default_value_t = 1024)]
        dff_window: u64,
        #[arg(long, default_value_t = DEFAULT_WAVE_THRESHOLD)]
        wave_threshold: f64,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Scan SwiGLU intermediate sizes around ratio·h.
    SwigluSearch {
        #[arg(long)]
        h: u64,
        #[arg(long, default_value = "8/3")]
        ratio: MlpRatio,
        #[arg(long, default_value_t = 512)]
        window: u64,
        #[arg(long, default_value_t = 1)]
        b: u64,
        #[arg(long, default_value_t = 2048)]
        s: u64,
        #[arg(long, default_value_t = 1)]
        t: u64,
        #[arg(long, default_value = "fp16")]
        dtype: DType,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Emit the GEMM shapes to benchmark for a config or a sweep.
    BenchPlan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        sweep: PlanSweepArgs,
        /// Write the plan CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a measurement CSV and summarize it.
    Ingest { path: PathBuf },
    /// Predicted throughput along one config dimension.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Write the sweep CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a rule (R1 to R12).
    Explain { rule: String },
}

struct Ctx {
    gpu_arg: String,
    format: Format,
    calibration: Option<CalibrationTable>,
}

impl Ctx {
    fn gpu(&self) -> Result<GpuSpec, Error> {
        resolve_gpu(&self.gpu_arg)
    }

    fn cal(&self) -> Option<&CalibrationTable> {
        self.calibration.as_ref()
    }
}

fn resolve_gpu(arg: &str) -> Result<GpuSpec, Error> {
    let path = Path::new(arg);
    if path.is_file() {
        return load_gpu_spec(path);
    }
    if let Some(gpu) = builtin_gpu(arg) {
        return Ok(gpu);
    }
    if let Some(dir) = std::env::var_os(GPU_DIR_ENV) {
        let candidate = Path::new(&dir).join(format!("{arg}.toml"));
        if candidate.is_file() {
            return load_gpu_spec(candidate);
        }
    }
    Err(Error::UnknownGpu(arg.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let closed = e
                .downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe);
            if closed {
                return ExitCode::SUCCESS;
            }
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, Box<dyn std::error::Error>> {
    let calibration = match &cli.calibration {
        Some(path) => {
            let ingested = ingest_measurements(path, cli.interp.into())?;
            for s in &ingested.skipped {
                eprintln!("warning: {}: row {} skipped: {}", path.display(), s.row, s.reason);
            }
            Some(ingested.table)
        }
        None => None,
    };
    let ctx = Ctx {
        gpu_arg: cli.gpu,
        format: cli.format,
        calibration,
    };

    match cli.command {
        Command::Lint { cfg, wave_threshold } => {
            let cfg = cfg.resolve()?;
            let report = lint_with(&cfg, &ctx.gpu()?, &LintOptions { wave_threshold });
            print_lint(&report, ctx.format, out)?;
            return Ok(report.exit_code() as u8);
        }
        Command::Decompose { cfg, proportions } => {
            let cfg = cfg.resolve()?;
            if proportions {
                print_proportions(&cfg, &ctx, out)?;
            } else {
                print_decomposition(&cfg, &ctx, out)?;
            }
        }
        Command::Params { cfg } => print_params(&cfg.resolve()?, ctx.format, out)?,
        Command::Flops { cfg } => print_flops(&cfg.resolve()?, ctx.format, out)?,
        Command::Wave {
            m,
            n,
            k,
            batch,
            tile,
            sms,
            dtype,
        } => {
            let g = GemmShape::batched(batch, m, k, n, dtype);
            g.validate()?;
            let needs_gpu = tile.is_none() || sms.is_none();
            let gpu = if needs_gpu { Some(ctx.gpu()?) } else { None };
            let tile = match (tile, &gpu) {
                (Some(t), _) => t,
                (None, Some(gpu)) => select_tile(&g, gpu),
                (None, None) => unreachable!(),
            };
            let sms = sms.or(gpu.as_ref().map(|g| g.sm_count)).unwrap_or(1);
            let w = wave_stats(&g, tile, sms)?;
            let mut t = Table::new(&["quantity", "value"]);
            let rows: [(&str, Cell); 11] = [
                ("tile", tile.to_string().into()),
                ("sm_count", sms.into()),
                ("grid_rows", w.grid_rows.into()),
                ("grid_cols", w.grid_cols.into()),
                ("total_blocks", w.total_blocks.into()),
                ("waves", w.wave_count.into()),
                ("full_waves", w.full_waves.into()),
                ("tail", w.tail_blocks.into()),
                ("wave_efficiency", Cell::Float(w.wave_efficiency, 4)),
                ("tile_waste", Cell::Float(tfshape::tile_waste(m, n, tile), 4)),
                ("wave_free", Cell::Bool(is_wave_free(m, n, tile, sms))),
            ];
            for (name, value) in rows {
                t.push(vec![name.into(), value]);
            }
            t.write(ctx.format, out)?;
        }
        Command::Suggest {
            cfg,
            vary,
            rank_by,
            tolerance,
            h_window,
            dff_window,
            wave_threshold,
            top,
        } => {
            let cfg = cfg.resolve()?;
            let mut space = SearchSpace::varying(vary);
            space.budget_tolerance = tolerance;
            space.h_window = h_window;
            space.d_ff_window = dff_window;
            space.lint = LintOptions { wave_threshold };
            space.rank_by = match rank_by {
                RankArg::Proximity => RankBy::Proximity,
                RankArg::Latency => RankBy::Latency,
            };
            let found = suggest(&cfg, &ctx.gpu()?, &space, ctx.cal())?;
            let shown = &found[..found.len().min(top)];
            if found.is_empty() {
                eprintln!("no candidate within the parameter budget is free of errors");
            }
            if ctx.format == Format::Json {
                serde_json::to_writer_pretty(&mut *out, shown)?;
                writeln!(out)?;
            } else {
                let mut t = Table::new(&[
                    "rank", "changes", "param_delta_pct", "model_latency_ms", "warn", "info",
                    "caveat",
                ]);
                for c in shown {
                    let changes: Vec<String> = c
                        .changes
                        .iter()
                        .map(|ch| format!("{} {}->{}", ch.field, ch.from, ch.to))
                        .collect();
                    let changes = if changes.is_empty() {
                        "(baseline)".to_string()
                    } else {
                        changes.join(", ")
                    };
                    t.push(vec![
                        (c.rank as u64).into(),
                        changes.into(),
                        Cell::Float(100.0 * c.param_delta_fraction, 3),
                        Cell::Float(c.predicted_model_latency_us / 1000.0, 3),
                        (c.report.counts.warn as u64).into(),
                        (c.report.counts.info as u64).into(),
                        c.caveats.join("; ").into(),
                    ]);
                }
                t.write(ctx.format, out)?;
            }
        }
        Command::SwigluSearch {
            h,
            ratio,
            window,
            b,
            s,
            t,
            dtype,
            top,
        } => {
            let mut base = TransformerConfig::new(1, b, h, 1, s, t, 1);
            base.dtype = dtype;
            let found = swiglu_dff_search(h, ratio, window, &ctx.gpu()?, &base, ctx.cal())?;
            let mut table = Table::new(&["d_ff", "d_ff_per_gpu", "pow2_divisor", "aligned", "mlp_latency_us"]);
            for c in found.iter().take(top) {
                table.push(vec![
                    c.d_ff.into(),
                    (c.d_ff / t).into(),
                    c.divisor.into(),
                    Cell::Bool(c.aligned()),
                    Cell::Float(c.mlp_latency_us, 3),
                ]);
            }
            table.write(ctx.format, out)?;
        }
        Command::BenchPlan { cfg, sweep, out: path } => {
            let gpu = ctx.gpu()?;
            let rows = match &sweep.into_sweep() {
                Some(sw) => {
                    let spec = sw.spec(cfg.resolve()?);
                    emit_bench_plan(PlanSource::Sweep(&spec), &gpu)?
                }
                None => emit_bench_plan(PlanSource::Config(&cfg.resolve()?), &gpu)?,
            };
            match path {
                Some(p) => {
                    let f = std::fs::File::create(&p)?;
                    write_plan(&rows, f)?;
                    writeln!(out, "wrote {} plan rows to {}", rows.len(), p.display())?;
                }
                None if ctx.format == Format::Csv => write_plan(&rows, &mut *out)?,
                None => {
                    let mut t = Table::new(&["gpu", "dtype", "batch", "m", "k", "n"]);
                    for r in &rows {
                        t.push(vec![
                            r.gpu.clone().into(),
                            r.dtype.name().into(),
                            r.batch.into(),
                            r.m.into(),
                            r.k.into(),
                            r.n.into(),
                        ]);
                    }
                    t.write(ctx.format, out)?;
                }
            }
        }
        Command::Ingest { path } => {
            let ingested = ingest_measurements(&path, ctx.cal().map_or(Interpolation::default(), |c| c.policy))?;
            for s in &ingested.skipped {
                eprintln!("row {} skipped: {}", s.row, s.reason);
            }
            let mut t = Table::new(&["gpu", "dtype", "batch", "m", "k", "n", "tflops", "repeats"]);
            for r in ingested.table.records() {
                let k = &r.key;
                t.push(vec![
                    k.gpu.clone().into(),
                    k.dtype.name().into(),
                    k.batch.into(),
                    k.m.into(),
                    k.k.into(),
                    k.n.into(),
                    Cell::Float(r.measured_tflops, 3),
                    r.repeats.into(),
                ]);
            }
            t.write(ctx.format, out)?;
            if ctx.format == Format::Table {
                writeln!(
                    out,
                    "{} records, {} rows skipped",
                    ingested.table.len(),
                    ingested.skipped.len()
                )?;
            }
        }
        Command::Sweep { cfg, sweep, out: path } => {
            let spec = sweep.spec(cfg.resolve()?);
            let points = run_sweep(&spec, &ctx.gpu()?, ctx.cal())?;
            let x_name = spec.dimension.name();
            match path {
                Some(p) => {
                    tfshape::export_sweep(x_name, &points, &p)?;
                    writeln!(out, "wrote {} sweep rows to {}", points.len(), p.display())?;
                }
                None if ctx.format == Format::Csv => write_sweep(x_name, &points, &mut *out)?,
                None => {
                    let mut t = Table::new(&[
                        "x", "role", "predicted_tflops", "predicted_latency_us", "wave_efficiency",
                        "aligned",
                    ]);
                    for p in &points {
                        t.push(vec![
                            p.x.into(),
                            p.role.name().into(),
                            Cell::Float(p.predicted_tflops, 3),
                            Cell::Float(p.predicted_latency_us, 3),
                            p.wave_efficiency.map_or(Cell::Empty, |w| Cell::Float(w, 4)),
                            p.aligned.map_or(Cell::Empty, Cell::Bool),
                        ]);
                    }
                    t.write(ctx.format, out)?;
                }
            }
        }
        Command::Explain { rule } => writeln!(out, "{}", explain(&rule)?)?,
    }
    Ok(0)
}

fn print_lint(report: &RuleReport, format: Format, out: &mut dyn Write) -> io::Result<()> {
    if format == Format::Json {
        serde_json::to_writer_pretty(&mut *out, report)?;
        return writeln!(out);
    }
    let mut t = Table::new(&["rule", "severity", "subject", "observed", "suggestion", "message"]);
    for d in &report.diagnostics {
        let suggestion = d.suggestion.as_ref().map(|s| {
            let values: Vec<String> = s.values.iter().map(u64::to_string).collect();
            format!("{}={}", s.field, values.join("|"))
        });
        t.push(vec![
            d.rule_id.to_string().into(),
            d.severity.to_string().into(),
            d.subject.clone().into(),
            d.observed.clone().into(),
            suggestion.into(),
            d.message.clone().into(),
        ]);
    }
    t.write(format, out)?;
    if format == Format::Table {
        let c = report.counts;
        writeln!(
            out,
            "\n{}: {} error(s), {} warning(s), {} info on {}",
            if report.pass { "PASS" } else { "FAIL" },
            c.error,
            c.warn,
            c.info,
            report.gpu
        )?;
        for note in &report.notes {
            writeln!(out, "note: {note}")?;
        }
    }
    Ok(())
}

fn print_decomposition(cfg: &TransformerConfig, ctx: &Ctx, out: &mut dyn Write) -> Result<(), Box<dyn std::error::Error>> {
    let d = decompose(cfg)?;
    let gpu = ctx.gpu()?;
    let mut t = Table::new(&[
        "step", "batch", "m", "k", "n", "gflops", "tile", "waves", "wave_eff", "aligned", "tflops",
        "latency_us",
    ]);
    let blanks = || vec![Cell::Empty; 11];
    let logit = LayerEntry::Op(d.logit);
    for entry in d.layer.iter().chain(std::iter::once(&logit)) {
        let op = match entry {
            LayerEntry::Marker(m) => {
                let mut row = vec![Cell::text(format!("{m:?}"))];
                row.extend(blanks());
                t.push(row);
                continue;
            }
            LayerEntry::Op(op) => op,
        };
        let e = op.kernel.estimate(&gpu, ctx.cal())?;
        let gflops = Cell::Float(op.kernel.flops()? as f64 / 1e9, 3);
        let mut row = vec![Cell::text(op.role.name())];
        match (op.kernel.gemm(), &e.analysis) {
            (Some(g), Some(a)) => row.extend([
                g.batch.into(),
                g.m.into(),
                g.k.into(),
                g.n.into(),
                gflops,
                a.chosen_tile.to_string().into(),
                a.waves.wave_count.into(),
                Cell::Float(a.waves.wave_efficiency, 4),
                Cell::Bool(a.alignment.all_aligned()),
            ]),
            _ => {
                row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, gflops]);
                row.extend([Cell::text("fused"), Cell::Empty, Cell::Empty, Cell::Empty]);
            }
        }
        row.extend([Cell::Float(e.tflops, 2), Cell::Float(e.latency_us, 3)]);
        t.push(row);
    }
    t.write(ctx.format, out)?;
    Ok(())
}

fn print_proportions(cfg: &TransformerConfig, ctx: &Ctx, out: &mut dyn Write) -> Result<(), Box<dyn std::error::Error>> {
    let shares = latency_proportions(cfg, &ctx.gpu()?, ctx.cal())?;
    let mut t = Table::new(&["role", "latency_share"]);
    for (role, share) in shares {
        t.push(vec![role.name().into(), Cell::Float(share, 4)]);
    }
    t.write(ctx.format, out)?;
    Ok(())
}

fn print_params(cfg: &TransformerConfig, format: Format, out: &mut dyn Write) -> io::Result<()> {
    let p = param_count(cfg);
    let b = p.breakdown;
    let mut t = Table::new(&["component", "parameters"]);
    for (name, v) in [
        ("qkv", b.qkv),
        ("projection", b.projection),
        ("mlp", b.mlp),
        ("norms_and_biases", b.norms_and_biases),
        ("word_embedding", b.word_embedding),
        ("position_embedding", b.position_embedding),
        ("total", p.total),
    ] {
        t.push(vec![name.into(), v.into()]);
    }
    if let Some(closed) = p.closed_form {
        t.push(vec!["closed_form".into(), closed.into()]);
    }
    t.push(vec!["approx_12h2L".into(), p.approx.into()]);
    t.write(format, out)
}

fn print_flops(cfg: &TransformerConfig, format: Format, out: &mut dyn Write) -> Result<(), Box<dyn std::error::Error>> {
    let d = decompose(cfg)?;
    let per_gpu = decomposed_flops_per_layer(cfg)?;
    let logit = d.logit.kernel.flops()?;
    let mut t = Table::new(&["quantity", "flops"]);
    t.push(vec!["layer_per_gpu".into(), per_gpu.into()]);
    t.push(vec!["layer_all_ranks".into(), per_gpu.checked_mul(cfg.t).into()]);
    if let Ok(closed) = forward_flops_per_layer(cfg) {
        t.push(vec!["layer_closed_form".into(), closed.into()]);
    }
    t.push(vec!["logit_per_gpu".into(), logit.into()]);
    let model = per_gpu
        .checked_mul(cfg.layers)
        .and_then(|x| x.checked_add(logit));
    t.push(vec!["forward_per_gpu".into(), model.into()]);
    t.write(format, out)?;
    Ok(())
}
