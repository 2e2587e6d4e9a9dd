//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tfshape::calibration::{ingest_reader, write_measurements, ShapeKey};
use tfshape::gemm::analyze;
use tfshape::transformer::decomposed_flops_per_layer;
use tfshape::{
    alignment_elements, builtin_gpu, emit_bench_plan, forward_flops_per_layer, is_wave_free,
    lint, param_count, swiglu_dff_search, wave_stats, CalibrationTable, DType, GemmShape, GpuSpec,
    Interpolation, MeasurementRecord, MlpRatio, PlanSource, TileSpec, TransformerConfig,
};

const SEED: u64 = 0x5eed_2024;
const FAMILY_SIZE: usize = 100;
const FLOP_BUDGET: Duration = Duration::from_secs(1);
const WAVE_BUDGET: Duration = Duration::from_secs(30);
const SWIGLU_WINDOW: u64 = 512;

type Outcome = Result<(), String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gpu(name: &str) -> GpuSpec {
    builtin_gpu(name).expect("built-in gpu")
}

fn tile(t1: u64, t2: u64) -> TileSpec {
    TileSpec::new(t1, t2).unwrap()
}

fn divisors(x: u64) -> Vec<u64> {
    (1..=x).filter(|d| x % d == 0).collect()
}

/// Canonical configs: h in 64·[1..256], a | h, t in {1,2,4,8} with t | a.
fn family(rng: &mut StdRng) -> Vec<TransformerConfig> {
    (0..FAMILY_SIZE)
        .map(|_| {
            let h = 64 * rng.gen_range(1..=256u64);
            let t = [1u64, 2, 4, 8][rng.gen_range(0..4)];
            let heads: Vec<u64> = divisors(h).into_iter().filter(|a| a % t == 0).collect();
            let a = heads[rng.gen_range(0..heads.len())];
            let b = rng.gen_range(1..=8u64);
            let s = [512u64, 1024, 2048, 4096][rng.gen_range(0..4)];
            let layers = rng.gen_range(1..=48u64);
            let v = rng.gen_range(1000..=60000u64);
            let mut cfg = TransformerConfig::new(a, b, h, layers, s, t, v);
            if rng.gen_bool(0.3) {
                cfg.pipeline_stages = Some(rng.gen_range(2..=6));
            }
            cfg
        })
        .collect()
}

fn criterion_1(configs: &[TransformerConfig]) -> Outcome {
    let start = Instant::now();
    for cfg in configs {
        let per_gpu = decomposed_flops_per_layer(cfg).map_err(|e| format!("{cfg:?}: {e}"))?;
        let closed = forward_flops_per_layer(cfg).map_err(|e| e.to_string())?;
        // independent evaluation in u128
        let (b, s, h) = (cfg.b as u128, cfg.s as u128, cfg.h as u128);
        let oracle = 24 * b * s * h * h + 4 * b * s * s * h;
        check(closed as u128 == oracle, || format!("closed form {closed} != {oracle}"))?;
        check(cfg.t as u128 * per_gpu as u128 == oracle, || {
            format!("h={} a={} t={}: t·{per_gpu} != {oracle}", cfg.h, cfg.a, cfg.t)
        })?;
    }
    let took = start.elapsed();
    check(took < FLOP_BUDGET, || format!("took {took:?}"))
}

fn criterion_2(configs: &[TransformerConfig]) -> Outcome {
    for cfg in configs {
        let p = param_count(cfg);
        let (h, l, v, s) = (cfg.h as u128, cfg.layers as u128, cfg.v as u128, cfg.s as u128);
        let oracle = 12 * h * h * l + 13 * h * l + (v + s) * h;
        check(p.breakdown.total() as u128 == oracle, || {
            format!("{cfg:?}: breakdown {} != {oracle}", p.breakdown.total())
        })?;
        check(p.closed_form.map(u128::from) == Some(oracle), || {
            format!("closed form {:?} != {oracle}", p.closed_form)
        })?;
    }
    Ok(())
}

#[derive(Debug, PartialEq)]
struct Schedule {
    wave_count: u64,
    full_waves: u64,
    tail_blocks: u64,
}

/// Hands blocks to SMs one at a time in round-robin order and reads the
/// schedule off the per-SM load.
fn round_robin(blocks: u64, sms: u64) -> Schedule {
    let mut load = vec![0u64; sms as usize];
    for i in 0..blocks {
        load[(i % sms) as usize] += 1;
    }
    let max = *load.iter().max().unwrap();
    let min = *load.iter().min().unwrap();
    Schedule {
        wave_count: max,
        full_waves: min,
        tail_blocks: load.iter().filter(|&&l| l > min).count() as u64,
    }
}

fn oracle_blocks(m: u64, n: u64, t: TileSpec) -> u64 {
    let rows = (m + t.t1 - 1) / t.t1;
    let cols = (n + t.t2 - 1) / t.t2;
    rows * cols
}

const GRID: std::ops::RangeInclusive<u64> = 1..=128;
const SMS: [u64; 3] = [80, 108, 144];

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let tiles = [tile(128, 256), tile(256, 128)];
    for sms in SMS {
        for t in tiles {
            for m in GRID.map(|i| 32 * i) {
                for n in GRID.map(|i| 32 * i) {
                    let g = GemmShape::new(m, 64, n, DType::Fp16);
                    let w = wave_stats(&g, t, sms).map_err(|e| e.to_string())?;
                    let o = round_robin(oracle_blocks(m, n, t), sms);
                    let got = Schedule {
                        wave_count: w.wave_count,
                        full_waves: w.full_waves,
                        tail_blocks: w.tail_blocks,
                    };
                    check(got == o, || format!("m={m} n={n} {t} sms={sms}: {got:?} != {o:?}"))?;
                }
            }
        }
    }
    // 109 blocks on 108 SMs
    let g = GemmShape::new(109 * 128, 64, 256, DType::Fp16);
    let w = wave_stats(&g, tile(128, 256), 108).map_err(|e| e.to_string())?;
    check(w.total_blocks == 109 && w.wave_count == 2 && w.tail_blocks == 1, || {
        format!("109/108 example: {w:?}")
    })?;
    let took = start.elapsed();
    check(took < WAVE_BUDGET, || format!("took {took:?}"))
}

fn criterion_4() -> Outcome {
    for sms in SMS {
        for t in [tile(128, 256), tile(256, 128)] {
            for m in GRID.map(|i| 32 * i) {
                for n in GRID.map(|i| 32 * i) {
                    let expected = [t, t.transposed()]
                        .iter()
                        .any(|&o| round_robin(oracle_blocks(m, n, o), sms).tail_blocks == 0);
                    let got = is_wave_free(m, n, t, sms);
                    check(got == expected, || {
                        format!("m={m} n={n} {t} sms={sms}: {got} != {expected}")
                    })?;
                }
            }
        }
    }
    Ok(())
}

fn criterion_5() -> Outcome {
    use tfshape::rules::Field;
    use tfshape::RuleId;
    let a100 = gpu("A100");
    let gpt3 = |a, v| TransformerConfig::new(a, 4, 2560, 32, 2048, 1, v);

    let r = lint(&gpt3(32, 50304), &a100);
    let r3: Vec<_> = r.for_rule(RuleId::R3).collect();
    check(r3.len() == 1, || format!("expected one R3 diagnostic, got {}", r3.len()))?;
    let d = r3[0];
    check(d.observed == "80", || format!("observed {}", d.observed))?;
    check(d.message.contains("divisor 16"), || format!("message: {}", d.message))?;
    let s = d.suggestion.as_ref().ok_or("R3 without suggestion")?;
    check(s.field == Field::A && s.values.first() == Some(&40), || {
        format!("suggestion {s:?}")
    })?;

    let r = lint(&gpt3(40, 50304), &a100);
    check(r.for_rule(RuleId::R3).count() == 0, || "a=40 still triggers R3".into())?;

    let r = lint(&gpt3(40, 50257), &a100);
    let r1: Vec<_> = r.for_rule(RuleId::R1).collect();
    check(r1.len() == 1, || format!("expected one R1 diagnostic, got {}", r1.len()))?;
    let s = r1[0].suggestion.as_ref().ok_or("R1 without suggestion")?;
    check(s.field == Field::V && s.values.first() == Some(&50304), || {
        format!("suggestion {s:?}")
    })
}

fn criterion_6() -> Outcome {
    let a100 = gpu("A100");
    let ctx = TransformerConfig::new(32, 1, 4096, 32, 4096, 1, 32000);
    let out = swiglu_dff_search(4096, MlpRatio::EIGHT_THIRDS, SWIGLU_WINDOW, &a100, &ctx, None)
        .map_err(|e| e.to_string())?;
    let top_aligned = out.first().map(|c| c.aligned()).ok_or("empty search")?;
    let group: Vec<u64> = out
        .iter()
        .take_while(|c| c.aligned() == top_aligned)
        .map(|c| c.d_ff)
        .collect();
    check(top_aligned && group.contains(&11008), || {
        format!("11008 not in top group of {} sizes", group.len())
    })?;

    let ctx = TransformerConfig::new(64, 1, 8192, 80, 4096, 1, 32000);
    let ratio = MlpRatio::new(7, 2).map_err(|e| e.to_string())?;
    let out = swiglu_dff_search(8192, ratio, 0, &a100, &ctx, None).map_err(|e| e.to_string())?;
    let c = out.iter().find(|c| c.d_ff == 28672).ok_or("28672 not scanned")?;
    check(c.aligned() && c.divisor >= 64, || format!("{c:?}"))
}

fn criterion_7(configs: &[TransformerConfig], rng: &mut StdRng) -> Outcome {
    let gpus = [gpu("V100"), gpu("A100"), gpu("H100")];
    for g in &gpus {
        let peak = g.peak_tflops(DType::Fp16).map_err(|e| e.to_string())?;
        // measurements far above peak must still be capped
        let mut hot = CalibrationTable::new(Interpolation::NearestLogShape);
        hot.insert(MeasurementRecord {
            key: ShapeKey {
                gpu: g.name.clone(),
                dtype: DType::Fp16,
                batch: 1,
                m: 4096,
                k: 4096,
                n: 4096,
            },
            measured_tflops: 10.0 * peak,
            repeats: 1,
        });
        for cfg in configs {
            let d = tfshape::decompose(cfg).map_err(|e| e.to_string())?;
            for op in d.all_ops() {
                let Some(shape) = op.kernel.gemm() else { continue };
                for cal in [None, Some(&hot)] {
                    let a = analyze(shape, g, cal).map_err(|e| e.to_string())?;
                    check(a.predicted_tflops <= peak && a.predicted_tflops > 0.0, || {
                        format!("{} {shape}: {} vs peak {peak}", g.name, a.predicted_tflops)
                    })?;
                }
            }
        }
    }

    let a100 = gpu("A100");
    let peak = a100.peak_tflops(DType::Fp16).map_err(|e| e.to_string())?;
    let cfg = TransformerConfig::new(32, 4, 2560, 32, 2048, 1, 50304);
    let plan = emit_bench_plan(PlanSource::Config(&cfg), &a100).map_err(|e| e.to_string())?;
    check(!plan.is_empty(), || "empty plan".into())?;
    let records: Vec<MeasurementRecord> = plan
        .iter()
        .map(|key| MeasurementRecord {
            key: key.clone(),
            measured_tflops: rng.gen_range(1.0..peak),
            repeats: rng.gen_range(1..=20),
        })
        .collect();
    let mut csv = Vec::new();
    write_measurements(&records, &mut csv).map_err(|e| e.to_string())?;
    let ingested = ingest_reader(csv.as_slice(), Interpolation::ExactOnly).map_err(|e| e.to_string())?;
    check(ingested.skipped.is_empty(), || format!("skipped {:?}", ingested.skipped))?;
    check(ingested.table.len() == plan.len(), || "row count changed".into())?;
    for r in &records {
        let k = &r.key;
        let shape = GemmShape::batched(k.batch, k.m, k.k, k.n, k.dtype);
        let got = ingested.table.lookup(&k.gpu, &shape);
        check(got.map(f64::to_bits) == Some(r.measured_tflops.to_bits()), || {
            format!("{k:?}: {got:?} != {}", r.measured_tflops)
        })?;
        let a = analyze(&shape, &a100, Some(&ingested.table)).map_err(|e| e.to_string())?;
        check(a.calibrated && a.predicted_tflops.to_bits() == r.measured_tflops.to_bits(), || {
            format!("{k:?}: analysis used {}", a.predicted_tflops)
        })?;
    }
    Ok(())
}

fn criterion_8(configs: &[TransformerConfig]) -> Outcome {
    let gpus = [gpu("A100"), gpu("V100")];
    let mut applied = 0usize;
    for g in &gpus {
        for cfg in configs {
            let report = lint(cfg, g);
            for d in &report.diagnostics {
                let Some(s) = &d.suggestion else { continue };
                for &value in &s.values {
                    let fixed = s.field.apply(cfg, value);
                    let after = lint(&fixed, g).max_severity(d.rule_id);
                    applied += 1;
                    check(after.is_none_or(|sev| sev <= d.severity), || {
                        format!(
                            "{} {}={value} on {cfg:?}: {:?} -> {after:?}",
                            d.rule_id, s.field, d.severity
                        )
                    })?;
                }
            }
        }
    }
    check(applied > 0, || "no suggestions exercised".into())
}

fn criterion_9() -> Outcome {
    let a100 = alignment_elements(&gpu("A100"), DType::Fp16);
    let v100 = alignment_elements(&gpu("V100"), DType::Fp16);
    check(a100 == 64 && v100 == 8, || format!("A100 {a100}, V100 {v100}"))
}

fn main() -> ExitCode {
    let mut rng = StdRng::seed_from_u64(SEED);
    let configs = family(&mut rng);
    let results: Vec<(u32, Outcome)> = vec![
        (1, criterion_1(&configs)),
        (2, criterion_2(&configs)),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7(&configs, &mut rng)),
        (8, criterion_8(&configs)),
        (9, criterion_9()),
    ];
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(()) => println!("criterion {n}: PASS"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
