//! One runner per subcommand. Runners compute in parallel over samples,
//! write artifacts serially, and report per-sample failures as guard events
//! without aborting the batch.

use crate::config::ExperimentConfig;
use crate::output::{create_stamped, summarize_residuals, GuardEvent, RunStamp};
use ndarray::Array2;
use rayon::prelude::*;
use roughsko_core::cm::{cm_inner, cm_norm, cm_tensor_norm, embedding_ratio, CMPathFunction, TensorKernel};
use roughsko_core::conversion::{conversion_residual, ConversionConfig, ConversionReport, Regime};
use roughsko_core::gaussian::{sample_paths, write_paths_binary, write_sample_csv, CovModel, GaussianSample};
use roughsko_core::grid::{MatrixPath, Partition};
use roughsko_core::rde::{malliavin_kernel, solve_jacobian, solve_rde};
use roughsko_core::skorohod::{compensated_second_level, skorohod_riemann};
use roughsko_core::young::isometry_rhs;
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

/// Mutable run state threaded through a runner: effective output directory,
/// header stamp, and the artifact/guard logs that end up in the manifest.
pub struct RunContext {
    pub out: PathBuf,
    pub stamp: RunStamp,
    pub guard_events: Vec<GuardEvent>,
    pub outputs: Vec<String>,
}

impl RunContext {
    fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    fn guard(&mut self, scope: String, message: String) {
        self.guard_events.push(GuardEvent { scope, message });
    }
}

fn draw_samples(cfg: &ExperimentConfig, model: &CovModel) -> anyhow::Result<Vec<GaussianSample>> {
    let fine = cfg.fine_grid()?;
    Ok(sample_paths(model, &fine, cfg.d, cfg.samples, cfg.seed)?)
}

pub fn run_sample(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let samples = draw_samples(cfg, model)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i:04}.csv");
        let mut w = create_stamped(&ctx.out, &name, &ctx.stamp)?;
        write_sample_csv(s, &mut w)?;
        ctx.record(&name);
    }
    std::fs::create_dir_all(&ctx.out)?;
    let mut bin = std::io::BufWriter::new(std::fs::File::create(ctx.out.join("paths.bin"))?);
    write_paths_binary(&samples, &mut bin)?;
    ctx.record("paths.bin");
    Ok(json!({ "sample_files": samples.len() }))
}

pub fn run_lift(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let samples = draw_samples(cfg, model)?;
    let mut written = 0usize;
    for (i, s) in samples.iter().enumerate() {
        match s.lift() {
            Ok(x) => {
                let name = format!("lift_{i:04}.csv");
                let mut w = create_stamped(&ctx.out, &name, &ctx.stamp)?;
                x.write_increments_csv(&mut w)?;
                ctx.record(&name);
                written += 1;
            }
            Err(e) => ctx.guard(format!("sample {i}"), e.to_string()),
        }
    }
    Ok(json!({ "lift_files": written }))
}

pub fn run_solve(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let field = cfg.build_field()?;
    let y0 = cfg.initial_state(field.e)?;
    let samples = draw_samples(cfg, model)?;
    let mut summary = create_stamped(&ctx.out, "solve_summary.csv", &ctx.stamp)?;
    write!(summary, "sample_id,renormalizations")?;
    for a in 0..field.e {
        write!(summary, ",y{}", a + 1)?;
    }
    writeln!(summary)?;
    let mut solved = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let run = || -> roughsko_core::Result<_> {
            let x = s.lift()?;
            let y = solve_rde(&field, &x, &y0)?;
            let bundle = solve_jacobian(&field, &x, &y)?;
            Ok((y, bundle.renormalizations))
        };
        match run() {
            Ok((y, renorms)) => {
                let name = format!("solution_{i:04}.csv");
                let mut w = create_stamped(&ctx.out, &name, &ctx.stamp)?;
                write!(w, "t")?;
                for a in 0..field.e {
                    write!(w, ",y{}", a + 1)?;
                }
                writeln!(w)?;
                for k in 0..y.grid.len() {
                    write!(w, "{}", y.grid.t(k))?;
                    for a in 0..field.e {
                        write!(w, ",{}", y.values[(k, a)])?;
                    }
                    writeln!(w)?;
                }
                ctx.record(&name);
                write!(summary, "{i},{renorms}")?;
                let last = y.grid.len() - 1;
                for a in 0..field.e {
                    write!(summary, ",{}", y.values[(last, a)])?;
                }
                writeln!(summary)?;
                solved += 1;
            }
            Err(e) => ctx.guard(format!("sample {i}"), e.to_string()),
        }
    }
    ctx.record("solve_summary.csv");
    Ok(json!({ "solved": solved, "failed": cfg.samples - solved }))
}

pub fn run_convert(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let field = cfg.build_field()?;
    let y0 = cfg.initial_state(field.e)?;
    let regime = Regime::for_p(cfg.p)?;
    let correction_grid = Partition::dyadic(cfg.horizon, cfg.correction_exponent)?;
    let coarse: Vec<(u32, Partition)> = cfg
        .coarse_exponents
        .iter()
        .map(|&n| Ok((n, Partition::dyadic(cfg.horizon, n)?)))
        .collect::<anyhow::Result<_>>()?;
    let samples = draw_samples(cfg, model)?;
    let per_sample: Vec<Result<Vec<(u32, ConversionReport)>, String>> = samples
        .par_iter()
        .map(|s| {
            coarse
                .iter()
                .map(|(n, part)| {
                    let rc = ConversionConfig {
                        field: &field,
                        y0: y0.clone(),
                        coarse: part.clone(),
                        correction_grid: correction_grid.clone(),
                        regime,
                    };
                    conversion_residual(s, model, &rc).map(|r| (*n, r)).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();
    let mut w = create_stamped(&ctx.out, "conversion.csv", &ctx.stamp)?;
    writeln!(w, "seed,n_coarse,n_fine,strat,skorohod,ito,corr2d,residual")?;
    let mut by_exponent: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut failed = 0usize;
    for (i, rows) in per_sample.into_iter().enumerate() {
        match rows {
            Ok(rows) => {
                for (n, r) in rows {
                    writeln!(
                        w,
                        "{i},{n},{},{},{},{},{},{}",
                        cfg.fine_exponent,
                        r.stratonovich,
                        r.skorohod,
                        r.ito_term,
                        r.correction_2d,
                        r.residual
                    )?;
                    by_exponent.entry(n).or_default().push(r.residual);
                }
            }
            Err(e) => {
                failed += 1;
                ctx.guard(format!("sample {i}"), e);
            }
        }
    }
    ctx.record("conversion.csv");
    let agg = summarize_residuals(&by_exponent);
    let medians: Vec<serde_json::Value> = agg
        .rows
        .iter()
        .map(|(n, count, med, mean, rms)| {
            json!({ "n_coarse": n, "count": count, "median_abs_residual": med,
                    "mean_abs_residual": mean, "rms_residual": rms })
        })
        .collect();
    Ok(json!({
        "regime": format!("{regime:?}"),
        "failed_samples": failed,
        "per_exponent": medians,
        "slope_log2_median": agg.slope_log2_median,
    }))
}

pub fn run_second_level(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let field = cfg.build_field()?;
    let y0 = cfg.initial_state(field.e)?;
    let coarse: Vec<(u32, Partition)> = cfg
        .coarse_exponents
        .iter()
        .map(|&n| Ok((n, Partition::dyadic(cfg.horizon, n)?)))
        .collect::<anyhow::Result<_>>()?;
    let samples = draw_samples(cfg, model)?;
    type Row = (u32, usize, f64, f64, f64, f64);
    let per_sample: Vec<Result<Vec<Row>, String>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let run = || -> roughsko_core::Result<Vec<Row>> {
                let x = s.lift()?;
                let y = solve_rde(&field, &x, &y0)?;
                let bundle = solve_jacobian(&field, &x, &y)?;
                let mut rows = Vec::new();
                for (n, part) in &coarse {
                    let sum = skorohod_riemann(&y, &bundle, &field, &x, model, part)?;
                    let idx = part.indices_in(&y.grid)?;
                    let mats: Vec<Array2<f64>> =
                        idx.iter().map(|&k| field.eval(&y.at(k))).collect();
                    let psi = MatrixPath::new(part.clone(), mats)?;
                    let comp = compensated_second_level(&psi, &x, model, part)?;
                    let pairing: f64 = sum.pairing.iter().sum();
                    let trace: f64 = sum.trace.iter().sum();
                    rows.push((*n, i, sum.total, comp, pairing, trace));
                }
                Ok(rows)
            };
            run().map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    for (i, r) in per_sample.into_iter().enumerate() {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(e) => ctx.guard(format!("sample {i}"), e),
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    let mut w = create_stamped(&ctx.out, "second_level.csv", &ctx.stamp)?;
    writeln!(w, "n,sample_id,skorohod_total,compensated_l2,pairing_sum,trace_sum")?;
    let mut sq: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (n, i, total, comp, pairing, trace) in &rows {
        writeln!(w, "{n},{i},{total},{comp},{pairing},{trace}")?;
        let e = sq.entry(*n).or_default();
        e.0 += comp * comp;
        e.1 += 1;
    }
    ctx.record("second_level.csv");
    let l2: Vec<serde_json::Value> = sq
        .iter()
        .map(|(n, (s, c))| json!({ "n": n, "l2_compensated": (s / *c as f64).sqrt(), "count": c }))
        .collect();
    Ok(json!({ "per_exponent": l2 }))
}

pub fn run_isometry(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let field = cfg.build_field()?;
    let y0 = cfg.initial_state(field.e)?;
    let coarse = Partition::dyadic(cfg.horizon, cfg.coarse_exponents[0])?;
    let samples = draw_samples(cfg, model)?;
    let per_sample: Vec<Result<(f64, f64), String>> = samples
        .par_iter()
        .map(|s| {
            let run = || -> roughsko_core::Result<(f64, f64)> {
                let x = s.lift()?;
                let y = solve_rde(&field, &x, &y0)?;
                let bundle = solve_jacobian(&field, &x, &y)?;
                let total = skorohod_riemann(&y, &bundle, &field, &x, model, &coarse)?.total;
                let kernel = malliavin_kernel(&bundle, &field)?;
                let rhs = isometry_rhs(&y, &kernel, model)?;
                Ok((total, rhs))
            };
            run().map_err(|e| e.to_string())
        })
        .collect();
    let mut w = create_stamped(&ctx.out, "isometry.csv", &ctx.stamp)?;
    writeln!(w, "sample_id,skorohod_total,isometry_rhs")?;
    let mut totals = Vec::new();
    let mut rhs_sum = 0.0;
    for (i, r) in per_sample.into_iter().enumerate() {
        match r {
            Ok((total, rhs)) => {
                writeln!(w, "{i},{total},{rhs}")?;
                totals.push(total);
                rhs_sum += rhs;
            }
            Err(e) => ctx.guard(format!("sample {i}"), e),
        }
    }
    ctx.record("isometry.csv");
    let n = totals.len();
    anyhow::ensure!(n >= 2, "isometry needs at least 2 successful samples");
    let mean = totals.iter().sum::<f64>() / n as f64;
    let var = totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1) as f64;
    let mean_rhs = rhs_sum / n as f64;
    Ok(json!({
        "samples": n,
        "skorohod_mean": mean,
        "skorohod_variance": var,
        "isometry_rhs_mean": mean_rhs,
        "variance_over_rhs": var / mean_rhs,
    }))
}

pub fn run_cm_norm(cfg: &ExperimentConfig, model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let raw = &cfg.raw;
    let c1 = raw.usize_req("cm.component_1")?;
    let t1 = raw.f64_req("cm.upto_1")?;
    let c2 = match raw.get("cm.component_2") {
        Some(_) => raw.usize_req("cm.component_2")?,
        None => c1,
    };
    let t2 = raw.f64_opt("cm.upto_2")?.unwrap_or(t1);
    let h1 = CMPathFunction::indicator(c1, t1);
    let h2 = CMPathFunction::indicator(c2, t2);
    let fine = cfg.fine_grid()?;
    let mut w = create_stamped(&ctx.out, "cm_norm.csv", &ctx.stamp)?;
    writeln!(w, "name,value")?;
    let mut summary = serde_json::Map::new();
    let emit = |w: &mut dyn Write,
                    ctx: &mut RunContext,
                    summary: &mut serde_json::Map<String, serde_json::Value>,
                    name: &str,
                    r: roughsko_core::Result<f64>| {
        match r {
            Ok(v) => {
                writeln!(w, "{name},{v}").ok();
                summary.insert(name.to_string(), json!(v));
            }
            Err(e) => ctx.guard(name.to_string(), e.to_string()),
        }
    };
    emit(&mut w, ctx, &mut summary, "indicator_inner", cm_inner(&h1, &h2, model, &fine));
    emit(&mut w, ctx, &mut summary, "indicator_norm_1", cm_norm(&h1, model, &fine));
    emit(&mut w, ctx, &mut summary, "indicator_norm_2", cm_norm(&h2, model, &fine));
    emit(
        &mut w,
        ctx,
        &mut summary,
        "tensor_indicator_norm",
        cm_tensor_norm(&TensorKernel::scalar_indicator(), model, &fine),
    );
    let rho = match raw.f64_opt("cm.rho")? {
        Some(r) => Some(r),
        None => model.default_rho(),
    };
    match rho {
        Some(rho) => emit(
            &mut w,
            ctx,
            &mut summary,
            "embedding_ratio_1",
            embedding_ratio(&h1, model, &fine, rho),
        ),
        None => ctx.guard(
            "embedding_ratio_1".into(),
            "custom covariance has no default 2D variation exponent; set `rho` in [cm]".into(),
        ),
    }
    ctx.record("cm_norm.csv");
    Ok(serde_json::Value::Object(summary))
}

pub fn run_report(cfg: &ExperimentConfig, _model: &CovModel, ctx: &mut RunContext) -> anyhow::Result<serde_json::Value> {
    let (inputs, _) = cfg.raw.require("report.inputs")?;
    let paths: Vec<PathBuf> = inputs.split(',').map(|p| PathBuf::from(p.trim())).collect();
    let mut by_exponent: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut rows_read = 0usize;
    for path in &paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().unwrap_or_default();
        anyhow::ensure!(
            header == "seed,n_coarse,n_fine,strat,skorohod,ito,corr2d,residual",
            "{} is not a conversion table (header `{header}`)",
            path.display()
        );
        for (k, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            anyhow::ensure!(cells.len() == 8, "{}: row {} has {} fields", path.display(), k + 2, cells.len());
            let n: u32 = cells[1].parse()?;
            let residual: f64 = cells[7].parse()?;
            by_exponent.entry(n).or_default().push(residual);
            rows_read += 1;
        }
    }
    let agg = summarize_residuals(&by_exponent);
    let mut w = create_stamped(&ctx.out, "summary.csv", &ctx.stamp)?;
    writeln!(w, "n_coarse,count,median_abs_residual,mean_abs_residual,rms_residual")?;
    println!("n_coarse  count  median|res|     mean|res|       rms");
    for (n, count, med, mean, rms) in &agg.rows {
        writeln!(w, "{n},{count},{med},{mean},{rms}")?;
        println!("{n:>8}  {count:>5}  {med:<14.6e}  {mean:<14.6e}  {rms:<10.6e}");
    }
    println!("fitted log2-median slope: {:.3}", agg.slope_log2_median);
    ctx.record("summary.csv");
    Ok(json!({
        "inputs": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "rows": rows_read,
        "slope_log2_median": agg.slope_log2_median,
    }))
}
