use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use felodm_core::assembly::{DiscreteFunction, ErrorRegion, NormKind};
use felodm_core::coefficient::{
    build_channel_field, generate_lognormal_field, ChannelLayout, CoefficientField, GridField, RandomFieldParams,
};
use felodm_core::convergence::fit_convergence_slope;
use felodm_core::experiments::{
    channel_layers, compare_with_reference, resolution_of, MethodRun, MethodSpec, Problem, ProblemLoad,
};
use felodm_core::lod::{choose_l, FineSystem};
use felodm_core::mesh::Region;
use felodm_core::methods::{reference_from_values, solution_text, solve_reference, wbp_text, SolveResult};

use crate::config::{dyadic_exponent, CoefficientSpec, LevelRule, RegionSpec, RunConfig};
use crate::output::{write_atomic, CsvTable};

/// Finest fine size allowed without `--full-scale`.
pub const DESK_FINEST: u32 = 8;

pub const WORKERS_ENV: &str = "FELODM_WORKERS";

fn field_of(config: &RunConfig) -> Result<CoefficientField> {
    let n = resolution_of(config.h)?;
    Ok(match &config.coefficient {
        CoefficientSpec::Constant(v) => CoefficientField::Constant(*v),
        CoefficientSpec::Oscillating { epsilon } => CoefficientField::a1(*epsilon),
        CoefficientSpec::WellPeriodic { epsilon } => CoefficientField::awell(*epsilon),
        CoefficientSpec::LogNormal {
            sigma2,
            correlation_length,
            resolution,
        } => CoefficientField::Grid(generate_lognormal_field(&RandomFieldParams {
            sigma2: *sigma2,
            l1: *correlation_length,
            l2: *correlation_length,
            resolution: resolution.unwrap_or(n),
            seed: config.seed,
        })?),
        CoefficientSpec::Channels { resolution } => {
            CoefficientField::Grid(build_channel_field(&ChannelLayout::two_channels(), *resolution)?)
        }
        CoefficientSpec::GridFile(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CoefficientField::Grid(GridField::from_text(&text)?)
        }
    })
}

fn problem_for(config: &RunConfig, field: &CoefficientField, coarse: f64) -> Problem {
    let omega1 = match &config.omega1 {
        RegionSpec::Empty => Region::empty(),
        RegionSpec::Rects(r) => Region::from_rects(r.clone()),
        RegionSpec::ChannelLayers => channel_layers(coarse),
    };
    let load = match &config.wells {
        Some(w) => ProblemLoad::Wells(w.clone()),
        None => ProblemLoad::Constant(config.load),
    };
    Problem {
        domain: config.domain,
        omega1,
        field: field.clone(),
        load,
    }
}

fn levels_for(config: &RunConfig, coarse: f64) -> Vec<usize> {
    match &config.levels {
        LevelRule::Fixed(v) => v.clone(),
        LevelRule::FromL0(l0) => vec![choose_l(coarse, config.h, *l0)],
    }
}

fn methods_for(config: &RunConfig, coarse: f64) -> Vec<MethodSpec> {
    let mut out = Vec::new();
    for l in levels_for(config, coarse) {
        if config.fe_lodm {
            out.push(MethodSpec::FeLodm(l));
        }
        if config.lodm {
            out.push(MethodSpec::Lodm(l));
        }
    }
    if config.ideal {
        out.push(MethodSpec::Ideal);
    }
    out
}

/// Cache of fine reference solutions keyed by experiment, fine size and
/// seed. The first line records the full problem so a stale entry is
/// detected and recomputed.
struct ReferenceCache {
    dir: Option<PathBuf>,
}

impl ReferenceCache {
    fn path(&self, config: &RunConfig) -> Option<PathBuf> {
        let k = dyadic_exponent(config.h).ok()?;
        self.dir
            .as_ref()
            .map(|d| d.join(format!("reference-{}-h{}-seed{}.txt", config.experiment.name(), 1u64 << k, config.seed)))
    }

    fn key(problem: &Problem, gamma0: f64) -> String {
        format!("{:?} {:?} {:?} {:?} gamma0={gamma0}", problem.domain, problem.omega1, field_fingerprint(&problem.field), problem.load)
    }

    fn load(&self, config: &RunConfig, key: &str, sys: &FineSystem, f: &DiscreteFunction) -> Option<SolveResult> {
        let text = fs::read_to_string(self.path(config)?).ok()?;
        let mut lines = text.lines();
        if lines.next()? != key {
            return None;
        }
        let values: Vec<f64> = lines.map(|l| l.trim().parse().ok()).collect::<Option<_>>()?;
        reference_from_values(sys, f, values).ok()
    }

    fn store(&self, config: &RunConfig, key: &str, result: &SolveResult) -> Result<()> {
        let Some(path) = self.path(config) else { return Ok(()) };
        let mut text = String::with_capacity(24 * result.solution.values.len() + key.len() + 1);
        text.push_str(key);
        text.push('\n');
        for v in &result.solution.values {
            let _ = writeln!(text, "{v:e}");
        }
        write_atomic(&path, text.as_bytes())
    }
}

/// Short fingerprint of a coefficient: grid fields are summarized by size
/// and a checksum of their bits.
fn field_fingerprint(field: &CoefficientField) -> String {
    match field {
        CoefficientField::Grid(g) => {
            let sum = g.values.iter().fold(0u64, |acc, v| acc.rotate_left(5) ^ v.to_bits());
            format!("Grid({}, {sum:016x})", g.resolution)
        }
        f => format!("{f:?}"),
    }
}

/// Results of one coarse size.
struct CoarseRun {
    coarse: f64,
    reference: SolveResult,
    reference_wbp: Option<Vec<f64>>,
    fine_unknowns: usize,
    runs: Vec<(MethodSpec, MethodRun)>,
}

fn method_label(run: &MethodRun, coarse: f64, multi: bool) -> String {
    let base = run.result.method.name();
    if multi {
        format!("{base}-H{}", (1.0 / coarse).round() as u64)
    } else {
        base
    }
}

pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v:?} is not a count"))?;
            if n == 0 {
                bail!("{WORKERS_ENV} must be at least 1");
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Runs every sweep point of `config`, writing CSV and text outputs to
/// `outdir`. Returns the text report.
pub fn run(config: &RunConfig, outdir: &Path, full_scale: bool) -> Result<String> {
    let k = dyadic_exponent(config.h)?;
    if k > DESK_FINEST && !full_scale {
        bail!(
            "h = 2^-{k} is finer than the desk limit 2^-{DESK_FINEST}; pass --full-scale to run it"
        );
    }
    fs::create_dir_all(outdir).with_context(|| format!("creating {}", outdir.display()))?;
    let cache = ReferenceCache {
        dir: config.cache.then(|| outdir.join("cache")),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .context("building the worker pool")?;
    let field = field_of(config)?;
    let multi = config.coarse.len() > 1;
    let points_dir = outdir.join("points");

    let mut coarse_runs = Vec::with_capacity(config.coarse.len());
    let mut previous: Option<Vec<f64>> = None;
    for &coarse in &config.coarse {
        let problem = problem_for(config, &field, coarse);
        let sys = problem.fine_system(coarse, config.h, config.gamma0)?;
        let f = problem.load_vector(&sys)?;
        let key = ReferenceCache::key(&problem, config.gamma0);
        let reference = match cache.load(config, &key, &sys, &f) {
            Some(r) => r,
            None => {
                let reused = previous.take().and_then(|v| reference_from_values(&sys, &f, v).ok());
                let r = match reused {
                    Some(r) => r,
                    None => solve_reference(&sys, &f)?,
                };
                cache.store(config, &key, &r)?;
                r
            }
        };
        previous = Some(reference.solution.values.clone());
        let methods = methods_for(config, coarse);
        let results: Vec<Result<(MethodSpec, MethodRun, Option<Vec<f64>>)>> = pool.install(|| {
            methods
                .par_iter()
                .map(|&m| {
                    let c = compare_with_reference(
                        &problem,
                        &sys,
                        &f,
                        reference.clone(),
                        coarse,
                        config.h,
                        config.gamma0,
                        &[m],
                    )?;
                    let run = c.runs.into_iter().next().expect("one method requested");
                    let label = method_label(&run, coarse, multi);
                    let mut table = CsvTable::new(&["method", "region", "norm", "value"]);
                    push_error_rows(&mut table, &label, &run);
                    write_atomic(&points_dir.join(format!("{label}.csv")), table.render()?.as_bytes())?;
                    Ok((m, run, c.reference_wbp))
                })
                .collect()
        });
        let mut runs = Vec::with_capacity(results.len());
        let mut reference_wbp = None;
        for r in results {
            let (m, run, wbp) = r?;
            reference_wbp = wbp;
            runs.push((m, run));
        }
        coarse_runs.push(CoarseRun {
            coarse,
            fine_unknowns: reference.system_size,
            reference,
            reference_wbp,
            runs,
        });
    }
    write_outputs(config, outdir, &coarse_runs, multi)
}

fn push_error_rows(table: &mut CsvTable, label: &str, run: &MethodRun) {
    for e in &run.report.entries {
        table.row(vec![
            label.to_string(),
            e.region.name().to_string(),
            e.norm.name().to_string(),
            format!("{:.10e}", e.value),
        ]);
    }
}

fn write_outputs(config: &RunConfig, outdir: &Path, coarse_runs: &[CoarseRun], multi: bool) -> Result<String> {
    let mut errors = CsvTable::new(&["method", "region", "norm", "value"]);
    let mut report = String::new();
    let _ = writeln!(report, "experiment {}", config.experiment.name());
    let _ = writeln!(report, "h 2^-{} gamma0 {}", dyadic_exponent(config.h)?, config.gamma0);
    for cr in coarse_runs {
        let _ = writeln!(
            report,
            "H 2^-{}: reference with {} fine unknowns, residual {:.2e}",
            dyadic_exponent(cr.coarse)?,
            cr.fine_unknowns,
            cr.reference.residual
        );
        for (_, run) in &cr.runs {
            let label = method_label(run, cr.coarse, multi);
            push_error_rows(&mut errors, &label, run);
            let _ = writeln!(
                report,
                "  {label}: {} unknowns, {:.2} s, solve residual {:.2e}, constraint residual {:.2e}",
                run.result.system_size,
                run.total_time.as_secs_f64(),
                run.result.residual,
                run.max_constraint_residual
            );
            for e in &run.report.entries {
                let _ = writeln!(report, "    {} {} {:.6e}", e.region.name(), e.norm.name(), e.value);
            }
            if config.export_solution {
                write_atomic(&outdir.join(format!("solution-{label}.txt")), solution_text(&run.result).as_bytes())?;
            }
        }
        if config.export_solution {
            let name = if multi {
                format!("solution-reference-H{}.txt", (1.0 / cr.coarse).round() as u64)
            } else {
                "solution-reference.txt".to_string()
            };
            write_atomic(&outdir.join(name), solution_text(&cr.reference).as_bytes())?;
        }
    }
    write_atomic(&outdir.join("errors.csv"), errors.render()?.as_bytes())?;
    write_wbp(outdir, coarse_runs, multi, &mut report)?;
    if multi {
        write_convergence(config, outdir, coarse_runs, &mut report)?;
    }
    write_atomic(&outdir.join("report.txt"), report.as_bytes())?;
    Ok(report)
}

fn write_wbp(outdir: &Path, coarse_runs: &[CoarseRun], multi: bool, report: &mut String) -> Result<()> {
    let mut table = CsvTable::new(&["method", "well", "wbp", "relative_error"]);
    let mut any = false;
    for cr in coarse_runs {
        let Some(reference) = &cr.reference_wbp else { continue };
        any = true;
        let mut emit = |label: String, wbp: &[f64], report: &mut String| -> Result<()> {
            write_atomic(&outdir.join(format!("wbp-{label}.txt")), wbp_text(wbp).as_bytes())?;
            for (j, (v, r)) in wbp.iter().zip(reference).enumerate() {
                let rel = if *r == 0.0 { (v - r).abs() } else { ((v - r) / r).abs() };
                table.row(vec![label.clone(), (j + 1).to_string(), format!("{v:.10e}"), format!("{rel:.10e}")]);
                let _ = writeln!(report, "  {label} well {}: wbp {v:.7} relative error {rel:.4e}", j + 1);
            }
            Ok(())
        };
        let ref_label = if multi {
            format!("reference-H{}", (1.0 / cr.coarse).round() as u64)
        } else {
            "reference".to_string()
        };
        emit(ref_label, reference, report)?;
        for (_, run) in &cr.runs {
            if let Some(w) = &run.wbp {
                emit(method_label(run, cr.coarse, multi), w, report)?;
            }
        }
    }
    if any {
        write_atomic(&outdir.join("wbp.csv"), table.render()?.as_bytes())?;
    }
    Ok(())
}

/// `H,L,energy_rel,l2_rel,linf_rel` on the whole domain for the primary
/// method, with fitted slopes appended to the report.
fn write_convergence(config: &RunConfig, outdir: &Path, coarse_runs: &[CoarseRun], report: &mut String) -> Result<()> {
    let mut table = CsvTable::new(&["H", "L", "energy_rel", "l2_rel", "linf_rel"]);
    let mut series: Vec<(String, Vec<(f64, f64)>, Vec<(f64, f64)>)> = Vec::new();
    for cr in coarse_runs {
        for (spec, run) in &cr.runs {
            let level = match (spec, config.fe_lodm) {
                (MethodSpec::FeLodm(l), true) => *l,
                (MethodSpec::Lodm(l), false) => *l,
                _ => continue,
            };
            let get = |norm| run.report.get(ErrorRegion::Omega, norm).unwrap_or(f64::NAN);
            let (e, l2, linf) = (get(NormKind::Energy), get(NormKind::L2), get(NormKind::LInf));
            table.row(vec![
                format!("{:e}", cr.coarse),
                level.to_string(),
                format!("{e:.10e}"),
                format!("{l2:.10e}"),
                format!("{linf:.10e}"),
            ]);
            let name = match config.levels {
                LevelRule::FromL0(l0) => format!("L0={l0}"),
                LevelRule::Fixed(_) => format!("L={level}"),
            };
            match series.iter_mut().find(|s| s.0 == name) {
                Some(s) => {
                    s.1.push((cr.coarse, e));
                    s.2.push((cr.coarse, l2));
                }
                None => series.push((name, vec![(cr.coarse, e)], vec![(cr.coarse, l2)])),
            }
        }
    }
    write_atomic(&outdir.join("convergence.csv"), table.render()?.as_bytes())?;
    for (name, energy, l2) in series {
        if energy.len() < 3 {
            continue;
        }
        match (fit_convergence_slope(&energy), fit_convergence_slope(&l2)) {
            (Ok(fe), Ok(fl)) => {
                let _ = writeln!(
                    report,
                    "fit {name}: energy slope {:.4} (R^2 {:.4}), L2 slope {:.4} (R^2 {:.4})",
                    fe.slope, fe.r_squared, fl.slope, fl.r_squared
                );
            }
            (Err(e), _) | (_, Err(e)) => {
                let _ = writeln!(report, "fit {name}: {e}");
            }
        }
    }
    Ok(())
}

/// Slopes of every error column of a convergence CSV against `H`.
pub fn fit_csv(path: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let h_col = headers
        .iter()
        .position(|h| h == "H")
        .context("the CSV has no `H` column")?;
    let value_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.ends_with("_rel"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if value_cols.is_empty() {
        bail!("the CSV has no `*_rel` error columns");
    }
    let mut columns: Vec<Vec<(f64, f64)>> = vec![Vec::new(); value_cols.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let s = record.get(i).unwrap_or("");
            s.trim()
                .parse()
                .with_context(|| format!("row {}: {s:?} is not a number", line + 2))
        };
        let coarse = parse(h_col)?;
        for (slot, (i, _)) in value_cols.iter().enumerate() {
            columns[slot].push((coarse, parse(*i)?));
        }
    }
    let mut out = String::new();
    for ((_, name), points) in value_cols.iter().zip(&columns) {
        let fit = fit_convergence_slope(points).with_context(|| format!("fitting {name}"))?;
        let _ = writeln!(out, "{name}: slope {:.4} R^2 {:.4} ({} points)", fit.slope, fit.r_squared, points.len());
    }
    Ok(out)
}
