use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, ValueEnum};
use multiclp::arch::bundled;
use multiclp::oracle::{self, Bounds};
use multiclp::sa::{self, SaParams};
use multiclp::space::{SearchOutcome, TraceRecord};
use multiclp::ts::{self, TsParams};
use multiclp::{Architecture, Cost, CostReport, Error, Evaluator, Platform, Precision, Solution};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Algo {
    Sa,
    Ts,
    Oracle,
    Evaluate,
}

/// Design-space exploration for multi-CLP CNN accelerators on FPGAs.
#[derive(Debug, Parser)]
#[command(name = "multiclp", version)]
struct Args {
    /// Network: a JSON file or a bundled name (alexnet, squeezenet, vgg16, googlenet, tiny).
    #[arg(long, default_value = "alexnet")]
    arch: String,
    /// Board: a JSON file or a bundled name (vc707, vc709, toy).
    #[arg(long, default_value = "vc707")]
    platform: String,
    #[arg(long, default_value = "fp32")]
    precision: Precision,
    #[arg(long, value_enum, default_value_t = Algo::Sa)]
    algo: Algo,
    /// SA temperature levels or TS accepted moves per run.
    #[arg(long, default_value_t = 1000)]
    iterations: u64,
    /// Independent runs, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Design to evaluate: a JSON file or a bundled design name.
    #[arg(long)]
    design: Option<String>,
    /// Directory for report.json, design.json and traces.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one trace CSV per run (needs --out).
    #[arg(long, requires = "out")]
    trace: bool,
    /// Leave the timestamp out of the report.
    #[arg(long)]
    no_timestamp: bool,
    /// Search Tr/Tc as move parameters instead of optimizing them per design.
    #[arg(long)]
    tiling_moves: bool,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m0: Option<f64>,
    /// TS candidate list size.
    #[arg(long)]
    cands: Option<usize>,
    #[arg(long)]
    tenure: Option<usize>,
}

/// Errors that are the caller's fault rather than the design's.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Params {
    Sa(SaParams),
    Ts(TsParams),
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    cycles: u64,
    peak_bw_gbs: f64,
    bram: u64,
    evaluations: u64,
    /// Wall time is machine dependent, so it stays out of the report file.
    #[serde(skip)]
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    algo: Algo,
    arch: String,
    platform: String,
    precision: Precision,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<Params>,
    runs: Vec<RunSummary>,
    design: Solution,
    cost: CostReport,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_arch(spec: &str) -> anyhow::Result<Architecture> {
    if Path::new(spec).is_file() {
        return Ok(Architecture::load(spec)?);
    }
    bundled::architecture(spec).map_err(|e| usage(e.to_string()))
}

fn load_platform(spec: &str) -> anyhow::Result<Platform> {
    if Path::new(spec).is_file() {
        return Ok(Platform::load(spec)?);
    }
    bundled::platform(spec).map_err(|e| usage(e.to_string()))
}

fn load_design(spec: &str) -> anyhow::Result<Solution> {
    if Path::new(spec).is_file() {
        return Ok(Solution::load(spec)?);
    }
    let text = bundled::design_json(spec).map_err(|e| usage(e.to_string()))?;
    Ok(Solution::from_json(text)?)
}

fn sa_params(args: &Args) -> anyhow::Result<SaParams> {
    let d = SaParams::default();
    let params = SaParams {
        t0: args.t0.unwrap_or(d.t0),
        alpha: args.alpha.unwrap_or(d.alpha),
        beta: args.beta.unwrap_or(d.beta),
        m0: args.m0.unwrap_or(d.m0),
        max_time: args.iterations,
        seed: args.seed,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    Ok(params)
}

fn ts_params(args: &Args) -> anyhow::Result<TsParams> {
    let d = TsParams::default();
    let params = TsParams {
        candidates: args.cands.unwrap_or(d.candidates),
        tenure: args.tenure.unwrap_or(d.tenure),
        max_time: args.iterations,
        seed: args.seed,
        ..d
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    Ok(params)
}

fn check_flags(args: &Args) -> anyhow::Result<()> {
    let sa_flags = args.t0.is_some() || args.alpha.is_some() || args.beta.is_some() || args.m0.is_some();
    let ts_flags = args.cands.is_some() || args.tenure.is_some();
    match args.algo {
        Algo::Evaluate if args.design.is_none() => Err(usage("--algo evaluate needs --design")),
        Algo::Sa | Algo::Ts | Algo::Oracle if args.design.is_some() => {
            Err(usage("--design is only used with --algo evaluate"))
        }
        Algo::Sa if ts_flags => Err(usage("--cands/--tenure apply to --algo ts")),
        Algo::Ts if sa_flags => Err(usage("--t0/--alpha/--beta/--m0 apply to --algo sa")),
        Algo::Oracle | Algo::Evaluate if sa_flags || ts_flags => {
            Err(usage("search parameters apply to --algo sa or ts"))
        }
        Algo::Oracle | Algo::Evaluate if args.trace => Err(usage("--trace applies to --algo sa or ts")),
        _ => Ok(()),
    }
}

fn run(args: &Args) -> anyhow::Result<()> {
    check_flags(args)?;
    let arch = load_arch(&args.arch)?;
    let platform = load_platform(&args.platform)?;
    let p = args.precision;
    let evaluator = || Evaluator::new(&arch, &platform, p).with_fixed_tilings(args.tiling_moves);

    let (design, params, runs, traces) = match args.algo {
        Algo::Evaluate => {
            let sol = load_design(args.design.as_deref().expect("checked"))?;
            let fixed = !sol.tilings.is_empty();
            let mut ev = Evaluator::new(&arch, &platform, p).with_fixed_tilings(fixed);
            let eval = ev.evaluate(&sol)?;
            (ev.finish(&sol, &eval), None, Vec::new(), Vec::new())
        }
        Algo::Oracle => {
            let start = Instant::now();
            let out = oracle::exhaustive_search(&arch, &platform, p, &Bounds::for_arch(&arch))?;
            let run = summary(args.seed, &out.cost, out.designs as u64, start.elapsed().as_secs_f64());
            (out.best, None, vec![run], Vec::new())
        }
        Algo::Sa | Algo::Ts => {
            let params = if args.algo == Algo::Sa {
                Params::Sa(sa_params(args)?)
            } else {
                Params::Ts(ts_params(args)?)
            };
            let results: Vec<(u64, SearchOutcome, f64)> = (0..args.runs)
                .into_par_iter()
                .map(|i| {
                    let seed = args.seed.wrapping_add(i);
                    let start = Instant::now();
                    let mut ev = evaluator();
                    let out = match &params {
                        Params::Sa(sp) => sa::run_with(&mut ev, &sp.with_seed(seed)),
                        Params::Ts(tp) => ts::run_with(&mut ev, &tp.with_seed(seed)),
                    }?;
                    Ok((seed, out, start.elapsed().as_secs_f64()))
                })
                .collect::<Result<_, Error>>()?;
            let best = results
                .iter()
                .min_by(|a, b| a.1.cost.cmp(&b.1.cost))
                .map(|r| r.1.best.clone())
                .expect("at least one run");
            let runs = results
                .iter()
                .map(|(seed, out, secs)| summary(*seed, &out.cost, out.evaluations, *secs))
                .collect();
            let traces = results.into_iter().map(|(seed, out, _)| (seed, out.trace)).collect();
            (best, Some(params), runs, traces)
        }
    };

    let report = Evaluator::new(&arch, &platform, p)
        .with_fixed_tilings(true)
        .report(&design)
        .map(|(_, r)| r)?;
    print_summary(&arch, &design, &report, &runs);

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let timestamp = (!args.no_timestamp).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        let doc = Report {
            timestamp,
            algo: args.algo,
            arch: arch.name.clone(),
            platform: platform.name.clone(),
            precision: p,
            params,
            runs,
            design: design.clone(),
            cost: report,
        };
        write(&dir.join("report.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
        write(&dir.join("design.json"), design.to_json() + "\n")?;
        if args.trace {
            for (seed, trace) in &traces {
                write_trace(&dir.join(format!("trace_seed{seed}.csv")), trace)?;
            }
        }
    }
    Ok(())
}

fn summary(seed: u64, cost: &Cost, evaluations: u64, seconds: f64) -> RunSummary {
    RunSummary {
        seed,
        cycles: cost.cycles,
        peak_bw_gbs: cost.peak_bw_gbs,
        bram: cost.bram,
        evaluations,
        seconds,
    }
}

fn write(path: &Path, text: String) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["iter", "current_cost", "best_cost", "temperature"])?;
    for r in trace {
        let temperature = r.temperature.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([
            r.iteration.to_string(),
            r.current_cost.to_string(),
            r.best_cost.to_string(),
            temperature,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_summary(arch: &Architecture, design: &Solution, report: &CostReport, runs: &[RunSummary]) {
    if runs.len() > 1 {
        println!("{:>6} {:>12} {:>10} {:>8}", "seed", "cycles", "evals", "secs");
        for r in runs {
            println!("{:>6} {:>12} {:>10} {:>8.2}", r.seed, r.cycles, r.evaluations, r.seconds);
        }
        println!();
    }
    println!(
        "{:>4} {:>4} {:>4}  {:<28} {:>12} {:>6} {:>6}",
        "CLP", "Tn", "Tm", "layers", "cycles", "DSP", "BRAM"
    );
    for (i, c) in report.clps.iter().enumerate() {
        let names: Vec<&str> = c.layers.iter().map(|&l| arch.layers[l].name.as_str()).collect();
        println!(
            "{:>4} {:>4} {:>4}  {:<28} {:>12} {:>6} {:>6}",
            i,
            c.clp.tn,
            c.clp.tm,
            names.join(","),
            c.cycles,
            c.dsp,
            c.bram
        );
    }
    println!(
        "{:>4} {:>4} {:>4}  {:<28} {:>12} {:>6} {:>6}",
        "all",
        "",
        "",
        format!("{} layers, {} CLPs", design.assignment.len(), report.clps.len()),
        report.cycles,
        report.dsp,
        report.bram
    );
    println!(
        "time {:.2} ms, {:.2} img/s, {:.1} GOP/s, utilization {:.1}%, off-chip {:.2} GB/s, per-layer peak {:.2} GB/s",
        report.execution_time_ms,
        report.throughput_img_s,
        report.performance_gops,
        report.utilization * 100.0,
        report.average_bw_gbs,
        report.peak_bw_gbs
    );
}
