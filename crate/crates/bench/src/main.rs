use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use taskchain::trace::write_csv;
use taskchain::ModelKind;
use taskchain_bench::summary::{read_results, write_summary};
use taskchain_bench::sweep::{check_cell, reference, Reference, RESULT_HEADER};
use taskchain_bench::{available_cores, run_sweep, summarize, Preset, SweepSpec};

#[derive(Parser)]
#[command(
    name = "taskchain-bench",
    version,
    about = "Run and summarize taskchain benchmark sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one CSV row per run.
    Run(Box<RunArgs>),
    /// Reduce a results CSV to mean and standard error per cell.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    /// Comma-separated task size proxies: features (cultural) or subset size (SIR).
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    cycle_cap: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    agents: Option<usize>,
    /// Cultural: traits per feature.
    #[arg(long)]
    traits: Option<u8>,
    /// Cultural: minimum overlap for an interaction.
    #[arg(long)]
    omega_gate: Option<f64>,
    /// SIR: ring degree.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    p_si: Option<f64>,
    #[arg(long)]
    p_ir: Option<f64>,
    #[arg(long)]
    p_rs: Option<f64>,
    /// Watchdog for multi-worker runs, as a multiple of the single-worker time.
    #[arg(long)]
    watchdog_factor: Option<f64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Write the execution trace. With several runs, each file gets a
    /// `_s{s}_n{n}_seed{seed}` suffix.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Check every run against the sequential reference.
    #[arg(long)]
    validate: bool,
    /// Plain-text validation report.
    #[arg(long, default_value = "validation.txt")]
    report: PathBuf,
}

impl RunArgs {
    fn spec(&self) -> SweepSpec {
        let preset = match self.preset {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        };
        let mut spec = SweepSpec::new(self.model, preset);
        set(&mut spec.workers, &self.workers);
        set(&mut spec.sweep, &self.sweep);
        set(&mut spec.seeds, &self.seeds);
        set(&mut spec.base_seed, &self.base_seed);
        set(&mut spec.cycle_cap, &self.cycle_cap);
        set(&mut spec.watchdog_factor, &self.watchdog_factor);
        set(&mut spec.cultural.steps, &self.steps);
        set(&mut spec.sir.steps, &self.steps);
        set(&mut spec.cultural.agents, &self.agents);
        set(&mut spec.sir.agents, &self.agents);
        set(&mut spec.cultural.traits, &self.traits);
        set(&mut spec.cultural.omega_gate, &self.omega_gate);
        set(&mut spec.sir.degree, &self.degree);
        set(&mut spec.sir.p_si, &self.p_si);
        set(&mut spec.sir.p_ir, &self.p_ir);
        set(&mut spec.sir.p_rs, &self.p_rs);
        spec.trace = self.trace.is_some() || self.validate;
        spec
    }
}

fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

fn suffixed(path: &Path, s: usize, n: usize, seed: u64) -> PathBuf {
    let stem = path.file_stem().and_then(|x| x.to_str()).unwrap_or("trace");
    let name = match path.extension().and_then(|x| x.to_str()) {
        Some(ext) => format!("{stem}_s{s}_n{n}_seed{seed}.{ext}"),
        None => format!("{stem}_s{s}_n{n}_seed{seed}"),
    };
    path.with_file_name(name)
}

fn run_command(args: RunArgs) -> Result<()> {
    let spec = args.spec();
    spec.validate()?;
    let max_n = spec.workers.iter().copied().max().unwrap_or(1);
    let cores = available_cores();
    if cores < max_n {
        eprintln!("warning: {cores} core(s) available but up to {max_n} workers requested; timings will be oversubscribed");
    }
    let total_runs = spec.sweep.len() * spec.seeds * spec.workers.len();

    // Header written up front so an interrupted sweep still leaves a valid file.
    let mut results = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    results.write_record(RESULT_HEADER)?;
    results.flush()?;

    let mut report = match args.validate {
        true => Some(BufWriter::new(
            File::create(&args.report)
                .with_context(|| format!("creating {}", args.report.display()))?,
        )),
        false => None,
    };
    let mut references: HashMap<(usize, u64), Reference> = HashMap::new();
    let mut failures = 0usize;

    run_sweep(&spec, |row, cell| {
        results.serialize(row)?;
        results.flush()?;
        eprintln!(
            "{} s={} n={} seed={} wall_ms={:.1}",
            row.model, row.s, row.n, row.seed, row.wall_ms
        );
        if let Some(path) = &args.trace {
            let path = match total_runs {
                1 => path.clone(),
                _ => suffixed(path, row.s, row.n, row.seed),
            };
            write_csv(&cell.trace, BufWriter::new(File::create(&path)?))?;
        }
        if let Some(out) = report.as_mut() {
            let key = (row.s, row.seed);
            let r = match references.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(reference(&spec, row.s, row.seed)?),
            };
            let check = check_cell(r, cell);
            if !check.digest_matches || !check.report.is_clean() {
                failures += 1;
            }
            writeln!(
                out,
                "== {} s={} n={} seed={}",
                row.model, row.s, row.n, row.seed
            )?;
            writeln!(out, "digest matches sequential: {}", check.digest_matches)?;
            check.report.write_text(&mut *out)?;
            out.flush()?;
        }
        Ok(())
    })?;

    if args.validate {
        if failures > 0 {
            bail!(
                "{failures} run(s) failed validation; see {}",
                args.report.display()
            );
        }
        eprintln!("all {total_runs} run(s) validated");
    }
    Ok(())
}

fn summarize_command(input: &Path, out: &Path) -> Result<()> {
    let rows =
        read_results(File::open(input).with_context(|| format!("opening {}", input.display()))?)?;
    let summary = summarize(&rows)?;
    write_summary(
        &summary,
        File::create(out).with_context(|| format!("creating {}", out.display()))?,
    )?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run_command(*args),
        Command::Summarize { input, out } => summarize_command(&input, &out),
    }
}
