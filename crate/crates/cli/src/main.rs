use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prodyn::io::{
    dataset_csv, parse_events, parse_plan, read_dataset, trajectory_csv, IoError, ModelFile,
};
use prodyn::protocol::{figure2_csv, run_protocol};
use prodyn::series::{ingest_events, normalize};
use prodyn::stepan::{analyze_step, DEFAULT_THRESHOLD};
use prodyn::synth::{generate, reference_spec, GainShift, InputPlan};
use prodyn::workflow::{identify_series, simulate_absolute};
use prodyn::{FitOptions, ProtocolOptions, TransferFunction};

const EXIT_INPUT: u8 = 2;
const EXIT_COMPUTE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "prodyn",
    version,
    about = "Identify and analyze transfer-function models of cumulative process data"
)]
struct Cli {
    /// Output directory for files written without an absolute path.
    #[arg(long, global = true, env = "PRODYN_OUT", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a model on `[0, split]` and validate it on the rest.
    Identify(IdentifyArgs),
    /// Run the partitioned estimation and validation study.
    Protocol(ProtocolArgs),
    /// Step response of a stored model.
    Step(StepArgs),
    /// Simulate a goal plan through a stored model.
    Simulate(SimulateArgs),
    /// Generate a synthetic dataset from a known model.
    Synth(SynthArgs),
    /// Resample raw depth events onto a uniform grid.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    order: u16,
    /// Split hour; estimation covers `[0, split]`.
    #[arg(long, value_parser = positive)]
    split: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(1..))]
    candidates: u16,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    order: u16,
    /// Partition step in hours.
    #[arg(long, default_value_t = 20.0, value_parser = positive)]
    step: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(1..))]
    candidates: u16,
    /// Validation unfitness (percent) under which a partition qualifies as predictor.
    #[arg(long, default_value_t = 15.0, value_parser = positive)]
    predictor_threshold: f64,
    /// Report files to write; both when omitted.
    #[arg(long, value_enum)]
    format: Vec<Format>,
}

#[derive(Args)]
struct StepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_negative_numbers = true, value_parser = finite)]
    amplitude: f64,
    /// Hours.
    #[arg(long, value_parser = positive)]
    horizon: f64,
    /// Trajectory sample period in hours.
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    dt: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = positive)]
    threshold: f64,
    #[arg(long, default_value = "step.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset-format CSV; the output column is optional.
    #[arg(long)]
    plan: PathBuf,
    /// Defaults to `<plan>.sim.csv` beside the plan.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Regenerate the committed regression fixture.
    #[arg(long, conflicts_with_all = ["seed", "noise", "samples", "mean_increment", "b", "a"])]
    fixture: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise standard deviation as a fraction of the output range.
    #[arg(long, value_parser = non_negative)]
    noise: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    samples: Option<u32>,
    #[arg(long, value_parser = positive)]
    mean_increment: Option<f64>,
    #[arg(long, value_parser = finite)]
    b: Option<f64>,
    #[arg(long, value_parser = finite)]
    a: Option<f64>,
    /// Hour after which output increments are scaled by `--shift-factor`.
    #[arg(long, requires = "shift_factor", value_parser = non_negative)]
    shift_at: Option<f64>,
    #[arg(long, requires = "shift_at", value_parser = non_negative)]
    shift_factor: Option<f64>,
    /// Dataset path; the truth record goes to `<stem>.truth.json`.
    #[arg(long, default_value = "synth.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    period: f64,
    #[arg(long, default_value = "dataset.csv")]
    out: PathBuf,
}

fn finite(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{s}` is not a finite number"))
}

fn positive(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be positive"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must not be negative"))
    }
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Compute(_) => EXIT_COMPUTE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Compute(m) => m,
        }
    }
}

fn input(context: &Path) -> impl Fn(IoError) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", context.display()))
}

fn compute(e: impl std::fmt::Display) -> Failure {
    Failure::Compute(e.to_string())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn print_json<S: Serialize>(value: &S) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn identify(out_dir: &Path, args: IdentifyArgs) -> Result<(), Failure> {
    let series = read_dataset(&args.data).map_err(input(&args.data))?;
    let out = identify_series(
        &series,
        args.order.into(),
        args.split,
        args.candidates.into(),
    )
    .map_err(compute)?;
    write(&out_dir.join(&args.out), &out.model.to_json())?;
    print_json(&out);
    Ok(())
}

fn protocol(out_dir: &Path, args: ProtocolArgs) -> Result<(), Failure> {
    let series = read_dataset(&args.data).map_err(input(&args.data))?;
    let fit = FitOptions {
        order: args.order.into(),
        ..FitOptions::default()
    };
    let options = ProtocolOptions {
        step_h: args.step,
        candidates: args.candidates.into(),
        predictor_threshold: args.predictor_threshold,
    };
    let report = run_protocol(&normalize(&series), &fit, &options).map_err(compute)?;
    let formats = if args.format.is_empty() {
        vec![Format::Json, Format::Csv]
    } else {
        args.format
    };
    if formats.contains(&Format::Json) {
        write(&out_dir.join("report.json"), &report.to_json())?;
    }
    if formats.contains(&Format::Csv) {
        write(&out_dir.join("figure2.csv"), &figure2_csv(&report))?;
    }
    let describe = |p: Option<usize>| match p.and_then(|p| report.partitions.get(p - 1)) {
        Some(r) => {
            let tf = &r
                .model
                .as_ref()
                .expect("chosen partitions carry a model")
                .tf;
            format!(
                "partition {} (split {} h): num {:?} den {:?}",
                r.partition,
                r.split_h,
                tf.num(),
                tf.den()
            )
        }
        None => "none".to_string(),
    };
    println!("overall: {}", describe(report.overall));
    println!("predictor: {}", describe(report.predictor));
    for r in report.partitions.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "partition {}: {}",
            r.partition,
            r.error.as_deref().unwrap_or_default()
        );
    }
    if report.partitions.iter().all(|r| r.model.is_none()) {
        return Err(Failure::Compute("no partition could be estimated".into()));
    }
    Ok(())
}

fn step(out_dir: &Path, args: StepArgs) -> Result<(), Failure> {
    let model = ModelFile::read(&args.model).map_err(input(&args.model))?;
    let tf = model.tf().map_err(input(&args.model))?;
    let (metrics, response) =
        analyze_step(&tf, args.amplitude, args.horizon, args.dt, args.threshold)
            .map_err(compute)?;
    write(
        &out_dir.join(&args.out),
        &trajectory_csv(&response.times(), &response.values),
    )?;
    print_json(&metrics);
    Ok(())
}

fn simulate(out_dir: &Path, args: SimulateArgs) -> Result<(), Failure> {
    let model = ModelFile::read(&args.model).map_err(input(&args.model))?;
    let text = std::fs::read_to_string(&args.plan).map_err(|e| input(&args.plan)(e.into()))?;
    let plan = parse_plan(&text, model.period_h).map_err(input(&args.plan))?;
    let y = simulate_absolute(&model, &plan.u, plan.period).map_err(compute)?;
    let t: Vec<f64> = (0..y.len())
        .map(|k| plan.t0 + plan.period * k as f64)
        .collect();
    let out = match args.out {
        Some(p) => out_dir.join(p),
        None => {
            let mut name = args.plan.file_stem().unwrap_or_default().to_os_string();
            name.push(".sim.csv");
            if out_dir != Path::new(".") {
                out_dir.join(name)
            } else {
                args.plan.with_file_name(name)
            }
        }
    };
    write(&out, &trajectory_csv(&t, &y))?;
    println!("{}", out.display());
    Ok(())
}

fn synth(out_dir: &Path, args: SynthArgs) -> Result<(), Failure> {
    let base = reference_spec();
    let mut spec = base.clone();
    if !args.fixture {
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        if let Some(noise) = args.noise {
            spec.noise = noise;
        }
        if let Some(n) = args.samples {
            spec.samples = n as usize;
        }
        if let Some(m) = args.mean_increment {
            if let InputPlan::Drilling { mean_increment, .. } = &mut spec.plan {
                *mean_increment = m;
            }
        }
        let (b0, a0) = base
            .tf
            .first_order_params()
            .expect("fixture model is first order");
        spec.tf = TransferFunction::first_order(args.b.unwrap_or(b0), args.a.unwrap_or(a0))
            .map_err(|e| Failure::Input(e.to_string()))?;
    }
    if let (Some(at_hour), Some(factor)) = (args.shift_at, args.shift_factor) {
        spec.gain_shift = Some(GainShift { at_hour, factor });
    }
    let (series, truth) = generate(&spec).map_err(|e| Failure::Input(e.to_string()))?;
    let out = out_dir.join(&args.out);
    let mut truth_json = serde_json::to_string_pretty(&truth).expect("serializable");
    truth_json.push('\n');
    let stem = out
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    write(&out, &dataset_csv(&series))?;
    write(
        &out.with_file_name(format!("{stem}.truth.json")),
        &truth_json,
    )?;
    println!("{}", out.display());
    Ok(())
}

fn ingest(out_dir: &Path, args: IngestArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.events).map_err(|e| input(&args.events)(e.into()))?;
    let events = parse_events(&text).map_err(input(&args.events))?;
    let series = ingest_events(&events, args.period).map_err(|e| input(&args.events)(e.into()))?;
    let out = out_dir.join(&args.out);
    write(&out, &dataset_csv(&series))?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let out_dir = cli.out_dir;
    let result = match cli.command {
        Command::Identify(a) => identify(&out_dir, a),
        Command::Protocol(a) => protocol(&out_dir, a),
        Command::Step(a) => step(&out_dir, a),
        Command::Simulate(a) => simulate(&out_dir, a),
        Command::Synth(a) => synth(&out_dir, a),
        Command::Ingest(a) => ingest(&out_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("prodyn: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
