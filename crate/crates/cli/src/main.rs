use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use umc::data::{generate_synthetic, write_dataset, SynthSpec};
use umc::gradcheck::{run_suite, SUITE_TOL};
use umc::metrics::percent;
use umc::pipeline::{evaluate_files, run, sweep, write_outputs, RunConfig};
use umc::UmcError;

#[derive(Parser)]
#[command(name = "umc", version, about = "Unsupervised multimodal clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (containers, labels, manifest).
    Synth(SynthArgs),
    /// Train and evaluate over the configured seeds.
    Run(RunArgs),
    /// Run every point of a parameter grid.
    Sweep(SweepArgs),
    /// Score an assignment file against labels.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable component.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class pairs sharing text, e.g. `0:1,2:3`.
    #[arg(long)]
    ambiguous: Option<String>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    audio_dim: Option<usize>,
    #[arg(long)]
    video_dim: Option<usize>,
    #[arg(long)]
    audio_len: Option<usize>,
    #[arg(long)]
    video_len: Option<usize>,
    #[arg(long)]
    text_separation: Option<f64>,
    #[arg(long)]
    audio_separation: Option<f64>,
    #[arg(long)]
    video_separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    hard_fraction: Option<f64>,
    #[arg(long)]
    hard_noise: Option<f64>,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.t0=0.2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seeds, e.g. `0-4` or `0,3,7`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Axis as `key=v1,v2,...` or `key=start:stop:step`; repeatable.
    #[arg(long = "grid", value_name = "KEY=VALUES")]
    grid: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Number of clusters; defaults to the label range.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SUITE_TOL)]
    tol: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<UmcError> for Failure {
    fn from(e: UmcError) -> Self {
        let code = if e.is_usage_error() {
            1
        } else if e.is_data_error() {
            2
        } else {
            3
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 1, message }
}

fn split_kv(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .ok_or_else(|| usage(format!("expected KEY=VALUE, got {s:?}")))
}

fn build_config(a: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = split_kv(o)?;
        cfg.set(k, v)?;
    }
    let flags = [
        (
            "data.manifest",
            a.manifest.as_ref().map(|p| p.display().to_string()),
        ),
        (
            "output.dir",
            a.output.as_ref().map(|p| p.display().to_string()),
        ),
        ("run.seeds", a.seeds.clone()),
        ("train.variant", a.variant.clone()),
        ("train.ablation", a.ablation.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if let Some(m) = &cfg.manifest {
        if !m.exists() {
            return Err(Failure {
                code: 2,
                message: format!("manifest {} does not exist", m.display()),
            });
        }
    }
    Ok(cfg)
}

fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>, Failure> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| usage(format!("bad pair {p:?}")))?;
            let n = |x: &str| {
                x.trim()
                    .parse()
                    .map_err(|_| usage(format!("bad pair {p:?}")))
            };
            Ok((n(a)?, n(b)?))
        })
        .collect()
}

fn synth_spec(a: &SynthArgs) -> Result<SynthSpec, Failure> {
    let mut s = SynthSpec {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        seed: a.seed,
        ..SynthSpec::small()
    };
    if let Some(p) = &a.ambiguous {
        s.text_ambiguity_pairs = parse_pairs(p)?;
    }
    let dims = [
        (&mut s.text_dim, a.text_dim),
        (&mut s.audio_dim, a.audio_dim),
        (&mut s.video_dim, a.video_dim),
        (&mut s.audio_len, a.audio_len),
        (&mut s.video_len, a.video_len),
    ];
    for (field, v) in dims {
        if let Some(v) = v {
            *field = v;
        }
    }
    let reals = [
        (&mut s.text_separation, a.text_separation),
        (&mut s.audio_separation, a.audio_separation),
        (&mut s.video_separation, a.video_separation),
        (&mut s.noise, a.noise),
        (&mut s.hard_fraction, a.hard_fraction),
        (&mut s.hard_noise, a.hard_noise),
    ];
    for (field, v) in reals {
        if let Some(v) = v {
            *field = v;
        }
    }
    Ok(s)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let ds = generate_synthetic(&synth_spec(a)?)?;
    let manifest = write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} samples, manifest {}",
        ds.len(),
        manifest.display()
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let cfg = build_config(&a.config)?;
    let start = Instant::now();
    let out = run(&cfg)?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    let path = write_outputs(&cfg.output_dir, &cfg, &out)?;
    for r in &out.report.rows {
        if let Some(m) = &r.metrics {
            println!(
                "seed {}: NMI {:.2} ARI {:.2} ACC {:.2} FMI {:.2}",
                r.seed,
                percent(m.nmi),
                percent(m.ari),
                percent(m.acc),
                percent(m.fmi)
            );
        }
    }
    if let (Some(m), Some(s)) = (out.report.mean, out.report.std) {
        println!(
            "mean: NMI {:.2}±{:.2} ARI {:.2}±{:.2} ACC {:.2}±{:.2} FMI {:.2}±{:.2}",
            m.nmi, s.nmi, m.ari, s.ari, m.acc, s.acc, m.fmi, s.fmi
        );
    }
    println!(
        "report {} ({:.1}s)",
        path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = build_config(&a.config)?;
    for g in &a.grid {
        let (k, v) = split_kv(g)?;
        cfg.set(&format!("sweep.{k}"), v)?;
    }
    let points = sweep(&cfg)?;
    for (i, p) in points.iter().enumerate() {
        let label: Vec<String> = p
            .assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        match p.report.mean {
            Some(m) => println!(
                "point {i} [{}]: avg {:.2} NMI {:.2}",
                label.join(" "),
                m.avg,
                m.nmi
            ),
            None => println!("point {i} [{}]: no labels", label.join(" ")),
        }
    }
    println!(
        "summary {}",
        cfg.output_dir.join("sweep_summary.csv").display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let m = evaluate_files(&a.assignments, &a.labels, a.k)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&m).expect("metrics serialize")
    );
    Ok(())
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let entries = run_suite(a.seed, a.tol)?;
    let mut failed = 0;
    for e in &entries {
        let status = if e.passed { "ok" } else { "FAIL" };
        println!(
            "{:<18} {status:<4} max rel err {:.3e} ({})",
            e.component, e.max_rel_err, e.worst
        );
        failed += usize::from(!e.passed);
    }
    println!(
        "{} components in {:.2}s",
        entries.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} components exceed tolerance {}", a.tol),
        });
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("UMC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| usage(format!("UMC_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
