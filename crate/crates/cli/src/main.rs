use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smlab::experiment::{
    cmd_chart, cmd_flow, cmd_propagate, cmd_quantize, cmd_regularity, cmd_selftest, cmd_wavefront, ExperimentConfig,
    RunReport,
};
use smlab::wavefront::Order;

/// Second-microlocal experiments on the flat torus.
#[derive(Parser, Debug)]
#[command(name = "smlab", version, about)]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write plot-data CSV files.
    #[arg(long, global = true)]
    plot_data: bool,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Wavefront order `m`, a number or `inf`.
    #[arg(long, global = true)]
    m: Option<String>,
    /// Weight order `l`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    l: Option<f64>,
    /// Worker threads; falls back to SMLAB_THREADS, then RAYON_NUM_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the report body as JSON instead of the summary.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coisotropic regularity of a family.
    Regularity,
    /// Wavefront scan over a probe grid.
    Wavefront,
    /// Propagation check along H1 or H2 flows.
    Propagate,
    /// Integrate one split Hamiltonian field.
    Flow,
    /// Projective chart round trip and lift checks.
    Chart,
    /// Quantization algebra checks.
    Quantize,
    /// The built-in invariant suite.
    Selftest {
        /// Drop the h in the Weyl midpoint; the composition check must fail.
        #[arg(long)]
        perturb_quantization: bool,
    },
}

fn parse_order(s: &str) -> Result<Order, String> {
    if s == "inf" {
        return Ok(Order::Infinite);
    }
    s.parse::<f64>().map(Order::Finite).map_err(|_| format!("order `{s}` is neither a number nor `inf`"))
}

fn configure_threads(flag: Option<usize>) -> Result<(), String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SMLAB_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| format!("SMLAB_THREADS = `{v}` is not a count"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn load(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.plot_data {
        cfg.output.plot_data = true;
    }
    if let Some(d) = &cli.out {
        cfg.output.dir = Some(d.clone());
    }
    if let Some(m) = &cli.m {
        cfg.orders.m = parse_order(m)?;
    }
    if let Some(l) = cli.l {
        cfg.orders.l = l;
    }
    Ok(cfg)
}

fn summarize(report: &RunReport) {
    let b = &report.body;
    println!("{} [{}]", b.command, b.config.scenario);
    if b.command == "wavefront" {
        let verdicts = b.results["verdicts"].as_array().cloned().unwrap_or_default();
        for v in &verdicts {
            println!(
                "  cell {:>3}  {:<12} slope {}",
                v["index"],
                v["classification"].as_str().unwrap_or("?"),
                v["slope"]
            );
        }
    }
    if let Some(pairs) = b.results.get("pairs").and_then(|v| v.as_array()) {
        for p in pairs {
            println!(
                "  t = {:<8} {} -> {}",
                p["t"],
                p["seed_class"].as_str().unwrap_or("?"),
                p["flowed_class"].as_str().unwrap_or("?")
            );
        }
    }
    if let Some(k) = b.results.get("regular_through") {
        println!("  regular through {k}, first failure {}", b.results["first_failure"]);
    }
    if let Some(x) = b.results.get("x_end") {
        println!("  x_end {x}, fiber_end {}", b.results["fiber_end"]);
    }
    for c in &b.checks {
        println!("{}", c.line());
    }
    println!("wall clock {:.3} s", report.header.wall_clock_seconds);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Regularity => cmd_regularity(&cfg),
        Command::Wavefront => cmd_wavefront(&cfg),
        Command::Propagate => cmd_propagate(&cfg),
        Command::Flow => cmd_flow(&cfg),
        Command::Chart => cmd_chart(&cfg),
        Command::Quantize => cmd_quantize(&cfg),
        Command::Selftest { perturb_quantization } => cmd_selftest(&cfg, perturb_quantization),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.json {
        match report.body_json() {
            Ok(s) => println!("{s}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    } else {
        summarize(&report);
    }
    if let Some(dir) = &report.body.config.output.dir {
        match report.write(dir) {
            Ok(paths) => {
                for p in paths {
                    eprintln!("wrote {}", p.display());
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::from(report.exit_code() as u8)
}
