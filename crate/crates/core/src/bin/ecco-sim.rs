use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use ecco_sim::accuracy::CameraId;
use ecco_sim::allocator::Policy;
use ecco_sim::metrics::{response_time, write_metrics, MetricsTrace, ResponseTime, Summary};
use ecco_sim::scenario::load_scenario;
use ecco_sim::sim::{run_scenario, Simulation};

#[derive(Parser)]
#[command(name = "ecco-sim", version, about = "Camera retraining simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write trace.csv, jobs.csv, events.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the sampling-configuration profile table of one camera.
    Profile {
        scenario: PathBuf,
        #[arg(long)]
        camera: u32,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario under several policies and print a side-by-side summary.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ecco,naive,total_acc_greedy")]
        policies: Vec<Policy>,
    },
    /// Response times from a trace.csv.
    Analyze {
        trace: PathBuf,
        #[arg(long)]
        target_acc: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            policy,
            seed,
            out,
        } => {
            let mut cfg = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let trace = run_scenario(&cfg)?;
            let summary = Summary::new(&cfg.name, cfg.policy.name(), &trace, cfg.target_acc);
            write_metrics(&trace, &summary, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}: {} windows, final mean accuracy {:.4}, output in {}",
                cfg.policy,
                summary.windows,
                summary.final_mean_accuracy,
                out.display()
            );
        }
        Cmd::Profile { scenario, camera, out } => {
            let cfg = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let id = CameraId(camera);
            let sim = Simulation::new(cfg)?;
            let Some(table) = sim.profiles().get(&id) else {
                bail!("scenario has no camera {camera}");
            };
            match out {
                Some(path) => table.write(BufWriter::new(File::create(&path)?))?,
                None => table.write(io::stdout().lock())?,
            }
        }
        Cmd::Compare { scenario, policies } => {
            let base = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let mut rows = Vec::new();
            for p in policies {
                let mut cfg = base.clone();
                cfg.policy = p;
                let trace = run_scenario(&cfg).with_context(|| format!("policy {p}"))?;
                rows.push(Summary::new(&cfg.name, p.name(), &trace, cfg.target_acc));
            }
            let mut out = io::stdout().lock();
            write!(out, "{:<18}", "window")?;
            for r in &rows {
                write!(out, "{:>18}", r.policy)?;
            }
            writeln!(out)?;
            let windows = rows.iter().map(|r| r.windows).max().unwrap_or(0);
            for w in 0..windows {
                write!(out, "{w:<18}")?;
                for r in &rows {
                    write!(out, "{:>18.4}", r.mean_accuracy_per_window.get(w).copied().unwrap_or(f64::NAN))?;
                }
                writeln!(out)?;
            }
            write!(out, "{:<18}", "final min")?;
            for r in &rows {
                write!(out, "{:>18.4}", r.final_min_accuracy)?;
            }
            writeln!(out)?;
            write!(out, "{:<18}", "time avg")?;
            for r in &rows {
                write!(out, "{:>18.4}", r.time_avg_accuracy)?;
            }
            writeln!(out)?;
        }
        Cmd::Analyze { trace, target_acc } => {
            if !(target_acc > 0.0 && target_acc < 1.0) {
                bail!("--target-acc must lie in (0, 1), got {target_acc}");
            }
            let file = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let t = MetricsTrace::read_trace_csv(BufReader::new(file))?;
            let mut out = io::stdout().lock();
            writeln!(out, "camera_id,request_time_s,response_time_s")?;
            for (cam, rt) in response_time(&t, target_acc) {
                let req = t.first_request(cam).map(|r| r.time).unwrap_or(f64::NAN);
                match rt {
                    ResponseTime::Attained(s) => writeln!(out, "{cam},{req},{s}")?,
                    ResponseTime::Unattained => writeln!(out, "{cam},{req},unattained")?,
                }
            }
        }
    }
    Ok(())
}
