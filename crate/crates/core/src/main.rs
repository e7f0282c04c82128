#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use contactflux::harness::{
    emit_logs, parse_config_with, run_experiment, ExperimentKind, Scenario,
};
use contactflux::trajectory::bump_blend;

#[derive(Parser)]
#[command(
    name = "contactflux",
    version,
    about = "Anticipatory changing-contact control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. `--set trials=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a velocity sweep with the given config.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the smooth speed transition from v1 to v2 as CSV.
    Profile {
        #[arg(long)]
        v1: f64,
        #[arg(long)]
        v2: f64,
        #[arg(long = "T", value_name = "SECONDS")]
        duration: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Parse and check a config file.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    mut set: Vec<String>,
    force_sweep: bool,
) -> contactflux::Result<()> {
    if force_sweep {
        set.push("experiment=sweep".into());
    }
    let cfg = parse_config_with(&config, &set)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let sc = Scenario::new(cfg)?;
    let result = run_experiment(&sc)?;
    emit_logs(&result, &dir)?;
    for r in result.reports() {
        let peaks: Vec<String> = r
            .contacts
            .iter()
            .map(|c| {
                format!(
                    "{}={}",
                    c.contact_id,
                    c.impact_peak.map_or("-".into(), |p| format!("{p:.2}N"))
                )
            })
            .collect();
        println!(
            "trial {:>3}  tracking {:.4} m  completion {:.3} s  transition {:.3} s  {}",
            r.trial,
            r.mean_tracking_error,
            r.completion_time,
            r.transition_time,
            peaks.join(" ")
        );
    }
    if let Some(s) = &result.summary.sweep {
        println!(
            "fit: F = {:.3} v + {:.3}  (R² {:.4}, {} samples)",
            s.fit.slope, s.fit.intercept, s.fit.r_squared, s.samples
        );
    }
    println!("logs written to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, set } => run(config, out, set, false),
        Command::Sweep { config, out, set } => run(config, out, set, true),
        Command::Profile {
            v1,
            v2,
            duration,
            samples,
        } => (|| {
            if !(duration > 0.0) || samples < 2 {
                return Err(contactflux::Error::Domain(
                    "need T > 0 and at least 2 samples".into(),
                ));
            }
            println!("t,v");
            for i in 0..samples {
                let t = duration * i as f64 / (samples - 1) as f64;
                println!("{t},{}", bump_blend(v1, v2, t / duration)?);
            }
            Ok(())
        })(),
        Command::Validate { config, set } => parse_config_with(&config, &set).and_then(|cfg| {
            let kind: ExperimentKind = cfg.experiment;
            let sc = Scenario::new(cfg)?;
            println!(
                "ok: {} experiment, {} trial(s), {} contact(s), {} trajectory samples",
                kind.as_str(),
                sc.config.trials,
                sc.contacts.len(),
                sc.trajectory.len()
            );
            Ok(())
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
