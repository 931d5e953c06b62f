use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dili_core::experiment::{diagnose_files, lis_info, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dili", version, about = "Likelihood-informed MCMC for function-space inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
    },
    /// Chain diagnostics for a sample file, printed as JSON.
    Diagnose {
        samples: PathBuf,
        /// Scalar trace CSV of the same run.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        burn_in: f64,
        #[arg(long, default_value_t = 100)]
        max_lag: usize,
    },
    /// Dimensions and eigenvalues of a LIS file, printed as JSON.
    LisInfo {
        file: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ExperimentConfig::load(&config).and_then(|cfg| {
            let report = run_experiment(&cfg)?;
            let r = &report.run;
            println!("proposal        {}", r.proposal);
            println!("dimension       {}", report.dimension);
            println!("iterations      {}", r.iterations);
            println!("acceptance      {:.4}", r.acceptance_rate);
            if let Some(cs) = r.acceptance_rate_cs {
                println!("acceptance (cs) {cs:.4}");
            }
            if let Some(tau) = report.diagnostics.omf_iact {
                println!("OMF IACT        {tau:.2}");
            }
            if let Some((_, dim)) = r.lis_dim_trace.last() {
                println!("LIS dimension   {dim}");
            }
            println!("seconds         {:.2}", report.seconds);
            println!("output          {}", cfg.output_dir.display());
            Ok(())
        }),
        Command::Diagnose { samples, trace, burn_in, max_lag } => {
            diagnose_files(&samples, trace.as_deref(), burn_in, max_lag).and_then(|report| {
                println!("{}", serde_json::to_string_pretty(&report)?);
                Ok(())
            })
        }
        Command::LisInfo { file } => lis_info(&file).and_then(|info| {
            println!("{}", serde_json::to_string_pretty(&info)?);
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
