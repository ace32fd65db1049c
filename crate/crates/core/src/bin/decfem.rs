use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decfem::driver::{converge, mesh_info, parse_config_with_overrides, run, RunConfig};
use decfem::mesh::read_mesh_file;
use decfem::Scalar;

#[derive(Parser)]
#[command(
    name = "decfem",
    about = "Mass-matrix-free continuous finite element solver for linear transport",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a config file.
    Solve {
        config: PathBuf,
        /// Extra `key=value` settings applied on top of the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Mesh-refinement convergence study for the configured scenario.
    Converge {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print statistics for an ASCII mesh file.
    MeshInfo { mesh: PathBuf },
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<RunConfig<Scalar>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    parse_config_with_overrides(&text, overrides).map_err(|e| e.to_string())
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Solve { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let summary = run(&cfg).map_err(|e| e.to_string())?;
            println!("dofs        : {}", summary.dofs);
            println!("dt          : {:e}", summary.dt);
            println!("steps       : {}", summary.steps);
            println!("final time  : {}", summary.final_time);
            println!("min/max     : {:.6} / {:.6}", summary.min, summary.max);
            println!("mass drift  : {:e}", summary.mass_drift);
            println!("l2 error    : {:e}", summary.final_error);
            if let Some(diff) = summary.oracle_diff {
                println!("oracle diff : {diff:e}");
            }
            println!("output      : {}", summary.output_dir.display());
            Ok(())
        }
        Command::Converge { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let table = converge(&cfg).map_err(|e| e.to_string())?;
            let csv = table.to_csv();
            print!("{csv}");
            let out_dir = cfg.resolved_output();
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
            let path = out_dir.join("convergence.csv");
            std::fs::write(&path, csv)
                .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            println!("written     : {}", path.display());
            Ok(())
        }
        Command::MeshInfo { mesh } => {
            let m = read_mesh_file::<Scalar>(mesh).map_err(|e| e.to_string())?;
            print!("{}", mesh_info(&m));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
