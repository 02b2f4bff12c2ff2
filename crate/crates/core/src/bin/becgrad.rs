use std::path::PathBuf;
use std::process::ExitCode;

use becgrad::experiments::{self, InitialKind, Overrides, Recipe};
use becgrad::Error;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "becgrad", version, about = "Two-well BEC magnetic-field-gradient metrology simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a figure recipe and write CSVs plus manifest.json.
    Run {
        /// Recipe name (see `list-recipes`); may instead come from --config.
        #[arg(long)]
        recipe: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML or JSON file overriding the recipe preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "omega-d")]
        omega_d: Option<f64>,
        #[arg(long = "gamma-o")]
        gamma_o: Option<f64>,
        #[arg(long)]
        chi: Option<f64>,
        #[arg(long = "u-over-ej")]
        u_over_ej: Option<f64>,
        /// singlet, synthesized or product.
        #[arg(long = "initial-state")]
        initial_state: Option<String>,
        /// Cross-check against the brute-force oracle where it fits.
        #[arg(long)]
        verify: bool,
    },
    /// Prepare the entangled state by pair tunnelling and save it as JSON.
    Synth {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long = "u-over-ej", default_value_t = 10.0)]
        u_over_ej: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the available recipes.
    ListRecipes,
}

fn fail(e: &Error) -> ExitCode {
    let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    eprintln!("{record}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListRecipes => {
            for r in Recipe::ALL {
                println!("{:<8} {}", r.name(), r.description());
            }
            ExitCode::SUCCESS
        }
        Command::Synth { n, u_over_ej, out } => match experiments::write_synthesized_state(n, u_over_ej, &out) {
            Ok(s) => {
                let summary = json!({
                    "state": out,
                    "t_star": s.report.t_star,
                    "t_phase": s.report.t_phase,
                    "fidelity_max": s.report.fidelity_max,
                    "well_weight": s.well_weight,
                });
                println!("{summary}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run {
            recipe,
            out,
            config,
            n,
            omega_d,
            gamma_o,
            chi,
            u_over_ej,
            initial_state,
            verify,
        } => {
            let parsed = (|| {
                let recipe = recipe.as_deref().map(str::parse::<Recipe>).transpose()?;
                let initial_state = initial_state.as_deref().map(str::parse::<InitialKind>).transpose()?;
                let overrides = Overrides {
                    n,
                    omega_d,
                    gamma_o,
                    chi,
                    u_over_ej,
                    initial_state,
                    output_dir: out,
                    verify,
                };
                experiments::parse_config(recipe, config.as_deref(), &overrides)
            })();
            let config = match parsed {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match experiments::run(&config) {
                Ok(summary) => {
                    let failed: Vec<_> = summary.verification.iter().filter(|v| !v.passed).collect();
                    println!(
                        "{}",
                        json!({
                            "output_dir": summary.output_dir,
                            "files": summary.files,
                            "wall_time_s": summary.wall_time,
                            "verification_failures": failed.len(),
                        })
                    );
                    if failed.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        let record = json!({ "error": { "kind": "verification_failed", "checks": failed } });
                        eprintln!("{record}");
                        ExitCode::from(3)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
