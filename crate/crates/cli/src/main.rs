use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use latent_render::scene::{Diagnostic, Severity};

mod commands;

/// Occlusion-ordered latent rendering from JSON scene files.
#[derive(Debug, Parser)]
#[command(name = "latent-render", version)]
pub struct Cli {
    /// Scene description (JSON).
    #[arg(long, global = true)]
    scene: Option<PathBuf>,

    /// Directory for emitted images, maps and traces.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the scene's simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the scene's number of denoising steps.
    #[arg(long, global = true)]
    steps: Option<u32>,

    /// Use raw box masks as transmittance maps.
    #[arg(long, global = true)]
    no_attention_shaping: bool,

    /// Emit diagnostics as JSON.
    #[arg(long, global = true)]
    json_diagnostics: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the scene and report every problem.
    Validate,
    /// Print object ids front to back.
    Sort,
    /// Print the per-object density schedule.
    Schedule {
        #[arg(long, value_enum, default_value = "csv")]
        format: TableFormat,
    },
    /// Write transmittance, visibility and weight maps of the composite.
    Maps,
    /// Write the pixel-space composite as PPM.
    Render,
    /// Run the toy denoising loop and write its step trace.
    Simulate,
    /// Write one composite per opacity value of one object.
    Sweep {
        /// Object whose opacity is varied.
        #[arg(long)]
        object: String,
        /// Comma-separated opacities.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
        )]
        alphas: Vec<f64>,
    },
}

fn report(diagnostics: &[Diagnostic], json: bool) {
    if diagnostics.is_empty() {
        return;
    }
    if json {
        let body = serde_json::json!({ "diagnostics": diagnostics });
        eprintln!("{body}");
    } else {
        for d in diagnostics {
            eprintln!("{d}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = commands::run(&cli);
    report(&outcome.diagnostics, cli.json_diagnostics);
    if let Some(stdout) = &outcome.stdout {
        println!("{stdout}");
    }
    if outcome.diagnostics.iter().any(|d| d.severity == Severity::Error) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
