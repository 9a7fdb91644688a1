use std::path::PathBuf;
use std::process::ExitCode;

use chargenoise_cli::error::EXIT_NUMERICAL;
use chargenoise_cli::{cmd_charge_pipeline, cmd_fields, cmd_parity_pipeline, cmd_reproduce, cmd_spectrum};
use chargenoise_cli::{CliError, RunConfig, RunManifest};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chargenoise", version, about = "Transmon charge-noise pipelines on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; omitted sections use defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (default: $CHARGENOISE_OUT, else ./chargenoise-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Durations scaled down 100x, tolerances widened to match.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Energy levels over gate charge and parity-band dispersions.
    Spectrum,
    /// Parity switching: shots, GMM + HMM decode, PSD and Lorentzian fit.
    Parity,
    /// Offset-charge configurations: model order, transition matrices, noise fits.
    Charge,
    /// Induced-charge maps and sensitive volumes for both device styles.
    Fields,
    /// Every pipeline plus a planted-versus-recovered summary.
    Reproduce,
}

fn print_manifest(m: &RunManifest, out: &std::path::Path) {
    println!("{} files written to {}", m.files.len(), out.display());
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    cfg.quick |= cli.quick;
    let level: log::LevelFilter = cfg
        .verbosity
        .parse()
        .map_err(|_| CliError::Config(format!("field `verbosity`: unknown level `{}`", cfg.verbosity)))?;
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let out = cfg.output_root();
    match cli.command {
        Command::Spectrum => {
            let o = cmd_spectrum(&cfg, &out)?;
            for b in &o.report.bands {
                println!("{}-{}: f_bar {:.6} GHz, eps {:.6e} GHz", b.i, b.j, b.f_bar, b.eps);
            }
            print_manifest(&o.manifest, &out);
        }
        Command::Parity => {
            let o = cmd_parity_pipeline(&cfg, &out)?;
            let r = &o.report;
            println!(
                "dwell: planted {:.4e} s, PSD {:.4e} s, runs {:.4e} s; spurious flips {:.4}",
                r.planted_dwell, r.recovered_dwell, r.run_length_dwell, r.spurious_rate
            );
            for w in &r.warnings {
                println!("warning: {w}");
            }
            print_manifest(&o.manifest, &out);
        }
        Command::Charge => {
            let o = cmd_charge_pipeline(&cfg, &out)?;
            let r = &o.report;
            println!("configurations: {} (planted {})", r.chosen_order, r.planted_order);
            for t in &r.temperatures {
                println!(
                    "{:>5.0} mK: neighbor {:.4e}, scramble {:.4e}",
                    t.temperature * 1e3,
                    t.neighbor_mass,
                    t.scramble_mass
                );
            }
            print_manifest(&o.manifest, &out);
        }
        Command::Fields => {
            let o = cmd_fields(&cfg, &out)?;
            for v in &o.report.volumes {
                println!(
                    "{:.3e}: differential {:.4e} m3, single {:.4e} m3",
                    v.threshold, v.differential_m3, v.single_m3
                );
            }
            print_manifest(&o.manifest, &out);
        }
        Command::Reproduce => {
            let o = cmd_reproduce(&cfg, &out)?;
            print!("{}", o.report.to_csv());
            print_manifest(&o.manifest, &out);
            if !o.report.failed_stages.is_empty() {
                eprintln!("failed stages: {}", o.report.failed_stages.join(", "));
                return Ok(ExitCode::from(EXIT_NUMERICAL as u8));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
