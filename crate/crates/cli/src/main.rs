use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spadsim::analysis::{secret_key_rate, KeyRateInputs, Metric};
use spadsim::presets::{preset, PRESET_NAMES};
use spadsim::scenario::{load_config, DetectorSpec, Scenario};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Discrete-event simulator for actively quenched single-photon detectors.
#[derive(Parser)]
#[command(name = "spadsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its declared outputs.
    Simulate { config: PathBuf },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
    /// Inspect the built-in detector presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Secret key rate M·η²·⟨n⟩·ξ/δt in bits/s.
    Keyrate {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long = "n-mean")]
        n_mean: f64,
        #[arg(long)]
        xi: f64,
        /// Time-bin width in picoseconds.
        #[arg(long = "bin-ps")]
        bin_ps: f64,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as a `detector` block for scenario files.
    Show {
        name: String,
        /// Print the basis of each entry instead.
        #[arg(long)]
        notes: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

/// Nine significant digits, trailing zeros dropped.
fn sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let decimals = (8 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn print_metric(m: &Metric) {
    let line = match m.tolerance {
        Some(t) => format!("{}: {} ± {} {}", m.name, sig(m.value), sig(t), m.unit),
        None => format!("{}: {} {}", m.name, sig(m.value), m.unit),
    };
    println!("{}", line.trim_end());
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    load_config(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn configure_threads() -> Result<(), Failure> {
    match std::env::var("SPADSIM_THREADS") {
        Ok(v) => {
            let n: usize =
                v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
                    Failure::config(format!("SPADSIM_THREADS: expected a positive integer, got `{v}`"))
                })?;
            spadsim::par::init_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

fn simulate(path: &Path) -> Result<(), Failure> {
    let scenario = load(path)?;
    configure_threads()?;
    let out = scenario.run().map_err(Failure::runtime)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let written = out
        .write(&scenario.config.outputs, base)
        .map_err(|e| Failure::runtime(format!("writing outputs: {e}")))?;
    for m in &out.metrics {
        print_metric(m);
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn show_preset(name: &str, notes: bool) -> Result<(), Failure> {
    let p = preset(name).map_err(Failure::config)?;
    if notes {
        for n in &p.notes {
            let tag = if n.anchored { "measured" } else { "assumed" };
            println!("{:<18} {:<9} {}", n.entry, tag, n.basis);
        }
    } else {
        let spec = DetectorSpec::Params(Box::new(p.params));
        println!("{}", serde_json::to_string_pretty(&spec).map_err(Failure::runtime)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Validate { config } => {
            let s = load(&config)?;
            println!("ok: {} scenario, seed {}", s.kind(), s.config.seed);
            Ok(())
        }
        Command::Preset { action } => match action {
            PresetAction::List => {
                for name in PRESET_NAMES {
                    let p = preset(name).expect("listed presets exist");
                    println!("{name:<12} {}", p.description);
                }
                Ok(())
            }
            PresetAction::Show { name, notes } => show_preset(&name, notes),
        },
        Command::Keyrate {
            m,
            eta,
            n_mean,
            xi,
            bin_ps,
        } => {
            let rate = secret_key_rate(&KeyRateInputs {
                m_channels: m,
                eta,
                n_mean,
                xi,
                delta_t_ps: bin_ps,
            })
            .map_err(Failure::config)?;
            print_metric(&Metric::new("secret_key_rate", rate, "bit/s"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::sig;

    #[test]
    fn significant_digits() {
        assert_eq!(sig(1933180.0000000002), "1933180");
        assert_eq!(sig(0.027027027027027056), "0.027027027");
        assert_eq!(sig(307692.3076923078), "307692.308");
        assert_eq!(sig(-12.5), "-12.5");
        assert_eq!(sig(0.0), "0");
    }
}
