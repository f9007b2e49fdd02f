use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gypsum::ingest::write_json;
use gypsum::pipeline::{evaluate_saved, run_pipeline, write_synth_fixture, RunConfig};
use gypsum::synth::SynthSpec;
use gypsum::{Error, Result};

/// Unsupervised clustering of near-infrared hyperspectral images.
#[derive(Parser)]
#[command(name = "gypsum", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess, embed, cluster and score one image.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic scene with ground truth and a matching run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML scene description; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        endmembers: Option<usize>,
        /// Signal-to-noise ratio in dB; `inf` for a noiseless scene.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rescore a saved cluster map.
    Eval {
        /// Cluster-map data file (`.img`).
        #[arg(long)]
        map: PathBuf,
        /// Ground-truth label raster data file.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Run config whose inputs and preprocessing give the spectral space.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let outcome = run_pipeline(&cfg)?;
            if let Some(g) = &outcome.manifest.gypsum {
                println!("d = {}, k = {}, clusters = {}", g.d, g.k, g.final_k);
            }
            if let Some(b) = &outcome.manifest.baseline {
                println!("baseline: pca {} + k-means {}, clusters = {}", b.n_components, b.k, b.final_k);
            }
            println!("outputs in {}", outcome.out_dir.display());
        }
        Command::Synth {
            out,
            spec,
            rows,
            cols,
            bands,
            endmembers,
            snr,
            seed,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::default(),
            };
            s.rows = rows.unwrap_or(s.rows);
            s.cols = cols.unwrap_or(s.cols);
            s.bands = bands.unwrap_or(s.bands);
            s.endmembers = endmembers.unwrap_or(s.endmembers);
            s.seed = seed.unwrap_or(s.seed);
            if let Some(v) = snr {
                s.snr_db = v.is_finite().then_some(v);
            }
            s.validate()?;
            let fixture = write_synth_fixture(&s, &out)?;
            println!("scene {} (noise sigma {:.3e})", fixture.cube.display(), fixture.scene.noise_sigma);
            println!("config {}", fixture.config.display());
        }
        Command::Eval {
            map,
            truth,
            config,
            out,
        } => {
            let cfg = config.map(RunConfig::load).transpose()?;
            let report = evaluate_saved(&map, truth.as_deref(), cfg.as_ref())?;
            match out {
                Some(p) => write_json(&report, &p)?,
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).map_err(|e| Error::config(e.to_string()))?
                ),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
