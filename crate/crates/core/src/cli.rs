//! `etnet` command line: gen-data, train, eval, ablate, predict.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate, load_dataset_with_kernel, read_image, save_dataset, write_image, write_mask, Manifest, SyntheticSpec};
use crate::training::{ablate, ablation_table, evaluate, fit, overlay, predict_image, write_predictions, Checkpoint};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "etnet", version, about = "Edge-attention guided segmentation network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic nested-ellipse dataset.
    GenData {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model as described by a run config.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a dataset and print the metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write predicted masks and overlays into this directory.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        per_image: bool,
        #[arg(long, default_value_t = 3)]
        edge_kernel: usize,
    },
    /// Train all four ablation variants and print a comparison table.
    Ablate(ConfigArgs),
    /// Segment a single image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set schedule.epochs=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path, &self.set),
            None => RunConfig::from_toml_str("", &self.set),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            n,
            size,
            classes,
            seed,
            out,
        } => {
            let spec = SyntheticSpec::new(n, size, classes, seed);
            let samples = generate(&spec)?;
            let manifest = Manifest {
                generator: "nested-ellipses".into(),
                samples: samples.len(),
                params: spec,
            };
            save_dataset(&samples, &out, Some(&manifest))?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = fit(&cfg)?;
            println!(
                "trained {} iterations; run directory {}",
                out.state.iteration,
                cfg.output_dir.display()
            );
            if let Some(report) = &out.final_report {
                println!("validation mIoU {:.4}  accuracy {:.4}", report.miou, report.accuracy);
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            predictions,
            per_image,
            edge_kernel,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let classes = ck.state.net.config().num_classes;
            let samples = load_dataset_with_kernel(&data, classes, edge_kernel)?;
            let ev = evaluate(&ck.state.net, &samples, per_image, &ck.config_hash)?;
            let json = ev.report.to_json()?;
            println!("{json}");
            if let Some(path) = out {
                write_text(&path, &json)?;
            }
            if let Some(dir) = predictions {
                write_predictions(&dir, &samples, &ev.predictions)?;
            }
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let classes = cfg.resolved_network().num_classes;
            let dir = |d: &Option<PathBuf>, key: &str| {
                d.clone()
                    .ok_or_else(|| Error::Config(format!("ablate needs {key} in the config")))
            };
            let train = load_dataset_with_kernel(&dir(&cfg.data.train_dir, "data.train_dir")?, classes, cfg.data.edge_kernel)?;
            let test = load_dataset_with_kernel(&dir(&cfg.data.val_dir, "data.val_dir")?, classes, cfg.data.edge_kernel)?;
            if train.is_empty() || test.is_empty() {
                return Err(Error::InvalidArgument("ablation needs non-empty train and test sets".into()));
            }
            let rows = ablate(&cfg, &train, &test, Some(&cfg.output_dir))?;
            let table = ablation_table(&rows);
            print!("{table}");
            write_text(&cfg.output_dir.join("ablation.md"), &table)?;
        }
        Command::Predict { checkpoint, image, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let img = read_image(&image)?;
            let (mask, edge) = predict_image(&ck.state.net, &img)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            write_mask(&out.join(format!("{stem}_mask.png")), &mask)?;
            write_image(&out.join(format!("{stem}_overlay.png")), &overlay(&img, &mask, edge.as_ref()))?;
            println!("wrote {} predictions to {}", stem, out.display());
        }
    }
    Ok(())
}

/// Exit status for an error: 2 for configuration and missing-input problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownConfigKey(_) | Error::MissingMask { .. } => 2,
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
        Error::Image { source: image::ImageError::IoError(e), .. } if e.kind() == io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            match &e {
                Error::UnknownConfigKey(key) => eprintln!("error: unknown config key `{key}`"),
                other => eprintln!("error: {other}"),
            }
            code
        }
    }
}
