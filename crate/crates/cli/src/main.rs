use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orbit_restore::config::RunConfig;
use orbit_restore::degrade::{build_dataset, list_images};
use orbit_restore::eval::{self, Enhancer, GridLegend, IdentityEnhancer};
use orbit_restore::model::{build_model, UResNet};
use orbit_restore::train::{self, FitOptions, TrainState, STATE_FILE};
use orbit_restore::{load_image, Error};

#[derive(Parser)]
#[command(name = "orbit-restore", version, about = "Restore degraded spacecraft imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build degraded/target pairs and manifest.json from clean images.
    Degrade {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train on a manifest; writes the best weights, history and state.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Directory of an earlier run to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance one image or every image in a directory.
    Enhance {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a model on a manifest; writes report.json and report.csv.
    Evaluate {
        #[arg(long, required_unless_present = "identity")]
        weights: Option<PathBuf>,
        /// Score the unmodified inputs instead of a model.
        #[arg(long, conflicts_with = "weights")]
        identity: bool,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tile images row-major into one PNG with a legend sidecar.
    Grid {
        #[arg(long, num_args = 1.., required = true)]
        cells: Vec<PathBuf>,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        cell_height: usize,
        #[arg(long, default_value_t = 256)]
        cell_width: usize,
        /// Column labels, e.g. --labels input target enhanced.
        #[arg(long, num_args = 1..)]
        labels: Vec<String>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Config(_) | Error::Param(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }),
    }
}

fn cmd_degrade(config: Option<&Path>, clean_dir: &Path, out_dir: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    let manifest = build_dataset(clean_dir, out_dir, &cfg.degrade)?;
    cfg.write_resolved(out_dir)?;
    log::info!("wrote {} pairs to {}", manifest.pairs.len(), out_dir.display());
    Ok(())
}

fn cmd_train(config: Option<&Path>, manifest: &Path, out_dir: &Path, resume: Option<&Path>) -> CmdResult {
    let mut cfg = load_config(config)?;
    let cache = cfg.weights_cache();
    let (mut model, state) = match resume {
        None => (build_model(&cfg.model, cache.as_deref())?, None),
        Some(dir) => {
            let (model, _) = UResNet::<f32>::load_weights(dir)?;
            let state_path = dir.join(STATE_FILE);
            let state = if state_path.exists() {
                TrainState::load(&state_path)?
            } else {
                TrainState {
                    history: train::read_history(dir)?,
                    ..Default::default()
                }
            };
            cfg.model = model.config().clone();
            (model, Some(state))
        }
    };
    cfg.write_resolved(out_dir)?;
    let options = FitOptions {
        weights_cache: cache,
        resume: state,
    };
    let outcome = train::fit(&mut model, manifest, &cfg.train, &cfg.loss, out_dir, options)?;
    log::info!(
        "best validation loss {:?}; weights in {}",
        outcome.state.best_checkpoint_loss,
        outcome.best_archive.display()
    );
    Ok(())
}

fn enhance_file(model: &UResNet<f32>, input: &Path, output: &Path) -> CmdResult {
    let img = load_image(input)?;
    model.enhance(&img)?.save(output)?;
    Ok(())
}

fn cmd_enhance(weights: &Path, input: &Path, output: &Path) -> CmdResult {
    let (model, _) = UResNet::<f32>::load_weights(weights)?;
    if !input.is_dir() {
        return enhance_file(&model, input, output);
    }
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no PNG/JPEG images in {}", input.display())).into());
    }
    fs::create_dir_all(output).map_err(|e| Failure::Runtime(Error::Io { path: output.into(), source: e }))?;
    for f in files {
        let name = Path::new(f.file_name().expect("listed files have names")).with_extension("png");
        enhance_file(&model, &f, &output.join(name))?;
    }
    Ok(())
}

fn cmd_evaluate(weights: Option<&Path>, identity: bool, manifest: &Path, out_dir: &Path) -> CmdResult {
    let mut cfg = RunConfig::default();
    let model;
    let enhancer: &dyn Enhancer = match (identity, weights) {
        (true, _) => &IdentityEnhancer,
        (false, Some(w)) => {
            model = UResNet::<f32>::load_weights(w)?.0;
            cfg.model = model.config().clone();
            &model
        }
        (false, None) => return Err(Failure::Usage("--weights or --identity is required".into())),
    };
    let report = eval::evaluate(enhancer, manifest, out_dir)?;
    cfg.write_resolved(out_dir)?;
    let a = &report.aggregates;
    println!(
        "pairs {}  psnr_in {:?}  psnr_out {:?}  ssim_in {:?}  ssim_out {:?}",
        report.per_pair.len(),
        a.psnr_in.mean,
        a.psnr_out.mean,
        a.ssim_in.mean,
        a.ssim_out.mean
    );
    Ok(())
}

fn cmd_grid(
    cells: &[PathBuf],
    rows: usize,
    cols: usize,
    out: &Path,
    cell: (usize, usize),
    labels: &[String],
) -> CmdResult {
    if rows == 0 || cols == 0 || cells.len() != rows * cols {
        return Err(Failure::Usage(format!(
            "{} cells cannot fill a {rows}x{cols} grid",
            cells.len()
        )));
    }
    if !labels.is_empty() && labels.len() != cols {
        return Err(Failure::Usage(format!("{} labels for {cols} columns", labels.len())));
    }
    if cell.0 == 0 || cell.1 == 0 {
        return Err(Failure::Usage("cell size must be positive".into()));
    }
    let images = cells.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
    let grid_rows: Vec<Vec<_>> = images.chunks(cols).map(<[_]>::to_vec).collect();
    let grid = eval::make_grid(&grid_rows, labels, cell)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.into(), source: e }))?;
    }
    grid.save(out)?;
    GridLegend {
        rows,
        cols,
        cell_height: cell.0,
        cell_width: cell.1,
        column_labels: labels.to_vec(),
        cells: cells.iter().map(|p| p.display().to_string()).collect(),
    }
    .save(eval::legend_path(out))?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Degrade {
            config,
            clean_dir,
            out_dir,
        } => cmd_degrade(config.as_deref(), &clean_dir, &out_dir),
        Command::Train {
            config,
            manifest,
            out_dir,
            resume,
        } => cmd_train(config.as_deref(), &manifest, &out_dir, resume.as_deref()),
        Command::Enhance { weights, input, output } => cmd_enhance(&weights, &input, &output),
        Command::Evaluate {
            weights,
            identity,
            manifest,
            out_dir,
        } => cmd_evaluate(weights.as_deref(), identity, &manifest, &out_dir),
        Command::Grid {
            cells,
            rows,
            cols,
            out,
            cell_height,
            cell_width,
            labels,
        } => cmd_grid(&cells, rows, cols, &out, (cell_height, cell_width), &labels),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
