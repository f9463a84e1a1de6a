//! Command-line workflows: generate, train, eval, grid, dump-polar and
//! dump-origins.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{self, RunConfig};
use crate::error::{Error, IoContext};
use crate::eval::SensitivityGrid;
use crate::image::{read_boxes, read_pgm, write_pgm, AnnotatedImage};
use crate::losses::LossArm;
use crate::model::SegNet;
use crate::polar::{self, PolarConfig};
use crate::synthdata;
use crate::train::{self, TrainData, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "polarmil",
    version,
    about = "Polar-transform MIL segmentation from loose boxes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossFlag {
    Polar,
    BaselineLg,
    Combined,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantFlag {
    WeightedSoftmax,
    WeightedQuasimax,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub loss: Option<LossFlag>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantFlag>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub wmin: Option<f64>,
    /// Loose-box margin applied to the tight boxes.
    #[arg(long)]
    pub margin: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 360 angles, radius = half box diagonal, origin = box centre.
    HalfDiagonal,
    /// Loss defaults.
    Default,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write weights, metrics, origins and a Dice report.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Dice report of a model on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Weights file; without it the head is zeroed so every output is 0.5.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "val.txt")]
        manifest: String,
        #[arg(long)]
        margin: Option<usize>,
    },
    /// Sweep alpha x w_min and write sensitivity.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0])]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.5, 0.7])]
        wmins: Vec<f64>,
    },
    /// Polar resampling of one image about a box origin, as PGM files.
    DumpPolar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long, default_value_t = 0)]
        box_index: usize,
        #[arg(long, value_enum, default_value_t = Preset::HalfDiagonal)]
        preset: Preset,
        /// Origin as ROW,COL; defaults to the box centre.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        origin: Option<Vec<usize>>,
    },
    /// Train and write the per-epoch origins of the first validation cases.
    DumpOrigins {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, default_value_t = 3)]
        cases: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigParse { .. } | Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(|e| match e {
            Error::Io { .. } => CliError::Runtime(e),
            other => CliError::from(other),
        })?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string()).map_err(CliError::Usage)?;
    }
    cfg.apply_overrides(&common.overrides)?;
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) -> CliResult<()> {
    if let Some(l) = f.loss {
        cfg.loss.arm = match l {
            LossFlag::Polar => LossArm::Polar,
            LossFlag::BaselineLg => LossArm::BaselineLg,
            LossFlag::Combined => LossArm::Combined,
        };
    }
    if let Some(v) = f.variant {
        let name = match v {
            VariantFlag::WeightedSoftmax => "weighted-softmax",
            VariantFlag::WeightedQuasimax => "weighted-quasimax",
        };
        cfg.loss.smoothmax.variant = config::parse_variant(name).map_err(CliError::Usage)?;
    }
    if cfg.loss.arm == LossArm::BaselineLg && f.wmin.is_some() {
        return Err(CliError::Usage(
            "--wmin has no effect with --loss baseline-lg, whose bags are unweighted".into(),
        ));
    }
    if let Some(a) = f.alpha {
        cfg.loss.smoothmax.alpha = a;
    }
    if let Some(w) = f.wmin {
        cfg.loss.smoothmax.w_min = w;
    }
    if let Some(m) = f.margin {
        cfg.data.margin = m;
    }
    if let Some(e) = f.epochs {
        cfg.train.epochs = e;
    }
    if let Some(t) = f.threads {
        cfg.train.threads = t;
    }
    Ok(())
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(dir).io_context(|| format!("creating {}", dir.display()))?;
    cfg.write(&dir.join("config.txt"))?;
    Ok(())
}

struct Loaded {
    train: Vec<AnnotatedImage>,
    val_ids: Vec<String>,
    val: Vec<AnnotatedImage>,
}

fn load_dataset(dir: &Path, margin: usize) -> CliResult<Loaded> {
    let (_, train) = synthdata::load_split(dir, "train.txt", margin)?;
    let (val_ids, val) = synthdata::load_split(dir, "val.txt", margin)?;
    Ok(Loaded { train, val_ids, val })
}

fn run_training(cfg: &RunConfig, data: &Loaded, val_cases: usize) -> CliResult<TrainOutcome> {
    let n = val_cases.min(data.val.len());
    let outcome = train::train(
        TrainData {
            train: &data.train,
            val: &data.val[..n],
            val_ids: &data.val_ids[..n],
        },
        &cfg.model,
        &cfg.adam,
        &cfg.loss,
        &cfg.train,
        |m| {
            eprintln!(
                "epoch {:3}  loss {:.5}  val dice {:.4} ({:.4})",
                m.epoch, m.loss.combined, m.val_dice_mean, m.val_dice_std
            )
        },
    )?;
    Ok(outcome)
}

fn cmd_generate(common: &Common) -> CliResult<()> {
    let cfg = resolve(common)?;
    cfg.data.validate()?;
    let ds = synthdata::generate(&cfg.data)?;
    prepare_out(&common.out, &cfg)?;
    synthdata::write_dataset(&ds, &common.out)?;
    eprintln!(
        "wrote {} train and {} val items to {}",
        ds.train.len(),
        ds.val.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_train(common: &Common, flags: &TrainFlags) -> CliResult<()> {
    let mut cfg = resolve(common)?;
    apply_train_flags(&mut cfg, flags)?;
    cfg.validate()?;
    let data = load_dataset(&flags.data, cfg.data.margin)?;
    prepare_out(&common.out, &cfg)?;
    let outcome = run_training(&cfg, &data, usize::MAX)?;
    train::write_outcome(&outcome, &common.out)?;
    let (m, s) = outcome.report.mean_std();
    println!("mean stacked dice {m:.4} ({s:.4})");
    Ok(())
}

fn cmd_eval(
    common: &Common,
    data: &Path,
    weights: Option<&Path>,
    manifest: &str,
    margin: Option<usize>,
) -> CliResult<()> {
    let mut cfg = resolve(common)?;
    if let Some(m) = margin {
        cfg.data.margin = m;
    }
    cfg.validate()?;
    let model = match weights {
        Some(p) => SegNet::load(cfg.model.clone(), p)?,
        None => {
            let mut m = SegNet::new(cfg.model.clone())?;
            m.zero_head();
            m
        }
    };
    let (ids, items) = synthdata::load_split(data, manifest, cfg.data.margin)?;
    prepare_out(&common.out, &cfg)?;
    let (report, _) = train::evaluate(&model, &ids, &items, cfg.train.slices_per_volume)?;
    report.write(&common.out.join("dice_report.csv"))?;
    let (m, s) = report.mean_std();
    println!("mean stacked dice {m:.4} ({s:.4})");
    Ok(())
}

fn cmd_grid(common: &Common, flags: &TrainFlags, alphas: &[f64], wmins: &[f64]) -> CliResult<bool> {
    if flags.alpha.is_some() || flags.wmin.is_some() {
        return Err(CliError::Usage(
            "grid takes --alphas and --wmins, not --alpha or --wmin".into(),
        ));
    }
    let mut cfg = resolve(common)?;
    apply_train_flags(&mut cfg, flags)?;
    cfg.validate()?;
    let data = load_dataset(&flags.data, cfg.data.margin)?;
    prepare_out(&common.out, &cfg)?;
    let mut grid = SensitivityGrid::new(alphas.to_vec(), wmins.to_vec());
    let mut complete = true;
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &w) in wmins.iter().enumerate() {
            let mut cell = cfg.clone();
            cell.loss.smoothmax.alpha = a;
            cell.loss.smoothmax.w_min = w;
            let dir = common.out.join(format!("alpha{a}_wmin{w}"));
            let result = cell
                .validate()
                .map_err(CliError::from)
                .and_then(|_| prepare_out(&dir, &cell))
                .and_then(|_| run_training(&cell, &data, usize::MAX))
                .and_then(|o| {
                    train::write_outcome(&o, &dir)?;
                    Ok(o.report.mean_std().0)
                });
            match result {
                Ok(d) => grid.cells[i][j] = Some(d),
                Err(e) => {
                    complete = false;
                    eprintln!("cell alpha={a} w_min={w} failed: {}", describe(&e));
                }
            }
        }
    }
    grid.write(&common.out.join("sensitivity.csv"))?;
    Ok(complete)
}

fn cmd_dump_polar(
    common: &Common,
    image: &Path,
    boxes: &Path,
    box_index: usize,
    preset: Preset,
    origin: Option<&[usize]>,
) -> CliResult<()> {
    let cfg = resolve(common)?;
    let img = read_pgm(image)?;
    let (h, w) = img.dims();
    let all = read_boxes(boxes)?;
    let b = all
        .get(box_index)
        .ok_or_else(|| CliError::Usage(format!("box index {box_index} out of range ({} boxes)", all.len())))?
        .clipped(h, w);
    let pcfg = match preset {
        Preset::HalfDiagonal => PolarConfig::half_diagonal(&b),
        Preset::Default => cfg.loss.polar,
    };
    let origin = match origin {
        Some(o) => (o[0], o[1]),
        None => b.center(),
    };
    let transformed = polar::polar_transform_region(&img, &b, origin, &pcfg)?;
    let nearest = PolarConfig {
        interpolation: polar::Interpolation::Nearest,
        ..pcfg
    };
    let mask = polar::polar_transform(&polar::box_mask(&b, h, w), origin, &nearest)?;
    prepare_out(&common.out, &cfg)?;
    write_pgm(&transformed.to_grid(), &common.out.join("polar.pgm"))?;
    write_pgm(&transformed.valid_mask(), &common.out.join("valid_mask.pgm"))?;
    write_pgm(&mask.to_grid(), &common.out.join("box_mask_polar.pgm"))?;
    let mut s = String::from("theta_index,valid_len\n");
    for (j, n) in transformed.valid_len.iter().enumerate() {
        writeln!(s, "{j},{n}").unwrap();
    }
    let path = common.out.join("valid_lengths.csv");
    std::fs::write(&path, s).io_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_dump_origins(common: &Common, flags: &TrainFlags, cases: usize) -> CliResult<()> {
    let mut cfg = resolve(common)?;
    apply_train_flags(&mut cfg, flags)?;
    cfg.validate()?;
    let data = load_dataset(&flags.data, cfg.data.margin)?;
    prepare_out(&common.out, &cfg)?;
    let outcome = run_training(&cfg, &data, cases)?;
    let path = common.out.join("origins.csv");
    std::fs::write(&path, train::origins_csv(&outcome.origins)).io_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn describe(e: &CliError) -> String {
    match e {
        CliError::Usage(m) => m.clone(),
        CliError::Runtime(e) => e.to_string(),
    }
}

fn dispatch(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(common)?,
        Command::Train { common, flags } => cmd_train(common, flags)?,
        Command::Eval {
            common,
            data,
            weights,
            manifest,
            margin,
        } => cmd_eval(common, data, weights.as_deref(), manifest, *margin)?,
        Command::Grid {
            common,
            flags,
            alphas,
            wmins,
        } => {
            if !cmd_grid(common, flags, alphas, wmins)? {
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::DumpPolar {
            common,
            image,
            boxes,
            box_index,
            preset,
            origin,
        } => cmd_dump_polar(common, image, boxes, *box_index, *preset, origin.as_deref())?,
        Command::DumpOrigins { common, flags, cases } => cmd_dump_origins(common, flags, *cases)?,
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
