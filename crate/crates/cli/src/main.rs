use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lavae::config::ModelSelect;
use lavae::pipeline::Pipeline;
use lavae::{AugmentationPair, CvaeMode, Error, RunConfig};

/// All training and evaluation work runs in f32.
type Real = f32;

#[derive(Parser)]
#[command(name = "lavae", version, about = "Latent augmentation VAE: training, transfer, evaluation and figures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: train encoder and decoder on the augmented dataset.
    Train(Common),
    /// Stage 2: fit both latent transforms on a stage-1 checkpoint.
    FitTransforms(Common),
    /// Stage 3: train a decoder head for the target pair.
    Transfer(Common),
    /// Train a CVAE baseline (`--model-kind cvae_trad|cvae_auginv`).
    CvaeTrain(Common),
    /// Reconstruction error table on the test set.
    EvalTable(Common),
    /// Transfer error grid over the configured pairs.
    Heatmap(Common),
    /// Image-space augmentation grid.
    Augment(Common),
    /// Decode bounding-box samples from the latent space.
    Sample(Common),
    /// Decode a linear path between two test images.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        from: usize,
        #[arg(long, default_value_t = 1)]
        to: usize,
    },
    /// Repeated latent augmentation with re-encoding.
    Recurse {
        #[command(flatten)]
        common: Common,
        /// Which transform to apply: 1 or 2.
        #[arg(long, default_value_t = 1)]
        transform: usize,
    },
    /// PCA and ICA projections of test latents.
    Project(Common),
    /// Truth and latent-prediction grid for every category.
    ExportGrid(Common),
}

#[derive(Args, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets every stage's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Use only the first N training images.
    #[arg(long)]
    subset: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    pair: Option<String>,
    #[arg(long)]
    target_pair: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input checkpoint; defaults to the one the previous step writes.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    model_kind: Option<String>,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(e.to_string())
}

impl Common {
    fn resolve(&self) -> lavae::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = self.epochs {
            c.schedule = lavae::Schedule::uniform(e, c.schedule.batch_size);
        }
        if let Some(n) = self.subset {
            c.subset = Some(n);
        }
        if let Some(n) = self.test_subset {
            c.test_subset = Some(n);
        }
        if let Some(p) = &self.pair {
            c.pair = p.parse::<AugmentationPair>().map_err(config_error)?;
        }
        if let Some(p) = &self.target_pair {
            c.target_pair = p.parse::<AugmentationPair>().map_err(config_error)?;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(k) = &self.model_kind {
            c.model = k.parse()?;
        }
        c.validate()?;
        Ok(c)
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Interpolate { common, .. } | Command::Recurse { common, .. } => common,
            Command::Train(c)
            | Command::FitTransforms(c)
            | Command::Transfer(c)
            | Command::CvaeTrain(c)
            | Command::EvalTable(c)
            | Command::Heatmap(c)
            | Command::Augment(c)
            | Command::Sample(c)
            | Command::Project(c)
            | Command::ExportGrid(c) => c,
        }
    }
}

fn run(command: Command) -> lavae::Result<String> {
    let common = command.common();
    let p = Pipeline::new(common.resolve()?)?;
    let model = common.model.clone();
    let shown = |path: PathBuf| format!("wrote {}", path.display());
    Ok(match command {
        Command::Train(_) => {
            p.train::<Real>()?;
            shown(p.out(lavae::pipeline::STAGE1_CKPT))
        }
        Command::FitTransforms(_) => {
            p.fit_transforms(p.load_stage1::<Real>(model)?)?;
            shown(p.out(lavae::pipeline::LAVAE_CKPT))
        }
        Command::Transfer(_) => {
            let (_, head) = p.transfer(p.load_lavae::<Real>(model)?)?;
            format!("trained head `{head}`; {}", shown(p.out(lavae::pipeline::TRANSFER_CKPT)))
        }
        Command::CvaeTrain(_) => {
            let mode = match p.config.model {
                ModelSelect::CvaeTrad => CvaeMode::Traditional,
                ModelSelect::CvaeAuginv => CvaeMode::AugInvariant,
                ModelSelect::Lavae => {
                    return Err(config_error("cvae-train needs model cvae_trad or cvae_auginv"));
                }
            };
            p.cvae_train::<Real>(mode)?;
            shown(p.out(&lavae::pipeline::cvae_ckpt(mode)))
        }
        Command::EvalTable(_) => {
            let lavae = p.load_lavae::<Real>(model)?;
            let cvaes = p.load_cvaes::<Real>()?;
            p.eval_table(&lavae, &cvaes)?.to_tsv()
        }
        Command::Heatmap(_) => {
            let m = p.heatmap::<Real>()?;
            format!("{}{}", m.to_csv(), m.report())
        }
        Command::Augment(_) => shown(p.augment_grid()?),
        Command::Sample(_) => shown(p.sample(&p.load_lavae::<Real>(model)?)?),
        Command::Interpolate { from, to, .. } => shown(p.interpolate(&p.load_lavae::<Real>(model)?, from, to)?),
        Command::Recurse { transform, .. } => {
            if !(1..=2).contains(&transform) {
                return Err(config_error("--transform must be 1 or 2"));
            }
            shown(p.recurse(&p.load_lavae::<Real>(model)?, transform - 1)?)
        }
        Command::Project(_) => {
            let (a, b) = p.project(&p.load_lavae::<Real>(model)?)?;
            format!("{}\n{}", shown(a), shown(b))
        }
        Command::ExportGrid(_) => shown(p.reconstruction_grid(&p.load_lavae::<Real>(model)?)?),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("lavae: {e}");
            ExitCode::from(1)
        }
    }
}
