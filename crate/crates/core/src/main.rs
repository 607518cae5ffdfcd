use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scribsal::dataset::load_manifest;
use scribsal::metrics::MetricReport;
use scribsal::pipeline::{self, annotate::AnnotateServer, Checkpoint, TrainConfig, TrainOptions};
use scribsal::{Error, Result};

#[derive(Parser)]
#[command(name = "scribsal", version, about = "Scribble-supervised salient object detection")]
struct Cli {
    /// TOML configuration file; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single worker thread and fixed execution order.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the boundary-label classifier on tagged images.
    BlgTrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Write boundary pseudo-labels for every train record.
    BlgGenerate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        thresholds: BoundaryArgs,
    },
    /// Train the saliency network.
    Train(TrainArgs),
    /// Predict saliency maps for a folder of images.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write PR and F-measure curve tables from a report.
    ExportCurves {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a folder to the browser annotator.
    Annotate {
        #[arg(long)]
        serve: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long)]
    tf: Option<f64>,
    #[arg(long)]
    tb: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<id>.png` boundary labels from `blg-generate`.
    #[arg(long, conflicts_with = "on_the_fly")]
    boundary_dir: Option<PathBuf>,
    /// Generate boundary labels first, using `--blg-checkpoint`.
    #[arg(long, requires = "blg_checkpoint")]
    on_the_fly: bool,
    #[arg(long)]
    blg_checkpoint: Option<PathBuf>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    /// Initial weights (e.g. a pretrained encoder).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Allow `--init` to cover only part of the model.
    #[arg(long)]
    partial: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.blg.train.seed = s;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.deterministic {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::BlgTrain { manifest, out, steps, lr } => {
            let m = load_manifest(&manifest)?;
            if let Some(s) = steps {
                cfg.blg.train.steps = s;
            }
            if let Some(lr) = lr {
                cfg.blg.train.optimizer.lr = lr;
            }
            cfg.validate()?;
            let (ckpt, trained) = pipeline::blg_train(&m, &cfg)?;
            ckpt.save(&out)?;
            let last = trained.losses.last().copied().unwrap_or(f64::NAN);
            println!("blg-train: {} steps, final loss {last:.5}, wrote {}", trained.losses.len(), out.display());
        }
        Command::BlgGenerate { manifest, checkpoint, out, thresholds: t } => {
            let m = load_manifest(&manifest)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (stored, _, _) = pipeline::classifier_from_checkpoint(&ckpt)?;
            let mut b = stored.blg.boundary;
            b.t_f = t.tf.unwrap_or(b.t_f);
            b.t_b = t.tb.unwrap_or(b.t_b);
            b.window = t.window.unwrap_or(b.window);
            b.rho = t.rho.unwrap_or(b.rho);
            b.tau = t.tau.unwrap_or(b.tau);
            let written = pipeline::blg_generate(&m, &ckpt, Some(&b), &out)?;
            println!("blg-generate: wrote {} label maps to {}", written.len(), out.display());
        }
        Command::Train(a) => {
            let m = load_manifest(&a.manifest)?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if a.max_steps.is_some() {
                cfg.max_steps = a.max_steps;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.optimizer.lr = lr;
            }
            cfg.validate()?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let boundary_dir = if a.on_the_fly {
                let ckpt = Checkpoint::load(a.blg_checkpoint.as_deref().expect("clap enforces"))?;
                let dir = a.out.join("boundary");
                pipeline::blg_generate(&m, &ckpt, None, &dir)?;
                Some(dir)
            } else {
                a.boundary_dir.clone()
            };
            let opts = TrainOptions {
                checkpoint_dir: Some(a.out.clone()),
                log_path: Some(a.out.join("train_log.jsonl")),
                init: a.init.as_deref().map(Checkpoint::load).transpose()?.map(|c| c.store),
                partial_init: a.partial,
                resume: a.resume.as_deref().map(Checkpoint::load).transpose()?,
            };
            write_file(&a.out.join("config.toml"), &cfg.to_toml())?;
            println!("train: config hash {}", cfg.hash());
            let out = pipeline::train(&m, boundary_dir.as_deref(), &cfg, opts)?;
            if let Some(l) = out.state.loss_history.last() {
                println!(
                    "train: {} steps, last epoch L_total {:.5} (L_b {:.5}, L_gs {:.5}, L_pce {:.5})",
                    out.state.step, l.l_total, l.l_b, l.l_gs, l.l_pce
                );
            }
            println!("train: wrote {}", a.out.join("last.safetensors").display());
        }
        Command::Infer { checkpoint, images, out } => {
            let p = pipeline::Predictor::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let r = pipeline::infer(&p, &images, &out)?;
            println!("infer: wrote {} maps to {}", r.written.len(), out.display());
            if !r.failed.is_empty() {
                for (path, why) in &r.failed {
                    eprintln!("infer: failed on {}: {why}", path.display());
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate { pred, gt, report } => {
            let r = pipeline::evaluate(&pred, &gt, &report)?;
            let s = r.summary;
            println!(
                "evaluate: {} images  S {:.4}  E_avg {:.4}  E_max {:.4}  F_avg {:.4}  F_max {:.4}  MAE {:.4}",
                r.images.len(),
                s.s_measure,
                s.e_avg,
                s.e_max,
                s.f_avg,
                s.f_max,
                s.mae
            );
            if !r.unmatched.is_empty() || r.images.is_empty() {
                eprintln!("evaluate: unmatched ids: {}", r.unmatched.join(", "));
                return Ok(ExitCode::from(1));
            }
        }
        Command::ExportCurves { report, out } => {
            let r = MetricReport::load_json(&report)?;
            let (pr, f) = pipeline::export_curves(&r, &out)?;
            println!("export-curves: wrote {} and {}", pr.display(), f.display());
        }
        Command::Annotate { serve, port } => {
            let server = AnnotateServer::bind(&serve, port)?;
            println!("annotate: serving {} on http://127.0.0.1:{}", serve.display(), server.port());
            server.run();
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
