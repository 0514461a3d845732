use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coatnext::checks::{gradient_suite, TOLERANCE};
use coatnext::report::{
    render_confusion, run_ablation, run_cv, run_eval, run_gridsearch, run_synth, run_train, AblationPlan, ParamReport,
    RunConfig,
};
use coatnext::train::{EvalReport, GridSpace};
use coatnext::{Error, Result};

#[derive(Parser)]
#[command(name = "coatnext", version, about = "Train, evaluate and ablate CoAtNeXt image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Model preset (`full` or `tiny`), applied before overrides.
    #[arg(long)]
    preset: Option<String>,
    /// Dotted override such as `train.epochs=3`; repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set output_dir=<dir>`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg = cfg.with_preset(p)?;
        }
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on all folds but one and score the held-out fold.
    Train(ConfigArgs),
    /// Score a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score every image instead of the configured validation fold.
        #[arg(long)]
        all: bool,
    },
    /// k-fold cross-validation.
    Cv(ConfigArgs),
    /// Cross-validate several block/attention variants on the same folds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `full` or a comma-separated list of variants.
        #[arg(long, default_value = "full")]
        plan: String,
    },
    /// Exhaustive search over training hyperparameters.
    Gridsearch {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// JSON object mapping axis names to value lists, or a file holding one.
        #[arg(long)]
        space: String,
        /// Run at most this many grid points.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Finite-difference check of every layer's gradients.
    Gradcheck,
    /// Parameter count and f32 size next to the published reference.
    Params(ConfigArgs),
    /// Write the configured synthetic dataset as PNG files.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset root; one directory per class is created inside.
        #[arg(long)]
        root: PathBuf,
    },
}

fn print_eval(report: &EvalReport) -> Result<()> {
    for (k, v) in report.summary() {
        println!("{k:<10} {v:.4}");
    }
    let (text, _) = render_confusion(&report.confusion, &report.class_names)?;
    print!("\n{text}");
    Ok(())
}

fn parse_space(arg: &str) -> Result<GridSpace> {
    let text = if Path::new(arg).is_file() {
        std::fs::read_to_string(arg).map_err(|e| Error::Io {
            path: arg.into(),
            source: e,
        })?
    } else {
        arg.to_string()
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("grid space: {e}")))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let art = run_train(&cfg)?;
            print_eval(&art.eval)?;
            println!("\nwrote {}", cfg.output_dir.display());
        }
        Command::Eval { cfg, checkpoint, all } => {
            let cfg = cfg.resolve()?;
            print_eval(&run_eval(&cfg, &checkpoint, all)?)?;
        }
        Command::Cv(args) => {
            let cfg = args.resolve()?;
            let s = run_cv(&cfg)?;
            println!("{}-fold cross-validation, fold hash {}", s.k, s.fold_hash);
            for (k, mean) in &s.mean {
                println!("{k:<10} {mean:.4} ± {:.4}", s.std[k]);
            }
            println!("\nwrote {}", cfg.output_dir.display());
        }
        Command::Ablate { cfg, plan } => {
            let cfg = cfg.resolve()?;
            let table = run_ablation(&AblationPlan::parse(&plan)?, &cfg)?;
            print!("{}", table.render());
            println!("\nwrote {}", cfg.output_dir.join("ablation.csv").display());
        }
        Command::Gridsearch { cfg, space, budget } => {
            let cfg = cfg.resolve()?;
            let report = run_gridsearch(&cfg, &parse_space(&space)?, budget)?;
            for (i, row) in report.result.rows.iter().enumerate() {
                let marker = if i == report.result.best { '*' } else { ' ' };
                let point: Vec<String> = row.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{marker} {}  acc {:.4}  loss {:.4}", point.join(" "), row.val_accuracy, row.val_loss);
            }
            if report.result.skipped > 0 {
                println!("{} points skipped by the budget", report.result.skipped);
            }
        }
        Command::Gradcheck => {
            let mut ok = true;
            for e in gradient_suite() {
                let r = &e.report;
                ok &= r.pass;
                let status = if r.pass { "PASS" } else { "FAIL" };
                match &r.failure {
                    Some(f) => println!("{status} {:<40} {f}", e.name),
                    None => println!("{status} {:<40} max rel err {:.3e}", e.name, r.max_rel_err),
                }
            }
            println!("tolerance {TOLERANCE:e}");
            return Ok(ok);
        }
        Command::Params(args) => {
            let cfg = args.resolve()?;
            print!("{}", ParamReport::for_config(&cfg.model)?.render());
        }
        Command::Synth { cfg, root } => {
            let cfg = cfg.resolve()?;
            let m = run_synth(&cfg, &root)?;
            println!("wrote {} images of {} classes to {}", m.len(), m.num_classes(), root.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
