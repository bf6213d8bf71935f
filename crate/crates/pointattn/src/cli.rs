use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use pointattn_core::data::PartialMethod;
use pointattn_core::verify::Suite;
use pointattn_core::ChamferVariant;

use crate::checkpoint::Checkpoint;
use crate::config::{schema_help, RunConfig};
use crate::corpus::{build_corpus, CorpusSpec, MANIFEST};
use crate::driver::{self, TrainOptions};
use crate::error::{usage, Result, EXIT_OK, EXIT_USAGE};

/// Point cloud completion with attention: data synthesis, training,
/// evaluation, completion and self-verification.
#[derive(Debug, Parser)]
#[command(name = "pointattn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset of partial/complete primitive-shape pairs.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_category: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per partial cloud.
        #[arg(long, default_value_t = 512)]
        n: usize,
        /// Points per complete cloud.
        #[arg(long, default_value_t = 2048)]
        m: usize,
        /// half-space, viewpoint or mixed.
        #[arg(long, default_value = "mixed")]
        method: String,
        /// Comma-separated subset of sphere,box,cylinder,cone,torus,plate.
        #[arg(long)]
        categories: Option<String>,
    },
    /// Train a network; writes checkpoints and metrics.tsv into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override one configuration key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Per-category Chamfer distance of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "l2")]
        variant: String,
        /// Configuration the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Complete one partial cloud (.xyz or .pcb, chosen by extension).
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the two coarse stages as <stem>.p0/<stem>.p1 next to --out.
        #[arg(long)]
        emit_stages: bool,
    },
    /// Run the built-in gradient, FPS, Chamfer and shape checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn command() -> clap::Command {
    let help = schema_help();
    let mut cmd = Cli::command().after_long_help(help.clone());
    for name in ["gen", "train", "eval", "complete", "verify"] {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |c| c.after_help(h));
    }
    cmd
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    driver::init_threads()?;
    match cmd {
        Command::Gen {
            out,
            per_category,
            seed,
            n,
            m,
            method,
            categories,
        } => {
            let method = PartialMethod::parse(&method)
                .ok_or_else(|| usage!("--method: expected half-space, viewpoint or mixed, got {method:?}"))?;
            let mut spec = CorpusSpec {
                per_category,
                seed,
                n_partial: n,
                m_complete: m,
                method,
                ..CorpusSpec::default()
            };
            if let Some(c) = categories {
                spec.categories = c.split(',').map(|s| s.trim().to_string()).collect();
            }
            let corpus = build_corpus(&spec, &out)?;
            println!("{}", out.join(MANIFEST).display());
            println!("{} pairs", corpus.pairs.len());
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            set,
            quiet,
        } => {
            let cfg = RunConfig::resolve(config.as_deref(), &set)?;
            let opts = TrainOptions {
                data,
                out,
                resume,
                verbose: !quiet,
            };
            let summary = driver::train(&cfg, &opts)?;
            println!("checkpoint {}", summary.last_checkpoint.display());
        }
        Command::Eval {
            ckpt,
            data,
            variant,
            config,
            set,
        } => {
            let variant =
                ChamferVariant::parse(&variant).ok_or_else(|| usage!("--variant: expected l1 or l2, got {variant:?}"))?;
            let ck = Checkpoint::load(&ckpt)?;
            if config.is_some() || !set.is_empty() {
                ck.check_model(&RunConfig::resolve(config.as_deref(), &set)?)?;
            }
            print!("{}", driver::evaluate(&ck, &data, variant)?.table());
        }
        Command::Complete {
            ckpt,
            input,
            out,
            emit_stages,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            for path in driver::complete(&ck, &input, &out, emit_stages)? {
                println!("{}", path.display());
            }
        }
        Command::Verify {
            suite,
            seed,
            inject_fault,
        } => {
            let suite = Suite::parse(&suite)
                .ok_or_else(|| usage!("--suite: expected grads, fps, cd, shapes or all, got {suite:?}"))?;
            let checks = pointattn_core::verify::run(
                suite,
                pointattn_core::verify::Options { seed, inject_fault },
            )?;
            for c in &checks {
                println!("{}", driver::format_check(c));
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(crate::error::Error::Verify(failed.join(", ")));
            }
        }
    }
    Ok(())
}
