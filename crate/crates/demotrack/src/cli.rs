//! The `demotrack` command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 integrity
//! warning (inputs disagree, e.g. a trajectory recorded on another dataset).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use demotrack_core::evalkit::EvalReport;
use demotrack_core::expert::ExpertKind;
use demotrack_core::nn::check::{gradient_check, loss_check};
use demotrack_core::nn::ModelConfig;
use demotrack_core::tracker::TrackMode;
use demotrack_core::trainer::{build_pool, LogRecord};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{generate_dataset, Dataset};
use crate::demos::DemoSet;
use crate::error::{write_bytes, Error, Result};
use crate::pipeline::{
    emit_plots, load_report, ope_run, save_report, score, static_baseline, write_trajectories,
    TrackOptions,
};
use crate::train::{train_with, TrainOutcome};
use crate::trajectory::read_trajectory;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "demotrack",
    version,
    about = "Demonstration-guided actor-critic tracking on synthetic video"
)]
struct Cli {
    /// Only print errors and warnings.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// File of key=value lines (`model.*`, `world.*`, training keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override; wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(p) = &self.config {
            rc.apply_file(p)?;
        }
        rc.apply_overrides(&self.overrides)?;
        Ok(rc)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run an expert over a dataset and write demonstrations plus the positive index.
    Demos {
        #[arg(long)]
        dataset: PathBuf,
        /// e.g. `ncc`, `oracle_noise(eta=0.1)`.
        #[arg(long, default_value = "ncc")]
        expert: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a checkpoint on the positive demonstrations.
    Train(TrainArgs),
    /// Track every sequence of a dataset and write trajectory files.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-pass evaluation into a report file.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Track with this checkpoint.
        #[arg(long, conflicts_with_all = ["trajectories", "static_box"])]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        mode: ModeArgs,
        /// Score existing trajectory files (`<sequence id>.txt`).
        #[arg(long, conflicts_with = "static_box")]
        trajectories: Option<PathBuf>,
        /// Score the tracker that keeps the first box.
        #[arg(long = "static")]
        static_box: bool,
        /// Tracker name recorded in the report for scored trajectories.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success and precision plots from one or more reports.
    Plot {
        /// `LABEL=PATH` or `PATH` (label taken from the report's mode).
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the network and loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 12)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        steps: usize,
        /// Check this architecture instead of the tiny test configuration.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct ModeArgs {
    #[arg(long, default_value = "a3ct")]
    mode: String,
    /// Expert for `--mode a3ctd`.
    #[arg(long, default_value = "ncc")]
    expert: String,
    #[arg(long, default_value_t = 0)]
    expert_seed: u64,
    #[arg(long, default_value_t = 1.5)]
    context: f64,
}

impl ModeArgs {
    fn options(&self) -> Result<TrackOptions> {
        let mode = TrackMode::parse(&self.mode)?;
        Ok(TrackOptions {
            mode,
            expert: match mode {
                TrackMode::A3ct => None,
                TrackMode::A3ctd => Some(ExpertKind::parse(&self.expert)?),
            },
            expert_seed: self.expert_seed,
            context: self.context,
        })
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    demos: PathBuf,
    /// Checkpoint path; the log goes next to it as `<out>.log`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    imitation_only: bool,
    #[arg(long)]
    rl_only: bool,
    #[arg(long)]
    no_curriculum: bool,
    /// Single thread, round-robin workers: bit-identical reruns.
    #[arg(long)]
    deterministic: bool,
}

struct Ctx {
    quiet: bool,
    /// Set by commands that finished but saw inconsistent inputs.
    integrity_warning: bool,
}

impl Ctx {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn warn(&mut self, msg: impl AsRef<str>) {
        eprintln!("warning: {}", msg.as_ref());
        self.integrity_warning = true;
    }

    fn config(&self, title: &str, text: &str) {
        if !self.quiet {
            eprintln!("{title}:");
            for l in text.lines() {
                eprintln!("  {l}");
            }
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
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
    let mut ctx = Ctx {
        quiet: cli.quiet,
        integrity_warning: false,
    };
    match dispatch(cli.cmd, &mut ctx) {
        Ok(()) if ctx.integrity_warning => EXIT_INTEGRITY,
        Ok(()) => EXIT_OK,
        Err(e @ Error::Integrity(_)) => {
            eprintln!("error: {e}");
            EXIT_INTEGRITY
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Cmd, ctx: &mut Ctx) -> Result<()> {
    match cmd {
        Cmd::Gen {
            count,
            seed,
            out,
            cfg,
        } => {
            let rc = cfg.resolve()?;
            ctx.config("world configuration", &rc.world.to_text());
            let m = generate_dataset(count, seed, &rc.world, &out)?;
            ctx.info(format!(
                "wrote {} sequences to {} (dataset digest {})",
                m.entries.len(),
                out.display(),
                m.digest
            ));
            Ok(())
        }
        Cmd::Demos {
            dataset,
            expert,
            seed,
            out,
        } => {
            let kind = ExpertKind::parse(&expert)?;
            ctx.config("demonstrations", &format!("expert={kind}\nseed={seed}"));
            let ds = Dataset::load(&dataset)?;
            let set = DemoSet::collect(&ds, &kind, seed)?;
            set.save(&out)?;
            ctx.info(format!(
                "{} of {} demonstrations are positive",
                set.positive().len(),
                set.demos.len()
            ));
            Ok(())
        }
        Cmd::Train(a) => cmd_train(a, ctx),
        Cmd::Track {
            checkpoint,
            dataset,
            mode,
            out,
        } => {
            let opts = mode.options()?;
            let (model, digest) = load_checkpoint(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            ctx.config("tracking", &describe_opts(&opts, &digest));
            let t0 = Instant::now();
            let (_, recs) = ope_run(&model, &digest, &ds, &opts)?;
            let frames: usize = recs.iter().map(|r| r.boxes.len() - 1).sum();
            write_trajectories(&out, &recs, &opts, &digest, ds.digest())?;
            ctx.info(format!(
                "{} trajectories, {frames} frames in {:.2}s",
                recs.len(),
                t0.elapsed().as_secs_f64()
            ));
            Ok(())
        }
        Cmd::Eval {
            dataset,
            checkpoint,
            mode,
            trajectories,
            static_box,
            label,
            out,
        } => {
            let ds = Dataset::load(&dataset)?;
            let report = if let Some(ck) = checkpoint {
                let opts = mode.options()?;
                let (model, digest) = load_checkpoint(&ck)?;
                ctx.config("evaluation", &describe_opts(&opts, &digest));
                let (mut r, _) = ope_run(&model, &digest, &ds, &opts)?;
                if let Some(l) = label {
                    r.mode = l;
                }
                r
            } else if let Some(dir) = trajectories {
                score_dir(&dir, &ds, label.as_deref().unwrap_or("external"), ctx)?
            } else if static_box {
                static_baseline(&ds)?
            } else {
                return Err(Error::Invalid(
                    "eval needs --checkpoint, --trajectories or --static".into(),
                ));
            };
            save_report(&report, &out)?;
            let a = &report.aggregate;
            ctx.info(format!(
                "{}: AO {:.4}  SR50 {:.4}  SR75 {:.4}  SS {:.4}  PS {:.4}  ({} sequences)",
                report.mode,
                a.ao,
                a.sr50,
                a.sr75,
                a.ss,
                a.ps,
                report.sequences.len()
            ));
            Ok(())
        }
        Cmd::Plot { reports, out } => {
            let mut series: Vec<(String, EvalReport)> = Vec::new();
            for spec in &reports {
                let (label, path) = match spec.split_once('=') {
                    Some((l, p)) => (Some(l.to_string()), p),
                    None => (None, spec.as_str()),
                };
                let r = load_report(Path::new(path))?;
                series.push((label.unwrap_or_else(|| r.mode.clone()), r));
            }
            if series
                .iter()
                .any(|(_, r)| r.dataset_digest != series[0].1.dataset_digest)
            {
                ctx.warn("reports were computed on different datasets");
            }
            let paths = emit_plots(&series, &out)?;
            for p in paths {
                ctx.info(format!("wrote {}", p.display()));
            }
            Ok(())
        }
        Cmd::Gradcheck {
            seed,
            steps,
            overrides,
        } => {
            let mut cfg = ModelConfig::tiny();
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Invalid(format!("override `{o}` is not key=value")))?;
                cfg.set(k.trim().strip_prefix("model.").unwrap_or(k.trim()), v)?;
            }
            cfg.validate()?;
            let report = gradient_check(&cfg, steps, seed)?;
            for (name, err) in &report.blocks {
                ctx.info(format!("{name:<28} {err:.3e}"));
            }
            let loss = loss_check();
            ctx.info(format!("{:<28} {loss:.3e}", "losses"));
            let worst = report.worst().max(loss);
            println!("max relative error {worst:.3e}");
            if worst > 1e-4 {
                return Err(Error::Invalid("gradient check exceeded 1e-4".into()));
            }
            Ok(())
        }
    }
}

fn describe_opts(opts: &TrackOptions, digest: &str) -> String {
    format!(
        "mode={}\nexpert={}\nexpert_seed={}\ncontext={}\ncheckpoint_digest={digest}",
        opts.mode.name(),
        opts.expert_label(),
        opts.expert_seed,
        opts.context
    )
}

fn score_dir(dir: &Path, ds: &Dataset, label: &str, ctx: &mut Ctx) -> Result<EvalReport> {
    let mut boxes = Vec::with_capacity(ds.sequences.len());
    let mut checkpoint = String::new();
    for s in &ds.sequences {
        let t = read_trajectory(&dir.join(format!("{}.txt", s.id)))?;
        if !t.header.dataset_digest.is_empty() && t.header.dataset_digest != ds.digest() {
            ctx.warn(format!(
                "{}: recorded on dataset {}, not {}",
                s.id,
                t.header.dataset_digest,
                ds.digest()
            ));
        }
        if checkpoint.is_empty() {
            checkpoint = t.header.checkpoint_digest.clone();
        }
        boxes.push((s.id.clone(), t.boxes));
    }
    score(label, ds, &checkpoint, &boxes)
}

fn cmd_train(a: TrainArgs, ctx: &mut Ctx) -> Result<()> {
    let mut rc = a.cfg.resolve()?;
    let t = &mut rc.train;
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(e) = a.episodes {
        t.episodes = e;
    }
    if let Some(w) = a.workers {
        t.workers = w;
    }
    t.imitation_only |= a.imitation_only;
    t.rl_only |= a.rl_only;
    t.curriculum_disabled |= a.no_curriculum;
    t.deterministic |= a.deterministic;

    let ds = Dataset::load(&a.dataset)?;
    rc.world = ds.manifest.world.clone();
    rc.validate()?;
    let demos = DemoSet::load(&a.demos)?;
    if demos.dataset_digest != ds.digest() {
        return Err(Error::Integrity(format!(
            "demonstrations were computed on dataset {}, not {}",
            demos.dataset_digest,
            ds.digest()
        )));
    }
    let positive = demos.positive();
    if positive.is_empty() {
        return Err(Error::Invalid(format!(
            "{} holds no positive demonstrations",
            a.demos.display()
        )));
    }
    let pool = build_pool(ds.sequences.clone(), &positive)?;
    let resolved = rc.to_text();
    ctx.config("training configuration", &resolved);
    ctx.info(format!(
        "{} training sequences with positive demonstrations",
        pool.len()
    ));

    let out = a.out.clone();
    let sink = |m: &demotrack_core::tracker::TrainedModel| -> Result<()> {
        let p = PathBuf::from(format!("{}.ep{}", out.display(), m.meta.episodes));
        save_checkpoint(m, &p).map(|_| ())
    };
    let t0 = Instant::now();
    let outcome = train_with(&rc.model, &rc.train, &pool, &sink)?;
    let digest = save_checkpoint(&outcome.model, &a.out)?;
    let log_path = a
        .log
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", a.out.display())));
    write_bytes(
        &log_path,
        training_log(&resolved, ds.digest(), &outcome).as_bytes(),
    )?;
    let s = &outcome.stats;
    ctx.info(format!(
        "{} episodes in {:.1}s: {} imitation / {} RL updates, T^ {}, checkpoint {}",
        outcome.model.meta.episodes,
        t0.elapsed().as_secs_f64(),
        s.imitation_updates,
        s.rl_updates,
        outcome.curriculum.horizon,
        digest
    ));
    Ok(())
}

/// Resolved configuration as `#` lines, the CSV records, then run totals.
pub fn training_log(resolved: &str, dataset_digest: &str, o: &TrainOutcome) -> String {
    let mut s = String::new();
    for l in resolved.lines() {
        let _ = writeln!(s, "# {l}");
    }
    let _ = writeln!(s, "# dataset_digest={dataset_digest}");
    let _ = writeln!(s, "{}", LogRecord::HEADER);
    for r in &o.log {
        let _ = writeln!(s, "{}", r.to_line());
    }
    let c = &o.curriculum;
    let st = &o.stats;
    let _ = writeln!(
        s,
        "# updates={} imitation_updates={} rl_updates={} rejected={} version={}",
        st.updates, st.imitation_updates, st.rl_updates, st.rejected, st.version
    );
    let _ = writeln!(
        s,
        "# tests={} successes={} window_success_ratio={} advances={} final_horizon={}",
        c.total_tests,
        c.total_successes,
        c.success_ratio(),
        c.advances,
        c.horizon
    );
    s
}
