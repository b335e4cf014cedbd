//! Command-line front end. `dispatch` returns the process exit code:
//! 0 on success, 1 for usage or validation errors, 2 for runtime failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::{gradient_suite, SUITE_TOLERANCE};
use crate::data::{load_dataset, write_image_grid, Dataset, RunConfig};
use crate::error::{Error, Result};
use crate::latent::{
    interpolate_sequence, pca_fit, pca_traverse, rate_of_change_profile, semantic_direction,
    InterpolationSpec, Scheme, Space,
};
use crate::metrics::{
    aggregate, evaluate, read_metric_csv, write_aggregate_csv, write_metric_csv, MetricReport,
    ProbeConfig, ProbeNet, RunInfo, METRIC_NAMES,
};
use crate::model::ModelBundle;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{load_bundle, run_parallel, write_epoch_log, Trainer};

#[derive(Parser, Debug)]
#[command(
    name = "latentflow",
    version,
    about = "Generative autoencoders with learned latent priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, epoch log and manifest.
    Train(RunArgs),
    /// Continue training only the prior of a checkpoint.
    PriorPost {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epochs of prior-only training (defaults to prior_post_epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train and evaluate every combination of `sweep.*` values over seeds.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Paired seeds 1..=k per combination.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Decode prior samples into an image grid.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Interpolate between two held-out images.
    Interpolate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        a: usize,
        #[arg(long, default_value_t = 1)]
        b: usize,
        /// z0 or zT.
        #[arg(long, default_value = "zT")]
        space: String,
        /// lerp or slerp; defaults to lerp in zT and slerp in z0.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Mean-difference direction for a class and its rate-of-change profile.
    Direction {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value = "zT")]
        space: String,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// Number of base latents.
        #[arg(long, default_value_t = 100)]
        bases: usize,
    },
    /// Traverse principal components of the aggregate posterior.
    PcaTraverse {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Component to traverse; all fitted components when omitted.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "-1.5,1.5", allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        /// Held-out image to start from.
        #[arg(long, default_value_t = 0)]
        image: usize,
    },
    /// Evaluate a checkpoint.
    Metrics {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Train the probe feature network.
    ProbeTrain(RunArgs),
    /// Finite-difference check of every primitive and objective.
    GradCheck,
    /// Aggregate metric CSVs from run directories.
    Report {
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

/// Resolves the config and splits off `sweep.*` overrides.
fn resolve(args: &RunArgs) -> Result<(RunConfig, Vec<(String, Vec<String>)>)> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(p), _) => RunConfig::parse_file(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    let mut sweeps = Vec::new();
    for o in &args.overrides {
        match o.strip_prefix("sweep.") {
            Some(rest) => {
                let (k, v) = rest.split_once('=').ok_or_else(|| {
                    Error::config(None, format!("override {o:?} is not key=value"))
                })?;
                let vals: Vec<String> = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if vals.is_empty() {
                    return Err(Error::config(None, format!("sweep.{k} has no values")));
                }
                sweeps.push((k.trim().to_string(), vals));
            }
            None => cfg.apply_override(o)?,
        }
    }
    cfg.validate()?;
    Ok((cfg, sweeps))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_manifest(dir: &Path, cfg: &RunConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in extra {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&cfg.manifest());
    let p = dir.join("manifest.txt");
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn grid_dims(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (n.div_ceil(cols), cols)
}

fn write_grid(images: &Tensor, ds: &Dataset, rows: usize, cols: usize, path: &Path) -> Result<()> {
    let (h, w) = ds.grid_shape();
    write_image_grid(images, h, w, rows, cols, path)
}

fn parse_space(s: &str) -> Result<Space> {
    Space::parse(s).ok_or_else(|| Error::invalid(format!("unknown space {s:?}; expected z0 or zT")))
}

/// Trains one configuration into `dir`.
pub fn train_run(cfg: &RunConfig, train: &Dataset, dir: &Path) -> Result<Trainer> {
    create_dir(dir)?;
    write_manifest(dir, cfg, &[])?;
    let mut model = cfg.model.clone();
    model.data_dim = train.dim();
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let ckpt_dir = (cfg.train.checkpoint_every > 0).then_some(dir);
    let mut records = trainer.fit(&train.images, ckpt_dir, |_| {})?;
    if cfg.train.prior_post_epochs > 0 && cfg.model.prior != crate::prior::PriorKind::StandardNormal
    {
        records.extend(trainer.post_train_prior(
            &train.images,
            cfg.train.prior_post_epochs,
            ckpt_dir,
            |_| {},
        )?);
    }
    write_epoch_log(&dir.join("epochs.csv"), &records)?;
    trainer.save(&dir.join("model.lfck"))?;
    Ok(trainer)
}

fn probe_for(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    path: Option<&Path>,
) -> Result<ProbeNet> {
    match path {
        Some(p) => ProbeNet::load(p),
        None => ProbeNet::train(
            train,
            Some(test),
            &ProbeConfig {
                epochs: cfg.eval.probe_epochs,
                seed: cfg.eval.probe_seed,
                ..Default::default()
            },
        ),
    }
}

fn run_info(cfg: &RunConfig, run_id: &str) -> RunInfo {
    RunInfo {
        run_id: run_id.to_string(),
        beta: cfg.train.objective.beta,
        latent_dim: cfg.model.latent_dim,
        prior: cfg.model.prior.name().to_string(),
        seed: cfg.train.seed,
    }
}

fn report_failures(r: &MetricReport) {
    for (name, why) in r.failures() {
        eprintln!("warning: {} metric {name} failed: {why}", r.info.run_id);
    }
}

fn checkpoint_bundle(path: &Path, data_dim: usize) -> Result<ModelBundle> {
    let b = load_bundle(path)?;
    if b.data_dim() != data_dim {
        return Err(Error::invalid(format!(
            "checkpoint expects {}-dimensional data, dataset has {data_dim}",
            b.data_dim()
        )));
    }
    Ok(b)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => {
            let (cfg, _) = resolve(&args)?;
            let (train, _) = load_dataset(&cfg.data)?;
            let t = train_run(&cfg, &train, &args.out)?;
            let mut rng = Rng::seed_from_u64(cfg.eval.eval_seed);
            let samples = t.bundle.sample(&mut rng, 64)?;
            write_grid(&samples, &train, 8, 8, &args.out.join("samples.pgm"))?;
            println!("trained {} epochs into {}", t.epoch, args.out.display());
        }
        Command::PriorPost {
            run,
            checkpoint,
            epochs,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (train, _) = load_dataset(&cfg.data)?;
            let mut t = Trainer::load(&checkpoint)?;
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let n = epochs.unwrap_or(cfg.train.prior_post_epochs);
            let records = t.post_train_prior(&train.images, n, None, |_| {})?;
            write_epoch_log(&run.out.join("epochs.csv"), &records)?;
            t.save(&run.out.join("model.lfck"))?;
            println!(
                "post-trained prior for {n} epochs into {}",
                run.out.display()
            );
        }
        Command::Sweep { run, seeds, jobs } => sweep(&run, seeds, jobs)?,
        Command::Sample {
            run,
            checkpoint,
            n,
            seed,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (train, _) = load_dataset(&cfg.data)?;
            let b = checkpoint_bundle(&checkpoint, train.dim())?;
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let imgs = b.sample(&mut Rng::seed_from_u64(seed), n)?;
            let (r, c) = grid_dims(n);
            write_grid(&imgs, &train, r, c, &run.out.join("samples.pgm"))?;
        }
        Command::Interpolate {
            run,
            checkpoint,
            a,
            b,
            space,
            scheme,
            steps,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (_, test) = load_dataset(&cfg.data)?;
            let bundle = checkpoint_bundle(&checkpoint, test.dim())?;
            let space = parse_space(&space)?;
            let mut spec = InterpolationSpec::standard(space, steps);
            if let Some(s) = scheme {
                spec.scheme = Scheme::parse(&s)
                    .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))?;
            }
            if a >= test.len() || b >= test.len() {
                return Err(Error::invalid(format!(
                    "image index out of range (test set has {})",
                    test.len()
                )));
            }
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let seq = interpolate_sequence(&bundle, test.images.row(a), test.images.row(b), &spec)?;
            write_grid(&seq, &test, 1, steps, &run.out.join("interpolation.pgm"))?;
        }
        Command::Direction {
            run,
            checkpoint,
            probe,
            class,
            space,
            steps,
            bases,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (train, test) = load_dataset(&cfg.data)?;
            let bundle = checkpoint_bundle(&checkpoint, train.dim())?;
            let probe = probe_for(&cfg, &train, &test, probe.as_deref())?;
            let space = parse_space(&space)?;
            let z = bundle.encode_mean(&train.images)?;
            let flags: Vec<bool> = train.labels()?.iter().map(|&y| y == class).collect();
            let dir = semantic_direction(&z, &flags, &format!("class {class}"))?;
            let base_rows: Vec<usize> = (0..test.len())
                .filter(|&i| test.labels().map_or(true, |l| l[i] != class))
                .take(bases)
                .collect();
            if base_rows.is_empty() {
                return Err(Error::invalid("no base images outside the chosen class"));
            }
            let base = bundle.encode_mean(&test.images.select_rows(&base_rows))?;
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let profile =
                rate_of_change_profile(&bundle, &probe, &dir.vector, &base, steps, space)?;
            profile.write_csv(&run.out.join("profile.csv"))?;
            let shown = base.rows().min(8);
            let mut seqs = Vec::new();
            for r in 0..shown {
                let end: Vec<f64> = base
                    .row(r)
                    .iter()
                    .zip(&dir.vector)
                    .map(|(a, b)| a + b)
                    .collect();
                let path = crate::latent::interpolate_latents(
                    &bundle,
                    base.row(r),
                    &end,
                    &InterpolationSpec::standard(space, steps),
                )?;
                seqs.push(bundle.decode(&path)?);
            }
            let refs: Vec<&Tensor> = seqs.iter().collect();
            write_grid(
                &Tensor::stack_rows(&refs)?,
                &test,
                shown,
                steps,
                &run.out.join("traversal.pgm"),
            )?;
        }
        Command::PcaTraverse {
            run,
            checkpoint,
            index,
            k,
            range,
            steps,
            image,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (train, test) = load_dataset(&cfg.data)?;
            let bundle = checkpoint_bundle(&checkpoint, train.dim())?;
            let (lo, hi) = range
                .split_once(',')
                .and_then(|(a, b)| {
                    Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?))
                })
                .ok_or_else(|| Error::invalid(format!("range {range:?} is not lo,hi")))?;
            if image >= test.len() {
                return Err(Error::invalid(format!("image index {image} out of range")));
            }
            let pca = pca_fit(
                &bundle.encode_mean(&train.images)?,
                k.unwrap_or(bundle.latent_dim()),
            )?;
            let comps: Vec<usize> = match index {
                Some(i) => vec![i],
                None => (0..pca.k()).collect(),
            };
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let mut rows = Vec::new();
            for &c in &comps {
                rows.push(pca_traverse(
                    &bundle,
                    test.images.row(image),
                    &pca,
                    c,
                    (lo, hi),
                    steps,
                )?);
            }
            let refs: Vec<&Tensor> = rows.iter().collect();
            write_grid(
                &Tensor::stack_rows(&refs)?,
                &test,
                comps.len(),
                steps,
                &run.out.join("pca.pgm"),
            )?;
        }
        Command::Metrics {
            run,
            checkpoint,
            probe,
        } => {
            let (cfg, _) = resolve(&run)?;
            let (train, test) = load_dataset(&cfg.data)?;
            let bundle = checkpoint_bundle(&checkpoint, train.dim())?;
            let probe = probe_for(&cfg, &train, &test, probe.as_deref())?;
            create_dir(&run.out)?;
            write_manifest(
                &run.out,
                &cfg,
                &[("checkpoint", checkpoint.display().to_string())],
            )?;
            let mut info = run_info(&cfg, &checkpoint.display().to_string());
            info.latent_dim = bundle.latent_dim();
            info.prior = bundle.prior.kind().name().to_string();
            let r = evaluate(&bundle, &test, &probe, &cfg.eval, info);
            report_failures(&r);
            write_metric_csv(&run.out.join("metrics.csv"), std::slice::from_ref(&r))?;
        }
        Command::ProbeTrain(args) => {
            let (cfg, _) = resolve(&args)?;
            let (train, test) = load_dataset(&cfg.data)?;
            let probe = probe_for(&cfg, &train, &test, None)?;
            create_dir(&args.out)?;
            write_manifest(&args.out, &cfg, &[])?;
            probe.save(&args.out.join("probe.lfck"))?;
            println!(
                "probe held-out accuracy {:.4}",
                probe.accuracy.unwrap_or(f64::NAN)
            );
        }
        Command::GradCheck => {
            let results = gradient_suite()?;
            let mut failed = 0;
            for r in &results {
                let ok = r.passed(SUITE_TOLERANCE);
                failed += usize::from(!ok);
                println!(
                    "{} {:<28} max rel err {:.3e}  norm rel err {:.3e}",
                    if ok { "ok  " } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.max_norm_rel_err
                );
            }
            if failed > 0 {
                return Err(Error::Graph(format!(
                    "{failed} of {} gradient checks failed",
                    results.len()
                )));
            }
        }
        Command::Report { dirs, out } => report(&dirs, &out)?,
    }
    Ok(())
}

struct SweepJob {
    run_id: String,
    cfg: RunConfig,
}

fn expand_sweep(
    base: &RunConfig,
    sweeps: &[(String, Vec<String>)],
    seeds: u64,
) -> Result<Vec<SweepJob>> {
    let mut combos: Vec<(RunConfig, String)> = vec![(base.clone(), String::new())];
    for (key, vals) in sweeps {
        let mut next = Vec::new();
        for (cfg, id) in &combos {
            for v in vals {
                let mut c = cfg.clone();
                c.set(key, v, None)?;
                let sep = if id.is_empty() { "" } else { "_" };
                next.push((c, format!("{id}{sep}{key}{v}")));
            }
        }
        combos = next;
    }
    let mut jobs = Vec::new();
    for (cfg, id) in combos {
        for s in 1..=seeds {
            let mut c = cfg.clone();
            c.train.seed = s;
            c.validate()?;
            let sep = if id.is_empty() { "" } else { "_" };
            jobs.push(SweepJob {
                run_id: format!("{id}{sep}seed{s}"),
                cfg: c,
            });
        }
    }
    Ok(jobs)
}

fn sweep(args: &RunArgs, seeds: u64, jobs: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::invalid("--seeds must be ≥ 1"));
    }
    let (base, sweeps) = resolve(args)?;
    let work = expand_sweep(&base, &sweeps, seeds)?;
    let (train, test) = load_dataset(&base.data)?;
    create_dir(&args.out)?;
    write_manifest(
        &args.out,
        &base,
        &[
            ("sweep", args.overrides.join(" ")),
            ("seeds", seeds.to_string()),
        ],
    )?;
    let probe = probe_for(&base, &train, &test, None)?;
    probe.save(&args.out.join("probe.lfck"))?;
    let results = run_parallel(&work, jobs, |job| -> Result<MetricReport> {
        let dir = args.out.join(&job.run_id);
        let trainer = train_run(&job.cfg, &train, &dir)?;
        let r = evaluate(
            &trainer.bundle,
            &test,
            &probe,
            &job.cfg.eval,
            run_info(&job.cfg, &job.run_id),
        );
        write_metric_csv(&dir.join("metrics.csv"), std::slice::from_ref(&r))?;
        Ok(r)
    });
    let mut rows = Vec::new();
    for (job, r) in work.iter().zip(results) {
        match r {
            Ok(r) => {
                report_failures(&r);
                rows.push(r);
            }
            Err(e) => return Err(Error::Graph(format!("run {} failed: {e}", job.run_id))),
        }
    }
    write_metric_csv(&args.out.join("metrics.csv"), &rows)?;
    println!("{} runs written to {}", rows.len(), args.out.display());
    Ok(())
}

fn report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    if dirs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    let mut rows = Vec::new();
    for d in dirs {
        let p = d.join("metrics.csv");
        if !p.exists() {
            return Err(Error::invalid(format!("{}: no metrics.csv", d.display())));
        }
        rows.extend(
            read_metric_csv(&p).map_err(|e| Error::invalid(format!("{}: {e}", d.display())))?,
        );
    }
    let agg = aggregate(&rows);
    write_aggregate_csv(out, &agg)?;
    print!("{:<16} {:>4} {:>8} {:>4}", "prior", "d", "beta", "runs");
    for m in METRIC_NAMES {
        print!(" {m:>24}");
    }
    println!();
    for a in &agg {
        print!(
            "{:<16} {:>4} {:>8} {:>4}",
            a.prior, a.latent_dim, a.beta, a.runs
        );
        for s in &a.metrics {
            let cell = match (s.mean, s.std) {
                (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4}"),
                _ => "na".to_string(),
            };
            print!(" {cell:>24}");
        }
        println!();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_verb_is_usage_error() {
        assert_eq!(dispatch(["latentflow", "frobnicate"]), 1);
        assert_eq!(dispatch(["latentflow", "train", "--bogus"]), 1);
    }

    #[test]
    fn sweep_expansion() {
        let base = RunConfig::default();
        let sweeps = vec![(
            "beta".to_string(),
            vec!["0".into(), "0.1".into(), "0.5".into(), "1".into()],
        )];
        let jobs = expand_sweep(&base, &sweeps, 5).unwrap();
        assert_eq!(jobs.len(), 20);
        assert_eq!(jobs[0].run_id, "beta0_seed1");
        assert_eq!(jobs[19].cfg.train.seed, 5);
        assert_eq!(jobs[19].cfg.train.objective.beta, 1.0);
    }

    #[test]
    fn empty_report_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("agg.csv");
        let code = dispatch([
            "latentflow".as_ref(),
            "report".as_ref(),
            dir.path().as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 1);
    }
}
