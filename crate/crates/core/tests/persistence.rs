use std::path::Path;

use latentflow::data::pgm::encode_grid;
use latentflow::metrics::{write_metric_csv, MetricReport, MetricValue, RunInfo};
use latentflow::model::ModelConfig;
use latentflow::objective::ObjectiveConfig;
use latentflow::prior::PriorKind;
use latentflow::rng::Rng;
use latentflow::train::{write_epoch_log, EpochRecord, TrainConfig, Trainer};
use latentflow::Tensor;

fn model(prior: PriorKind) -> ModelConfig {
    ModelConfig {
        data_dim: 8,
        latent_dim: 2,
        hidden: vec![16],
        prior,
        flow_depth: 2,
        flow_width: 8,
        gen_width: 8,
        gen_layers: 2,
        disc_width: 8,
        disc_layers: 2,
    }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 7,
        objective: ObjectiveConfig {
            beta: 0.5,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn data() -> Tensor {
    Rng::seed_from_u64(1)
        .normal_tensor(vec![64, 8])
        .map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Loss columns only; wall time is excluded from the trace.
fn trace(records: &[EpochRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        for v in [r.upper, r.recon, r.reg, r.lower, r.disc] {
            out.extend(v.map_or(u64::MAX, f64::to_bits).to_le_bytes());
        }
        out.extend(r.step.to_le_bytes());
    }
    out
}

fn saved(t: &Trainer, dir: &Path, name: &str) -> Vec<u8> {
    let p = dir.join(name);
    t.save(&p).unwrap();
    std::fs::read(p).unwrap()
}

#[test]
fn same_seed_same_loss_trace() {
    for prior in [
        PriorKind::StandardNormal,
        PriorKind::Flow,
        PriorKind::Adversarial,
    ] {
        let run = || {
            let mut t = Trainer::new(model(prior), train_config(3)).unwrap();
            trace(&t.fit(&data(), None, |_| {}).unwrap())
        };
        assert_eq!(run(), run(), "{prior:?}");
    }
}

#[test]
fn different_seed_different_trace() {
    let mut a = Trainer::new(model(PriorKind::Flow), train_config(1)).unwrap();
    let mut cfg = train_config(1);
    cfg.seed = 8;
    let mut b = Trainer::new(model(PriorKind::Flow), cfg).unwrap();
    let (ta, tb) = (
        a.fit(&data(), None, |_| {}).unwrap(),
        b.fit(&data(), None, |_| {}).unwrap(),
    );
    assert_ne!(trace(&ta), trace(&tb));
}

#[test]
fn checkpoint_continuation_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for prior in [PriorKind::Flow, PriorKind::Adversarial] {
        let x = data();
        let mut whole = Trainer::new(model(prior), train_config(4)).unwrap();
        let mut full_trace = whole.fit(&x, None, |_| {}).unwrap();
        full_trace.extend(whole.post_train_prior(&x, 2, None, |_| {}).unwrap());

        let mut first = Trainer::new(model(prior), train_config(4)).unwrap();
        first.config.epochs = 2;
        let mut split_trace = first.fit(&x, None, |_| {}).unwrap();
        let ck = dir.path().join("mid.lfck");
        first.save(&ck).unwrap();
        drop(first);
        let mut resumed = Trainer::load(&ck).unwrap();
        resumed.config.epochs = 4;
        split_trace.extend(resumed.fit(&x, None, |_| {}).unwrap());
        split_trace.extend(resumed.post_train_prior(&x, 1, None, |_| {}).unwrap());
        resumed.save(&ck).unwrap();
        let mut resumed = Trainer::load(&ck).unwrap();
        split_trace.extend(resumed.post_train_prior(&x, 1, None, |_| {}).unwrap());

        assert_eq!(trace(&full_trace), trace(&split_trace), "{prior:?}");
        assert_eq!(
            saved(&whole, dir.path(), "a.lfck"),
            saved(&resumed, dir.path(), "b.lfck"),
            "{prior:?}"
        );
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(model(PriorKind::Flow), train_config(1)).unwrap();
    t.fit(&data(), None, |_| {}).unwrap();
    let first = saved(&t, dir.path(), "one.lfck");
    let back = Trainer::load(&dir.path().join("one.lfck")).unwrap();
    assert_eq!(first, saved(&back, dir.path(), "two.lfck"));
}

#[test]
fn checkpoints_written_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = train_config(4);
    cfg.checkpoint_every = 2;
    let mut t = Trainer::new(model(PriorKind::StandardNormal), cfg).unwrap();
    t.fit(&data(), Some(dir.path()), |_| {}).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["epoch-0002.lfck", "epoch-0004.lfck"]);
    let resumed = Trainer::load(&dir.path().join("epoch-0004.lfck")).unwrap();
    assert_eq!(resumed.epoch, 4);
}

#[test]
fn pgm_bytes_are_pinned() {
    let img = Tensor::matrix(2, 4, vec![0.0, 0.25, 0.5, 1.0, 1.0, 0.5, 0.25, 0.0]).unwrap();
    let bytes = encode_grid(&img, 2, 2, 1, 2).unwrap();
    let header = b"P5\n4 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 64, 255, 128, 128, 255, 64, 0]);
    assert_eq!(encode_grid(&img, 2, 2, 1, 2).unwrap(), bytes);
}

#[test]
fn csv_outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let report = MetricReport {
        info: RunInfo {
            run_id: "beta0_seed1".into(),
            beta: 0.0,
            latent_dim: 16,
            prior: "flow".into(),
            seed: 1,
        },
        values: vec![
            MetricValue::Value(0.1),
            MetricValue::Value(1.5),
            MetricValue::NotApplicable,
            MetricValue::Value(2.0),
            MetricValue::Value(3.25),
            MetricValue::Value(0.5),
            MetricValue::Failed("x".into()),
        ],
    };
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_metric_csv(&a, std::slice::from_ref(&report)).unwrap();
    write_metric_csv(&b, &[report]).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(
        text,
        "run_id,beta,latent_dim,prior,seed,frechet,separability_bits,ppl_z0,ppl_zT,diversity,recon_mse,latent_frechet\n\
         beta0_seed1,0,16,flow,1,0.1,1.5,na,2,3.25,0.5,failed\n"
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let mut t = Trainer::new(model(PriorKind::Flow), train_config(2)).unwrap();
    let mut recs = t.fit(&data(), None, |_| {}).unwrap();
    for r in &mut recs {
        r.wall_ms = 0;
    }
    write_epoch_log(&a, &recs).unwrap();
    write_epoch_log(&b, &recs).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log = std::fs::read_to_string(&a).unwrap();
    assert!(log.starts_with("epoch,step,F,recon,reg,f_lower,g_disc,lr,wall_ms\n1,4,"));
}
