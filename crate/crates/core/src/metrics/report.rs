//! One row of evaluation results per run, its CSV form, and aggregation
//! across seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::data::{Dataset, EvalConfig};
use crate::error::{Error, Result};
use crate::latent::Space;
use crate::model::{LatentModel, ModelBundle};
use crate::rng::Rng;

use super::{
    desk_frechet, diversity, latent_divergence_diagnostic, linear_separability,
    perceptual_path_length, ProbeNet,
};

pub const METRIC_HEADER: [&str; 12] = [
    "run_id",
    "beta",
    "latent_dim",
    "prior",
    "seed",
    "frechet",
    "separability_bits",
    "ppl_z0",
    "ppl_zT",
    "diversity",
    "recon_mse",
    "latent_frechet",
];

/// Columns after the config echo.
pub const METRIC_NAMES: [&str; 7] = [
    "frechet",
    "separability_bits",
    "ppl_z0",
    "ppl_zT",
    "diversity",
    "recon_mse",
    "latent_frechet",
];

#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Value(f64),
    NotApplicable,
    Failed(String),
}

impl MetricValue {
    fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) if v.is_finite() => MetricValue::Value(v),
            Ok(v) => MetricValue::Failed(format!("non-finite value {v}")),
            Err(e) => MetricValue::Failed(e.to_string()),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            _ => None,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "na" => Ok(MetricValue::NotApplicable),
            "failed" => Ok(MetricValue::Failed(String::new())),
            _ => s
                .parse()
                .map(MetricValue::Value)
                .map_err(|_| Error::Format(format!("bad metric value {s:?}"))),
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::NotApplicable => f.write_str("na"),
            MetricValue::Failed(_) => f.write_str("failed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunInfo {
    pub run_id: String,
    pub beta: f64,
    pub latent_dim: usize,
    pub prior: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub info: RunInfo,
    /// Values in [`METRIC_NAMES`] order.
    pub values: Vec<MetricValue>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        METRIC_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.values[i])
    }

    /// `(metric, reason)` for every failed metric.
    pub fn failures(&self) -> Vec<(&'static str, &str)> {
        METRIC_NAMES
            .iter()
            .zip(&self.values)
            .filter_map(|(n, v)| match v {
                MetricValue::Failed(why) => Some((*n, why.as_str())),
                _ => None,
            })
            .collect()
    }

    fn record(&self) -> Vec<String> {
        let i = &self.info;
        let mut r = vec![
            i.run_id.clone(),
            i.beta.to_string(),
            i.latent_dim.to_string(),
            i.prior.clone(),
            i.seed.to_string(),
        ];
        r.extend(self.values.iter().map(ToString::to_string));
        r
    }
}

pub fn write_metric_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_HEADER)?;
    for r in reports {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != METRIC_HEADER {
        return Err(Error::Format(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| {
                Error::Format(format!(
                    "{}: bad {} {:?}",
                    path.display(),
                    METRIC_HEADER[i],
                    field(i)
                ))
            })
        };
        out.push(MetricReport {
            info: RunInfo {
                run_id: field(0).to_string(),
                beta: num(1)?,
                latent_dim: num(2)? as usize,
                prior: field(3).to_string(),
                seed: num(4)? as u64,
            },
            values: (5..12)
                .map(|i| MetricValue::parse(field(i)))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation of one metric within a group.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub prior: String,
    pub latent_dim: usize,
    pub beta: f64,
    pub runs: usize,
    pub metrics: Vec<Summary>,
}

/// Groups rows by `(prior, latent_dim, beta)` in that sort order.
pub fn aggregate(reports: &[MetricReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, usize, u64), Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        // ordered bit key for non-negative betas
        let key = (
            r.info.prior.clone(),
            r.info.latent_dim,
            r.info.beta.to_bits(),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((prior, latent_dim, beta), rows)| {
            let metrics = (0..METRIC_NAMES.len())
                .map(|m| {
                    let vals: Vec<f64> = rows.iter().filter_map(|r| r.values[m].value()).collect();
                    summarize(&vals)
                })
                .collect();
            AggregateRow {
                prior,
                latent_dim,
                beta: f64::from_bits(beta),
                runs: rows.len(),
                metrics,
            }
        })
        .collect()
}

fn summarize(vals: &[f64]) -> Summary {
    let n = vals.len();
    if n == 0 {
        return Summary {
            mean: None,
            std: None,
            count: 0,
        };
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary {
        mean: Some(mean),
        std: Some(std),
        count: n,
    }
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "prior".to_string(),
        "latent_dim".into(),
        "beta".into(),
        "runs".into(),
    ];
    for m in METRIC_NAMES {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |v| v.to_string());
    for r in rows {
        let mut rec = vec![
            r.prior.clone(),
            r.latent_dim.to_string(),
            r.beta.to_string(),
            r.runs.to_string(),
        ];
        for s in &r.metrics {
            rec.push(cell(s.mean));
            rec.push(cell(s.std));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Computes every metric for a trained bundle against held-out data. A
/// metric that errors is recorded as failed rather than aborting the rest.
pub fn evaluate(
    bundle: &ModelBundle,
    test: &Dataset,
    probe: &ProbeNet,
    cfg: &EvalConfig,
    info: RunInfo,
) -> MetricReport {
    let mut root = Rng::seed_from_u64(cfg.eval_seed);
    let mut rng_fd = root.fork(1);
    let mut rng_ppl = root.fork(2);
    let mut rng_div = root.fork(3);
    let mut rng_lat = root.fork(4);

    let frechet = desk_frechet(bundle, &test.images, probe, cfg.eval_samples, &mut rng_fd);
    let separability = match &test.labels {
        Some(labels) => MetricValue::from_result(
            bundle
                .encode_mean(&test.images)
                .and_then(|z| linear_separability(&z, labels, cfg.eval_seed)),
        ),
        None => MetricValue::NotApplicable,
    };
    let ppl_z0 = if bundle.has_flow() {
        // same stream as Z_T so both see identical endpoint draws
        let mut r = rng_ppl.clone();
        MetricValue::from_result(perceptual_path_length(
            bundle,
            probe,
            Space::Z0,
            cfg.ppl_pairs,
            cfg.ppl_epsilon,
            &mut r,
        ))
    } else {
        MetricValue::NotApplicable
    };
    let ppl_zt = perceptual_path_length(
        bundle,
        probe,
        Space::ZT,
        cfg.ppl_pairs,
        cfg.ppl_epsilon,
        &mut rng_ppl,
    );
    let div = diversity(bundle, probe, cfg.diversity_samples, &mut rng_div);
    let mse = bundle.recon_mse(&test.images);
    let lat = latent_divergence_diagnostic(bundle, &test.images, cfg.eval_samples, &mut rng_lat);

    MetricReport {
        info,
        values: vec![
            MetricValue::from_result(frechet),
            separability,
            ppl_z0,
            MetricValue::from_result(ppl_zt),
            MetricValue::from_result(div),
            MetricValue::from_result(mse),
            MetricValue::from_result(lat),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(beta: f64, seed: u64, fd: f64) -> MetricReport {
        let mut values = vec![MetricValue::NotApplicable; 7];
        values[0] = MetricValue::Value(fd);
        values[6] = MetricValue::Failed("boom".into());
        MetricReport {
            info: RunInfo {
                run_id: format!("b{beta}_s{seed}"),
                beta,
                latent_dim: 16,
                prior: "flow".into(),
                seed,
            },
            values,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        let rows = vec![row(0.0, 1, 1.25), row(1.0, 1, 3.5)];
        write_metric_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&METRIC_HEADER.join(",")));
        assert!(text.contains("b0_s1,0,16,flow,1,1.25,na,na,na,na,na,failed"));
        let back = read_metric_csv(&p).unwrap();
        assert_eq!(back[1].values[0], MetricValue::Value(3.5));
        assert_eq!(back[0].failures(), vec![("latent_frechet", "")]);
    }

    #[test]
    fn aggregate_groups_by_beta() {
        let rows: Vec<_> = (1..=5)
            .flat_map(|s| [row(0.0, s, s as f64), row(1.0, s, 10.0)])
            .collect();
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].beta, 0.0);
        assert_eq!(agg[0].metrics[0].mean, Some(3.0));
        assert!((agg[0].metrics[0].std.unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(agg[1].metrics[0].std, Some(0.0));
        assert_eq!(agg[1].metrics[1].mean, None);
        let single = aggregate(&rows[..1]);
        assert_eq!(single[0].metrics[0].std, Some(0.0));
    }
}
