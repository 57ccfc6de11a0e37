//! Experiment orchestration: epsilon sweeps of the naive attack, l sweeps of
//! the deFinetti attack, baselines and summaries, all written as CSV.
//!
//! Every repetition draws from its own stream keyed by the master seed, the
//! grid point and the repetition index, and rows are sorted before output, so
//! results do not depend on scheduling.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::{anonymize, check_eligibility, merge_groups};
use crate::classifier::{self, exact_counts_over, fit, high_confidence, predict_all};
use crate::dataset::{DatasetConfig, Domains, Table, Value};
use crate::definetti::{self, EncodedRelease, Method};
use crate::error::{Error, Result};
use crate::mechanism::{clip_nonnegative, release, Mechanism, PrivacyParams};
use crate::seeding::{self, tag};

pub const DEFAULT_EPSILONS: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 1.0, 10.0, 100.0];
pub const DEFAULT_NAIVE_REPETITIONS: usize = 9;
pub const DEFAULT_DEFINETTI_REPETITIONS: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 2013;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveConfig {
    pub epsilons: Vec<f64>,
    pub mechanism: Mechanism,
    pub repetitions: usize,
    /// Also evaluate the classifier on exact counts (reported at `param = inf`).
    pub noiseless: bool,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        NaiveConfig {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            mechanism: Mechanism::Geometric,
            repetitions: DEFAULT_NAIVE_REPETITIONS,
            noiseless: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefinettiConfig {
    pub l: Vec<usize>,
    /// 1 means the unmerged release.
    pub merge_factors: Vec<usize>,
    pub iterations: usize,
    pub window: usize,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    /// Use a seeded random subset of this many rows.
    pub subsample: Option<usize>,
}

impl Default for DefinettiConfig {
    fn default() -> Self {
        DefinettiConfig {
            l: vec![2, 3, 4, 5, 6, 7],
            merge_factors: vec![1],
            iterations: definetti::DEFAULT_ITERATIONS,
            window: definetti::DEFAULT_WINDOW,
            repetitions: DEFAULT_DEFINETTI_REPETITIONS,
            methods: Method::ALL.to_vec(),
            subsample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Sensitive attribute to attack. When it differs from the dataset's, the
    /// two swap roles: the old SA becomes a quasi-identifier.
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Fill the `seconds` column. Off by default so outputs are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default)]
    pub naive: NaiveConfig,
    #[serde(default)]
    pub definetti: DefinettiConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig) -> Self {
        ExperimentConfig {
            dataset,
            target: None,
            seed: DEFAULT_SEED,
            threshold: DEFAULT_THRESHOLD,
            out: None,
            record_timings: false,
            naive: NaiveConfig::default(),
            definetti: DefinettiConfig::default(),
        }
    }

    /// Parses a TOML config; relative paths are taken from the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(base.join(out));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_dataset()?.schema()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.naive.repetitions == 0 || self.definetti.repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if let Some(e) = self.naive.epsilons.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::config(format!("epsilon must be positive, got {e}")));
        }
        if let Some(l) = self.definetti.l.iter().find(|l| **l < 2) {
            return Err(Error::config(format!("l must be at least 2, got {l}")));
        }
        if self.definetti.merge_factors.contains(&0) {
            return Err(Error::config("merge factor must be at least 1"));
        }
        if self.definetti.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if let Some(f) = self.dataset.test_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(format!("test fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Dataset config with `target` applied.
    pub fn effective_dataset(&self) -> Result<DatasetConfig> {
        let mut ds = self.dataset.clone();
        if let Some(target) = &self.target {
            if *target != ds.sa {
                let old = std::mem::replace(&mut ds.sa, target.clone());
                ds.qi.retain(|q| q != target);
                ds.qi.push(old);
            }
        }
        Ok(ds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// `baseline`, `dp`, `dp-confident`, `noiseless`, `definetti`,
    /// `definetti-merge<k>`.
    pub kind: String,
    /// Epsilon (`inf` for exact counts) or l; empty for baselines.
    pub param: Option<f64>,
    pub rep: usize,
    pub split: Split,
    /// `naive`, `permutation`, `group`, `open` or `baseline`.
    pub method: String,
    pub accuracy: f64,
    /// Number of rows the accuracy was measured on.
    pub subset_size: usize,
    pub seconds: Option<f64>,
}

impl ResultRow {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.kind
            .cmp(&other.kind)
            .then(cmp_param(self.param, other.param))
            .then(self.rep.cmp(&other.rep))
            .then(self.split.cmp(&other.split))
            .then(self.method.cmp(&other.method))
    }
}

fn cmp_param(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    }
}

/// Fraction of positions where prediction and truth agree. A missing truth
/// value never matches.
pub fn accuracy(predictions: &[u32], truth: &[Option<u32>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy of zero predictions".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::config(format!(
            "{} predictions for {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| Some(**p) == **t)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Most frequent SA value (first in value order on ties) and its frequency.
pub fn baseline_majority(table: &Table) -> Result<(Value, f64)> {
    if table.is_empty() {
        return Err(Error::Empty("majority baseline of an empty table".into()));
    }
    let mut counts: BTreeMap<&Value, usize> = BTreeMap::new();
    for v in table.sa_values() {
        *counts.entry(v).or_insert(0) += 1;
    }
    let (v, c) = counts
        .into_iter()
        .fold(None::<(&Value, usize)>, |best, (v, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .expect("non-empty");
    Ok((v.clone(), c as f64 / table.len() as f64))
}

fn frequency_of(table: &Table, value: &Value) -> f64 {
    if table.is_empty() {
        return 0.0;
    }
    table.sa_values().filter(|v| *v == value).count() as f64 / table.len() as f64
}

fn baseline_rows(train: &Table, test: &Table) -> Result<Vec<ResultRow>> {
    let (v, acc) = baseline_majority(train)?;
    let mut rows = vec![ResultRow {
        kind: "baseline".into(),
        param: None,
        rep: 0,
        split: Split::Train,
        method: "baseline".into(),
        accuracy: acc,
        subset_size: train.len(),
        seconds: None,
    }];
    if !test.is_empty() {
        rows.push(ResultRow {
            split: Split::Test,
            accuracy: frequency_of(test, &v),
            subset_size: test.len(),
            ..rows[0].clone()
        });
    }
    Ok(rows)
}

/// The loaded and encoded inputs of a naive-attack experiment.
pub struct NaiveInputs {
    pub train: Table,
    pub test: Table,
    pub domains: Arc<Domains>,
}

impl NaiveInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let ds = cfg.effective_dataset()?;
        let (train, test) = ds.load_train_test(cfg.seed)?;
        if train.is_empty() {
            return Err(Error::Empty("training table has no rows".into()));
        }
        let domains = Arc::new(Domains::from_table(&train)?);
        Ok(NaiveInputs { train, test, domains })
    }
}

/// Accuracy figures of one fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub split: Split,
    pub accuracy: f64,
    pub n: usize,
    pub confident_accuracy: Option<f64>,
    pub confident_size: usize,
}

fn evaluate(model: &classifier::NBModel, table: &crate::dataset::EncodedTable, split: Split, threshold: f64) -> Result<Evaluation> {
    let preds = predict_all(model, table);
    let acc = accuracy(&preds, table.sa_codes())?;
    let hc = high_confidence(model, table, threshold)?;
    Ok(Evaluation {
        split,
        accuracy: acc,
        n: table.len(),
        confident_accuracy: hc.accuracy,
        confident_size: hc.size(),
    })
}

/// Runs the naive attack for every epsilon and repetition.
pub fn run_naive_attack(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let inputs = NaiveInputs::load(cfg)?;
    run_naive_on(cfg, &inputs)
}

pub fn run_naive_on(cfg: &ExperimentConfig, inputs: &NaiveInputs) -> Result<Vec<ResultRow>> {
    let domains = inputs.domains.clone();
    let m = domains.m() as u32;
    let enc_train = domains.encode(&inputs.train)?;
    let enc_test = domains.encode(&inputs.test)?;
    let exact = exact_counts_over(domains.clone(), &inputs.train)?;

    let mut points: Vec<(usize, f64, Mechanism)> = cfg
        .naive
        .epsilons
        .iter()
        .enumerate()
        .map(|(i, &e)| (i, e, cfg.naive.mechanism))
        .collect();
    if cfg.naive.noiseless {
        points.push((points.len(), f64::INFINITY, Mechanism::None));
    }
    let jobs: Vec<(usize, f64, Mechanism, usize)> = points
        .iter()
        .flat_map(|&(i, e, mech)| (0..cfg.naive.repetitions).map(move |r| (i, e, mech, r)))
        .collect();

    let per_job: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(point, eps, mech, rep)| {
            let start = Instant::now();
            let model = if mech == Mechanism::None {
                fit(&exact)?
            } else {
                let params = PrivacyParams::new(eps, m, mech)?;
                let mut rng = seeding::grid_stream(cfg.seed, tag::NOISE, point as u64, rep as u64);
                fit(&clip_nonnegative(&release(&exact, &params, &mut rng)))?
            };
            let mut evals = vec![evaluate(&model, &enc_train, Split::Train, cfg.threshold)?];
            if !enc_test.is_empty() {
                evals.push(evaluate(&model, &enc_test, Split::Test, cfg.threshold)?);
            }
            let seconds = cfg.record_timings.then(|| start.elapsed().as_secs_f64());
            let mut rows = Vec::new();
            for ev in evals {
                rows.push(ResultRow {
                    kind: "dp".into(),
                    param: Some(eps),
                    rep,
                    split: ev.split,
                    method: "naive".into(),
                    accuracy: ev.accuracy,
                    subset_size: ev.n,
                    seconds,
                });
                if let Some(acc) = ev.confident_accuracy {
                    rows.push(ResultRow {
                        kind: "dp-confident".into(),
                        param: Some(eps),
                        rep,
                        split: ev.split,
                        method: "naive".into(),
                        accuracy: acc,
                        subset_size: ev.confident_size,
                        seconds: None,
                    });
                }
            }
            Ok(rows)
        })
        .collect();

    let mut rows = baseline_rows(&inputs.train, &inputs.test)?;
    for r in per_job {
        rows.extend(r?);
    }
    rows.sort_by(ResultRow::key_cmp);
    Ok(rows)
}

/// Load, count, perturb, fit and predict every row of the training table,
/// returning the training accuracy and the wall time of the whole pipeline.
pub fn time_naive_pipeline(ds: &DatasetConfig, epsilon: f64, seed: u64) -> Result<(f64, std::time::Duration)> {
    let start = Instant::now();
    let train = ds.load_train()?;
    let domains = Arc::new(Domains::from_table(&train)?);
    let exact = exact_counts_over(domains.clone(), &train)?;
    let params = PrivacyParams::new(epsilon, domains.m() as u32, Mechanism::Geometric)?;
    let mut rng = seeding::stream(seed, tag::NOISE, 0);
    let model = fit(&clip_nonnegative(&release(&exact, &params, &mut rng)))?;
    let enc = domains.encode(&train)?;
    let acc = accuracy(&predict_all(&model, &enc), enc.sa_codes())?;
    Ok((acc, start.elapsed()))
}

fn subsample(table: &Table, n: usize, seed: u64) -> Table {
    use rand::seq::index::sample;
    if n >= table.len() {
        return table.clone();
    }
    let mut rng = seeding::stream(seed, tag::SPLIT, 1);
    let mut picks = sample(&mut rng, table.len(), n).into_vec();
    picks.sort_unstable();
    table.select(&picks)
}

/// Loads the table attacked by the deFinetti experiment.
pub fn definetti_table(cfg: &ExperimentConfig) -> Result<Table> {
    let table = cfg.effective_dataset()?.load_train()?;
    Ok(match cfg.definetti.subsample {
        Some(n) => subsample(&table, n, cfg.seed),
        None => table,
    })
}

/// Runs the deFinetti attack for every l, merge factor and repetition.
pub fn run_definetti_attack(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let table = definetti_table(cfg)?;
    run_definetti_on(cfg, &table)
}

pub fn run_definetti_on(cfg: &ExperimentConfig, table: &Table) -> Result<Vec<ResultRow>> {
    let dc = &cfg.definetti;
    for &l in &dc.l {
        let e = check_eligibility(table, l)?;
        if !e.feasible {
            let (value, count) = e.most_frequent.expect("infeasible implies rows");
            return Err(Error::Eligibility {
                l,
                value: value.to_string(),
                count,
                n: e.n,
                limit: e.n / l,
            });
        }
    }

    // Reference: the classifier trained on the true counts.
    let domains = Arc::new(Domains::from_table(table)?);
    let enc = domains.encode(table)?;
    let noiseless = fit(&exact_counts_over(domains.clone(), table)?)?;
    let noiseless_acc = accuracy(&predict_all(&noiseless, &enc), enc.sa_codes())?;
    let mut rows = baseline_rows(table, &table.head(0))?;
    rows.push(ResultRow {
        kind: "noiseless".into(),
        param: None,
        rep: 0,
        split: Split::Train,
        method: "naive".into(),
        accuracy: noiseless_acc,
        subset_size: table.len(),
        seconds: None,
    });

    let jobs: Vec<(usize, usize)> = dc
        .l
        .iter()
        .flat_map(|&l| (0..dc.repetitions).map(move |r| (l, r)))
        .collect();
    let per_job: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(l, rep)| {
            let mut arng = seeding::grid_stream(cfg.seed, tag::ANATOMY, l as u64, rep as u64);
            let base = anonymize(table, l, &mut arng)?;
            dc.merge_factors
                .par_iter()
                .map(|&factor| {
                    let start = Instant::now();
                    let rel = if factor == 1 { base.clone() } else { merge_groups(&base, factor)? };
                    let enc_rel = Arc::new(EncodedRelease::with_domains(&rel, domains.clone())?);
                    let mut srng = seeding::grid_stream(cfg.seed, tag::SAMPLER, l as u64, rep as u64);
                    let (model, state, trace) = definetti::run(enc_rel.clone(), dc.iterations, dc.window, &mut srng)?;
                    let truth: Vec<Option<u32>> = enc_rel
                        .truth()
                        .ok_or_else(|| Error::config("release carries no truth"))?
                        .iter()
                        .map(|&t| Some(t))
                        .collect();
                    let seconds = cfg.record_timings.then(|| start.elapsed().as_secs_f64());
                    let kind = if factor == 1 {
                        "definetti".to_string()
                    } else {
                        format!("definetti-merge{factor}")
                    };
                    dc.methods
                        .iter()
                        .map(|&method| {
                            let preds = definetti::predict_all(method, &model, &state, &trace);
                            Ok(ResultRow {
                                kind: kind.clone(),
                                param: Some(l as f64),
                                rep,
                                split: Split::Train,
                                method: method.to_string(),
                                accuracy: accuracy(&preds, &truth)?,
                                subset_size: truth.len(),
                                seconds,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<Vec<ResultRow>>>>()
                .map(|v| v.into_iter().flatten().collect())
        })
        .collect();
    for r in per_job {
        rows.extend(r?);
    }
    rows.sort_by(ResultRow::key_cmp);
    Ok(rows)
}

/// Min, mean and max accuracy over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub param: Option<f64>,
    pub split: Split,
    pub method: String,
    pub reps: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub mean_subset_size: f64,
}

/// Groups rows by `(kind, param, split, method)`.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Empty("nothing to summarize".into()));
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(cmp_param(a.param, b.param))
            .then(a.split.cmp(&b.split))
            .then(a.method.cmp(&b.method))
            .then(a.accuracy.total_cmp(&b.accuracy))
            .then(a.subset_size.cmp(&b.subset_size))
    });
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let head = sorted[i];
        let j = i + sorted[i..]
            .iter()
            .take_while(|r| {
                r.kind == head.kind
                    && cmp_param(r.param, head.param) == Ordering::Equal
                    && r.split == head.split
                    && r.method == head.method
            })
            .count();
        let group = &sorted[i..j];
        let n = group.len() as f64;
        out.push(SummaryRow {
            kind: head.kind.clone(),
            param: head.param,
            split: head.split,
            method: head.method.clone(),
            reps: group.len(),
            min: group[0].accuracy,
            mean: group[0].accuracy + group.iter().map(|r| r.accuracy - group[0].accuracy).sum::<f64>() / n,
            max: group[group.len() - 1].accuracy,
            mean_subset_size: group.iter().map(|r| r.subset_size as f64).sum::<f64>() / n,
        });
        i = j;
    }
    Ok(out)
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: &str, param: f64, rep: usize, acc: f64) -> ResultRow {
        ResultRow {
            kind: kind.into(),
            param: Some(param),
            rep,
            split: Split::Train,
            method: "naive".into(),
            accuracy: acc,
            subset_size: 10,
            seconds: None,
        }
    }

    #[test]
    fn accuracy_cases() {
        let t = [Some(0), Some(1), Some(2), Some(3)];
        assert_eq!(accuracy(&[0, 1, 2, 3], &t).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3, 0], &t).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 0], &t).unwrap(), 0.75);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Empty(_))));
        assert_eq!(accuracy(&[0], &[None]).unwrap(), 0.0);
    }

    #[test]
    fn summary_of_three() {
        let rows = vec![row("dp", 1.0, 0, 0.2), row("dp", 1.0, 1, 0.6), row("dp", 1.0, 2, 0.4)];
        let s = summarize(&rows).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].min, s[0].max), (0.2, 0.6));
        assert!((s[0].mean - 0.4).abs() < 1e-15);
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(summarize(&rev).unwrap(), s);

        let one = summarize(&rows[..1]).unwrap();
        assert_eq!((one[0].min, one[0].mean, one[0].max), (0.2, 0.2, 0.2));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let mut rows = vec![row("dp", f64::INFINITY, 0, 0.5), row("dp", 0.1, 1, 0.25)];
        rows.push(ResultRow {
            param: None,
            kind: "baseline".into(),
            ..rows[0].clone()
        });
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,param,rep,split,method,accuracy,subset_size,seconds\n"));
        assert_eq!(read_rows(&buf[..]).unwrap(), rows);
    }
}
