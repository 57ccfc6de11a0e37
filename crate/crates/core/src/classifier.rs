//! Naive Bayes attack classifier learned from the joint count workload.
//!
//! Conditionals use add-one smoothing over clipped counts,
//!
//! ```text
//! Pr[v | s] = (1 + max(0, c(i, v, s))) / sum_t (1 + max(0, c(i, t, s)))
//! ```
//!
//! and the prior is read off the same workload by summing over every
//! attribute and value,
//!
//! ```text
//! Pr[s] = sum_i sum_t (1 + max(0, c(i, t, s))) / sum_s' sum_i sum_t (1 + max(0, c(i, t, s')))
//! ```
//!
//! Each row is counted once per attribute, so the ratio is still a consistent
//! estimate of the SA marginal while the workload needs no separate marginal
//! counts (sensitivity `m` instead of `m + 1`).

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::dataset::{Domains, EncodedTable, Table, Value};
use crate::error::{Error, Result};
use crate::workload::{integer_counts, CountWorkload};

/// Exact workload of `table` over domains computed from the table itself.
pub fn exact_counts(table: &Table) -> Result<CountWorkload> {
    let domains = Arc::new(Domains::from_table(table)?);
    exact_counts_over(domains, table)
}

/// Exact workload of `table` over fixed `domains`. Values outside the domains
/// are not counted.
pub fn exact_counts_over(domains: Arc<Domains>, table: &Table) -> Result<CountWorkload> {
    let enc = domains.encode(table)?;
    counts_from_encoded(domains, &enc, |r| enc.sa(r))
}

/// Workload of encoded rows under an arbitrary row -> SA code assignment.
pub fn counts_from_encoded(
    domains: Arc<Domains>,
    enc: &EncodedTable,
    sa_of: impl Fn(usize) -> Option<u32>,
) -> Result<CountWorkload> {
    let counts = integer_counts(&domains, enc, sa_of);
    CountWorkload::from_integer_counts(domains, &counts)
}

/// Smoothed Naive Bayes parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NBModel {
    domains: Arc<Domains>,
    offsets: Vec<usize>,
    cond: Vec<f64>,
    log_cond: Vec<f64>,
    prior: Vec<f64>,
    log_prior: Vec<f64>,
}

/// Fits the classifier from a (clipped or exact) workload.
pub fn fit(counts: &CountWorkload) -> Result<NBModel> {
    let domains = counts.domains().clone();
    let k = domains.sa().len();
    if k == 0 {
        return Err(Error::config("sensitive attribute domain is empty"));
    }
    let m = domains.m();
    let mut cond = vec![0.0; counts.len()];
    let mut offsets = Vec::with_capacity(m + 1);
    let mut mass = vec![0.0; k];
    let mut off = 0;
    for i in 0..m {
        offsets.push(off);
        let dlen = domains.qi(i).len();
        let block = counts.attribute_block(i);
        let mut col_sum = vec![0.0; k];
        for v in 0..dlen {
            for s in 0..k {
                col_sum[s] += 1.0 + block[v * k + s].max(0.0);
            }
        }
        for v in 0..dlen {
            for s in 0..k {
                cond[off + v * k + s] = (1.0 + block[v * k + s].max(0.0)) / col_sum[s];
            }
        }
        for s in 0..k {
            mass[s] += col_sum[s];
        }
        off += dlen * k;
    }
    offsets.push(off);
    let total: f64 = mass.iter().sum();
    let prior: Vec<f64> = if total > 0.0 {
        mass.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    Ok(NBModel {
        log_cond: cond.iter().map(|p| p.ln()).collect(),
        log_prior: prior.iter().map(|p| p.ln()).collect(),
        domains,
        offsets,
        cond,
        prior,
    })
}

impl NBModel {
    /// Model from explicit conditional tables `cond[i][v][s]` and a prior.
    pub fn from_parts(domains: Arc<Domains>, cond: Vec<Vec<Vec<f64>>>, prior: Vec<f64>) -> Result<Self> {
        let k = domains.sa().len();
        if prior.len() != k || cond.len() != domains.m() {
            return Err(Error::DomainMismatch("table shapes do not match domains".into()));
        }
        let mut flat = Vec::new();
        let mut offsets = Vec::new();
        for (i, table) in cond.iter().enumerate() {
            offsets.push(flat.len());
            if table.len() != domains.qi(i).len() {
                return Err(Error::DomainMismatch(format!("attribute {i} has wrong value count")));
            }
            for row in table {
                if row.len() != k {
                    return Err(Error::DomainMismatch(format!("attribute {i} has wrong SA count")));
                }
                flat.extend_from_slice(row);
            }
        }
        offsets.push(flat.len());
        if flat.iter().chain(&prior).any(|p| !(*p > 0.0)) {
            return Err(Error::config("probabilities must be strictly positive"));
        }
        Ok(NBModel {
            log_cond: flat.iter().map(|p| p.ln()).collect(),
            log_prior: prior.iter().map(|p| p.ln()).collect(),
            domains,
            offsets,
            cond: flat,
            prior,
        })
    }

    pub fn domains(&self) -> &Arc<Domains> {
        &self.domains
    }

    pub fn sa_len(&self) -> usize {
        self.prior.len()
    }

    #[inline]
    fn idx(&self, i: usize, v: usize, s: usize) -> usize {
        self.offsets[i] + v * self.prior.len() + s
    }

    /// `Pr[v | s]` for attribute `i`.
    pub fn cond(&self, i: usize, v: usize, s: usize) -> f64 {
        self.cond[self.idx(i, v, s)]
    }

    #[inline]
    pub fn log_cond(&self, i: usize, v: usize, s: usize) -> f64 {
        self.log_cond[self.idx(i, v, s)]
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// Sum of log conditionals of the evidence in `qi` given `s`.
    #[inline]
    pub fn log_evidence(&self, qi: &[u32], s: usize) -> f64 {
        let mut acc = 0.0;
        for (i, &v) in qi.iter().enumerate() {
            if self.domains.is_evidence(i, v) {
                acc += self.log_cond(i, v as usize, s);
            }
        }
        acc
    }

    /// Unnormalised log posterior weights.
    pub fn log_weights(&self, qi: &[u32]) -> Vec<f64> {
        (0..self.sa_len())
            .map(|s| self.log_prior[s] + self.log_evidence(qi, s))
            .collect()
    }

    /// Joint `Pr[v | s] * Pr[s]` for attribute `i`.
    pub fn joint(&self, i: usize, v: usize, s: usize) -> f64 {
        self.cond(i, v, s) * self.prior[s]
    }

    /// Writes `attribute,value,sa,probability` lines; prior lines have empty
    /// attribute and value fields.
    pub fn dump<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["attribute", "value", "sa", "probability"])?;
        let d = &self.domains;
        for (s, sv) in d.sa().values().iter().enumerate() {
            w.write_record(["", "", &sv.to_string(), &format!("{:e}", self.prior[s])])?;
        }
        for i in 0..d.m() {
            for (v, vv) in d.qi(i).values().iter().enumerate() {
                for (s, sv) in d.sa().values().iter().enumerate() {
                    w.write_record([
                        d.qi_names()[i].as_str(),
                        &vv.to_string(),
                        &sv.to_string(),
                        &format!("{:e}", self.cond(i, v, s)),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<model>", e))?;
        Ok(())
    }

    /// Reads a model written by [`NBModel::dump`]. `?` is read back as missing.
    pub fn load<R: BufRead>(input: R, sa_name: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let parse_value = |s: &str| if s == "?" { Value::Missing } else { Value::known(s) };
        let mut prior_entries = Vec::new();
        let mut names: Vec<String> = Vec::new();
        let mut entries: Vec<(usize, Value, Value, f64)> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let p: f64 = rec[3]
                .parse()
                .map_err(|_| Error::config(format!("bad probability `{}`", &rec[3])))?;
            if rec[0].is_empty() {
                prior_entries.push((parse_value(&rec[2]), p));
            } else {
                let i = match names.iter().position(|n| n == &rec[0]) {
                    Some(i) => i,
                    None => {
                        names.push(rec[0].to_string());
                        names.len() - 1
                    }
                };
                entries.push((i, parse_value(&rec[1]), parse_value(&rec[2]), p));
            }
        }
        let sa_vals: Vec<Value> = prior_entries.iter().map(|(v, _)| v.clone()).collect();
        let mut qi_vals: Vec<Vec<Value>> = vec![Vec::new(); names.len()];
        for (i, v, _, _) in &entries {
            if !qi_vals[*i].contains(v) {
                qi_vals[*i].push(v.clone());
            }
        }
        let domains = Arc::new(Domains::from_parts(names, qi_vals, sa_name, sa_vals)?);
        let k = domains.sa().len();
        let mut prior = vec![0.0; k];
        for (v, p) in prior_entries {
            prior[domains.sa().code(&v).expect("from prior") as usize] = p;
        }
        let mut cond: Vec<Vec<Vec<f64>>> = (0..domains.m())
            .map(|i| vec![vec![0.0; k]; domains.qi(i).len()])
            .collect();
        for (i, v, s, p) in entries {
            let vc = domains.qi(i).code(&v).expect("collected") as usize;
            let sc = domains
                .sa()
                .code(&s)
                .ok_or_else(|| Error::DomainMismatch(format!("SA value `{s}` has no prior")))?
                as usize;
            cond[i][vc][sc] = p;
        }
        NBModel::from_parts(domains, cond, prior)
    }
}

fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; lw.len()];
    }
    let w: Vec<f64> = lw.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// First index of the maximum; ties go to the earliest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Posterior over the SA domain for an encoded QI record.
///
/// Missing or out-of-domain values contribute no factor.
pub fn posterior(model: &NBModel, qi: &[u32]) -> Vec<f64> {
    normalize_log(&model.log_weights(qi))
}

/// Posterior for a QI record given as values in QI order.
pub fn posterior_values(model: &NBModel, qi: &[Value]) -> Vec<f64> {
    posterior(model, &model.domains.encode_qi(qi))
}

/// SA code with the highest posterior weight.
pub fn predict(model: &NBModel, qi: &[u32]) -> u32 {
    argmax(&posterior(model, qi)) as u32
}

/// Posterior restricted to the SA multiset `allowed` (codes, repeats allowed).
///
/// Each weight is multiplied by the multiplicity of its SA value in `allowed`;
/// values outside `allowed` get zero.
pub fn posterior_restricted(model: &NBModel, qi: &[u32], allowed: &[u32]) -> Vec<f64> {
    let k = model.sa_len();
    let mut mult = vec![0u32; k];
    for &s in allowed {
        mult[s as usize] += 1;
    }
    let lw: Vec<f64> = model
        .log_weights(qi)
        .into_iter()
        .zip(&mult)
        .map(|(w, &c)| if c == 0 { f64::NEG_INFINITY } else { w + (c as f64).ln() })
        .collect();
    normalize_log(&lw)
}

/// Rows where the classifier is confident, and how often it is right on them.
#[derive(Clone, Debug, PartialEq)]
pub struct HighConfidence {
    pub rows: Vec<usize>,
    /// `None` when no row passes the threshold.
    pub accuracy: Option<f64>,
}

impl HighConfidence {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

/// Rows whose largest posterior probability exceeds `threshold`.
pub fn high_confidence(model: &NBModel, table: &EncodedTable, threshold: f64) -> Result<HighConfidence> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut rows = Vec::new();
    let mut correct = 0usize;
    for r in 0..table.len() {
        let post = posterior(model, table.qi(r));
        let best = argmax(&post);
        if post[best] > threshold {
            rows.push(r);
            if table.sa(r) == Some(best as u32) {
                correct += 1;
            }
        }
    }
    let accuracy = (!rows.is_empty()).then(|| correct as f64 / rows.len() as f64);
    Ok(HighConfidence { rows, accuracy })
}

/// Predictions for every row of an encoded table.
pub fn predict_all(model: &NBModel, table: &EncodedTable) -> Vec<u32> {
    (0..table.len()).map(|r| predict(model, table.qi(r))).collect()
}
