#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use anonattack::dataset::{Schema, Table, Value};
use anonattack::harness::ExperimentConfig;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_file(&workspace_root().join("configs").join(name)).expect("config parses")
}

pub fn data_present(cfg: &ExperimentConfig) -> bool {
    cfg.dataset.path.exists()
}

/// Two-column table `q, s` with the given QI and SA values.
pub fn qs_table(rows: &[(&str, &str)]) -> Table {
    let schema = Schema::new(vec!["q".into(), "s".into()], vec!["q".into()], "s", Default::default()).unwrap();
    Table::new(
        schema,
        rows.iter().map(|(q, s)| vec![Value::known(*q), Value::known(*s)]).collect(),
    )
    .unwrap()
}

/// Table with `m` QI columns `q0..` and SA column `s`; `"?"` cells are missing.
pub fn table(m: usize, rows: &[Vec<String>]) -> Table {
    let mut attrs: Vec<String> = (0..m).map(|i| format!("q{i}")).collect();
    let qi = attrs.clone();
    attrs.push("s".into());
    let schema = Schema::new(attrs, qi, "s", Default::default()).unwrap();
    let rows = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|c| if c == "?" { Value::Missing } else { Value::known(c.as_str()) })
                .collect()
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

/// Chi-square statistic and upper-tail p-value of `observed` against
/// `expected_prob`; cells with expected count below 5 are pooled.
pub fn chi_square(observed: &[u64], expected_prob: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut po, mut pe) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected_prob) {
        let e = p * n as f64;
        if e < 5.0 {
            po += o as f64;
            pe += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pe > 0.0 {
        cells.push((po, pe));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    (stat, p)
}

/// Exhaustive search for a partition of the SA multiset into groups of at
/// least `l` pairwise distinct values.
pub fn brute_force_feasible(sa: &[usize], l: usize) -> bool {
    fn go(i: usize, sa: &[usize], groups: &mut Vec<Vec<usize>>, l: usize) -> bool {
        if i == sa.len() {
            return groups.iter().all(|g| g.len() >= l);
        }
        let remaining = sa.len() - i;
        let deficit: usize = groups.iter().map(|g| l.saturating_sub(g.len())).sum();
        if deficit > remaining {
            return false;
        }
        for g in 0..groups.len() {
            if !groups[g].contains(&sa[i]) {
                groups[g].push(sa[i]);
                if go(i + 1, sa, groups, l) {
                    return true;
                }
                groups[g].pop();
            }
        }
        groups.push(vec![sa[i]]);
        let ok = go(i + 1, sa, groups, l);
        groups.pop();
        ok
    }
    if sa.is_empty() {
        return true;
    }
    go(0, sa, &mut Vec::new(), l)
}

pub fn value_counts<'a>(values: impl Iterator<Item = &'a Value>) -> BTreeMap<Value, usize> {
    let mut m = BTreeMap::new();
    for v in values {
        *m.entry(v.clone()).or_insert(0) += 1;
    }
    m
}

/// Checks the structural invariants of a base (unmerged) Anatomy release of
/// `table`. Returns a description of the first violation.
pub fn check_release(
    table: &Table,
    release: &anonattack::anatomy::AnatomyRelease,
    l: usize,
) -> std::result::Result<(), String> {
    let sa_col = table.schema().sa_index();
    let mut seen = vec![false; table.len()];
    let pos_of: BTreeMap<usize, usize> = table.ids().iter().enumerate().map(|(p, &id)| (id, p)).collect();
    for (g, group) in release.groups().iter().enumerate() {
        if group.len() < l || group.len() > 2 * l - 1 {
            return Err(format!("group {g} has size {}", group.len()));
        }
        if group.max_multiplicity() != 1 {
            return Err(format!("group {g} repeats an SA value"));
        }
        let truth = group.truth().ok_or("missing truth")?;
        for (&id, t) in group.row_ids().iter().zip(truth) {
            let p = *pos_of.get(&id).ok_or(format!("unknown row id {id}"))?;
            if seen[p] {
                return Err(format!("row {id} appears twice"));
            }
            seen[p] = true;
            if &table.rows()[p][sa_col] != t {
                return Err(format!("truth of row {id} differs from the table"));
            }
        }
        let mut sorted = truth.to_vec();
        sorted.sort();
        if sorted != group.sa() {
            return Err(format!("group {g} truth is not a permutation of its SA multiset"));
        }
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(format!("row at position {p} is in no group"));
    }
    Ok(())
}

/// Random table with `n` rows and one QI column. The SA is `s0` with
/// probability `skew` and otherwise uniform over `k` categories.
pub fn random_sa_table(n: usize, k: usize, skew: f64, seed: u64) -> Table {
    use rand::Rng;
    let mut r = anonattack::seeding::rng(seed);
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let s = if r.random::<f64>() < skew { 0 } else { r.random_range(0..k) };
            vec![format!("q{}", i % 4), format!("s{s}")]
        })
        .collect();
    table(1, &rows)
}
