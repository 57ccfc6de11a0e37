//! Anatomy-style l-diverse releases.
//!
//! The table is partitioned into groups in which every sensitive value
//! appears at most once. Each group is published as the multiset of its QI
//! records and the multiset of its SA values, without the pairing.
//!
//! Grouping is the residual-count greedy: while at least `l` distinct SA
//! values remain, take one random row from each of the `l` values with the
//! largest remaining counts. Fewer than `l` rows (with distinct SA values)
//! are left over; each joins the earliest among the smallest groups that do
//! not yet hold its SA value. When leftovers do not outnumber the groups this
//! yields sizes `l` and `l + 1` only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Table, Value};
use crate::error::{Error, Result};

/// Outcome of [`check_eligibility`].
#[derive(Clone, Debug, PartialEq)]
pub struct Eligibility {
    pub feasible: bool,
    /// Most frequent SA value (first in value order on ties) and its count.
    pub most_frequent: Option<(Value, usize)>,
    pub n: usize,
}

/// Feasible iff the most frequent SA value occurs at most `n / l` times.
pub fn check_eligibility(table: &Table, l: usize) -> Result<Eligibility> {
    if l < 2 {
        return Err(Error::config(format!("l must be at least 2, got {l}")));
    }
    let counts = sa_counts(table);
    let most_frequent = counts
        .iter()
        .fold(None::<(&Value, usize)>, |best, (v, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .map(|(v, c)| (v.clone(), c));
    let n = table.len();
    let feasible = most_frequent.as_ref().map_or(true, |(_, c)| c * l <= n);
    Ok(Eligibility {
        feasible,
        most_frequent,
        n,
    })
}

fn sa_counts(table: &Table) -> BTreeMap<Value, usize> {
    let mut counts = BTreeMap::new();
    for v in table.sa_values() {
        *counts.entry(v.clone()).or_insert(0) += 1;
    }
    counts
}

/// One published group.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    row_ids: Vec<usize>,
    qi: Vec<Vec<Value>>,
    /// Sorted SA multiset.
    sa: Vec<Value>,
    /// True SA per member, aligned with `row_ids`; evaluation only.
    truth: Option<Vec<Value>>,
}

impl Group {
    pub fn new(row_ids: Vec<usize>, qi: Vec<Vec<Value>>, mut sa: Vec<Value>, truth: Option<Vec<Value>>) -> Result<Self> {
        if row_ids.len() != qi.len() || row_ids.len() != sa.len() {
            return Err(Error::config("group members, QI records and SA values must align"));
        }
        if let Some(t) = &truth {
            let mut ts = t.clone();
            ts.sort();
            sa.sort();
            if ts != sa {
                return Err(Error::config("hidden truth is not a permutation of the SA multiset"));
            }
        }
        sa.sort();
        Ok(Group {
            row_ids,
            qi,
            sa,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn qi(&self) -> &[Vec<Value>] {
        &self.qi
    }

    pub fn sa(&self) -> &[Value] {
        &self.sa
    }

    pub fn truth(&self) -> Option<&[Value]> {
        self.truth.as_deref()
    }

    /// Largest multiplicity of any value in the SA multiset.
    pub fn max_multiplicity(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for (i, v) in self.sa.iter().enumerate() {
            run = if i > 0 && self.sa[i - 1] == *v { run + 1 } else { 1 };
            best = best.max(run);
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyRelease {
    l: usize,
    qi_names: Vec<String>,
    sa_name: String,
    groups: Vec<Group>,
}

impl AnatomyRelease {
    pub fn new(l: usize, qi_names: Vec<String>, sa_name: impl Into<String>, groups: Vec<Group>) -> Result<Self> {
        if l < 2 {
            return Err(Error::config(format!("l must be at least 2, got {l}")));
        }
        if let Some(g) = groups.iter().find(|g| g.qi.iter().any(|q| q.len() != qi_names.len())) {
            return Err(Error::config(format!(
                "group with rows {:?} has QI records of the wrong width",
                g.row_ids
            )));
        }
        Ok(AnatomyRelease {
            l,
            qi_names,
            sa_name: sa_name.into(),
            groups,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn qi_names(&self) -> &[String] {
        &self.qi_names
    }

    pub fn sa_name(&self) -> &str {
        &self.sa_name
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Total number of published rows.
    pub fn n(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn has_truth(&self) -> bool {
        self.groups.iter().all(|g| g.truth.is_some())
    }

    /// Every group satisfies `max multiplicity <= size / l`.
    pub fn is_l_diverse(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.max_multiplicity() * self.l <= g.len())
    }

    /// Writes `members.csv`, `sa_multisets.csv` and, if known, `truth.csv`.
    pub fn write_dir(&self, dir: &Path, missing_token: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut members = csv::Writer::from_path(dir.join("members.csv"))?;
        let mut header = vec!["group_id".to_string(), "row_id".to_string()];
        header.extend(self.qi_names.iter().cloned());
        members.write_record(&header)?;
        for (gid, g) in self.groups.iter().enumerate() {
            for (rid, qi) in g.row_ids.iter().zip(&g.qi) {
                let mut rec = vec![gid.to_string(), rid.to_string()];
                rec.extend(qi.iter().map(|v| v.render(missing_token).to_string()));
                members.write_record(&rec)?;
            }
        }
        members.flush().map_err(|e| Error::io(dir, e))?;

        let mut sas = csv::Writer::from_path(dir.join("sa_multisets.csv"))?;
        sas.write_record(["group_id", &self.sa_name, "multiplicity"])?;
        for (gid, g) in self.groups.iter().enumerate() {
            let mut i = 0;
            while i < g.sa.len() {
                let j = g.sa[i..].iter().take_while(|v| **v == g.sa[i]).count();
                sas.write_record([
                    gid.to_string(),
                    g.sa[i].render(missing_token).to_string(),
                    j.to_string(),
                ])?;
                i += j;
            }
        }
        sas.flush().map_err(|e| Error::io(dir, e))?;

        if self.has_truth() {
            let mut truth = csv::Writer::from_path(dir.join("truth.csv"))?;
            truth.write_record(["group_id", "row_id", &self.sa_name])?;
            for (gid, g) in self.groups.iter().enumerate() {
                for (rid, t) in g.row_ids.iter().zip(g.truth.as_ref().expect("checked")) {
                    truth.write_record([gid.to_string(), rid.to_string(), t.render(missing_token).to_string()])?;
                }
            }
            truth.flush().map_err(|e| Error::io(dir, e))?;
        }
        let meta = format!("l = {}\n", self.l);
        fs::write(dir.join("release.toml"), meta).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    /// Reads a release written by [`AnatomyRelease::write_dir`].
    pub fn read_dir(dir: &Path, missing_token: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Meta {
            l: usize,
        }
        let meta_path = dir.join("release.toml");
        let meta: Meta = toml::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)
            .map_err(|e| Error::config(format!("{}: {e}", meta_path.display())))?;
        let parse = |s: &str| if s == missing_token { Value::Missing } else { Value::known(s) };
        let bad = |p: &Path, what: &str| Error::Parse {
            path: p.to_path_buf(),
            line: 0,
            message: what.to_string(),
        };

        let mpath = dir.join("members.csv");
        let mut members = csv::Reader::from_path(&mpath)?;
        let qi_names: Vec<String> = members.headers()?.iter().skip(2).map(str::to_string).collect();
        let mut groups: Vec<(Vec<usize>, Vec<Vec<Value>>, Vec<Value>)> = Vec::new();
        for rec in members.records() {
            let rec = rec?;
            let gid: usize = rec[0].parse().map_err(|_| bad(&mpath, "bad group_id"))?;
            let rid: usize = rec[1].parse().map_err(|_| bad(&mpath, "bad row_id"))?;
            if gid >= groups.len() {
                groups.resize_with(gid + 1, Default::default);
            }
            groups[gid].0.push(rid);
            groups[gid].1.push(rec.iter().skip(2).map(parse).collect());
        }
        let spath = dir.join("sa_multisets.csv");
        let mut sas = csv::Reader::from_path(&spath)?;
        let sa_name = sas.headers()?.get(1).unwrap_or("sa").to_string();
        for rec in sas.records() {
            let rec = rec?;
            let gid: usize = rec[0].parse().map_err(|_| bad(&spath, "bad group_id"))?;
            let mult: usize = rec[2].parse().map_err(|_| bad(&spath, "bad multiplicity"))?;
            if gid >= groups.len() {
                return Err(bad(&spath, "SA multiset for unknown group"));
            }
            groups[gid].2.extend(std::iter::repeat_n(parse(&rec[1]), mult));
        }
        let tpath = dir.join("truth.csv");
        let mut truth: BTreeMap<usize, Value> = BTreeMap::new();
        if tpath.exists() {
            let mut tr = csv::Reader::from_path(&tpath)?;
            for rec in tr.records() {
                let rec = rec?;
                let rid: usize = rec[1].parse().map_err(|_| bad(&tpath, "bad row_id"))?;
                truth.insert(rid, parse(&rec[2]));
            }
        }
        let groups = groups
            .into_iter()
            .map(|(ids, qi, sa)| {
                let t = if truth.is_empty() {
                    None
                } else {
                    Some(
                        ids.iter()
                            .map(|r| truth.get(r).cloned().ok_or_else(|| bad(&tpath, "row without truth")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                };
                Group::new(ids, qi, sa, t)
            })
            .collect::<Result<Vec<_>>>()?;
        AnatomyRelease::new(meta.l, qi_names, sa_name, groups)
    }
}

/// Partitions `table` into an l-diverse Anatomy release.
pub fn anonymize<R: Rng + ?Sized>(table: &Table, l: usize, rng: &mut R) -> Result<AnatomyRelease> {
    let elig = check_eligibility(table, l)?;
    if !elig.feasible {
        let (value, count) = elig.most_frequent.expect("infeasible implies non-empty");
        return Err(Error::Eligibility {
            l,
            value: value.to_string(),
            count,
            n: elig.n,
            limit: elig.n / l,
        });
    }
    let schema = table.schema();
    let sa_col = schema.sa_index();
    let qi_cols = schema.qi_indices();

    // Shuffled row positions per SA value; popping from the back draws a random row.
    let mut buckets: Vec<(Value, Vec<usize>)> = {
        let mut by_value: BTreeMap<Value, Vec<usize>> = BTreeMap::new();
        for (pos, row) in table.rows().iter().enumerate() {
            by_value.entry(row[sa_col].clone()).or_default().push(pos);
        }
        by_value.into_iter().collect()
    };
    for (_, rows) in &mut buckets {
        rows.shuffle(rng);
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut order: Vec<usize> = (0..buckets.len()).collect();
    loop {
        // Largest remaining counts first, value order on ties.
        order.sort_by(|&a, &b| buckets[b].1.len().cmp(&buckets[a].1.len()).then(a.cmp(&b)));
        let live = order.iter().take_while(|&&b| !buckets[b].1.is_empty()).count();
        if live < l {
            break;
        }
        let group: Vec<usize> = order[..l]
            .iter()
            .map(|&b| buckets[b].1.pop().expect("non-empty"))
            .collect();
        groups.push(group);
    }

    for (value, rows) in &buckets {
        if rows.len() > 1 {
            return Err(Error::Eligibility {
                l,
                value: value.to_string(),
                count: rows.len(),
                n: table.len(),
                limit: table.len() / l,
            });
        }
    }
    let leftovers: Vec<usize> = buckets.iter().filter_map(|(_, r)| r.first().copied()).collect();
    for pos in leftovers {
        let sa = &table.rows()[pos][sa_col];
        let target = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().all(|&p| &table.rows()[p][sa_col] != sa))
            .min_by_key(|(i, g)| (g.len(), *i))
            .map(|(i, _)| i);
        match target {
            Some(i) => groups[i].push(pos),
            None => {
                return Err(Error::Eligibility {
                    l,
                    value: sa.to_string(),
                    count: 1,
                    n: table.len(),
                    limit: table.len() / l,
                })
            }
        }
    }

    let groups = groups
        .into_iter()
        .map(|members| {
            let row_ids = members.iter().map(|&p| table.ids()[p]).collect();
            let qi = members
                .iter()
                .map(|&p| qi_cols.iter().map(|&c| table.rows()[p][c].clone()).collect())
                .collect();
            let truth: Vec<Value> = members.iter().map(|&p| table.rows()[p][sa_col].clone()).collect();
            Group::new(row_ids, qi, truth.clone(), Some(truth))
        })
        .collect::<Result<Vec<_>>>()?;
    AnatomyRelease::new(l, schema.qi().to_vec(), schema.sa(), groups)
}

/// Concatenates consecutive runs of `factor` groups; a shorter trailing run is
/// merged as is.
pub fn merge_groups(release: &AnatomyRelease, factor: usize) -> Result<AnatomyRelease> {
    if factor < 2 {
        return Err(Error::config(format!("merge factor must be at least 2, got {factor}")));
    }
    let groups = release
        .groups
        .chunks(factor)
        .map(|run| {
            let mut row_ids = Vec::new();
            let mut qi = Vec::new();
            let mut sa = Vec::new();
            let mut truth = Some(Vec::new());
            for g in run {
                row_ids.extend_from_slice(&g.row_ids);
                qi.extend_from_slice(&g.qi);
                sa.extend_from_slice(&g.sa);
                match (&mut truth, &g.truth) {
                    (Some(t), Some(gt)) => t.extend_from_slice(gt),
                    _ => truth = None,
                }
            }
            Group::new(row_ids, qi, sa, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    AnatomyRelease::new(release.l, release.qi_names.clone(), release.sa_name.clone(), groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;
    use crate::seeding::rng;

    fn table(sa: &[&str]) -> Table {
        let schema = Schema::new(
            vec!["q".into(), "s".into()],
            vec!["q".into()],
            "s",
            Default::default(),
        )
        .unwrap();
        let rows = sa
            .iter()
            .enumerate()
            .map(|(i, s)| vec![Value::known(format!("q{}", i % 3)), Value::known(*s)])
            .collect();
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn eligibility_arithmetic() {
        let t = table(&["a", "a", "a", "b"]);
        let e = check_eligibility(&t, 2).unwrap();
        assert!(!e.feasible);
        assert_eq!(e.most_frequent, Some((Value::known("a"), 3)));
        assert!(check_eligibility(&table(&["a", "b", "c"]), 3).unwrap().feasible);
        assert!(check_eligibility(&t, 1).is_err());
    }

    #[test]
    fn two_by_two() {
        let t = table(&["a", "b", "a", "b"]);
        let r = anonymize(&t, 2, &mut rng(1)).unwrap();
        assert_eq!(r.groups().len(), 2);
        for g in r.groups() {
            assert_eq!(g.sa(), &[Value::known("a"), Value::known("b")]);
        }
    }

    #[test]
    fn five_rows_l2() {
        let t = table(&["a", "a", "b", "b", "c"]);
        let r = anonymize(&t, 2, &mut rng(4)).unwrap();
        let mut sizes: Vec<usize> = r.groups().iter().map(Group::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
        assert!(r.groups().iter().all(|g| g.max_multiplicity() == 1));
        assert!(r.is_l_diverse());
    }

    #[test]
    fn infeasible_names_value() {
        let t = table(&["a", "a", "a", "b"]);
        match anonymize(&t, 2, &mut rng(1)) {
            Err(Error::Eligibility { value, count, .. }) => {
                assert_eq!(value, "a");
                assert_eq!(count, 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(anonymize(&t, 1, &mut rng(1)), Err(Error::Config(_))));
    }

    #[test]
    fn merge_shapes() {
        let t = table(&["a", "b", "a", "b", "a", "b", "a", "b"]);
        let r = anonymize(&t, 2, &mut rng(9)).unwrap();
        assert_eq!(r.groups().len(), 4);
        let m = merge_groups(&r, 2).unwrap();
        assert_eq!(m.groups().len(), 2);
        assert!(m.groups().iter().all(|g| g.len() == 4 && g.max_multiplicity() <= 2));
        assert!(m.is_l_diverse());
        assert_eq!(m.l(), 2);

        let single = merge_groups(&merge_groups(&m, 2).unwrap(), 2).unwrap();
        assert_eq!(single.groups().len(), 1);
        assert!(merge_groups(&r, 1).is_err());
    }

    #[test]
    fn merge_three_of_nine() {
        let sa: Vec<String> = (0..27).map(|i| format!("v{}", i % 3)).collect();
        let refs: Vec<&str> = sa.iter().map(String::as_str).collect();
        let r = anonymize(&table(&refs), 3, &mut rng(2)).unwrap();
        assert_eq!(r.groups().len(), 9);
        let m = merge_groups(&r, 3).unwrap();
        assert_eq!(m.groups().len(), 3);
        assert!(m.groups().iter().all(|g| g.len() == 9));
    }

    #[test]
    fn write_and_read_back() {
        let t = table(&["a", "b", "c", "a", "b", "c", "d"]);
        let r = anonymize(&t, 3, &mut rng(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_dir(dir.path(), "?").unwrap();
        let back = AnatomyRelease::read_dir(dir.path(), "?").unwrap();
        assert_eq!(back.l(), 3);
        assert_eq!(back.groups().len(), r.groups().len());
        for (a, b) in back.groups().iter().zip(r.groups()) {
            assert_eq!(a.row_ids(), b.row_ids());
            assert_eq!(a.sa(), b.sa());
            assert_eq!(a.truth(), b.truth());
        }
    }
}
