//! Categorical microdata: schema, loading, cleaning, bucketing and splitting.
//!
//! A [`Table`] keeps every attribute of the source file as a categorical
//! [`Value`]. Missing cells become [`Value::Missing`], which is an ordinary
//! category as far as quasi-identifier domains are concerned. Only rows whose
//! sensitive value is missing are removed, by [`drop_missing_sa`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// A categorical cell.
///
/// Ordering is lexicographic on the text with `Missing` sorted last.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Known(String),
    Missing,
}

impl Value {
    pub fn known(s: impl Into<String>) -> Self {
        Value::Known(s.into())
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Text form, with `missing_token` standing in for `Missing`.
    pub fn render<'a>(&'a self, missing_token: &'a str) -> &'a str {
        match self {
            Value::Known(s) => s,
            Value::Missing => missing_token,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Known(s) => f.write_str(s),
            Value::Missing => f.write_str("?"),
        }
    }
}

/// Attribute layout with designated quasi-identifiers and one sensitive attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    attributes: Vec<String>,
    qi: Vec<String>,
    sa: String,
    #[serde(default)]
    buckets: BTreeMap<String, Vec<i64>>,
}

impl Schema {
    pub fn new(
        attributes: Vec<String>,
        qi: Vec<String>,
        sa: impl Into<String>,
        buckets: BTreeMap<String, Vec<i64>>,
    ) -> Result<Self> {
        let schema = Schema {
            attributes,
            qi,
            sa: sa.into(),
            buckets,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if !seen.insert(a.as_str()) {
                return Err(Error::config(format!("duplicate attribute `{a}`")));
            }
        }
        if self.qi.is_empty() {
            return Err(Error::config("at least one quasi-identifier is required"));
        }
        let mut qi_seen = BTreeSet::new();
        for q in &self.qi {
            if !seen.contains(q.as_str()) {
                return Err(Error::config(format!("unknown quasi-identifier `{q}`")));
            }
            if !qi_seen.insert(q.as_str()) {
                return Err(Error::config(format!("quasi-identifier `{q}` listed twice")));
            }
        }
        if !seen.contains(self.sa.as_str()) {
            return Err(Error::config(format!("unknown sensitive attribute `{}`", self.sa)));
        }
        if qi_seen.contains(self.sa.as_str()) {
            return Err(Error::config(format!(
                "sensitive attribute `{}` is also a quasi-identifier",
                self.sa
            )));
        }
        for (attr, bounds) in &self.buckets {
            if !seen.contains(attr.as_str()) {
                return Err(Error::config(format!("buckets for unknown attribute `{attr}`")));
            }
            validate_boundaries(attr, bounds)?;
        }
        Ok(())
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn qi(&self) -> &[String] {
        &self.qi
    }

    pub fn sa(&self) -> &str {
        &self.sa
    }

    pub fn buckets(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.buckets
    }

    /// Number of quasi-identifiers (`m`).
    pub fn m(&self) -> usize {
        self.qi.len()
    }

    pub fn index_of(&self, attr: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == attr)
            .ok_or_else(|| Error::config(format!("unknown attribute `{attr}`")))
    }

    pub fn qi_indices(&self) -> Vec<usize> {
        self.qi
            .iter()
            .map(|q| self.index_of(q).expect("validated"))
            .collect()
    }

    pub fn sa_index(&self) -> usize {
        self.index_of(&self.sa).expect("validated")
    }

    /// Same attributes and buckets with a different sensitive attribute and QI list.
    pub fn retarget(&self, qi: Vec<String>, sa: impl Into<String>) -> Result<Schema> {
        Schema::new(self.attributes.clone(), qi, sa, self.buckets.clone())
    }
}

fn validate_boundaries(attr: &str, bounds: &[i64]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::config(format!("empty bucket list for `{attr}`")));
    }
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "bucket boundaries for `{attr}` must be strictly increasing"
        )));
    }
    Ok(())
}

/// A table of categorical records conforming to a [`Schema`].
///
/// Each row carries a stable id (its position in the source file) so that
/// derived tables can be related back to their origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Schema,
    ids: Vec<usize>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self> {
        let ids = (0..rows.len()).collect();
        Table::with_ids(schema, ids, rows)
    }

    pub fn with_ids(schema: Schema, ids: Vec<usize>, rows: Vec<Vec<Value>>) -> Result<Self> {
        let width = schema.attributes.len();
        if ids.len() != rows.len() {
            return Err(Error::config("row id count does not match row count"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Data {
                row: bad,
                attribute: String::new(),
                message: format!("expected {width} values, found {}", rows[bad].len()),
            });
        }
        Ok(Table { schema, ids, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn value(&self, row: usize, attr: &str) -> Result<&Value> {
        let col = self.schema.index_of(attr)?;
        Ok(&self.rows[row][col])
    }

    pub fn column(&self, attr: &str) -> Result<impl Iterator<Item = &Value>> {
        let col = self.schema.index_of(attr)?;
        Ok(self.rows.iter().map(move |r| &r[col]))
    }

    pub fn sa_values(&self) -> impl Iterator<Item = &Value> {
        let col = self.schema.sa_index();
        self.rows.iter().map(move |r| &r[col])
    }

    /// Same rows under a different QI/SA designation.
    pub fn with_schema(&self, schema: Schema) -> Result<Table> {
        if schema.attributes != self.schema.attributes {
            return Err(Error::config("retargeted schema must keep the attribute list"));
        }
        Ok(Table {
            schema,
            ids: self.ids.clone(),
            rows: self.rows.clone(),
        })
    }

    /// Rows at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            rows: positions.iter().map(|&p| self.rows[p].clone()).collect(),
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Table {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Applies every bucket specification in the schema.
    pub fn apply_buckets(&self) -> Result<Table> {
        let mut out = self.clone();
        for (attr, bounds) in self.schema.buckets.clone() {
            out = bucketize(&out, &attr, &bounds)?;
        }
        Ok(out)
    }
}

/// Parsing options for delimited input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    /// First non-comment line names the columns.
    pub header: bool,
    pub delimiter: char,
    pub missing_token: String,
    /// Lines starting with this character are skipped.
    pub comment: Option<char>,
    /// Suffix removed from every field, e.g. the trailing `.` on labels in the
    /// UCI Adult test partition.
    pub strip_suffix: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            header: false,
            delimiter: ',',
            missing_token: "?".to_string(),
            comment: None,
            strip_suffix: None,
        }
    }
}

/// Reads a delimited file into a [`Table`].
///
/// Without a header each record must have exactly one field per schema
/// attribute. With a header, schema attributes are looked up by column name
/// and unrelated columns are ignored.
pub fn load_csv(path: &Path, schema: &Schema, opts: &CsvOptions) -> Result<Table> {
    schema.validate()?;
    if !opts.delimiter.is_ascii() {
        return Err(Error::config("delimiter must be an ASCII character"));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut builder = csv::ReaderBuilder::new();
    builder
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(opts.delimiter as u8);
    if let Some(c) = opts.comment {
        if !c.is_ascii() {
            return Err(Error::config("comment marker must be an ASCII character"));
        }
        builder.comment(Some(c as u8));
    }
    let mut reader = builder.from_reader(file);

    let mut records = reader.records();
    let width;
    let columns: Vec<usize>;
    if opts.header {
        let Some(first) = records.next() else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "missing header line".into(),
            });
        };
        let header = first?;
        width = header.len();
        let names: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
        columns = schema
            .attributes
            .iter()
            .map(|a| {
                names
                    .get(a.as_str())
                    .copied()
                    .ok_or_else(|| Error::config(format!("attribute `{a}` not found in header of {}", path.display())))
            })
            .collect::<Result<_>>()?;
    } else {
        width = schema.attributes.len();
        columns = (0..width).collect();
    }

    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let row = columns
            .iter()
            .map(|&c| parse_cell(&rec[c], opts))
            .collect();
        rows.push(row);
    }
    Table::new(schema.clone(), rows)
}

fn parse_cell(raw: &str, opts: &CsvOptions) -> Value {
    let mut s = raw;
    if let Some(suffix) = &opts.strip_suffix {
        s = s.strip_suffix(suffix.as_str()).unwrap_or(s);
    }
    if s == opts.missing_token {
        Value::Missing
    } else {
        Value::Known(s.to_string())
    }
}

/// Rows whose sensitive value is present. QI cells may still be missing.
pub fn drop_missing_sa(table: &Table) -> Table {
    let sa = table.schema.sa_index();
    let keep: Vec<usize> = (0..table.len())
        .filter(|&r| !table.rows[r][sa].is_missing())
        .collect();
    table.select(&keep)
}

/// Label of the bucket holding `x` for the given integer boundaries.
///
/// Boundaries `b0 < b1 < ... < bk` give the buckets `[0-b0]`,
/// `[b0+1-b1]`, ..., `bk+`. Values at or below `b0` land in the first bucket.
pub fn bucket_label(x: f64, bounds: &[i64]) -> String {
    match bounds.iter().position(|&b| x <= b as f64) {
        Some(0) => format!("[0-{}]", bounds[0]),
        Some(k) => format!("[{}-{}]", bounds[k - 1] + 1, bounds[k]),
        None => format!("{}+", bounds[bounds.len() - 1]),
    }
}

/// Replaces numeric values of `attr` by the label of their bucket.
pub fn bucketize(table: &Table, attr: &str, bounds: &[i64]) -> Result<Table> {
    validate_boundaries(attr, bounds)?;
    let col = table.schema.index_of(attr)?;
    let mut rows = table.rows.clone();
    for (r, row) in rows.iter_mut().enumerate() {
        if let Value::Known(s) = &row[col] {
            let x: f64 = s.parse().map_err(|_| Error::Data {
                row: table.ids[r],
                attribute: attr.to_string(),
                message: format!("`{s}` is not numeric"),
            })?;
            if !x.is_finite() {
                return Err(Error::Data {
                    row: table.ids[r],
                    attribute: attr.to_string(),
                    message: format!("`{s}` is not finite"),
                });
            }
            row[col] = Value::Known(bucket_label(x, bounds));
        }
    }
    Ok(Table {
        schema: table.schema.clone(),
        ids: table.ids.clone(),
        rows,
    })
}

/// Seeded random partition into `(train, test)`.
///
/// The test part holds `round(n * test_fraction)` rows. Both parts keep the
/// input row order.
pub fn split_train_test(table: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} outside [0, 1]"
        )));
    }
    let n = table.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::stream(seed, seeding::tag::SPLIT, 0);
    order.shuffle(&mut rng);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((table.select(&train), table.select(&test)))
}

/// Sorted distinct values of `attr`, including `Missing` if present.
pub fn attribute_domain(table: &Table, attr: &str) -> Result<Vec<Value>> {
    let set: BTreeSet<&Value> = table.column(attr)?.collect();
    Ok(set.into_iter().cloned().collect())
}

/// Index of one attribute's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    values: Vec<Value>,
    index: HashMap<Value, u32>,
}

impl Domain {
    pub fn new(mut values: Vec<Value>) -> Self {
        values.sort();
        values.dedup();
        let index = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        Domain { values, index }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn code(&self, v: &Value) -> Option<u32> {
        self.index.get(v).copied()
    }

    pub fn missing_code(&self) -> Option<u32> {
        self.code(&Value::Missing)
    }
}

/// Domains of every quasi-identifier and of the sensitive attribute.
///
/// Fixed from a training table; they determine the keys of the count workload.
#[derive(Clone, Debug, PartialEq)]
pub struct Domains {
    qi_names: Vec<String>,
    sa_name: String,
    qi: Vec<Domain>,
    sa: Domain,
}

/// Code for a QI value that is outside its domain.
pub const UNSEEN: u32 = u32::MAX;

impl Domains {
    pub fn from_table(table: &Table) -> Result<Self> {
        let schema = table.schema();
        let qi = schema
            .qi()
            .iter()
            .map(|q| attribute_domain(table, q).map(Domain::new))
            .collect::<Result<Vec<_>>>()?;
        let sa = Domain::new(attribute_domain(table, schema.sa())?);
        Ok(Domains {
            qi_names: schema.qi().to_vec(),
            sa_name: schema.sa().to_string(),
            qi,
            sa,
        })
    }

    pub fn from_parts(
        qi_names: Vec<String>,
        qi: Vec<Vec<Value>>,
        sa_name: impl Into<String>,
        sa: Vec<Value>,
    ) -> Result<Self> {
        if qi_names.len() != qi.len() {
            return Err(Error::config("one domain per quasi-identifier is required"));
        }
        Ok(Domains {
            qi_names,
            sa_name: sa_name.into(),
            qi: qi.into_iter().map(Domain::new).collect(),
            sa: Domain::new(sa),
        })
    }

    pub fn m(&self) -> usize {
        self.qi.len()
    }

    pub fn qi(&self, i: usize) -> &Domain {
        &self.qi[i]
    }

    pub fn qi_domains(&self) -> &[Domain] {
        &self.qi
    }

    pub fn qi_names(&self) -> &[String] {
        &self.qi_names
    }

    pub fn sa(&self) -> &Domain {
        &self.sa
    }

    pub fn sa_name(&self) -> &str {
        &self.sa_name
    }

    /// True when `code` for attribute `i` carries evidence (present and not missing).
    pub fn is_evidence(&self, i: usize, code: u32) -> bool {
        code != UNSEEN && Some(code) != self.qi[i].missing_code()
    }

    /// Encodes the QI part and SA of every row of `table`.
    pub fn encode(&self, table: &Table) -> Result<EncodedTable> {
        let schema = table.schema();
        let cols: Vec<usize> = self
            .qi_names
            .iter()
            .map(|q| schema.index_of(q))
            .collect::<Result<_>>()?;
        let sa_col = schema.index_of(&self.sa_name)?;
        let m = cols.len();
        let mut qi = Vec::with_capacity(table.len() * m);
        let mut sa = Vec::with_capacity(table.len());
        for row in table.rows() {
            for (i, &c) in cols.iter().enumerate() {
                qi.push(self.qi[i].code(&row[c]).unwrap_or(UNSEEN));
            }
            sa.push(self.sa.code(&row[sa_col]));
        }
        Ok(EncodedTable { m, qi, sa })
    }

    /// Encodes a QI record given as values in QI order.
    pub fn encode_qi(&self, values: &[Value]) -> Vec<u32> {
        values
            .iter()
            .zip(&self.qi)
            .map(|(v, d)| d.code(v).unwrap_or(UNSEEN))
            .collect()
    }
}

/// Rows as domain codes: `m` QI codes per row plus an optional SA code.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTable {
    m: usize,
    qi: Vec<u32>,
    sa: Vec<Option<u32>>,
}

impl EncodedTable {
    pub fn new(m: usize, qi: Vec<u32>, sa: Vec<Option<u32>>) -> Self {
        assert_eq!(qi.len(), m * sa.len());
        EncodedTable { m, qi, sa }
    }

    pub fn len(&self) -> usize {
        self.sa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sa.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn qi(&self, row: usize) -> &[u32] {
        &self.qi[row * self.m..(row + 1) * self.m]
    }

    pub fn sa(&self, row: usize) -> Option<u32> {
        self.sa[row]
    }

    pub fn sa_codes(&self) -> &[Option<u32>] {
        &self.sa
    }
}

/// On-disk description of a dataset: file locations, parse options and schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Separate withheld partition. When absent the training file is split.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(flatten)]
    pub csv: CsvOptions,
    pub attributes: Vec<String>,
    pub qi: Vec<String>,
    pub sa: String,
    #[serde(default)]
    pub buckets: BTreeMap<String, Vec<i64>>,
}

/// Default withheld fraction when no separate test file is configured.
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;

impl DatasetConfig {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.attributes.clone(),
            self.qi.clone(),
            self.sa.clone(),
            self.buckets.clone(),
        )
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.path.is_relative() {
            self.path = base.join(&self.path);
        }
        if let Some(t) = &self.test_path {
            if t.is_relative() {
                self.test_path = Some(base.join(t));
            }
        }
    }

    /// Loads, buckets and removes rows with a missing sensitive value.
    pub fn load_train(&self) -> Result<Table> {
        self.load_file(&self.path)
    }

    pub fn load_file(&self, path: &Path) -> Result<Table> {
        let schema = self.schema()?;
        let table = load_csv(path, &schema, &self.csv)?;
        Ok(drop_missing_sa(&table.apply_buckets()?))
    }

    /// `(train, test)` either from the two configured files or by a seeded split.
    pub fn load_train_test(&self, seed: u64) -> Result<(Table, Table)> {
        let train = self.load_train()?;
        match &self.test_path {
            Some(p) => Ok((train, self.load_file(p)?)),
            None => split_train_test(
                &train,
                self.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION),
                seed,
            ),
        }
    }
}
