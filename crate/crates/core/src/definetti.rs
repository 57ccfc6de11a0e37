//! The deFinetti attack on Anatomy releases.
//!
//! The attacker does not know which SA value in a group belongs to which QI
//! record, so it keeps a guess: an assignment of the group's SA multiset to
//! its members. The assignment induces a joint count workload and hence a
//! Naive Bayes model (same smoothing and prior as [`crate::classifier::fit`]).
//! Each sweep proposes one random transposition per group and accepts it with
//! probability `min(1, R)` under the model of the previous sweep, where
//!
//! ```text
//! R = prod_i Pr[a_i | s_b] Pr[b_i | s_a] / (Pr[a_i | s_a] Pr[b_i | s_b])
//! ```
//!
//! for swapped members `a` and `b` holding SA values `s_a` and `s_b`. The
//! prior does not appear: a transposition leaves the multiset of SA values in
//! the group, and therefore the product of prior factors, unchanged. Missing
//! QI values contribute no factor, as in the classifier posterior.
//!
//! Three ways of predicting a member's SA value are provided: majority of its
//! recent assignments (`permutation`), the posterior restricted to its
//! group's SA multiset (`group`), and the unrestricted posterior (`open`).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::anatomy::AnatomyRelease;
use crate::classifier::{self, argmax, NBModel};
use crate::dataset::{Domains, EncodedTable, Value};
use crate::error::{Error, Result};
use crate::workload::{integer_counts, CountWorkload};

/// Default number of sweeps.
pub const DEFAULT_ITERATIONS: usize = 1000;
/// Default assignment history window.
pub const DEFAULT_WINDOW: usize = 100;

/// An Anatomy release encoded against its own published domains.
#[derive(Clone, Debug)]
pub struct EncodedRelease {
    domains: Arc<Domains>,
    /// QI codes of every member, groups laid out consecutively.
    qi: EncodedTable,
    /// `group_start[g]..group_start[g + 1]` are the positions of group `g`.
    group_start: Vec<usize>,
    /// SA multiset codes per position (sorted within each group).
    group_sa: Vec<u32>,
    row_ids: Vec<usize>,
    position: HashMap<usize, usize>,
    truth: Option<Vec<u32>>,
}

impl EncodedRelease {
    pub fn new(release: &AnatomyRelease) -> Result<Self> {
        let m = release.qi_names().len();
        let mut qi_values: Vec<Vec<Value>> = vec![Vec::new(); m];
        let mut sa_values: Vec<Value> = Vec::new();
        for g in release.groups() {
            for rec in g.qi() {
                for (i, v) in rec.iter().enumerate() {
                    qi_values[i].push(v.clone());
                }
            }
            sa_values.extend_from_slice(g.sa());
        }
        let domains = Arc::new(Domains::from_parts(
            release.qi_names().to_vec(),
            qi_values,
            release.sa_name(),
            sa_values,
        )?);
        Self::with_domains(release, domains)
    }

    /// Encodes against caller-supplied domains, which must cover every
    /// published value.
    pub fn with_domains(release: &AnatomyRelease, domains: Arc<Domains>) -> Result<Self> {
        let m = domains.m();
        if release.qi_names() != domains.qi_names() {
            return Err(Error::DomainMismatch("QI attributes differ from the domains".into()));
        }
        let mut qi = Vec::with_capacity(release.n() * m);
        let mut group_start = vec![0];
        let mut group_sa = Vec::with_capacity(release.n());
        let mut row_ids = Vec::with_capacity(release.n());
        let mut truth = release.has_truth().then(Vec::new);
        let sa_code = |v: &Value| {
            domains
                .sa()
                .code(v)
                .ok_or_else(|| Error::DomainMismatch(format!("SA value `{v}` outside the domain")))
        };
        for g in release.groups() {
            for rec in g.qi() {
                for (i, v) in rec.iter().enumerate() {
                    qi.push(
                        domains
                            .qi(i)
                            .code(v)
                            .ok_or_else(|| Error::DomainMismatch(format!("QI value `{v}` outside the domain")))?,
                    );
                }
            }
            for v in g.sa() {
                group_sa.push(sa_code(v)?);
            }
            if let (Some(t), Some(gt)) = (&mut truth, g.truth()) {
                for v in gt {
                    t.push(sa_code(v)?);
                }
            }
            row_ids.extend_from_slice(g.row_ids());
            group_start.push(row_ids.len());
        }
        let position = row_ids.iter().enumerate().map(|(p, &r)| (r, p)).collect();
        let sa_placeholder = vec![None; row_ids.len()];
        Ok(EncodedRelease {
            qi: EncodedTable::new(m, qi, sa_placeholder),
            domains,
            group_start,
            group_sa,
            row_ids,
            position,
            truth,
        })
    }

    pub fn domains(&self) -> &Arc<Domains> {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn groups(&self) -> usize {
        self.group_start.len() - 1
    }

    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.group_start[g]..self.group_start[g + 1]
    }

    /// Group holding position `pos`.
    pub fn group_of(&self, pos: usize) -> usize {
        self.group_start.partition_point(|&s| s <= pos) - 1
    }

    pub fn group_sa(&self, g: usize) -> &[u32] {
        &self.group_sa[self.group_range(g)]
    }

    pub fn qi(&self, pos: usize) -> &[u32] {
        self.qi.qi(pos)
    }

    pub fn row_id(&self, pos: usize) -> usize {
        self.row_ids[pos]
    }

    pub fn position(&self, row_id: usize) -> Option<usize> {
        self.position.get(&row_id).copied()
    }

    /// True SA codes per position, when the release carries them.
    pub fn truth(&self) -> Option<&[u32]> {
        self.truth.as_deref()
    }
}

/// Current guess of the within-group pairing and the counts it induces.
#[derive(Clone, Debug)]
pub struct AssignmentState {
    release: Arc<EncodedRelease>,
    /// SA code assigned to each position.
    assign: Vec<u32>,
    counts: Vec<u32>,
    offsets: Vec<usize>,
}

impl AssignmentState {
    /// State with an explicit assignment, checked against the published multisets.
    pub fn from_assignment(release: Arc<EncodedRelease>, assign: Vec<u32>) -> Result<Self> {
        if assign.len() != release.len() {
            return Err(Error::config("assignment length differs from release size"));
        }
        for g in 0..release.groups() {
            let mut got = assign[release.group_range(g)].to_vec();
            got.sort_unstable();
            let mut want = release.group_sa(g).to_vec();
            want.sort_unstable();
            if got != want {
                return Err(Error::config(format!(
                    "assignment of group {g} is not a permutation of its SA multiset"
                )));
            }
        }
        let counts = integer_counts(release.domains(), &release.qi, |r| Some(assign[r]));
        let k = release.domains().sa().len();
        let mut offsets = Vec::new();
        let mut total = 0;
        for d in release.domains().qi_domains() {
            offsets.push(total);
            total += d.len() * k;
        }
        Ok(AssignmentState {
            release,
            assign,
            counts,
            offsets,
        })
    }

    pub fn release(&self) -> &Arc<EncodedRelease> {
        &self.release
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assign
    }

    /// Incrementally maintained counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Counts recomputed from scratch.
    pub fn recount(&self) -> Vec<u32> {
        integer_counts(self.release.domains(), &self.release.qi, |r| Some(self.assign[r]))
    }

    pub fn workload(&self) -> CountWorkload {
        CountWorkload::from_integer_counts(self.release.domains().clone(), &self.counts)
            .expect("layout matches domains")
    }

    /// Each group's assigned values form its published SA multiset.
    pub fn is_consistent(&self) -> bool {
        (0..self.release.groups()).all(|g| {
            let mut got = self.assign[self.release.group_range(g)].to_vec();
            got.sort_unstable();
            got == self.release.group_sa(g)
        })
    }

    #[inline]
    fn move_row(&mut self, pos: usize, from: u32, to: u32) {
        let k = self.release.domains().sa().len();
        let qi = self.release.qi.qi(pos);
        for (i, &v) in qi.iter().enumerate() {
            let base = self.offsets[i] + v as usize * k;
            self.counts[base + from as usize] -= 1;
            self.counts[base + to as usize] += 1;
        }
    }

    /// Exchanges the SA values of two positions.
    pub fn swap(&mut self, a: usize, b: usize) {
        let (sa, sb) = (self.assign[a], self.assign[b]);
        if sa == sb {
            return;
        }
        self.move_row(a, sa, sb);
        self.move_row(b, sb, sa);
        self.assign.swap(a, b);
    }
}

/// Uniformly random pairing within every group.
pub fn init<R: Rng + ?Sized>(release: Arc<EncodedRelease>, rng: &mut R) -> AssignmentState {
    let mut assign = release.group_sa.clone();
    for g in 0..release.groups() {
        assign[release.group_range(g)].shuffle(rng);
    }
    AssignmentState::from_assignment(release, assign).expect("a shuffle is a permutation")
}

/// Naive Bayes model induced by the current assignment.
pub fn estimate(state: &AssignmentState) -> NBModel {
    classifier::fit(&state.workload()).expect("release has a non-empty SA domain")
}

/// Log of the Metropolis ratio for swapping the SA values of positions `a` and `b`.
pub fn swap_log_ratio(model: &NBModel, state: &AssignmentState, a: usize, b: usize) -> f64 {
    let (sa, sb) = (state.assign[a] as usize, state.assign[b] as usize);
    if sa == sb {
        return 0.0;
    }
    let rel = &state.release;
    let (qa, qb) = (rel.qi(a), rel.qi(b));
    model.log_evidence(qa, sb) + model.log_evidence(qb, sa) - model.log_evidence(qa, sa) - model.log_evidence(qb, sb)
}

/// One Metropolis sweep: one proposed transposition per group of size two or
/// more, judged under the frozen `model`. Returns how many proposals changed
/// the state.
pub fn sweep<R: Rng + ?Sized>(state: &mut AssignmentState, model: &NBModel, rng: &mut R) -> usize {
    let mut accepted = 0;
    for g in 0..state.release.groups() {
        let range = state.release.group_range(g);
        let size = range.len();
        if size < 2 {
            continue;
        }
        let a = rng.random_range(0..size);
        let mut b = rng.random_range(0..size - 1);
        if b >= a {
            b += 1;
        }
        let (a, b) = (range.start + a, range.start + b);
        if state.assign[a] == state.assign[b] {
            continue;
        }
        let log_r = swap_log_ratio(model, state, a, b);
        if log_r >= 0.0 || rng.random::<f64>().ln() < log_r {
            state.swap(a, b);
            accepted += 1;
        }
    }
    accepted
}

/// `sum_(i,v,s) |Pr_a[v|s] Pr_a[s] - Pr_b[v|s] Pr_b[s]|`.
pub fn l1_convergence(a: &NBModel, b: &NBModel) -> Result<f64> {
    let (da, db) = (a.domains(), b.domains());
    if !Arc::ptr_eq(da, db) && da != db {
        return Err(Error::DomainMismatch("models are over different domains".into()));
    }
    let k = a.sa_len();
    let mut total = 0.0;
    for i in 0..da.m() {
        for v in 0..da.qi(i).len() {
            for s in 0..k {
                total += (a.joint(i, v, s) - b.joint(i, v, s)).abs();
            }
        }
    }
    Ok(total)
}

/// What a sampler run leaves behind besides the final model and state.
#[derive(Clone, Debug)]
pub struct SamplerTrace {
    n: usize,
    window: usize,
    /// Ring of assignments, `window` slots of `n` codes each.
    history: Vec<u32>,
    recorded: usize,
    /// L1 distance between consecutive models, one per sweep.
    pub l1: Vec<f64>,
    /// Accepted state-changing swaps per sweep.
    pub accepted: Vec<usize>,
}

impl SamplerTrace {
    fn new(n: usize, window: usize) -> Self {
        SamplerTrace {
            n,
            window,
            history: vec![0; n * window],
            recorded: 0,
            l1: Vec::new(),
            accepted: Vec::new(),
        }
    }

    fn record(&mut self, assign: &[u32]) {
        if self.window == 0 {
            return;
        }
        let slot = self.recorded % self.window;
        self.history[slot * self.n..(slot + 1) * self.n].copy_from_slice(assign);
        self.recorded += 1;
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of assignments currently held per row.
    pub fn history_len(&self) -> usize {
        self.recorded.min(self.window)
    }

    /// Recorded assignments of `pos`, oldest first.
    pub fn history(&self, pos: usize) -> Vec<u32> {
        let len = self.history_len();
        let first = self.recorded - len;
        (first..self.recorded)
            .map(|t| self.history[(t % self.window) * self.n + pos])
            .collect()
    }
}

/// Alternates [`estimate`] and [`sweep`] for `iterations` rounds.
///
/// The assignment after each of the last `window` sweeps is kept for
/// [`predict_permutation`]. The returned model is estimated from the final
/// state.
pub fn run<R: Rng + ?Sized>(
    release: Arc<EncodedRelease>,
    iterations: usize,
    window: usize,
    rng: &mut R,
) -> Result<(NBModel, AssignmentState, SamplerTrace)> {
    if iterations == 0 {
        return Err(Error::config("iterations must be at least 1"));
    }
    let window = window.min(iterations);
    let n = release.len();
    let mut state = init(release, rng);
    let mut trace = SamplerTrace::new(n, window);
    let mut model = estimate(&state);
    for t in 0..iterations {
        let accepted = sweep(&mut state, &model, rng);
        let next = estimate(&state);
        trace.l1.push(l1_convergence(&model, &next)?);
        trace.accepted.push(accepted);
        model = next;
        if t + window >= iterations {
            trace.record(&state.assign);
        }
    }
    Ok((model, state, trace))
}

/// Majority SA value in the recorded history of `pos`; ties go to the value
/// assigned most recently. Falls back to the current assignment when nothing
/// was recorded.
pub fn predict_permutation(trace: &SamplerTrace, state: &AssignmentState, pos: usize) -> u32 {
    let hist = trace.history(pos);
    if hist.is_empty() {
        return state.assign[pos];
    }
    let mut tally: Vec<(u32, usize)> = Vec::new();
    for &s in hist.iter().rev() {
        match tally.iter_mut().find(|(v, _)| *v == s) {
            Some((_, c)) => *c += 1,
            None => tally.push((s, 1)),
        }
    }
    // tally is ordered by recency; the first maximum wins.
    let mut best = tally[0];
    for &(v, c) in &tally[1..] {
        if c > best.1 {
            best = (v, c);
        }
    }
    best.0
}

/// Posterior argmax restricted to the SA multiset of `pos`'s group.
pub fn predict_group(model: &NBModel, release: &EncodedRelease, pos: usize) -> u32 {
    let g = release.group_of(pos);
    let post = classifier::posterior_restricted(model, release.qi(pos), release.group_sa(g));
    argmax(&post) as u32
}

/// Unrestricted classifier prediction; the group structure is not consulted.
pub fn predict_open(model: &NBModel, qi: &[u32]) -> u32 {
    classifier::predict(model, qi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Permutation,
    Group,
    Open,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Permutation, Method::Group, Method::Open];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Permutation => "permutation",
            Method::Group => "group",
            Method::Open => "open",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" => Ok(Method::Permutation),
            "group" => Ok(Method::Group),
            "open" => Ok(Method::Open),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

/// Predictions of `method` for every position.
pub fn predict_all(
    method: Method,
    model: &NBModel,
    state: &AssignmentState,
    trace: &SamplerTrace,
) -> Vec<u32> {
    let rel = state.release();
    (0..rel.len())
        .map(|pos| match method {
            Method::Permutation => predict_permutation(trace, state, pos),
            Method::Group => predict_group(model, rel, pos),
            Method::Open => predict_open(model, rel.qi(pos)),
        })
        .collect()
}
