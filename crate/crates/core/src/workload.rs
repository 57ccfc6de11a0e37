//! The joint count workload `(QI attribute i, value v, SA value s) -> count`.
//!
//! There is one entry per combination of a QI attribute, a value from its
//! domain and a sensitive value. No separate SA marginal is part of the
//! workload, so one individual touches exactly `m` entries.

use std::sync::Arc;

use crate::dataset::{Domains, EncodedTable, UNSEEN};
use crate::error::{Error, Result};

/// Provenance of the numbers held by a [`CountWorkload`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountState {
    Exact,
    /// Perturbed, possibly negative.
    Noisy,
    /// Post-processed to be non-negative.
    Clipped,
}

/// Flat storage for the joint count workload of a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct CountWorkload {
    domains: Arc<Domains>,
    offsets: Vec<usize>,
    values: Vec<f64>,
    state: CountState,
}

impl CountWorkload {
    pub fn zeros(domains: Arc<Domains>) -> Self {
        let k = domains.sa().len();
        let mut offsets = Vec::with_capacity(domains.m() + 1);
        let mut total = 0;
        for d in domains.qi_domains() {
            offsets.push(total);
            total += d.len() * k;
        }
        offsets.push(total);
        CountWorkload {
            domains,
            offsets,
            values: vec![0.0; total],
            state: CountState::Exact,
        }
    }

    pub fn domains(&self) -> &Arc<Domains> {
        &self.domains
    }

    pub fn state(&self) -> CountState {
        self.state
    }

    pub(crate) fn set_state(&mut self, state: CountState) {
        self.state = state;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, v: usize, s: usize) -> usize {
        self.offsets[i] + v * self.domains.sa().len() + s
    }

    #[inline]
    pub fn get(&self, i: usize, v: usize, s: usize) -> f64 {
        self.values[self.index(i, v, s)]
    }

    pub fn set(&mut self, i: usize, v: usize, s: usize, x: f64) {
        let k = self.index(i, v, s);
        self.values[k] = x;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Block of attribute `i`: `|domain(i)| * |SA|` entries, value-major.
    pub fn attribute_block(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Builds a workload from integer counts laid out like [`CountWorkload::values`].
    pub fn from_integer_counts(domains: Arc<Domains>, counts: &[u32]) -> Result<Self> {
        let mut w = CountWorkload::zeros(domains);
        if counts.len() != w.values.len() {
            return Err(Error::DomainMismatch(format!(
                "expected {} counts, got {}",
                w.values.len(),
                counts.len()
            )));
        }
        for (dst, &c) in w.values.iter_mut().zip(counts) {
            *dst = c as f64;
        }
        Ok(w)
    }
}

/// Integer layout offsets shared with incremental count maintenance.
pub(crate) fn integer_counts(domains: &Domains, enc: &EncodedTable, sa_of: impl Fn(usize) -> Option<u32>) -> Vec<u32> {
    let k = domains.sa().len();
    let mut offsets = Vec::with_capacity(domains.m());
    let mut total = 0;
    for d in domains.qi_domains() {
        offsets.push(total);
        total += d.len() * k;
    }
    let mut counts = vec![0u32; total];
    for r in 0..enc.len() {
        let Some(s) = sa_of(r) else { continue };
        for (i, &v) in enc.qi(r).iter().enumerate() {
            if v != UNSEEN {
                counts[offsets[i] + v as usize * k + s as usize] += 1;
            }
        }
    }
    counts
}
