//! Differentially private release of count vectors.
//!
//! A workload with L1 sensitivity `s` is released by adding independent noise
//! to every entry, either two-sided geometric with `alpha = exp(-eps / s)` or
//! Laplace with scale `b = s / eps`.
//!
//! For the geometric mechanism the privacy guarantee can be checked by direct
//! enumeration of pmf ratios, see [`verify_dp_ratio`]. The Laplace density
//! satisfies `p(x) / p(x - d) = exp((|x - d| - |x|) / b) <= exp(|d| / b)`, so
//! a total shift of at most `s` gives a ratio of at most `exp(eps)`; that
//! identity is not enumerated here.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::workload::{CountState, CountWorkload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    #[default]
    Geometric,
    Laplace,
    None,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Geometric => "geometric",
            Mechanism::Laplace => "laplace",
            Mechanism::None => "none",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(Mechanism::Geometric),
            "laplace" => Ok(Mechanism::Laplace),
            "none" => Ok(Mechanism::None),
            other => Err(Error::config(format!("unknown mechanism `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    sensitivity: u32,
    mechanism: Mechanism,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, sensitivity: u32, mechanism: Mechanism) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
        }
        if sensitivity == 0 {
            return Err(Error::config("sensitivity must be at least 1"));
        }
        Ok(PrivacyParams {
            epsilon,
            sensitivity,
            mechanism,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> u32 {
        self.sensitivity
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseScale {
    /// Two-sided geometric parameter `alpha`.
    Geometric(f64),
    /// Laplace scale `b`.
    Laplace(f64),
    None,
}

pub fn noise_scale(params: &PrivacyParams) -> NoiseScale {
    let s = params.sensitivity as f64;
    match params.mechanism {
        Mechanism::Geometric => NoiseScale::Geometric((-params.epsilon / s).exp()),
        Mechanism::Laplace => NoiseScale::Laplace(s / params.epsilon),
        Mechanism::None => NoiseScale::None,
    }
}

/// `((1 - alpha) / (1 + alpha)) * alpha^|z|`.
pub fn geometric_pmf(alpha: f64, z: i64) -> f64 {
    debug_assert!((0.0..1.0).contains(&alpha));
    let k = z.unsigned_abs();
    let norm = (1.0 - alpha) / (1.0 + alpha);
    if k == 0 {
        norm
    } else {
        norm * alpha.powf(k as f64)
    }
}

/// Natural log of [`geometric_pmf`]; `-inf` where the pmf is zero.
pub fn geometric_log_pmf(alpha: f64, z: i64) -> f64 {
    let k = z.unsigned_abs();
    let norm = ((1.0 - alpha) / (1.0 + alpha)).ln();
    if k == 0 {
        norm
    } else {
        norm + k as f64 * alpha.ln()
    }
}

/// One-sided geometric count of failures with success probability `1 - alpha`.
fn one_sided_geometric<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> i64 {
    if alpha <= 0.0 {
        return 0;
    }
    // u in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / alpha.ln()).floor() as i64
}

/// Two-sided geometric draw as the difference of two one-sided draws.
pub fn sample_geometric<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> i64 {
    one_sided_geometric(alpha, rng) - one_sided_geometric(alpha, rng)
}

/// Laplace draw by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // u in (-1/2, 1/2]
    let u = 0.5 - rng.random::<f64>();
    let mag = -(1.0 - 2.0 * u.abs()).ln() * scale;
    if u < 0.0 {
        -mag
    } else {
        mag
    }
}

pub fn sample_noise<R: Rng + ?Sized>(params: &PrivacyParams, rng: &mut R) -> f64 {
    match noise_scale(params) {
        NoiseScale::Geometric(alpha) => sample_geometric(alpha, rng) as f64,
        NoiseScale::Laplace(b) => sample_laplace(b, rng),
        NoiseScale::None => 0.0,
    }
}

/// Perturbs every entry of `exact` with an independent noise draw.
pub fn release<R: Rng + ?Sized>(exact: &CountWorkload, params: &PrivacyParams, rng: &mut R) -> CountWorkload {
    let mut out = exact.clone();
    if params.mechanism != Mechanism::None {
        for x in out.values_mut() {
            *x += sample_noise(params, rng);
        }
    }
    out.set_state(CountState::Noisy);
    out
}

/// [`release`] with a stream derived from `seed`.
pub fn release_seeded(exact: &CountWorkload, params: &PrivacyParams, seed: u64) -> CountWorkload {
    let mut rng = seeding::stream(seed, seeding::tag::NOISE, 0);
    release(exact, params, &mut rng)
}

/// Raises negative entries to zero. Values are not rounded.
pub fn clip_nonnegative(counts: &CountWorkload) -> CountWorkload {
    let mut out = counts.clone();
    for x in out.values_mut() {
        *x = x.max(0.0);
    }
    out.set_state(CountState::Clipped);
    out
}

/// Largest output probability ratio between neighbouring inputs.
///
/// Neighbouring answer vectors differ by integer shifts `d_j` with
/// `sum |d_j| <= max_shift`. For every single-coordinate shift `d` the ratio
/// `pmf(z) / pmf(z - d)` is maximised over `|z| <= z_range`; the best split of
/// the total shift over coordinates is then found by a knapsack over those
/// per-coordinate maxima (ratios of independent coordinates multiply).
pub fn verify_dp_ratio(params: &PrivacyParams, max_shift: u32, z_range: u32) -> Result<f64> {
    let alpha = match noise_scale(params) {
        NoiseScale::Geometric(a) => a,
        NoiseScale::Laplace(_) => {
            return Err(Error::Unsupported(
                "ratio enumeration is only defined for the geometric mechanism".into(),
            ))
        }
        NoiseScale::None => {
            return Err(Error::Unsupported("no noise: mechanism is not private".into()))
        }
    };
    if max_shift > params.sensitivity {
        return Err(Error::config(format!(
            "shift {max_shift} exceeds sensitivity {}",
            params.sensitivity
        )));
    }
    let zr = z_range as i64;
    // Per-coordinate best log-ratio for a shift of exactly d.
    let single: Vec<f64> = (0..=max_shift as i64)
        .map(|d| {
            (-zr..=zr)
                .flat_map(|z| [d, -d].map(|dd| geometric_log_pmf(alpha, z) - geometric_log_pmf(alpha, z - dd)))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut best = vec![0.0f64; max_shift as usize + 1];
    for t in 1..=max_shift as usize {
        let mut b = best[t - 1];
        for d in 1..=t {
            b = b.max(single[d] + best[t - d]);
        }
        best[t] = b;
    }
    Ok(best[max_shift as usize].exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng;

    fn geo(eps: f64, s: u32) -> PrivacyParams {
        PrivacyParams::new(eps, s, Mechanism::Geometric).unwrap()
    }

    #[test]
    fn scales() {
        match noise_scale(&geo(1.0, 1)) {
            NoiseScale::Geometric(a) => assert!((a - 0.36788).abs() < 1e-5),
            other => panic!("{other:?}"),
        }
        let lap = PrivacyParams::new(1.0, 5, Mechanism::Laplace).unwrap();
        assert_eq!(noise_scale(&lap), NoiseScale::Laplace(5.0));
        match noise_scale(&geo(1e4, 3)) {
            NoiseScale::Geometric(a) => assert!(a < 1e-300),
            other => panic!("{other:?}"),
        }
        let big = PrivacyParams::new(1e9, 3, Mechanism::Laplace).unwrap();
        assert!(matches!(noise_scale(&big), NoiseScale::Laplace(b) if b < 1e-8));
    }

    #[test]
    fn params_guard() {
        assert!(PrivacyParams::new(0.0, 1, Mechanism::Geometric).is_err());
        assert!(PrivacyParams::new(-1.0, 1, Mechanism::Geometric).is_err());
        assert!(PrivacyParams::new(1.0, 0, Mechanism::Geometric).is_err());
        assert!(PrivacyParams::new(f64::NAN, 1, Mechanism::Geometric).is_err());
    }

    #[test]
    fn pmf_values() {
        assert_eq!(geometric_pmf(0.0, 0), 1.0);
        assert_eq!(geometric_pmf(0.0, 3), 0.0);
        assert_eq!(geometric_pmf(0.0, -1), 0.0);
        let a = (-1.0f64).exp();
        assert!((geometric_pmf(a, 0) - 0.46212).abs() < 1e-5);
        let total: f64 = (-50..=50).map(|z| geometric_pmf(0.5, z)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn none_mechanism_adds_nothing() {
        let p = PrivacyParams::new(1.0, 1, Mechanism::None).unwrap();
        let mut r = rng(3);
        assert!((0..100).all(|_| sample_noise(&p, &mut r) == 0.0));
    }

    #[test]
    fn geometric_zero_frequency() {
        let mut r = rng(11);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| sample_geometric(0.5, &mut r) == 0).count();
        assert!((zeros as f64 / n as f64 - 1.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn laplace_mean_near_zero() {
        let mut r = rng(12);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_laplace(2.0, &mut r)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dp_ratio_examples() {
        let r = verify_dp_ratio(&geo(1.0, 1), 1, 40).unwrap();
        assert!((r - std::f64::consts::E).abs() < 1e-9);
        assert!((verify_dp_ratio(&geo(1.0, 1), 0, 40).unwrap() - 1.0).abs() < 1e-15);
        let r = verify_dp_ratio(&geo(0.1, 5), 5, 40).unwrap();
        assert!((r - 0.1f64.exp()).abs() < 1e-12);
        let lap = PrivacyParams::new(1.0, 1, Mechanism::Laplace).unwrap();
        assert!(matches!(verify_dp_ratio(&lap, 1, 40), Err(Error::Unsupported(_))));
        assert!(verify_dp_ratio(&geo(1.0, 2), 3, 40).is_err());
    }

    #[test]
    fn clip_only_raises_negatives() {
        let d = std::sync::Arc::new(
            crate::dataset::Domains::from_parts(
                vec!["a".into()],
                vec![vec![crate::dataset::Value::known("x")]],
                "s",
                vec![
                    crate::dataset::Value::known("0"),
                    crate::dataset::Value::known("1"),
                    crate::dataset::Value::known("2"),
                ],
            )
            .unwrap(),
        );
        let mut w = CountWorkload::zeros(d);
        w.values_mut().copy_from_slice(&[-3.0, 7.5, 2.0]);
        let c = clip_nonnegative(&w);
        assert_eq!(c.values(), &[0.0, 7.5, 2.0]);
        assert_eq!(c.state(), CountState::Clipped);
        assert_eq!(clip_nonnegative(&c).values(), c.values());
    }
}
