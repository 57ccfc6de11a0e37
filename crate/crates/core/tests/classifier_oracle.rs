mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use anonattack::classifier::{
    argmax, exact_counts, fit, high_confidence, posterior, posterior_values, predict,
};
use anonattack::dataset::{Domains, Value};
use anonattack::mechanism::{clip_nonnegative, release, Mechanism, PrivacyParams};
use anonattack::seeding::rng;
use anonattack::workload::CountWorkload;
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i128>;

/// Direct rational evaluation of the smoothed estimators and the posterior.
struct Oracle {
    sa: Vec<String>,
    post: Vec<Vec<Q>>,
}

fn sorted_domain<'a>(cells: impl Iterator<Item = &'a String>) -> Vec<String> {
    // Missing ("?") sorts after every known value.
    let mut known: Vec<String> = cells.cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(p) = known.iter().position(|c| c == "?") {
        let q = known.remove(p);
        known.push(q);
    }
    known
}

fn oracle(m: usize, rows: &[Vec<String>]) -> Oracle {
    let sa = sorted_domain(rows.iter().map(|r| &r[m]));
    let doms: Vec<Vec<String>> = (0..m).map(|i| sorted_domain(rows.iter().map(|r| &r[i]))).collect();
    let count = |i: usize, t: &str, s: &str| rows.iter().filter(|r| r[i] == t && r[m] == s).count() as i128;
    let mut cond: Vec<Vec<Vec<Q>>> = Vec::new();
    let mut mass = vec![Q::from_integer(0); sa.len()];
    for (i, d) in doms.iter().enumerate() {
        let mut per_v = vec![vec![Q::from_integer(0); sa.len()]; d.len()];
        for (si, s) in sa.iter().enumerate() {
            let total: i128 = d.iter().map(|t| 1 + count(i, t, s)).sum();
            mass[si] += Q::from_integer(total);
            for (vi, t) in d.iter().enumerate() {
                per_v[vi][si] = Q::new(1 + count(i, t, s), total);
            }
        }
        cond.push(per_v);
    }
    let mass_total: Q = mass.iter().cloned().sum();
    let prior: Vec<Q> = mass.iter().map(|x| x / mass_total).collect();
    let post = rows
        .iter()
        .map(|r| {
            let w: Vec<Q> = (0..sa.len())
                .map(|si| {
                    let mut p = prior[si];
                    for i in 0..m {
                        if r[i] != "?" {
                            let vi = doms[i].iter().position(|t| *t == r[i]).unwrap();
                            p *= cond[i][vi][si];
                        }
                    }
                    p
                })
                .collect();
            let z: Q = w.iter().cloned().sum();
            w.into_iter().map(|x| x / z).collect()
        })
        .collect();
    Oracle { sa, post }
}

fn to_f64(q: &Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn small_rows() -> impl Strategy<Value = (usize, Vec<Vec<String>>)> {
    (1usize..=3, 1usize..=3, 1usize..=20).prop_flat_map(|(m, k, n)| {
        let qi_cell = prop::sample::select(vec!["a", "b", "c", "?"]);
        let sa_cell = prop::sample::select(["0", "1", "2"][..k].to_vec());
        let row = (prop::collection::vec(qi_cell, m), sa_cell).prop_map(|(q, s)| {
            let mut r: Vec<String> = q.into_iter().map(String::from).collect();
            r.push(s.to_string());
            r
        });
        (Just(m), prop::collection::vec(row, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn posterior_matches_rational_oracle((m, rows) in small_rows()) {
        let t = common::table(m, &rows);
        let model = fit(&exact_counts(&t).unwrap()).unwrap();
        let want = oracle(m, &rows);
        let sa_domain: Vec<String> = model.domains().sa().values().iter().map(|v| v.to_string()).collect();
        prop_assert_eq!(&sa_domain, &want.sa);
        for (r, row) in t.rows().iter().enumerate() {
            let got = posterior_values(&model, &row[..m]);
            for (g, w) in got.iter().zip(&want.post[r]) {
                prop_assert!((g - to_f64(w)).abs() < 1e-12, "row {r}: {g} vs {w}");
            }
            let best = want.post[r].iter().max().unwrap();
            let p = predict(&model, &model.domains().encode_qi(&row[..m])) as usize;
            let ties = want.post[r].iter().filter(|x| *x == best).count();
            if ties == 1 {
                prop_assert_eq!(&want.post[r][p], best);
            }
        }
    }

    #[test]
    fn fitted_models_are_normalized(
        (m, rows) in small_rows(),
        eps in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let t = common::table(m, &rows);
        let exact = exact_counts(&t).unwrap();
        let params = PrivacyParams::new(eps, m as u32, Mechanism::Geometric).unwrap();
        let noisy = clip_nonnegative(&release(&exact, &params, &mut rng(seed)));
        for model in [fit(&exact).unwrap(), fit(&noisy).unwrap()] {
            let d = model.domains().clone();
            for i in 0..d.m() {
                for s in 0..model.sa_len() {
                    let sum: f64 = (0..d.qi(i).len()).map(|v| model.cond(i, v, s)).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                    prop_assert!((0..d.qi(i).len()).all(|v| model.cond(i, v, s) > 0.0));
                }
            }
            prop_assert!((model.prior().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(model.prior().iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn counts_per_attribute_sum_to_n((m, rows) in small_rows()) {
        let t = common::table(m, &rows);
        let w = exact_counts(&t).unwrap();
        for i in 0..m {
            prop_assert_eq!(w.attribute_block(i).iter().sum::<f64>(), rows.len() as f64);
        }
    }

    #[test]
    fn posterior_ignores_attribute_order((m, rows) in small_rows(), rot in 0usize..3) {
        let t = common::table(m, &rows);
        let model = fit(&exact_counts(&t).unwrap()).unwrap();
        let rot = rot % m;
        let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
        let rows_p: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut p: Vec<String> = perm.iter().map(|&i| r[i].clone()).collect();
                p.push(r[m].clone());
                p
            })
            .collect();
        let model_p = fit(&exact_counts(&common::table(m, &rows_p)).unwrap()).unwrap();
        for (r, rp) in t.rows().iter().zip(&rows_p) {
            let a = posterior_values(&model, &r[..m]);
            let vals: Vec<Value> = rp[..m]
                .iter()
                .map(|c| if c == "?" { Value::Missing } else { Value::known(c.as_str()) })
                .collect();
            let b = posterior_values(&model_p, &vals);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_is_posterior_argmax((m, rows) in small_rows()) {
        let t = common::table(m, &rows);
        let model = fit(&exact_counts(&t).unwrap()).unwrap();
        let d = model.domains().clone();
        for r in 0..t.len() {
            let qi = d.encode_qi(&t.rows()[r][..m]);
            let post = posterior(&model, &qi);
            prop_assert_eq!(predict(&model, &qi) as usize, argmax(&post));
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn four_row_table_against_oracle() {
    let rows: Vec<Vec<String>> = [("x", "0"), ("x", "0"), ("y", "1"), ("y", "1")]
        .iter()
        .map(|(a, b)| vec![a.to_string(), b.to_string()])
        .collect();
    let o = oracle(1, &rows);
    assert_eq!(o.post[0], vec![Q::new(3, 4), Q::new(1, 4)]);
    let model = fit(&exact_counts(&common::table(1, &rows)).unwrap()).unwrap();
    assert_eq!(model.prior(), &[0.5, 0.5]);
    assert_eq!(model.cond(0, 0, 0), 0.75);
    assert_eq!(model.cond(0, 1, 0), 0.25);
}

#[test]
fn noiseless_round_trip_is_bitwise() {
    let t = common::qs_table(&[("x", "0"), ("y", "0"), ("x", "1"), ("z", "2"), ("x", "2")]);
    let exact = exact_counts(&t).unwrap();
    let params = PrivacyParams::new(1.0, 1, Mechanism::None).unwrap();
    let via = fit(&clip_nonnegative(&release(&exact, &params, &mut rng(5)))).unwrap();
    let direct = fit(&exact).unwrap();
    for (a, b) in via.prior().iter().zip(direct.prior()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    for v in 0..3 {
        for s in 0..3 {
            assert_eq!(via.cond(0, v, s).to_bits(), direct.cond(0, v, s).to_bits());
        }
    }
}

#[test]
fn symmetric_tie_goes_to_first_value() {
    let t = common::qs_table(&[("x", "b"), ("x", "a"), ("y", "a"), ("y", "b")]);
    let model = fit(&exact_counts(&t).unwrap()).unwrap();
    let d = model.domains().clone();
    for q in ["x", "y"] {
        let qi = d.encode_qi(&[Value::known(q)]);
        assert_eq!(predict(&model, &qi), 0);
    }
}

#[test]
fn missing_and_unseen_give_the_prior() {
    let t = common::qs_table(&[("x", "0"), ("x", "0"), ("y", "1"), ("x", "2")]);
    let model = fit(&exact_counts(&t).unwrap()).unwrap();
    for v in [Value::Missing, Value::known("never seen")] {
        let post = posterior_values(&model, &[v]);
        for (p, q) in post.iter().zip(model.prior()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_counts_give_uniform_model() {
    let d = Arc::new(
        Domains::from_parts(
            vec!["q".into()],
            vec![vec![Value::known("x"), Value::known("y"), Value::known("z")]],
            "s",
            vec![Value::known("0"), Value::known("1")],
        )
        .unwrap(),
    );
    let model = fit(&CountWorkload::zeros(d)).unwrap();
    for v in 0..3 {
        for s in 0..2 {
            assert!((model.cond(0, v, s) - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    assert_eq!(model.prior(), &[0.5, 0.5]);
    let enc = model.domains().encode(&common::qs_table(&[("x", "0"), ("y", "1")])).unwrap();
    let hc = high_confidence(&model, &enc, 0.99).unwrap();
    assert_eq!(hc.size(), 0);
    assert_eq!(hc.accuracy, None);
}
