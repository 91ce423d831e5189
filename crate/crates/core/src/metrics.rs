//! Distribution metrics shared by rewards, evaluation, and baselines.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::evidence::AnswerDistribution;

/// Inputs to [`jsd`] must sum to one within this.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

fn check_distribution(d: &AnswerDistribution, name: &str) -> Result<()> {
    for (k, v) in d.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!(
                "{name}[{k}] = {v} is not a probability"
            )));
        }
    }
    let s = d.sum();
    if (s - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Domain(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// `x * log2(x / m)` with the `0 log 0 = 0` convention.
fn kl_term(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / m).log2()
    }
}

/// Base-2 Jensen-Shannon divergence over the union of both key sets, with
/// absent keys treated as zero mass. The result lies in `[0, 1]`.
pub fn jsd(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let keys: BTreeSet<&str> = p.keys().chain(q.keys()).collect();
    let mut total = 0.0;
    for k in keys {
        let (a, b) = (p.get(k), q.get(k));
        let m = 0.5 * (a + b);
        total += kl_term(a, m) + kl_term(b, m);
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// Divides every value by the total.
pub fn normalize_distribution(d: &AnswerDistribution) -> Result<AnswerDistribution> {
    for (k, v) in d.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize: value for {k} is {v}"
            )));
        }
    }
    let s = d.sum();
    if s <= 0.0 {
        return Err(Error::Domain(
            "cannot normalize an all-zero distribution".into(),
        ));
    }
    Ok(AnswerDistribution::new(
        d.iter()
            .map(|(k, v)| (k.to_string(), v / s))
            .collect::<BTreeMap<_, _>>(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(pairs: &[(&str, f64)]) -> AnswerDistribution {
        AnswerDistribution::from_pairs(pairs.iter().copied())
    }

    /// KL terms written out by hand for the two-option spot check.
    fn spot_oracle() -> f64 {
        let m = [0.75f64, 0.25];
        let kl_p = 0.5 * (0.5 / m[0]).log2() + 0.5 * (0.5 / m[1]).log2();
        let kl_q = 1.0 * (1.0 / m[0]).log2();
        0.5 * kl_p + 0.5 * kl_q
    }

    #[test]
    fn examples() {
        let p = d(&[("A", 0.3), ("B", 0.7)]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(jsd(&d(&[("A", 1.0)]), &d(&[("B", 1.0)])).unwrap(), 1.0);
        let v = jsd(&d(&[("A", 0.5), ("B", 0.5)]), &d(&[("A", 1.0)])).unwrap();
        assert!((v - spot_oracle()).abs() < 1e-6);
        assert!((v - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(jsd(&d(&[("A", 0.5)]), &d(&[("A", 1.0)])).is_err());
        assert!(jsd(&d(&[("A", 1.5), ("B", -0.5)]), &d(&[("A", 1.0)])).is_err());
    }

    #[test]
    fn normalize_examples() {
        let same = d(&[("A", 0.5), ("B", 0.5)]);
        assert_eq!(normalize_distribution(&same).unwrap(), same);
        assert_eq!(
            normalize_distribution(&d(&[("A", 2.0), ("B", 2.0)])).unwrap(),
            same
        );

        let n = normalize_distribution(&d(&[("A", 0.334), ("B", 0.67)])).unwrap();
        assert!((n.get("A") - 0.334 / 1.004).abs() < 1e-15);
        assert!((n.get("B") - 0.67 / 1.004).abs() < 1e-15);
        assert!((n.sum() - 1.0).abs() < 1e-12);

        assert!(normalize_distribution(&d(&[("A", 0.0), ("B", 0.0)])).is_err());
        assert!(normalize_distribution(&d(&[("A", -1.0), ("B", 2.0)])).is_err());
    }

    fn arb_dist() -> impl Strategy<Value = AnswerDistribution> {
        proptest::collection::vec(0.0f64..1.0, 2..6).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| {
                let raw = AnswerDistribution::from_pairs(
                    w.iter()
                        .enumerate()
                        .map(|(i, v)| (((b'A' + i as u8) as char).to_string(), *v)),
                );
                normalize_distribution(&raw).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn jsd_symmetric_bounded(p in arb_dist(), q in arb_dist()) {
            let a = jsd(&p, &q).unwrap();
            let b = jsd(&q, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        }
    }
}
