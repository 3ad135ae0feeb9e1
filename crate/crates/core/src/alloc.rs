//! Largest-remainder apportionment.
//!
//! Both variants hand out exactly `total` units. Leftover units go to the
//! largest fractional remainders; ties go to the lower index, so callers
//! that order their inputs by id get the ascending-id tie-break.

/// Apportions `total` in proportion to integer `weights`, exactly.
pub fn by_weights(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|w| u128::from(*w)).sum();
    if sum == 0 {
        return equal_split(total, weights.len());
    }
    let t = u128::from(total);
    let mut out: Vec<u64> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let num = t * u128::from(*w);
        out.push((num / sum) as u64);
        rems.push((num % sum, i));
    }
    let handed: u64 = out.iter().sum();
    distribute(&mut out, total - handed, rems);
    out
}

/// Apportions `total` according to real-valued `quotas` that sum to
/// `total` up to floating-point error.
pub fn by_quotas(total: u64, quotas: &[f64]) -> Vec<u64> {
    let mut out: Vec<u64> = quotas
        .iter()
        .map(|q| {
            if q.is_finite() && *q > 0.0 {
                q.floor().min(total as f64) as u64
            } else {
                0
            }
        })
        .collect();
    let frac = |i: usize| {
        let q = quotas[i];
        if q.is_finite() && q > 0.0 {
            q - q.floor()
        } else {
            0.0
        }
    };
    let mut handed: u64 = out.iter().sum();
    // floating error can push the floors past the total; take back from the
    // smallest remainders first
    if handed > total {
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(b.cmp(&a)));
        for i in order.into_iter().cycle() {
            if handed == total {
                break;
            }
            if out[i] > 0 {
                out[i] -= 1;
                handed -= 1;
            }
        }
        return out;
    }
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut left = total - handed;
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn equal_split(total: u64, n: usize) -> Vec<u64> {
    by_weights(total, &vec![1; n])
}

fn distribute(out: &mut [u64], mut left: u64, mut rems: Vec<(u128, usize)>) {
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    // at most n-1 units remain, one pass suffices
    for (_, i) in rems {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    debug_assert_eq!(left, 0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn royalty_example() {
        assert_eq!(by_weights(9950, &[6000, 3000, 1000]), [5970, 2985, 995]);
        assert_eq!(by_weights(1, &[6000, 3000, 1000]), [1, 0, 0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(by_weights(1, &[1, 1]), [1, 0]);
        assert_eq!(by_weights(5, &[0, 0, 0]), [2, 2, 1]);
        assert_eq!(by_quotas(1, &[0.5, 0.5]), [1, 0]);
    }

    #[test]
    fn quotas_example() {
        let pool = 1010.0;
        let q = [pool * 10_000.0 / 10_100.0, pool * 100.0 / 10_100.0];
        assert_eq!(by_quotas(1010, &q), [1000, 10]);
    }

    proptest! {
        #[test]
        fn weights_sum_exactly(total in 0u64..1_000_000_000, w in prop::collection::vec(0u64..20_000, 1..12)) {
            let out = by_weights(total, &w);
            prop_assert_eq!(out.iter().sum::<u64>(), total);
        }

        #[test]
        fn quotas_sum_exactly(total in 0u64..1_000_000_000, w in prop::collection::vec(0.0f64..1e6, 1..12)) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 0.0);
            let q: Vec<f64> = w.iter().map(|x| total as f64 * x / s).collect();
            let out = by_quotas(total, &q);
            prop_assert_eq!(out.iter().sum::<u64>(), total);
        }
    }
}
