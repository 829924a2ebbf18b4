/// Compensated (Neumaier) sum of the values taken in sorted order, so the
/// result does not depend on the order of the input.
pub fn ordered_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in &sorted {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ordered_sum(values) / len`; NaN for an empty slice.
pub fn ordered_mean(values: &[f64]) -> f64 {
    ordered_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cancellation() {
        assert_eq!(ordered_sum(&[1e16, 1.0, -1e16]), 1.0);
        assert_eq!(ordered_sum(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut v in proptest::collection::vec(-1e3f64..1e3, 1..60), seed in 0u64..1000) {
            let a = ordered_sum(&v);
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                v.swap(i, j);
            }
            prop_assert_eq!(a.to_bits(), ordered_sum(&v).to_bits());
            let naive: f64 = v.iter().sum();
            prop_assert!((a - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
