use super::NumericsError;

/// Weighted least-squares nondecreasing fit by pool-adjacent-violators.
pub fn pava_isotonic(y: &[f64], weights: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if y.is_empty() {
        return Err(NumericsError::Empty);
    }
    if y.len() != weights.len() {
        return Err(NumericsError::LengthMismatch {
            expected: y.len(),
            found: weights.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("isotonic response"));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(NumericsError::InvalidArgument(
            "isotonic weights must be positive and finite".into(),
        ));
    }

    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &w) in y.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let tw = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / tw, tw, n1 + n2);
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (m, _, n) in blocks {
        out.extend(std::iter::repeat_n(m, n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sorted_input_unchanged() {
        let y = [0.1, 0.2, 0.2, 0.9];
        assert_eq!(pava_isotonic(&y, &[1.0; 4]).unwrap(), y.to_vec());
    }

    #[test]
    fn single_pool() {
        assert_eq!(
            pava_isotonic(&[2.0, 1.0], &[1.0, 1.0]).unwrap(),
            vec![1.5, 1.5]
        );
    }

    #[test]
    fn empty_and_bad_weights() {
        assert_eq!(pava_isotonic(&[], &[]), Err(NumericsError::Empty));
        assert!(pava_isotonic(&[1.0], &[0.0]).is_err());
    }

    /// Best fit over every partition into consecutive blocks whose block
    /// means are nondecreasing.
    fn brute_force(y: &[f64], w: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let mut fit = Vec::with_capacity(n);
            let mut means = Vec::new();
            let mut start = 0;
            for i in 0..n {
                let cut = i == n - 1 || mask & (1 << i) != 0;
                if cut {
                    let sw: f64 = w[start..=i].iter().sum();
                    let m = y[start..=i]
                        .iter()
                        .zip(&w[start..=i])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / sw;
                    means.push(m);
                    fit.extend(std::iter::repeat_n(m, i + 1 - start));
                    start = i + 1;
                }
            }
            if means.windows(2).any(|p| p[1] < p[0] - 1e-12) {
                continue;
            }
            let sse: f64 = fit
                .iter()
                .zip(y)
                .zip(w)
                .map(|((f, a), b)| b * (f - a).powi(2))
                .sum();
            if best.as_ref().is_none_or(|(s, _)| sse < *s - 1e-12) {
                best = Some((sse, fit));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn matches_exhaustive_partitions(
            y in prop::collection::vec(-5.0f64..5.0, 8),
            w in prop::collection::vec(0.1f64..3.0, 8),
        ) {
            let fit = pava_isotonic(&y, &w).unwrap();
            let oracle = brute_force(&y, &w);
            for (a, b) in fit.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn monotone_and_mean_preserving(
            y in prop::collection::vec(-10.0f64..10.0, 1..60),
            seed_w in prop::collection::vec(0.01f64..5.0, 60),
        ) {
            let w = &seed_w[..y.len()];
            let fit = pava_isotonic(&y, w).unwrap();
            prop_assert!(fit.windows(2).all(|p| p[1] >= p[0]));
            let m_in: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum();
            let m_out: f64 = fit.iter().zip(w).map(|(a, b)| a * b).sum();
            prop_assert!((m_in - m_out).abs() < 1e-9 * (1.0 + m_in.abs()));
        }
    }
}
