//! Least-squares projection onto nonincreasing sequences (pool adjacent violators).

/// Projects `y` onto `{m : m₁ ≥ m₂ ≥ … ≥ mₙ}` with unit weights.
pub fn project_nonincreasing(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count); merged while the new block's mean exceeds the previous one
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s0 / c0 as f64 {
                blocks.pop();
                let last = blocks.last_mut().expect("len > 1");
                *last = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Squared distance from `y` to the nonincreasing cone.
pub fn distance_sq_nonincreasing(y: &[f64]) -> f64 {
    project_nonincreasing(y)
        .iter()
        .zip(y)
        .map(|(m, v)| (m - v) * (m - v))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_reversed_pairs() {
        assert_eq!(project_nonincreasing(&[2.0, 1.0, 4.0, 3.0]), vec![2.5; 4]);
        assert_eq!(distance_sq_nonincreasing(&[2.0, 1.0, 4.0, 3.0]), 5.0);
        assert_eq!(project_nonincreasing(&[4.0, 3.0, 2.0]), vec![4.0, 3.0, 2.0]);
        assert_eq!(project_nonincreasing(&[1.0, 3.0, 0.0]), vec![2.0, 2.0, 0.0]);
        assert!(project_nonincreasing(&[]).is_empty());
    }

    // min-max characterisation of the antitonic fit, independent of pooling
    fn minmax_oracle(y: &[f64]) -> Vec<f64> {
        let n = y.len();
        (0..n)
            .map(|i| {
                (0..=i)
                    .map(|j| {
                        (i..n)
                            .map(|k| y[j..=k].iter().sum::<f64>() / (k - j + 1) as f64)
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_minmax_formula(y in prop::collection::vec(-10.0f64..10.0, 1..9)) {
            // nonincreasing fit of y is the reversal of the nondecreasing fit of reversed y
            let mut rev = y.clone();
            rev.reverse();
            let mut expected = minmax_oracle(&rev);
            expected.reverse();
            let got = project_nonincreasing(&y);
            for (a, b) in got.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn output_is_monotone_and_mean_preserving(y in prop::collection::vec(-10.0f64..10.0, 1..20)) {
            let m = project_nonincreasing(&y);
            prop_assert!(m.windows(2).all(|w| w[0] >= w[1] - 1e-12));
            let (sy, sm): (f64, f64) = (y.iter().sum(), m.iter().sum());
            prop_assert!((sy - sm).abs() < 1e-9);
        }
    }
}
