use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use relight_core::egm::*;
use relight_core::scenegen::trial_rng;

fn random_orthonormal<R: Rng>(rng: &mut R, n: usize, r: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(rng));
    m.qr().q().columns(0, r).into_owned()
}

fn random_psd<R: Rng>(rng: &mut R, n: usize) -> SecondMoment {
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    SecondMoment::new(&m * m.transpose()).unwrap()
}

// Squared distance to the nonincreasing cone through the min-max formula.
fn cone_distance_sq(y: &[f64]) -> f64 {
    let n = y.len();
    (0..n)
        .map(|i| {
            let fit = (0..=i)
                .map(|j| {
                    (i..n)
                        .map(|k| y[j..=k].iter().sum::<f64>() / (k - j + 1) as f64)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            (fit - y[i]).powi(2)
        })
        .sum()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_bound(l: &[f64], r: usize, budget: f64) -> f64 {
    let top: f64 = l[..r].iter().sum();
    let mut v = top;
    for p in permutations(l.len()) {
        let arranged: Vec<f64> = p.iter().map(|&i| l[i]).collect();
        if cone_distance_sq(&arranged) <= budget * (1.0 + 1e-12) {
            v = v.min(arranged[..r].iter().sum());
        }
    }
    top - v
}

#[test]
fn cone_distance_oracle_hand_case() {
    assert_eq!(cone_distance_sq(&[2.0, 1.0, 4.0, 3.0]), 5.0);
    assert_eq!(cone_distance_sq(&[3.0, 2.0, 1.0]), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lp_bound_matches_exhaustive_permutations(
        raw in prop::collection::vec(0u8..12, 2..=6),
        r_seed in 0usize..100,
        budget_half in 0u32..80,
    ) {
        // half-integer eigenvalues keep the pooled means and distances exact
        let mut l: Vec<f64> = raw.iter().map(|&x| x as f64 * 0.5).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        let r = 1 + r_seed % (l.len() - 1);
        let budget = budget_half as f64 * 0.5;
        prop_assert_eq!(lp_regret_bound(&l, r, budget).unwrap(), brute_force_bound(&l, r, budget));
    }

    #[test]
    fn rotation_equivariance(seed in 0u64..1000, n in 2usize..7) {
        let mut rng = trial_rng(seed, 0);
        let r = 1 + (seed as usize) % (n - 1);
        let c = random_psd(&mut rng, n);
        let g = Egm::new(random_orthonormal(&mut rng, n, r)).unwrap();
        let rot = random_orthonormal(&mut rng, n, n);
        let c_rot = SecondMoment::new(&rot * c.matrix() * rot.transpose()).unwrap();
        let g_rot = Egm::new(&rot * g.matrix()).unwrap();
        let a = egm_loss(&g, &c).unwrap();
        let b = egm_loss(&g_rot, &c_rot).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * c.trace().max(1.0));
    }

    #[test]
    fn fitted_loss_is_eigen_tail(seed in 0u64..1000, n in 2usize..8) {
        let mut rng = trial_rng(seed, 1);
        let c = random_psd(&mut rng, n);
        for r in 1..=n {
            let loss = egm_loss(&egm_fit(&c, r).unwrap(), &c).unwrap();
            let tail: f64 = c.eigvals().iter().skip(r).sum();
            prop_assert!((loss - tail).abs() <= 1e-9 * c.trace().max(1.0));
            prop_assert!(loss >= -1e-10);
        }
    }
}

#[test]
fn fitted_basis_beats_random_bases() {
    let mut rng = trial_rng(21, 0);
    let c = random_psd(&mut rng, 6);
    let fitted = egm_loss(&egm_fit(&c, 2).unwrap(), &c).unwrap();
    for _ in 0..1000 {
        let g = Egm::new(random_orthonormal(&mut rng, 6, 2)).unwrap();
        assert!(egm_loss(&g, &c).unwrap() >= fitted - 1e-10);
    }
}

#[test]
fn regret_nonnegative_on_random_pairs() {
    let mut rng = trial_rng(22, 0);
    for _ in 0..1000 {
        let n = rng.random_range(2..8);
        let r = rng.random_range(1..n);
        let c = random_psd(&mut rng, n);
        let c_hat = random_psd(&mut rng, n);
        let regret = theorem2_regret(&c, &c_hat, r).unwrap();
        assert!(regret >= -1e-10);
        assert!(regret <= loose_bound(&c, r).unwrap() + 1e-10);
    }
}

#[test]
fn second_moment_matches_sampling() {
    let mut rng = trial_rng(23, 0);
    let b = RadiosityBasis::new(DMatrix::from_fn(4, 3, |_, _| rng.random_range(0.0..2.0)));
    let sampler = SymmetricDirichlet::new(3, 1.3).unwrap();
    let c = second_moment(&b, &sampler.second_moment().unwrap()).unwrap();
    let n = 1_000_000;
    let mut sum = DMatrix::<f64>::zeros(4, 4);
    let mut sum_sq = DMatrix::<f64>::zeros(4, 4);
    for _ in 0..n {
        let x = b.coefficients(&sampler.sample(&mut rng)).unwrap();
        let outer = &x * x.transpose();
        sum_sq += outer.component_mul(&outer);
        sum += outer;
    }
    for i in 0..4 {
        for j in 0..4 {
            let mean = sum[(i, j)] / n as f64;
            let se = ((sum_sq[(i, j)] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(
                (mean - c.matrix()[(i, j)]).abs() < 3.0 * se,
                "entry ({i},{j})"
            );
        }
    }
}

#[test]
fn loss_equals_expected_projection_residual() {
    let mut rng = trial_rng(24, 0);
    let b = RadiosityBasis::new(DMatrix::from_fn(5, 3, |_, _| rng.random_range(0.0..1.0)));
    let sampler = SymmetricDirichlet::new(3, 0.9).unwrap();
    let c = second_moment(&b, &sampler.second_moment().unwrap()).unwrap();
    let g = Egm::new(random_orthonormal(&mut rng, 5, 2)).unwrap();
    let proj = g.matrix() * g.matrix().transpose();
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = b.coefficients(&sampler.sample(&mut rng)).unwrap();
        let resid: DVector<f64> = &x - &proj * &x;
        let e = resid.norm_squared();
        s += e;
        s2 += e * e;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - egm_loss(&g, &c).unwrap()).abs() < 3.0 * se);
}
