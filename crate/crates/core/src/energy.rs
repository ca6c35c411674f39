//! The sliced energies `E(Y) = SW_2^2(gamma_Y, gamma_Z)` and
//! `E_p(Y) = (1/p) sum_i w_{theta_i}(Y)`, their almost-everywhere gradients,
//! and the closed forms available for the symmetric two-point target.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, sample_sphere, DirectionSet, GradientMatrix, Support};
use crate::slices::{accumulate_slice_gradient, check_dirs, check_pair, sorted_projection, SliceScratch};

/// Monte-Carlo estimate of `E(Y)` from `p_used` fresh directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub value: f64,
    /// Sample standard deviation of the slice values over `sqrt(p_used)`.
    pub std_error: f64,
    pub p_used: usize,
    pub seed: u64,
}

/// Slice values `w_{theta_i}(Y)` for every axis of `dirs`.
pub fn slice_values(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<Vec<f64>> {
    check_pair(y, z, dirs)?;
    let mut sy = SliceScratch::default();
    let mut values = Vec::with_capacity(dirs.p());
    for theta in dirs.iter() {
        let (zs, _) = sorted_projection(z, theta);
        sy.sort_slice(y, theta);
        values.push(sy.cost(&zs));
    }
    Ok(values)
}

/// `E_p(Y)` for the fixed axes `dirs`.
pub fn energy_p(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<f64> {
    let values = slice_values(y, z, dirs)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean and standard error of `values`, the standard error using the
/// unbiased sample variance (zero for a single value).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let p = values.len() as f64;
    let mean = values.iter().sum::<f64>() / p;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (p - 1.0);
    (mean, libm::sqrt(var / p))
}

/// Monte-Carlo estimate of `E(Y)` with `p` directions drawn from `seed`.
pub fn energy_mc(y: &Support, z: &Support, p: usize, seed: u64) -> Result<EnergyEstimate> {
    check_same_shape(y, z)?;
    let dirs = sample_sphere(y.d(), p, seed)?;
    let values = slice_values(y, z, &dirs)?;
    let (value, std_error) = mean_and_std_error(&values);
    Ok(EnergyEstimate {
        value,
        std_error,
        p_used: p,
        seed,
    })
}

/// Gradient of the slice loss: row `k` is
/// `(2/n) theta theta^T (y_k - z_{m(k)})` with `m` the sorted matching.
/// Projection ties follow the stable-sort convention.
pub fn grad_w_theta(y: &Support, z: &Support, theta: &[f64]) -> Result<GradientMatrix> {
    check_same_shape(y, z)?;
    if theta.len() != y.d() {
        return Err(Error::DimensionMismatch {
            expected: y.d(),
            got: theta.len(),
        });
    }
    let (zs, _) = sorted_projection(z, theta);
    let mut grad = vec![0.0; y.n() * y.d()];
    let mut scratch = SliceScratch::default();
    accumulate_slice_gradient(y, theta, &zs, &mut scratch, 1.0, &mut grad);
    Ok(Support::from_raw(y.n(), y.d(), grad))
}

/// Gradient of `E_p` on its differentiability set (average of slice
/// gradients, extended by the tie convention elsewhere).
pub fn grad_energy_p(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<GradientMatrix> {
    check_pair(y, z, dirs)?;
    let mut grad = vec![0.0; y.n() * y.d()];
    let mut scratch = SliceScratch::default();
    let weight = 1.0 / dirs.p() as f64;
    for theta in dirs.iter() {
        let (zs, _) = sorted_projection(z, theta);
        accumulate_slice_gradient(y, theta, &zs, &mut scratch, weight, &mut grad);
    }
    Ok(Support::from_raw(y.n(), y.d(), grad))
}

/// Monte-Carlo estimate of the gradient of `E` with `p` fresh directions.
pub fn grad_energy_mc(y: &Support, z: &Support, p: usize, seed: u64) -> Result<GradientMatrix> {
    check_same_shape(y, z)?;
    let dirs = sample_sphere(y.d(), p, seed)?;
    grad_energy_p(y, z, &dirs)
}

/// Target of the symmetric two-point case: `z_1 = (0,-1)`, `z_2 = (0,1)`.
pub fn sym2d_target() -> Support {
    Support::from_raw(2, 2, vec![0.0, -1.0, 0.0, 1.0])
}

/// The symmetric support `Y = (y, -y)` with `y = (u, v)`.
pub fn sym2d_support(u: f64, v: f64) -> Result<Support> {
    Support::new(2, 2, vec![u, v, -u, -v])
}

/// Exact `E(Y)` for `Y = (y, -y)`, `y = (u, v)`, against [`sym2d_target`]:
/// `(u^2+v^2)/2 + 1/2 - (2/pi)(|u| + |v| atan|v/u|)`.
///
/// Extended continuously at `u = 0` (the arctangent tends to `pi/2`) and at
/// the origin, where the value is `1/2`.
pub fn closed_form_e_sym2d(u: f64, v: f64) -> f64 {
    let (au, av) = (u.abs(), v.abs());
    // atan2(|v|, |u|) equals atan|v/u| for u != 0, pi/2 at u = 0 and 0 at the origin.
    let angle = libm::atan2(av, au);
    (u * u + v * v) / 2.0 + 0.5 - (2.0 / core::f64::consts::PI) * (au + av * angle)
}

/// Exact `W_2^2(gamma_Y, gamma_Z)` in the symmetric two-point case.
pub fn closed_form_w2_sym2d(u: f64, v: f64) -> f64 {
    u * u + (v.abs() - 1.0) * (v.abs() - 1.0)
}

/// Local Lipschitz constant `2n(r + ||X||_{inf,2} + ||Z||_{inf,2})` of every
/// slice loss on the `||.||_{inf,2}`-ball of radius `r` around `x`.
pub fn lipschitz_bound(x: &Support, z: &Support, r: f64) -> Result<f64> {
    check_same_shape(x, z)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "radius must be finite and non-negative, got {r}"
        )));
    }
    Ok(2.0 * x.n() as f64 * (r + x.norm_inf2() + z.norm_inf2()))
}

/// Smallest gap between consecutive sorted projections of `y` over all axes.
pub fn min_projected_gap(y: &Support, dirs: &DirectionSet) -> Result<f64> {
    check_dirs(y, dirs)?;
    let mut scratch = SliceScratch::default();
    Ok(dirs
        .iter()
        .map(|theta| scratch.sort_slice(y, theta))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, w_theta};
    use approx::assert_abs_diff_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_support(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Support {
        let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        Support::new(n, d, data).unwrap()
    }

    #[test]
    fn energy_vanishes_on_permuted_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gaussian_support(&mut rng, 5, 3);
        let y = z.permute_rows(&[3, 1, 4, 0, 2]).unwrap();
        let dirs = sample_sphere(3, 17, 2).unwrap();
        assert_eq!(energy_p(&y, &z, &dirs).unwrap(), 0.0);
    }

    #[test]
    fn single_point_energy_closed_form() {
        let y = Support::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let z = Support::from_rows(&[[1.0, 1.0, -1.0]]).unwrap();
        let dirs = sample_sphere(3, 9, 4).unwrap();
        let diff = [-0.5, -2.0, 3.0];
        let expected: f64 = dirs
            .iter()
            .map(|t| {
                let s: f64 = t.iter().zip(&diff).map(|(a, b)| a * b).sum();
                s * s
            })
            .sum::<f64>()
            / 9.0;
        assert_abs_diff_eq!(energy_p(&y, &z, &dirs).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn estimate_is_zero_when_supports_match() {
        let z = sym2d_target();
        let est = energy_mc(&z, &z, 100, 3).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.p_used, 100);
    }

    #[test]
    fn estimate_matches_closed_form_at_origin_and_saddle() {
        let z = sym2d_target();
        for (u, expected) in [(0.0, 0.5), (2.0 / PI, 0.5 - 2.0 / (PI * PI))] {
            let y = sym2d_support(u, 0.0).unwrap();
            let est = energy_mc(&y, &z, 200_000, 5).unwrap();
            assert!(
                (est.value - expected).abs() <= 3.0 * est.std_error,
                "u={u}: {} vs {expected} (se {})",
                est.value,
                est.std_error
            );
        }
        assert_abs_diff_eq!(0.5 - 2.0 / (PI * PI), 0.297357, epsilon = 1e-6);
    }

    #[test]
    fn slice_gradient_examples() {
        let z = Support::from_rows(&[[0.0, 0.0], [1.0, 2.0], [-1.0, 3.0]]).unwrap();
        let g = grad_w_theta(&z, &z, &[0.6, 0.8]).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));

        let y = Support::from_rows(&[[3.0, 5.0]]).unwrap();
        let z = Support::from_rows(&[[0.0, 0.0]]).unwrap();
        let g = grad_w_theta(&y, &z, &[1.0, 0.0]).unwrap();
        assert_eq!(g.row(0), &[6.0, 0.0]);
    }

    #[test]
    fn slice_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 20 {
            let y = gaussian_support(&mut rng, 4, 3);
            let z = gaussian_support(&mut rng, 4, 3);
            let theta = sample_sphere(3, 1, rng.random()).unwrap();
            let theta = theta.axis(0);
            let py = project(&y, theta).unwrap();
            let mut sorted = py.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            let g = grad_w_theta(&y, &z, theta).unwrap();
            for idx in 0..12 {
                let mut plus = y.clone();
                plus.as_mut_slice()[idx] += h;
                let mut minus = y.clone();
                minus.as_mut_slice()[idx] -= h;
                let fd = (w_theta(&plus, &z, theta).unwrap() - w_theta(&minus, &z, theta).unwrap())
                    / (2.0 * h);
                let an = g.as_slice()[idx];
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                    "fd {fd} vs analytic {an}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn gradient_vanishes_on_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = gaussian_support(&mut rng, 6, 2);
        let g = grad_energy_mc(&z, &z, 50, 1).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_is_small_at_symmetric_saddle() {
        let z = sym2d_target();
        let y = sym2d_support(2.0 / PI, 0.0).unwrap();
        let p = 100_000;
        let seed = 12;
        let g = grad_energy_mc(&y, &z, p, seed).unwrap();
        // per-entry Monte-Carlo error from the slice gradients themselves
        let dirs = sample_sphere(2, p, seed).unwrap();
        let mut sum_sq = [0.0; 4];
        for theta in dirs.iter() {
            let gi = grad_w_theta(&y, &z, theta).unwrap();
            for (s, (a, b)) in sum_sq.iter_mut().zip(gi.as_slice().iter().zip(g.as_slice())) {
                *s += (a - b) * (a - b);
            }
        }
        let se: f64 = sum_sq.iter().map(|s| s / ((p - 1) as f64) / p as f64).sum::<f64>().sqrt();
        let norm = g.frobenius_sq().sqrt();
        assert!(norm <= 3.0 * se, "gradient norm {norm} vs MC error {se}");
    }

    #[test]
    fn closed_forms() {
        assert_abs_diff_eq!(closed_form_e_sym2d(0.0, 1.0), 0.0, epsilon = 1e-15);
        assert_eq!(closed_form_e_sym2d(0.0, 0.0), 0.5);
        assert_abs_diff_eq!(
            closed_form_e_sym2d(2.0 / PI, 0.0),
            0.5 - 2.0 / (PI * PI),
            epsilon = 1e-15
        );
        assert_eq!(closed_form_w2_sym2d(0.0, 1.0), 0.0);
        assert_eq!(closed_form_w2_sym2d(1.0, 2.0), 2.0);
        assert_eq!(closed_form_w2_sym2d(0.0, -1.0), 0.0);
        for (u, v) in [(0.3, 1.7), (1.2, -0.4), (2.0, 0.01)] {
            let e = closed_form_e_sym2d(u, v);
            assert!(e >= 0.0);
            for (su, sv) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                assert_eq!(closed_form_e_sym2d(su * u, sv * v), e);
            }
        }
        // continuity across u = 0
        assert_abs_diff_eq!(
            closed_form_e_sym2d(1e-12, 0.7),
            closed_form_e_sym2d(0.0, 0.7),
            epsilon = 1e-10
        );
    }

    #[test]
    fn lipschitz_examples() {
        let zero = Support::zeros(2, 3);
        assert_eq!(lipschitz_bound(&zero, &zero, 1.0).unwrap(), 4.0);
        let x = Support::from_rows(&[[3.0, 4.0], [0.0, 1.0]]).unwrap();
        let z = Support::zeros(2, 2);
        let k1 = lipschitz_bound(&x, &z, 0.0).unwrap();
        let x2 = x.axpy(1.0, &x).unwrap();
        assert_eq!(lipschitz_bound(&x2, &z, 0.0).unwrap(), 2.0 * k1);
        assert!(lipschitz_bound(&x, &z, -1.0).is_err());
    }

    #[test]
    fn lipschitz_holds_on_random_balls() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.random_range(1..6);
            let d = rng.random_range(1..4);
            let x = gaussian_support(&mut rng, n, d);
            let z = gaussian_support(&mut rng, n, d);
            let r: f64 = rng.random_range(0.01..2.0);
            let ball = |rng: &mut ChaCha8Rng| {
                let mut y = x.clone();
                for k in 0..n {
                    let dir = sample_sphere(d, 1, rng.random()).unwrap();
                    let rad = r * rng.random::<f64>();
                    for (a, b) in y.row_mut(k).iter_mut().zip(dir.axis(0)) {
                        *a += rad * b;
                    }
                }
                y
            };
            let y = ball(&mut rng);
            let y2 = ball(&mut rng);
            let theta = sample_sphere(d, 1, rng.random()).unwrap();
            let lhs = (w_theta(&y, &z, theta.axis(0)).unwrap() - w_theta(&y2, &z, theta.axis(0)).unwrap()).abs();
            let rhs = lipschitz_bound(&x, &z, r).unwrap() * y.dist_inf2(&y2).unwrap();
            assert!(rhs - lhs >= -1e-9);
        }
    }
}
