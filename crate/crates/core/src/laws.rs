//! Closed-form limit distributions and scaling constants: the Stable(1/2)
//! law, its push-forward governing rescaled first-return times in the
//! diffusive regime, the noise-reinforced Brownian motion marginals, the
//! Gaussian overtrained limits, and the critical-training-phase scales.
//!
//! All functions are pure and total on their stated domains; out-of-domain
//! inputs fail loudly rather than extrapolating.

use crate::real::Real;
use crate::special::{erfc, erfc_inv, normal_cdf};
use crate::walk::MemoryParam;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LawError {
    #[error("p = {0} is not diffusive; use the critical law")]
    UseCriticalLaw(f64),
    #[error("quantile argument must lie in (0, 1), got {0}")]
    QuantileDomain(f64),
    #[error("times must be positive")]
    NonPositiveTime,
    #[error("mean correction diverges at t = 0 for p < 1/2")]
    DivergentMean,
    #[error("grid must be strictly increasing and positive")]
    BadGrid,
    #[error("covariance factorization failed (grid numerically degenerate)")]
    FactorizationFailed,
}

fn require_diffusive(p: MemoryParam) -> Result<(), LawError> {
    if p.get() < MemoryParam::CRITICAL {
        Ok(())
    } else {
        Err(LawError::UseCriticalLaw(p.get()))
    }
}

/// Density of the Stable(1/2) law: (2 pi t^3)^{-1/2} exp(-1/(2t)) on
/// (0, inf); 0 elsewhere by convention.
pub fn stable_half_pdf<F: Real>(t: F) -> F {
    if t <= F::zero() {
        return F::zero();
    }
    let two_pi = F::of(std::f64::consts::TAU);
    (two_pi * t * t * t).sqrt().recip() * (-(F::two() * t).recip()).exp()
}

/// CDF of the Stable(1/2) law: erfc(1/sqrt(2t)).
pub fn stable_half_cdf<F: Real>(t: F) -> F {
    if t <= F::zero() {
        return F::zero();
    }
    erfc((F::two() * t).sqrt().recip())
}

/// Quantile of the Stable(1/2) law: t = 1 / (2 erfc_inv(u)^2).
pub fn stable_half_quantile<F: Real>(u: F) -> Result<F, LawError> {
    if u <= F::zero() || u >= F::one() {
        return Err(LawError::QuantileDomain(u.to_f64().unwrap_or(f64::NAN)));
    }
    let z = erfc_inv(u);
    Ok((F::two() * z * z).recip())
}

/// CDF of the diffusive return-time limit: the Stable(1/2) law pushed
/// through x -> (3-4p)^{1/(3-4p)} x^{1/(3-4p)}, evaluated as
/// stable_half_cdf(x^{3-4p} / (3-4p)).
pub fn diffusive_return_cdf<F: Real>(p: MemoryParam, x: F) -> Result<F, LawError> {
    require_diffusive(p)?;
    if x <= F::zero() {
        return Ok(F::zero());
    }
    let e = F::of(3.0 - 4.0 * p.get());
    Ok(stable_half_cdf(x.powf(e) / e))
}

/// Quantile of the diffusive return-time limit.
pub fn diffusive_return_quantile<F: Real>(p: MemoryParam, u: F) -> Result<F, LawError> {
    require_diffusive(p)?;
    let e = F::of(3.0 - 4.0 * p.get());
    Ok((e * stable_half_quantile(u)?).powf(e.recip()))
}

/// CDF of the critical return-time limit: (log T)/k converges to the
/// Stable(1/2) law itself.
pub fn critical_return_cdf<F: Real>(x: F) -> F {
    stable_half_cdf(x)
}

/// Training length at which training is just visible at observation time n
/// (diffusive): (3-4p)^{-1/(4-4p)} n^{(3-4p)/(4-4p)}.
pub fn critical_training_k<F: Real>(p: MemoryParam, n: u64) -> Result<F, LawError> {
    require_diffusive(p)?;
    let e = F::of(3.0 - 4.0 * p.get());
    let denom = F::of(4.0 - 4.0 * p.get());
    Ok(e.powf(-denom.recip()) * F::of_u64(n).powf(e / denom))
}

/// Critical-regime analogue: k ~ log n.
pub fn critical_training_k_critical<F: Real>(n: u64) -> F {
    F::of_u64(n).ln()
}

/// Normalizing scale r(k) = (3-4p)^{1/(3-4p)} k^{(4-4p)/(3-4p)} for the
/// first return time.
pub fn return_scale<F: Real>(p: MemoryParam, k: u64) -> Result<F, LawError> {
    require_diffusive(p)?;
    let e = F::of(3.0 - 4.0 * p.get());
    let num = F::of(4.0 - 4.0 * p.get());
    Ok(e.powf(e.recip()) * F::of_u64(k).powf(num / e))
}

/// Mean curve of the trained scaling limit: t^{2p-1} / sqrt(3-4p).
pub fn trained_limit_mean<F: Real>(p: MemoryParam, t: F) -> Result<F, LawError> {
    require_diffusive(p)?;
    if t < F::zero() {
        return Err(LawError::NonPositiveTime);
    }
    if t.is_zero() {
        if p.get() < 0.5 {
            // Instantaneous return from infinity: the correction diverges.
            return Err(LawError::DivergentMean);
        }
        return Ok(if p.get() == 0.5 {
            F::of(3.0 - 4.0 * p.get()).sqrt().recip()
        } else {
            F::zero()
        });
    }
    let q = F::of(p.two_p_minus_one());
    Ok(t.powf(q) / F::of(3.0 - 4.0 * p.get()).sqrt())
}

/// Covariance of noise-reinforced Brownian motion:
/// t^{2p-1} s^{2-2p} / (3-4p) for 0 < s <= t, extended symmetrically.
pub fn nrbm_cov<F: Real>(p: MemoryParam, s: F, t: F) -> Result<F, LawError> {
    require_diffusive(p)?;
    if s <= F::zero() || t <= F::zero() {
        return Err(LawError::NonPositiveTime);
    }
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    let q = F::of(p.two_p_minus_one());
    Ok(hi.powf(q) * lo.powf(F::two() - F::two() * F::of(p.get())) / F::of(3.0 - 4.0 * p.get()))
}

/// Lower-triangular Cholesky factor of a symmetric matrix stored row-major.
fn cholesky<F: Real>(mat: &[F], dim: usize) -> Option<Vec<F>> {
    let mut l = vec![F::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = mat[i * dim + j];
            for k in 0..j {
                sum = sum - l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= F::zero() {
                    return None;
                }
                l[i * dim + j] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// One mean-zero Gaussian draw on `grid` with the nrBM covariance, via
/// Cholesky factorization (Box-Muller normals). Nearly-coincident grid
/// points are regularized with +1e-12 on the diagonal before giving up.
pub fn nrbm_sample_grid<F: Real, R: Rng>(
    p: MemoryParam,
    grid: &[F],
    rng: &mut R,
) -> Result<Vec<F>, LawError> {
    if grid.is_empty()
        || grid[0] <= F::zero()
        || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(LawError::BadGrid);
    }
    let dim = grid.len();
    let mut cov = vec![F::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            cov[i * dim + j] = nrbm_cov(p, grid[i], grid[j])?;
        }
    }
    let l = cholesky(&cov, dim).or_else(|| {
        let jitter = F::of(1e-12);
        for i in 0..dim {
            cov[i * dim + i] = cov[i * dim + i] + jitter;
        }
        cholesky(&cov, dim)
    });
    let l = l.ok_or(LawError::FactorizationFailed)?;
    let z: Vec<F> = (0..dim).map(|_| standard_normal(rng)).collect();
    Ok((0..dim)
        .map(|i| {
            (0..=i)
                .map(|j| l[i * dim + j] * z[j])
                .fold(F::zero(), |a, b| a + b)
        })
        .collect())
}

/// Box-Muller standard normal draw.
pub fn standard_normal<F: Real, R: Rng>(rng: &mut R) -> F {
    let u1 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    F::of((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
}

/// Centering k^{2-2p} / n^{1-2p} for the overtrained CLT (diffusive).
pub fn overtrained_center<F: Real>(p: MemoryParam, n: u64, k: u64) -> Result<F, LawError> {
    require_diffusive(p)?;
    let pv = p.get();
    // Equivalent form k^{2-2p} n^{2p-1}, avoiding extreme intermediates.
    Ok(F::of_u64(k).powf(F::of(2.0 - 2.0 * pv)) * F::of_u64(n).powf(F::of(2.0 * pv - 1.0)))
}

/// Centering sqrt(n k) for the overtrained CLT (critical).
pub fn overtrained_center_critical<F: Real>(n: u64, k: u64) -> F {
    (F::of_u64(n) * F::of_u64(k)).sqrt()
}

/// Law-of-the-iterated-logarithm constant 1/sqrt(3-4p).
pub fn lil_constant<F: Real>(p: MemoryParam) -> Result<F, LawError> {
    require_diffusive(p)?;
    Ok(F::of(3.0 - 4.0 * p.get()).sqrt().recip())
}

/// The Stable(1/2) law as a value (it is fully specified).
#[derive(Debug, Clone, Copy, Default)]
pub struct StableHalfLaw<F>(std::marker::PhantomData<F>);

impl<F: Real> StableHalfLaw<F> {
    pub fn new() -> Self {
        Self(std::marker::PhantomData)
    }
    pub fn pdf(&self, t: F) -> F {
        stable_half_pdf(t)
    }
    pub fn cdf(&self, t: F) -> F {
        stable_half_cdf(t)
    }
    pub fn quantile(&self, u: F) -> Result<F, LawError> {
        stable_half_quantile(u)
    }
}

/// Diffusive first-return limit law for a given p < 3/4.
#[derive(Debug, Clone, Copy)]
pub struct DiffusiveReturnLaw<F> {
    pub p: MemoryParam,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Real> DiffusiveReturnLaw<F> {
    pub fn new(p: MemoryParam) -> Result<Self, LawError> {
        require_diffusive(p)?;
        Ok(Self {
            p,
            _marker: std::marker::PhantomData,
        })
    }
    pub fn cdf(&self, x: F) -> F {
        diffusive_return_cdf(self.p, x).expect("p validated at construction")
    }
    pub fn quantile(&self, u: F) -> Result<F, LawError> {
        diffusive_return_quantile(self.p, u)
    }
}

/// Noise-reinforced Brownian motion marginals for a given p < 3/4.
#[derive(Debug, Clone, Copy)]
pub struct NrbmLaw<F> {
    pub p: MemoryParam,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Real> NrbmLaw<F> {
    pub fn new(p: MemoryParam) -> Result<Self, LawError> {
        require_diffusive(p)?;
        Ok(Self {
            p,
            _marker: std::marker::PhantomData,
        })
    }
    pub fn cov(&self, s: F, t: F) -> Result<F, LawError> {
        nrbm_cov(self.p, s, t)
    }
    pub fn sample_grid<R: Rng>(&self, grid: &[F], rng: &mut R) -> Result<Vec<F>, LawError> {
        nrbm_sample_grid(self.p, grid, rng)
    }
}

/// A Gaussian limit N(center, stdev^2).
#[derive(Debug, Clone, Copy)]
pub struct GaussianLimit<F> {
    pub center: F,
    pub stdev: F,
}

impl<F: Real> GaussianLimit<F> {
    pub fn new(center: F, stdev: F) -> Self {
        assert!(stdev > F::zero(), "stdev must be positive");
        Self { center, stdev }
    }
    pub fn cdf(&self, x: F) -> F {
        normal_cdf((x - self.center) / self.stdev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn p(v: f64) -> MemoryParam {
        MemoryParam::new(v).unwrap()
    }

    #[test]
    fn pdf_values() {
        // (2 pi)^{-1/2} e^{-1/2}
        let expected = (std::f64::consts::TAU).sqrt().recip() * (-0.5f64).exp();
        assert_relative_eq!(stable_half_pdf(1.0f64), expected, max_relative = 1e-14);
        assert_relative_eq!(stable_half_pdf(1.0f64), 0.24197072451914337, max_relative = 1e-12);
        assert_eq!(stable_half_pdf(0.0f64), 0.0);
        assert_eq!(stable_half_pdf(-3.0f64), 0.0);
        assert!(stable_half_pdf(1e-4f64) < 1e-100);
    }

    #[test]
    fn cdf_values() {
        // 2 (1 - Phi(1))
        assert_relative_eq!(stable_half_cdf(1.0f64), 0.3173105078629141, max_relative = 1e-12);
        assert_eq!(stable_half_cdf(0.0f64), 0.0);
        assert!(stable_half_cdf(1e12f64) > 1.0 - 1e-5);
        // Median by bisection oracle.
        let (mut lo, mut hi) = (0.1f64, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if stable_half_cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(lo, 2.1981, max_relative = 1e-4);
        assert_relative_eq!(stable_half_quantile(0.5f64).unwrap(), lo, max_relative = 1e-10);
    }

    #[test]
    fn quantile_round_trip() {
        for &u in &[0.001, 0.05, 0.31731, 0.5, 0.9, 0.999] {
            let t = stable_half_quantile(u).unwrap();
            assert_relative_eq!(stable_half_cdf(t), u, max_relative = 1e-12);
        }
        assert_relative_eq!(stable_half_quantile(0.31731f64).unwrap(), 1.0, max_relative = 1e-4);
        assert!(stable_half_quantile(0.0f64).is_err());
        assert!(stable_half_quantile(1.0f64).is_err());
    }

    #[test]
    fn diffusive_return_examples() {
        // p = 1/2 reduces to the Stable(1/2) CDF itself.
        for &x in &[0.3, 1.0, 5.0] {
            assert_relative_eq!(
                diffusive_return_cdf(p(0.5), x).unwrap(),
                stable_half_cdf(x),
                max_relative = 1e-14
            );
        }
        // p = 0.7, x = 1: erfc(sqrt(0.1))
        assert_relative_eq!(
            diffusive_return_cdf(p(0.7), 1.0f64).unwrap(),
            0.6547208460185767,
            max_relative = 1e-10
        );
        assert_eq!(diffusive_return_cdf(p(0.7), 0.0f64).unwrap(), 0.0);
        assert!(diffusive_return_cdf(p(0.75), 1.0f64).is_err());
    }

    #[test]
    fn critical_return_examples() {
        assert_relative_eq!(critical_return_cdf(1.0f64), 0.3173105078629141, max_relative = 1e-12);
        let med = stable_half_quantile(0.5f64).unwrap();
        assert_relative_eq!(critical_return_cdf(med), 0.5, max_relative = 1e-12);
        assert!(critical_return_cdf(1e9f64) > 1.0 - 1e-4);
    }

    #[test]
    fn critical_training_examples() {
        assert_relative_eq!(critical_training_k::<f64>(p(0.5), 1_000_000).unwrap(), 1000.0, max_relative = 1e-12);
        assert_relative_eq!(critical_training_k::<f64>(p(0.6), 1_000_000).unwrap(), 244.74, max_relative = 1e-3);
        assert_relative_eq!(critical_training_k::<f64>(p(0.0), 1_000_000).unwrap(), 24026.0, max_relative = 1e-3);
        assert!(critical_training_k::<f64>(p(0.75), 10).is_err());

        assert_relative_eq!(critical_training_k_critical::<f64>(1_000_000), 13.815510557964274, max_relative = 1e-12);
        assert_eq!(critical_training_k_critical::<f64>(1), 0.0);
    }

    #[test]
    fn return_scale_examples() {
        assert_relative_eq!(return_scale::<f64>(p(0.5), 100).unwrap(), 1.0e4, max_relative = 1e-12);
        assert_relative_eq!(return_scale::<f64>(p(0.7), 20).unwrap(), 20480.0, max_relative = 1e-10);
        assert_relative_eq!(return_scale::<f64>(p(0.2), 1000).unwrap(), 3.30e4, max_relative = 2e-3);
        assert!(return_scale::<f64>(p(0.8), 5).is_err());
    }

    /// Reparametrization round trip: substituting n = return_scale(p, k)
    /// into critical_training_k returns k.
    #[test]
    fn scale_round_trip() {
        for pv in [0.0, 0.2, 0.5, 0.6, 0.7, 0.74] {
            for k in [10u64, 100, 5000] {
                let n = return_scale::<f64>(p(pv), k).unwrap();
                let e: f64 = 3.0 - 4.0 * pv;
                let back = e.powf(-1.0 / (4.0 - 4.0 * pv)) * n.powf(e / (4.0 - 4.0 * pv));
                assert_relative_eq!(back, k as f64, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn trained_mean_examples() {
        assert_relative_eq!(trained_limit_mean(p(0.5), 1.0f64).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(trained_limit_mean(p(0.6), 0.25f64).unwrap(), 0.9784, max_relative = 1e-3);
        // Rebellious: mean decays; docile: mean grows.
        assert!(trained_limit_mean(p(0.3), 100.0f64).unwrap() < trained_limit_mean(p(0.3), 1.0f64).unwrap());
        assert!(trained_limit_mean(p(0.7), 100.0f64).unwrap() > trained_limit_mean(p(0.7), 1.0f64).unwrap());
        assert_eq!(trained_limit_mean(p(0.3), 0.0f64).unwrap_err(), LawError::DivergentMean);
    }

    #[test]
    fn nrbm_cov_examples() {
        // Variance linear in t.
        for pv in [0.0, 0.3, 0.6] {
            assert_relative_eq!(
                nrbm_cov(p(pv), 2.0f64, 2.0).unwrap(),
                2.0 / (3.0 - 4.0 * pv),
                max_relative = 1e-12
            );
        }
        // Standard BM at p = 1/2.
        assert_relative_eq!(nrbm_cov(p(0.5), 0.3f64, 1.7).unwrap(), 0.3, max_relative = 1e-13);
        assert_relative_eq!(nrbm_cov(p(0.6), 0.5f64, 1.0).unwrap(), 0.9572, max_relative = 1e-3);
        // Symmetric extension.
        assert_eq!(
            nrbm_cov(p(0.6), 1.0f64, 0.5).unwrap(),
            nrbm_cov(p(0.6), 0.5f64, 1.0).unwrap()
        );
        assert!(nrbm_cov(p(0.6), 0.0f64, 1.0).is_err());
    }

    #[test]
    fn nrbm_grids_factorize() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
        let grid: Vec<f64> = (1..=64).map(|i| i as f64 / 13.0).collect();
        for pv in [0.0, 0.45, 0.74] {
            assert!(nrbm_sample_grid(p(pv), &grid, &mut rng).is_ok());
        }
        assert!(nrbm_sample_grid(p(0.6), &[1.0f64, 0.5], &mut rng).is_err());
    }

    #[test]
    fn nrbm_single_point_variance() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
        let t = 0.7f64;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = nrbm_sample_grid(p(0.6), &[t], &mut rng).unwrap()[0];
            sum += x;
            sum2 += x * x;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        let theory = nrbm_cov(p(0.6), t, t).unwrap();
        assert!((var / theory - 1.0).abs() < 0.03, "var {var} vs {theory}");
    }

    #[test]
    fn nrbm_grid_covariance_matches() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5150);
        let grid = [0.25f64, 0.5, 1.0];
        let n = 100_000;
        let mut acc = [[0.0f64; 3]; 3];
        for _ in 0..n {
            let x = nrbm_sample_grid(p(0.6), &grid, &mut rng).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let emp = acc[i][j] / n as f64;
                let theory = nrbm_cov(p(0.6), grid[i], grid[j]).unwrap();
                assert!((emp / theory - 1.0).abs() < 0.05, "({i},{j}): {emp} vs {theory}");
            }
        }
    }

    #[test]
    fn nrbm_bm_increments_uncorrelated_at_half() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(23);
        let grid = [0.5f64, 1.0, 1.5];
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = nrbm_sample_grid(p(0.5), &grid, &mut rng).unwrap();
            acc += (x[1] - x[0]) * (x[2] - x[1]);
        }
        // Both increments have variance 1/2; correlation within MC error.
        assert!((acc / n as f64).abs() < 0.01);
    }

    #[test]
    fn overtrained_centers() {
        // p = 1/2: the walk keeps its head start on average.
        assert_relative_eq!(overtrained_center::<f64>(p(0.5), 123_456, 500).unwrap(), 500.0, max_relative = 1e-12);
        // Centering k^{2-2p}/n^{1-2p} = k^{0.8} n^{0.2} at p = 0.6.
        let c: f64 = overtrained_center(p(0.6), 1_000_000, 1995).unwrap();
        assert_relative_eq!(c, 1995.0f64.powf(0.8) * 1.0e6f64.powf(0.2), max_relative = 1e-12);
        // Oracle: the exact mean of the trained walk is k a_k / a_n.
        let a_k: f64 = crate::gamma::weight(p(0.6), 1995).unwrap();
        let a_n: f64 = crate::gamma::weight(p(0.6), 1_000_000).unwrap();
        assert_relative_eq!(c, 1995.0 * a_k / a_n, max_relative = 1e-2);

        assert_relative_eq!(
            overtrained_center_critical::<f64>(1_000_000, 200),
            14142.135623730951,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lil_values() {
        assert_relative_eq!(lil_constant::<f64>(p(0.5)).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(lil_constant::<f64>(p(0.6)).unwrap(), 1.2909944487358056, max_relative = 1e-12);
        assert_relative_eq!(lil_constant::<f64>(p(0.0)).unwrap(), 0.5773502691896258, max_relative = 1e-12);
    }
}
