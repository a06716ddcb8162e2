//! Deterministic vector math, probability kernels, seeded randomness, and the
//! finite-difference gradient oracle the rest of the crate is tested against.
//!
//! Everything here is f64. Operations are pure; [`SeededRng`] is single-owner
//! and callers split randomness by deriving child seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Dot product. Panics are avoided by checking dimensions at the call sites
/// that take untrusted input; internal callers guarantee matching lengths.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// Cosine similarity, symmetric and invariant under positive scaling of
/// either argument.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine_sim: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("cosine_sim: empty vectors".into()));
    }
    check_finite(a, "cosine_sim lhs")?;
    check_finite(b, "cosine_sim rhs")?;
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine_sim: zero-norm input".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Scale a vector to unit L2 norm. A zero vector is an error, not a silent
/// zero output: a zero embedding always indicates an upstream bug.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v, "l2_normalize input")?;
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(Error::Domain("l2_normalize: zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// log(sum(exp(z))) with max subtraction.
pub fn logsumexp(z: &[f64]) -> f64 {
    debug_assert!(!z.is_empty());
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Temperature-scaled softmax, computed via max subtraction.
pub fn softmax(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature must be > 0, got {temperature}"
        )));
    }
    if z.is_empty() {
        return Err(Error::Input("softmax: empty logits".into()));
    }
    check_finite(z, "softmax logits")?;
    let scaled: Vec<f64> = z.iter().map(|x| x / temperature).collect();
    let lse = logsumexp(&scaled);
    Ok(scaled.iter().map(|x| (x - lse).exp()).collect())
}

/// Seeded deterministic RNG. Identical seeds produce identical draw
/// sequences; callers that need independent streams derive children.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream. Advances this generator.
    pub fn child(&mut self) -> SeededRng {
        SeededRng::new(self.inner.random::<u64>())
    }

    /// Uniform draw in the half-open interval [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from [0, n) uniformly without replacement,
    /// returned in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = self.inner.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Draw from Beta(2, 2) on (0, 1) via two Gamma(2, 1) variates, each the
    /// sum of two exponentials: X/(X+Y) with X,Y ~ Gamma(2,1).
    pub fn beta_2_2(&mut self) -> f64 {
        loop {
            let x = -((self.positive_uniform()).ln()) - (self.positive_uniform()).ln();
            let y = -((self.positive_uniform()).ln()) - (self.positive_uniform()).ln();
            let lambda = x / (x + y);
            // x, y > 0 so lambda is in (0, 1) unless rounding collapses it.
            if lambda > 0.0 && lambda < 1.0 {
                return lambda;
            }
        }
    }

    fn positive_uniform(&mut self) -> f64 {
        loop {
            let u = self.inner.random::<f64>();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform draw in (-scale, scale), used for parameter initialization.
    pub fn uniform_symmetric(&mut self, scale: f64) -> f64 {
        (self.inner.random::<f64>() * 2.0 - 1.0) * scale
    }
}

/// Max relative error between an analytic gradient and central finite
/// differences of `f` around `params`, over the given coordinates:
/// `|analytic - fd| / max(1, |fd|)`.
pub fn grad_check_coords<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "grad_check: params {} vs analytic {}",
            params.len(),
            analytic.len()
        )));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work)?;
        work[i] = orig - h;
        let down = f(&work)?;
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "grad_check: non-finite loss at coordinate {i}"
            )));
        }
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

/// [`grad_check_coords`] over every coordinate.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check_coords(f, params, analytic, h, &coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identity_and_orthogonal() {
        let u = l2_normalize(&[2.0, -1.0, 0.5]).unwrap();
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn cosine_hand_value() {
        // dot = 4, norms sqrt(5) * sqrt(5)
        let c = cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert!((c - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_scale_invariance() {
        let a = [0.3, -1.2, 2.0];
        let b = [1.0, 0.7, -0.4];
        let c0 = cosine_sim(&a, &b).unwrap();
        for alpha in [0.25, 3.0, 1e6] {
            let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let c1 = cosine_sim(&scaled, &b).unwrap();
            assert!((c0 - c1).abs() < 1e-12, "alpha={alpha}: {c0} vs {c1}");
        }
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15);
        assert!((v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_idempotent_and_zero_error() {
        let v = l2_normalize(&[0.2, -0.9, 1.4]).unwrap();
        let w = l2_normalize(&v).unwrap();
        for (x, y) in v.iter().zip(&w) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((l2_norm(&w) - 1.0).abs() < 1e-12);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_uniform_single_and_hand_value() {
        let p = softmax(&[0.7, 0.7, 0.7], 0.3).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let one = softmax(&[5.0], 2.0).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-15);
        let p = softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.731058578630).abs() < 1e-9);
        assert!((p[1] - 0.268941421369).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance_and_sum() {
        let z = [0.1, -2.0, 3.4, 0.0];
        let p = softmax(&z, 0.7).unwrap();
        let shifted: Vec<f64> = z.iter().map(|x| x + 11.0).collect();
        let q = softmax(&shifted, 0.7).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn softmax_bad_temperature() {
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(softmax(&[1.0], -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_overflow_safe() {
        let p = softmax(&[1000.0, 999.0], 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rng_reproducible_and_child_streams_differ() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<f64> = (0..32).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..32).map(|_| b.uniform()).collect();
        assert_eq!(xs, ys);

        let mut root = SeededRng::new(7);
        let mut c1 = root.child();
        let mut c2 = root.child();
        assert_ne!(c1.uniform(), c2.uniform());
    }

    #[test]
    fn beta22_moments_and_support() {
        let mut rng = SeededRng::new(1234);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.beta_2_2()).collect();
        assert!(draws.iter().all(|x| *x > 0.0 && *x < 1.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 0.05).abs() < 0.005, "var {var}");
    }

    #[test]
    fn grad_check_quadratic_linear_and_bug_detection() {
        let params = [0.4, -1.2, 2.3, 0.9];
        // f(x) = |x|^2, grad 2x
        let quad = |x: &[f64]| Ok(dot(x, x));
        let grad: Vec<f64> = params.iter().map(|x| 2.0 * x).collect();
        let err = grad_check(quad, &params, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "quadratic err {err}");

        // linear f(x) = c.x
        let c = [1.5, -0.3, 0.0, 2.0];
        let lin = |x: &[f64]| Ok(dot(&c, x));
        let err = grad_check(lin, &params, &c, 1e-5).unwrap();
        assert!(err < 1e-10, "linear err {err}");

        // 5% bug: claims gradient 2.1x
        let wrong: Vec<f64> = params.iter().map(|x| 2.1 * x).collect();
        let err = grad_check(quad, &params, &wrong, 1e-5).unwrap();
        assert!(err > 1e-2, "bug not detected, err {err}");
    }

    #[test]
    fn sample_indices_distinct() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let idx = rng.sample_indices(10, 7);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 7);
            assert!(idx.iter().all(|i| *i < 10));
        }
    }
}
