//! The smooth strategy polytope: `{x in simplex : x_i <= c_i}`.
//!
//! With the uniform base measure every cap is `min(1, 1/(n sigma))`. A
//! general base measure `mu` gives caps `min(1, mu_i / sigma)`.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::game::{MixedStrategy, DEFAULT_TOL};

#[derive(Clone, Debug, PartialEq)]
enum Caps {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

/// Smoothness level and the resulting per-action caps.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothParams {
    sigma: f64,
    n: usize,
    caps: Caps,
    tol: f64,
}

impl SmoothParams {
    /// Uniform base measure over `n` actions.
    pub fn new(sigma: f64, n: usize) -> Result<Self> {
        check_sigma(sigma)?;
        if n == 0 {
            return Err(invalid("the action count must be positive"));
        }
        let cap = (1.0 / (n as f64 * sigma)).min(1.0);
        Ok(Self { sigma, n, caps: Caps::Uniform(cap), tol: DEFAULT_TOL })
    }

    /// General base measure `mu` (a probability vector).
    pub fn with_base_measure(sigma: f64, mu: &[f64]) -> Result<Self> {
        check_sigma(sigma)?;
        let mu = MixedStrategy::new(mu.to_vec())?;
        let caps = mu.probs().iter().map(|&m| (m / sigma).min(1.0)).collect();
        Ok(Self { sigma, n: mu.len(), caps: Caps::PerCoordinate(caps), tol: DEFAULT_TOL })
    }

    /// Same tolerance for membership and sum checks.
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Same smoothness level over a different number of actions.
    pub fn resized(&self, n: usize) -> Result<Self> {
        Ok(Self::new(self.sigma, n)?.with_tol(self.tol))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn cap(&self, i: usize) -> f64 {
        match &self.caps {
            Caps::Uniform(c) => *c,
            Caps::PerCoordinate(c) => c[i],
        }
    }

    /// The common cap, if the base measure is uniform.
    pub fn uniform_cap(&self) -> Option<f64> {
        match self.caps {
            Caps::Uniform(c) => Some(c),
            Caps::PerCoordinate(_) => None,
        }
    }

    pub fn caps(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.cap(i)).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(invalid(format!(
                "vector has {len} entries, smoothness parameters expect {}",
                self.n
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(invalid(format!("sigma must lie in (0, 1], got {sigma}")));
    }
    Ok(())
}

/// True when every entry respects its cap up to the tolerance.
pub fn is_smooth(x: &MixedStrategy, smooth: &SmoothParams) -> bool {
    x.len() == smooth.n()
        && x.probs().iter().enumerate().all(|(i, &p)| p <= smooth.cap(i) + smooth.tol())
}

/// Sparse maximizer of `<x, values>` over the smooth polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothTop {
    pub value: f64,
    /// `(action, weight)` pairs with positive weight, in fill order.
    pub support: Vec<(usize, f64)>,
}

impl SmoothTop {
    pub fn to_strategy(&self, n: usize) -> MixedStrategy {
        let mut v = vec![0.0; n];
        for &(i, w) in &self.support {
            v[i] = w;
        }
        MixedStrategy::from_vec_unchecked(v)
    }
}

fn desc_then_index(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    |&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Greedy maximizer: fill the largest values up to their caps, lowest index
/// first among ties.
pub fn top_smooth(values: &[f64], smooth: &SmoothParams) -> Result<SmoothTop> {
    smooth.check_len(values.len())?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("values contain NaN"));
    }
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = desc_then_index(values);
    if let Some(cap) = smooth.uniform_cap() {
        let needed = ((1.0 / cap).ceil() as usize + 1).min(n);
        if needed < n {
            order.select_nth_unstable_by(needed - 1, &cmp);
            order.truncate(needed);
        }
    }
    order.sort_unstable_by(&cmp);
    let mut remaining = 1.0f64;
    let mut support = Vec::new();
    let mut value = 0.0;
    for i in order {
        if remaining <= 1e-12 {
            break;
        }
        let w = smooth.cap(i).min(remaining);
        if w <= 0.0 {
            continue;
        }
        remaining -= w;
        value += w * values[i];
        support.push((i, w));
    }
    Ok(SmoothTop { value, support })
}

/// Maximum of `<x, values>` over the smooth polytope and a maximizer.
pub fn top_smooth_average(values: &[f64], smooth: &SmoothParams) -> Result<(f64, MixedStrategy)> {
    let top = top_smooth(values, smooth)?;
    let x = top.to_strategy(values.len());
    Ok((top.value, x))
}

/// KL projection `argmin_{p in K} KL(p || q)` of a non-negative vector.
///
/// The minimizer has the form `p_i = min(lambda q_i, c_i)`; the capped set is
/// a prefix of the actions sorted by `q_i / c_i`. `q` need not be normalized.
/// Zero entries are floored at `1e-300`.
pub fn kl_project(q: &[f64], smooth: &SmoothParams) -> Result<MixedStrategy> {
    smooth.check_len(q.len())?;
    if let Some(i) = q.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("entry {i} is {} (must be finite and non-negative)", q[i])));
    }
    let q: Vec<f64> = q.iter().map(|&v| v.max(1e-300)).collect();
    let n = q.len();
    let total: f64 = q.iter().sum();
    if q.iter().enumerate().all(|(i, &v)| v <= smooth.cap(i)) && (total - 1.0).abs() <= 1e-12 {
        return Ok(MixedStrategy::from_vec_unchecked(q));
    }
    let ratio: Vec<f64> = (0..n).map(|i| q[i] / smooth.cap(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(desc_then_index(&ratio));
    // suffix[j] = sum of q over order[j..]
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + q[order[j]];
    }
    let mut capped_mass = 0.0;
    let mut lambda = 1.0 / total;
    let mut split = n;
    for j in 0..n {
        let l = (1.0 - capped_mass) / suffix[j];
        if l * ratio[order[j]] <= 1.0 {
            lambda = l;
            split = j;
            break;
        }
        capped_mass += smooth.cap(order[j]);
    }
    let mut p = vec![0.0; n];
    for (j, &i) in order.iter().enumerate() {
        p[i] = if j < split { smooth.cap(i) } else { (lambda * q[i]).min(smooth.cap(i)) };
    }
    Ok(MixedStrategy::from_vec_unchecked(p))
}

/// Euclidean projection onto the smooth polytope.
///
/// Solves `p_i = clamp(v_i - tau, 0, c_i)` with `sum p = 1` by bisection on
/// `tau`, then recomputes `tau` exactly on the free set.
pub fn euclidean_project(v: &[f64], smooth: &SmoothParams) -> Result<MixedStrategy> {
    smooth.check_len(v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("vector contains non-finite entries"));
    }
    let caps = smooth.caps();
    let mass = |tau: f64| -> f64 {
        v.iter().zip(&caps).map(|(&x, &c)| (x - tau).clamp(0.0, c)).sum()
    };
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (vmin - 1.0, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);
    let free: Vec<usize> =
        (0..v.len()).filter(|&i| v[i] - tau > 0.0 && v[i] - tau < caps[i]).collect();
    if !free.is_empty() {
        let capped: f64 = (0..v.len()).filter(|&i| v[i] - tau >= caps[i]).map(|i| caps[i]).sum();
        let s: f64 = free.iter().map(|&i| v[i]).sum();
        let exact = (s + capped - 1.0) / free.len() as f64;
        if free.iter().all(|&i| v[i] - exact >= 0.0 && v[i] - exact <= caps[i]) {
            tau = exact;
        }
    }
    let p: Vec<f64> = v.iter().zip(&caps).map(|(&x, &c)| (x - tau).clamp(0.0, c)).collect();
    Ok(MixedStrategy::from_vec_unchecked(p))
}

/// `max_{p in K} KL(p || uniform)`, attained by filling caps greedily.
pub fn max_kl_to_uniform(smooth: &SmoothParams) -> f64 {
    let n = smooth.n() as f64;
    let flat = vec![0.0; smooth.n()];
    let top = top_smooth(&flat, smooth).expect("zero vector has the right length");
    top.support.iter().map(|&(_, p)| p * (p * n).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_example_quarter() {
        let s = SmoothParams::new(0.25, 8).unwrap();
        let (v, x) = top_smooth_average(&[0.9, 0.1, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0], &s).unwrap();
        assert!((v - 0.85).abs() < 1e-15);
        assert_eq!(x.probs(), &[0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigma_one_is_mean() {
        let s = SmoothParams::new(1.0, 4).unwrap();
        let (v, _) = top_smooth_average(&[0.1, 0.2, 0.3, 0.4], &s).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn small_sigma_is_max() {
        let s = SmoothParams::new(0.1, 5).unwrap();
        let (v, x) = top_smooth_average(&[0.1, 0.7, 0.3, 0.7, 0.2], &s).unwrap();
        assert_eq!(v, 0.7);
        assert_eq!(x.probs()[1], 1.0);
    }

    #[test]
    fn fractional_residual() {
        // n = 5, sigma = 0.3: cap = 2/3, one full cap then 1/3
        let s = SmoothParams::new(0.3, 5).unwrap();
        let top = top_smooth(&[0.2, 0.9, 0.5, 0.1, 0.4], &s).unwrap();
        assert_eq!(top.support.len(), 2);
        assert_eq!(top.support[0].0, 1);
        assert_eq!(top.support[1].0, 2);
        assert!((top.value - (0.9 * 2.0 / 3.0 + 0.5 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn kl_spec_example() {
        let s = SmoothParams::new(0.5, 4).unwrap();
        let p = kl_project(&[0.7, 0.1, 0.1, 0.1], &s).unwrap();
        let want = [0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in p.probs().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_idempotent_on_members() {
        let s = SmoothParams::new(0.5, 4).unwrap();
        let q = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(kl_project(&q, &s).unwrap().probs(), &q);
    }

    #[test]
    fn base_measure_caps() {
        let s = SmoothParams::with_base_measure(0.5, &[0.1, 0.2, 0.7]).unwrap();
        assert_eq!(s.caps(), vec![0.2, 0.4, 1.0]);
        let (v, x) = top_smooth_average(&[1.0, 0.9, 0.0], &s).unwrap();
        assert!((v - (0.2 + 0.9 * 0.4)).abs() < 1e-15);
        assert!((x.probs()[2] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(SmoothParams::new(0.0, 3).is_err());
        assert!(SmoothParams::new(1.5, 3).is_err());
    }

    #[test]
    fn max_kl_matches_log_inverse_sigma() {
        let s = SmoothParams::new(0.2, 20).unwrap();
        assert!((max_kl_to_uniform(&s) - 5f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn top_smooth_value_is_feasible_and_dominates(
            values in prop::collection::vec(0.0f64..1.0, 1..12),
            sigma in 0.05f64..1.0,
        ) {
            let s = SmoothParams::new(sigma, values.len()).unwrap();
            let (v, x) = top_smooth_average(&values, &s).unwrap();
            let sum: f64 = x.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(is_smooth(&x, &s));
            let uniform = values.iter().sum::<f64>() / values.len() as f64;
            prop_assert!(v >= uniform - 1e-12);
            let max = values.iter().cloned().fold(0.0, f64::max);
            prop_assert!(v <= max + 1e-12);
        }

        #[test]
        fn kl_projection_is_feasible(
            q in prop::collection::vec(0.0f64..1.0, 1..12),
            sigma in 0.05f64..1.0,
        ) {
            let s = SmoothParams::new(sigma, q.len()).unwrap();
            let p = kl_project(&q, &s).unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(is_smooth(&p, &s));
            let again = kl_project(p.probs(), &s).unwrap();
            for (a, b) in p.probs().iter().zip(again.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn euclidean_projection_is_feasible_and_nearest_on_members(
            v in prop::collection::vec(-1.0f64..2.0, 1..12),
            sigma in 0.05f64..1.0,
        ) {
            let s = SmoothParams::new(sigma, v.len()).unwrap();
            let p = euclidean_project(&v, &s).unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(is_smooth(&p, &s));
            let again = euclidean_project(p.probs(), &s).unwrap();
            for (a, b) in p.probs().iter().zip(again.probs()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
