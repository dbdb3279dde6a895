//! Game gadgets: padding, generalized matching pennies, and logit responses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::game::{dot, Game, MixedStrategy, StrategyProfile, MAX_TENSOR_ENTRIES};
use crate::polytope::{top_smooth, SmoothParams};
use crate::rng;

/// Replicates each action `k` times: action `i + l n` of the padded game is
/// a copy of action `i`, so `A' = J_k (x) A` up to index order.
pub fn pad_game(game: &Game, k: usize) -> Result<Game> {
    if game.num_players() != 2 {
        return Err(invalid("padding is defined for two-player games"));
    }
    if k == 0 {
        return Err(invalid("padding factor must be positive"));
    }
    let n = game.num_actions();
    let big = n.checked_mul(k).ok_or_else(|| Error::ResourceLimit("padded size overflows".into()))?;
    if big.checked_mul(big).is_none_or(|e| e > MAX_TENSOR_ENTRIES) {
        return Err(Error::ResourceLimit(format!(
            "padded game would have {big}^2 entries per player, above the limit of {MAX_TENSOR_ENTRIES}"
        )));
    }
    let payoffs = game
        .tensors()
        .iter()
        .map(|a| (0..big * big).map(|idx| a[(idx / big) % n * n + (idx % big) % n]).collect())
        .collect();
    Game::new(2, big, payoffs)
}

/// Marginalizes a strategy on `n k` actions onto the `n` originals.
pub fn unpad_profile(x: &MixedStrategy, n: usize, k: usize) -> Result<MixedStrategy> {
    if n == 0 || k == 0 || x.len() != n * k {
        return Err(invalid(format!("strategy of length {} cannot be unpadded to {n} x {k}", x.len())));
    }
    let mut out = vec![0.0; n];
    for (i, &p) in x.probs().iter().enumerate() {
        out[i % n] += p;
    }
    Ok(MixedStrategy::from_vec_unchecked(out))
}

/// Spreads each coordinate evenly over its `k` copies.
pub fn lift_profile(z: &MixedStrategy, k: usize) -> Result<MixedStrategy> {
    if k == 0 {
        return Err(invalid("padding factor must be positive"));
    }
    let n = z.len();
    let out = (0..n * k).map(|i| z.probs()[i % n] / k as f64).collect();
    Ok(MixedStrategy::from_vec_unchecked(out))
}

/// Generalized matching pennies on `2K` actions with block payoff `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmpParams {
    pub k: usize,
    pub big_m: f64,
}

impl GmpParams {
    /// `M = 2 K^3`.
    pub fn new(k: usize) -> Self {
        Self { k, big_m: 2.0 * (k as f64).powi(3) }
    }

    pub fn num_actions(&self) -> usize {
        2 * self.k
    }

    /// `A*`: `M` on the diagonal 2x2 blocks, 0 elsewhere.
    pub fn base_matrix(&self) -> Vec<f64> {
        let n = self.num_actions();
        (0..n * n).map(|idx| if idx / n / 2 == idx % n / 2 { self.big_m } else { 0.0 }).collect()
    }

    /// Smallest marginal tolerance the marginal lemma supports: `8 sigma K^2 / M`.
    pub fn marginal_threshold(&self, sigma: f64) -> f64 {
        8.0 * sigma * (self.k * self.k) as f64 / self.big_m
    }
}

/// `normalized = (raw + offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineScale {
    pub offset: f64,
    pub scale: f64,
}

impl AffineScale {
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw + self.offset) / self.scale
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.scale - self.offset
    }

    /// A payoff difference in raw units expressed in normalized units.
    pub fn gain_to_normalized(&self, raw_gain: f64) -> f64 {
        raw_gain / self.scale
    }
}

/// A perturbed GMP game in raw units and its `[0, 1]` normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct GmpGame {
    pub params: GmpParams,
    /// `A* + E_A`, row-major.
    pub a: Vec<f64>,
    /// `-A* + E_B`, row-major.
    pub b: Vec<f64>,
    /// Shared map sending `[-M, M + 1]` onto `[0, 1]`.
    pub scale: AffineScale,
    pub normalized: Game,
}

/// Builds `(A* + E_A, -A* + E_B)` from perturbations with entries in `[0, 1]`.
pub fn make_gmp(params: GmpParams, perturb_a: &[f64], perturb_b: &[f64]) -> Result<GmpGame> {
    if params.k < 2 {
        return Err(invalid(format!("K must be at least 2, got {}", params.k)));
    }
    if !(params.big_m > 0.0 && params.big_m.is_finite()) {
        return Err(invalid(format!("M must be positive, got {}", params.big_m)));
    }
    let n = params.num_actions();
    for (name, e) in [("E_A", perturb_a), ("E_B", perturb_b)] {
        if e.len() != n * n {
            return Err(invalid(format!("{name} has {} entries, expected {}", e.len(), n * n)));
        }
        if let Some(i) = e.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!("{name} entry ({}, {}) is {}, outside [0, 1]", i / n, i % n, e[i])));
        }
    }
    let base = params.base_matrix();
    let a: Vec<f64> = base.iter().zip(perturb_a).map(|(s, e)| s + e).collect();
    let b: Vec<f64> = base.iter().zip(perturb_b).map(|(s, e)| e - s).collect();
    let scale = AffineScale { offset: params.big_m, scale: 2.0 * params.big_m + 1.0 };
    let norm = |v: &[f64]| v.iter().map(|&x| scale.normalize(x).clamp(0.0, 1.0)).collect();
    let normalized = Game::bimatrix(n, norm(&a), norm(&b))?;
    Ok(GmpGame { params, a, b, scale, normalized })
}

/// GMP game with i.i.d. uniform perturbations.
pub fn random_gmp(params: GmpParams, seed: u64) -> Result<GmpGame> {
    let n = params.num_actions();
    let mut r = rng::seeded(seed);
    let ea: Vec<f64> = (0..n * n).map(|_| r.random::<f64>()).collect();
    let eb: Vec<f64> = (0..n * n).map(|_| r.random::<f64>()).collect();
    make_gmp(params, &ea, &eb)
}

/// Block marginals `x_{2k-1} + x_{2k}` and the verdict of the marginal test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmpMarginals {
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    /// Every marginal lies within `epsilon` of `1/K`.
    pub ok: bool,
}

/// Checks that both players put `1/K +- epsilon` on every block.
///
/// Refuses tolerances below `8 sigma K^2 / M`, where the marginal lemma says
/// nothing.
pub fn check_gmp_marginals(
    x: &MixedStrategy,
    y: &MixedStrategy,
    params: &GmpParams,
    sigma: f64,
    epsilon: f64,
) -> Result<GmpMarginals> {
    let n = params.num_actions();
    if x.len() != n || y.len() != n {
        return Err(invalid(format!("strategies must have {n} entries")));
    }
    let threshold = params.marginal_threshold(sigma);
    if epsilon < threshold * (1.0 - 1e-12) {
        return Err(invalid(format!("epsilon {epsilon} is below the lemma's threshold {threshold}")));
    }
    let blocks = |s: &MixedStrategy| s.probs().chunks(2).map(|c| c[0] + c[1]).collect::<Vec<_>>();
    let (x_bar, y_bar) = (blocks(x), blocks(y));
    let target = 1.0 / params.k as f64;
    let ok = x_bar.iter().chain(&y_bar).all(|v| (v - target).abs() <= epsilon + 1e-12);
    Ok(GmpMarginals { x_bar, y_bar, ok })
}

/// Softmax `exp(lambda u_i) / sum exp(lambda u_j)`.
pub fn logit_response(u: &[f64], lambda: f64) -> Result<MixedStrategy> {
    if u.is_empty() {
        return Err(invalid("payoff vector is empty"));
    }
    if u.iter().any(|v| !v.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("payoffs and lambda must be finite, lambda non-negative"));
    }
    let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = u.iter().map(|v| (lambda * (v - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(MixedStrategy::from_vec_unchecked(w.into_iter().map(|v| v / total).collect()))
}

/// Logit value against the best smooth value for the same payoffs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitComparison {
    pub logit_value: f64,
    pub smooth_value: f64,
    /// `logit_value <= smooth_value` up to the polytope tolerance.
    pub holds: bool,
}

pub fn logit_vs_smooth(u: &[f64], lambda: f64, smooth: &SmoothParams) -> Result<LogitComparison> {
    if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("payoffs must lie in [0, 1]"));
    }
    let tau = logit_response(u, lambda)?;
    let logit_value = dot(tau.probs(), u);
    let smooth_value = top_smooth(u, smooth)?.value;
    Ok(LogitComparison { logit_value, smooth_value, holds: logit_value <= smooth_value + smooth.tol() })
}

/// Result of [`logit_fixed_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitFixedPoint {
    pub profile: StrategyProfile,
    /// `max_j |x_j - logit(payoffs_j(x))|_inf` at the returned profile.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped simultaneous iteration `x <- (1 - d) x + d logit(payoffs(x))`,
/// started from the uniform profile.
pub fn logit_fixed_point(
    game: &Game,
    lambda: f64,
    damping: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LogitFixedPoint> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(invalid(format!("damping must lie in (0, 1], got {damping}")));
    }
    let m = game.num_players();
    let responses = |p: &StrategyProfile| -> Result<Vec<MixedStrategy>> {
        (0..m).map(|j| logit_response(&game.deviation_payoffs(p, j)?, lambda)).collect()
    };
    let residual_of = |p: &StrategyProfile, taus: &[MixedStrategy]| {
        p.strategies()
            .iter()
            .zip(taus)
            .flat_map(|(x, t)| x.probs().iter().zip(t.probs()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    };
    let mut profile = StrategyProfile::uniform(m, game.num_actions());
    let mut taus = responses(&profile)?;
    let mut residual = residual_of(&profile, &taus);
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        let next = profile
            .strategies()
            .iter()
            .zip(&taus)
            .map(|(x, t)| {
                let v = x.probs().iter().zip(t.probs()).map(|(a, b)| (1.0 - damping) * a + damping * b).collect();
                MixedStrategy::from_vec_unchecked(v)
            })
            .collect();
        profile = StrategyProfile::new(next)?;
        taus = responses(&profile)?;
        residual = residual_of(&profile, &taus);
        iterations += 1;
    }
    Ok(LogitFixedPoint { profile, residual, iterations, converged: residual <= tol })
}
