//! Exhaustive search over k-uniform profiles for weak equilibria.

use rand::Rng;
use rayon::prelude::*;

use crate::equilibrium::{is_weak_equilibrium, verify, EquilibriumReport};
use crate::error::{invalid, Error, Result};
use crate::game::{Game, MixedStrategy, StrategyProfile};
use crate::polytope::SmoothParams;
use crate::query::{query_equilibrium, QueryCountingOracle, QueryOutcome, QueryParams};
use crate::sampling::KUniformProfile;

/// Default cap on the number of profiles a search may visit.
pub const DEFAULT_MAX_PROFILES: u64 = 100_000_000;

/// Length-`n` non-negative integer vectors summing to `k`, in decreasing
/// lexicographic order: `(k, 0, .., 0)` first, `(0, .., 0, k)` last.
#[derive(Clone, Debug)]
pub struct Compositions {
    current: Option<Vec<u32>>,
}

/// Iterates every single-player k-uniform count vector over `n` actions.
pub fn enumerate_k_uniform(n: usize, k: usize) -> Compositions {
    let current = (n > 0 && k > 0).then(|| {
        let mut c = vec![0u32; n];
        c[0] = k as u32;
        c
    });
    Compositions { current }
}

impl Iterator for Compositions {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        let out = self.current.take()?;
        let n = out.len();
        let mut c = out.clone();
        if let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| c[i] > 0) {
            let rest: u32 = c[i + 1..].iter().sum();
            c[i] -= 1;
            c[i + 1] = rest + 1;
            for x in &mut c[i + 2..] {
                *x = 0;
            }
            self.current = Some(c);
        }
        Some(out)
    }
}

/// `C(n + k - 1, k)`, saturating at `u64::MAX`.
pub fn count_k_uniform(n: usize, k: usize) -> u64 {
    if n == 0 {
        return 0;
    }
    let (n, k) = (n as u128, k as u128);
    let r = k.min(n - 1);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n + k - 1 - i) / (i + 1);
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Size of the joint search space, or `None` if it exceeds `cap`.
pub(crate) fn joint_count(per_player: &[u64], cap: u64) -> Option<u64> {
    per_player.iter().try_fold(1u64, |acc, &c| acc.checked_mul(c).filter(|&v| v <= cap))
}

/// Splits a joint index into per-player indices, player 0 most significant.
pub(crate) fn decode(mut index: u64, radices: &[u64], out: &mut [usize]) {
    for (slot, &r) in out.iter_mut().zip(radices).rev() {
        *slot = (index % r) as usize;
        index /= r;
    }
}

/// Settings for [`find_weak`].
#[derive(Clone, Debug, PartialEq)]
pub struct FindWeakConfig {
    /// Use this `k` instead of the default formula.
    pub k_override: Option<usize>,
    /// Constant in `k = c1 m log(8m / sigma) / epsilon^2`.
    pub constant_c1: f64,
    /// Number of times `k` is doubled after a failed search.
    pub escalations: usize,
    pub max_profiles: u64,
}

impl Default for FindWeakConfig {
    fn default() -> Self {
        Self { k_override: None, constant_c1: 1.0, escalations: 4, max_profiles: DEFAULT_MAX_PROFILES }
    }
}

/// Default support size `ceil(c1 m log(8m / sigma) / epsilon^2)`.
pub fn default_k(m: usize, sigma: f64, epsilon: f64, c1: f64) -> usize {
    let m = m as f64;
    let k = c1 * m * (8.0 * m / sigma).ln() / (epsilon * epsilon);
    (k.ceil() as usize).max(1)
}

/// Searches k-uniform profiles in lexicographic order for a weak equilibrium.
///
/// Returns the first profile in that order, whatever the thread count. When
/// a search at `k` finds nothing, `k` is doubled up to `escalations` times.
pub fn find_weak(
    game: &Game,
    smooth: &SmoothParams,
    epsilon: f64,
    config: &FindWeakConfig,
) -> Result<(KUniformProfile, EquilibriumReport)> {
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let m = game.num_players();
    let n = game.num_actions();
    let k0 = match config.k_override {
        Some(0) => return Err(invalid("k must be positive")),
        Some(k) => k,
        None => default_k(m, smooth.sigma(), epsilon, config.constant_c1),
    };
    let mut k = k0;
    for _ in 0..=config.escalations {
        let per = count_k_uniform(n, k);
        let total = joint_count(&vec![per; m], config.max_profiles).ok_or_else(|| {
            Error::ResourceLimit(format!(
                "{per}^{m} profiles of {k}-uniform strategies exceed the cap of {}; \
                 raise epsilon or pass a smaller k",
                config.max_profiles
            ))
        })?;
        if let Some(found) = search(game, smooth, epsilon, k, total)? {
            let report = verify(game, &found.to_profile(), smooth, epsilon)?;
            return Ok((found, report));
        }
        k *= 2;
    }
    Err(Error::NotFound(format!(
        "no weak equilibrium among k-uniform profiles for k up to {}",
        k / 2
    )))
}

fn search(
    game: &Game,
    smooth: &SmoothParams,
    epsilon: f64,
    k: usize,
    total: u64,
) -> Result<Option<KUniformProfile>> {
    let m = game.num_players();
    let n = game.num_actions();
    let comps: Vec<Vec<u32>> = enumerate_k_uniform(n, k).collect();
    let strategies: Vec<MixedStrategy> = comps
        .iter()
        .map(|c| MixedStrategy::from_vec_unchecked(c.iter().map(|&x| x as f64 / k as f64).collect()))
        .collect();
    let radices = vec![comps.len() as u64; m];
    let hit = (0..total).into_par_iter().find_map_first(|index| {
        let mut idx = vec![0usize; m];
        decode(index, &radices, &mut idx);
        let profile = StrategyProfile::new(idx.iter().map(|&i| strategies[i].clone()).collect())
            .expect("strategies share a length");
        match is_weak_equilibrium(game, &profile, smooth, epsilon) {
            Ok(true) => Some(Ok(idx)),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        }
    });
    match hit {
        None => Ok(None),
        Some(Err(e)) => Err(e),
        Some(Ok(idx)) => {
            let counts = idx.iter().map(|&i| comps[i].clone()).collect();
            Ok(Some(KUniformProfile::new(k, counts)?))
        }
    }
}

/// Runs the query-based solver on an in-memory game, then re-verifies the
/// result with full payoff access.
pub fn find_weak_randomized(
    game: &Game,
    smooth: &SmoothParams,
    params: &QueryParams,
    rng: &mut impl Rng,
) -> Result<(QueryOutcome, EquilibriumReport)> {
    let mut oracle = QueryCountingOracle::new(game);
    let outcome = query_equilibrium(&mut oracle, params, rng)?;
    if !outcome.found {
        return Err(Error::NotFound("no candidate profile passed the sampled test".into()));
    }
    let report = verify(game, &outcome.profile, smooth, params.epsilon)?;
    Ok((outcome, report))
}
