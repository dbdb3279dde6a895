//! Query-efficient weak equilibrium search.
//!
//! The solver reads payoffs only through a [`QueryCountingOracle`], one entry
//! at a time. The number of lookups depends on the accuracy parameters and
//! the player count, never on the number of actions.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumeration::{count_k_uniform, decode, enumerate_k_uniform, joint_count};
use crate::error::{invalid, Error, Result};
use crate::game::{contract_dims, Game, MixedStrategy, PayoffSource, StrategyProfile};
use crate::polytope::{top_smooth, SmoothParams};

/// Counts every payoff lookup made against a game.
pub struct QueryCountingOracle<'a> {
    source: &'a dyn PayoffSource,
    count: u64,
    log: Option<Vec<(usize, Vec<usize>)>>,
}

impl<'a> QueryCountingOracle<'a> {
    pub fn new(source: &'a dyn PayoffSource) -> Self {
        Self { source, count: 0, log: None }
    }

    /// Also records every `(player, actions)` lookup.
    pub fn with_log(source: &'a dyn PayoffSource) -> Self {
        Self { source, count: 0, log: Some(Vec::new()) }
    }

    pub fn query(&mut self, player: usize, actions: &[usize]) -> f64 {
        self.count += 1;
        if let Some(log) = &mut self.log {
            log.push((player, actions.to_vec()));
        }
        self.source.payoff(player, actions)
    }

    pub fn query_count(&self) -> u64 {
        self.count
    }

    pub fn log(&self) -> Option<&[(usize, Vec<usize>)]> {
        self.log.as_deref()
    }

    pub fn num_players(&self) -> usize {
        self.source.num_players()
    }

    pub fn num_actions(&self) -> usize {
        self.source.num_actions()
    }
}

/// Payoffs obtained through the oracle, keyed by player and action profile.
#[derive(Clone, Debug, Default)]
pub struct PayoffCache {
    entries: HashMap<(usize, Vec<usize>), f64>,
}

impl PayoffCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queries the oracle and stores the answer.
    pub fn fetch(&mut self, oracle: &mut QueryCountingOracle, player: usize, actions: &[usize]) {
        let v = oracle.query(player, actions);
        self.entries.insert((player, actions.to_vec()), v);
    }

    /// A previously fetched payoff. A miss means the caller read outside the
    /// queried region.
    pub fn get(&self, player: usize, actions: &[usize]) -> Result<f64> {
        self.entries.get(&(player, actions.to_vec())).copied().ok_or_else(|| {
            Error::Internal(format!("payoff of player {player} at {actions:?} was never queried"))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Accuracy targets and constants for [`query_equilibrium`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub delta: f64,
    pub constant_c1: f64,
    pub constant_c2: f64,
    /// Cap on the number of candidate profiles examined.
    pub max_profiles: u64,
    /// Cap on the number of oracle lookups.
    pub max_queries: u64,
}

/// Sample sizes derived from [`QueryParams`] for `m` players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySizes {
    /// Support size of candidate profiles.
    pub t: usize,
    /// Uniform draws per coupled sample.
    pub l: usize,
    /// Size of each sampled support list, `t * l`.
    pub k: usize,
    /// Size of each deviation sample.
    pub big_n: usize,
}

impl QueryParams {
    pub fn new(epsilon: f64, sigma: f64, delta: f64) -> Self {
        Self {
            epsilon,
            sigma,
            delta,
            constant_c1: 1.0,
            constant_c2: 1.0,
            max_profiles: 100_000_000,
            max_queries: 100_000_000,
        }
    }

    pub fn with_constants(mut self, c1: f64, c2: f64) -> Self {
        self.constant_c1 = c1;
        self.constant_c2 = c2;
        self
    }

    /// `t = ceil(c1 m log(32m/(delta sigma)) / (epsilon/4)^2)`,
    /// `l = ceil(log(4tm/delta) / sigma)`, `k = t l`,
    /// `N = ceil(16 c2 t m log(k/delta) / (epsilon^2 sigma^2))`.
    pub fn sizes(&self, m: usize) -> Result<QuerySizes> {
        for (name, v) in [("epsilon", self.epsilon), ("sigma", self.sigma), ("delta", self.delta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if m == 0 || !(self.constant_c1 > 0.0) || !(self.constant_c2 > 0.0) {
            return Err(invalid("need at least one player and positive constants"));
        }
        let (e, s, d, mf) = (self.epsilon, self.sigma, self.delta, m as f64);
        let t = ceil_pos(self.constant_c1 * mf * (32.0 * mf / (d * s)).ln() / (e / 4.0).powi(2));
        let l = ceil_pos((4.0 * t as f64 * mf / d).ln() / s);
        let k = t * l;
        let big_n = ceil_pos(
            16.0 * self.constant_c2 * t as f64 * mf * (k as f64 / d).ln() / (e * e * s * s),
        );
        Ok(QuerySizes { t, l, k, big_n })
    }
}

fn ceil_pos(x: f64) -> usize {
    (x.ceil() as usize).max(1)
}

impl QuerySizes {
    /// `m N k^(m-1) + m k^m`, the exact number of lookups.
    pub fn query_count(&self, m: usize) -> Option<u64> {
        let k = self.k as u64;
        let km1 = k.checked_pow(m as u32 - 1)?;
        let a = (m as u64).checked_mul(self.big_n as u64)?.checked_mul(km1)?;
        let b = (m as u64).checked_mul(km1.checked_mul(k)?)?;
        a.checked_add(b)
    }
}

/// Mean of the best `sigma` fraction of `values`, fractional at the boundary.
fn top_fraction_mean(values: &[f64], sigma: f64) -> Result<f64> {
    let smooth = SmoothParams::new(sigma, values.len())?;
    Ok(top_smooth(values, &smooth)?.value)
}

/// Estimates the best smooth deviation value of `player` from the payoffs
/// of the sampled actions against the others' strategies.
///
/// Every needed entry must already be in `cache`; a miss is reported as an
/// internal error.
pub fn optimize_deviation(
    sample_set: &[usize],
    cache: &PayoffCache,
    player: usize,
    profile: &StrategyProfile,
    smooth: &SmoothParams,
) -> Result<f64> {
    if sample_set.is_empty() {
        return Err(invalid("the sample set is empty"));
    }
    let m = profile.num_players();
    let supports: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|j| {
            if j == player {
                vec![(0, 1.0)]
            } else {
                support(profile.strategy(j))
            }
        })
        .collect();
    let mut values = Vec::with_capacity(sample_set.len());
    let mut actions = vec![0usize; m];
    for &r in sample_set {
        let mut v = 0.0;
        let mut idx = vec![0usize; m];
        loop {
            let mut w = 1.0;
            for j in 0..m {
                let (a, p) = supports[j][idx[j]];
                actions[j] = if j == player { r } else { a };
                w *= p;
            }
            v += w * cache.get(player, &actions)?;
            if !advance(&mut idx, &supports) {
                break;
            }
        }
        values.push(v);
    }
    top_fraction_mean(&values, smooth.sigma())
}

fn support(x: &MixedStrategy) -> Vec<(usize, f64)> {
    x.probs().iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).collect()
}

fn advance(idx: &mut [usize], supports: &[Vec<(usize, f64)>]) -> bool {
    for j in (0..idx.len()).rev() {
        idx[j] += 1;
        if idx[j] < supports[j].len() {
            return true;
        }
        idx[j] = 0;
    }
    false
}

/// Result of [`query_equilibrium`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub profile: StrategyProfile,
    pub found: bool,
    pub query_count: u64,
    pub sizes: QuerySizes,
    /// Sampled supports, deduplicated and sorted.
    pub supports: Vec<Vec<usize>>,
    /// Largest estimated gain of the returned profile, if one was accepted.
    pub estimated_gain: Option<f64>,
}

/// Dense view of the queried payoffs of one player.
struct PlayerTables {
    /// `N x prod_{j' != j} |S_j'|`, deviation rows.
    hat: Vec<f64>,
    hat_dims: Vec<usize>,
    /// `prod_j |S_j|`, payoffs on the joint support.
    tilde: Vec<f64>,
}

/// Samples supports and deviation sets, queries the payoffs they need, and
/// tests every t-uniform profile on the supports in lexicographic order.
pub fn query_equilibrium(
    oracle: &mut QueryCountingOracle,
    params: &QueryParams,
    rng: &mut impl Rng,
) -> Result<QueryOutcome> {
    let m = oracle.num_players();
    let n = oracle.num_actions();
    let sizes = params.sizes(m)?;
    let planned = sizes.query_count(m).filter(|&q| q <= params.max_queries).ok_or_else(|| {
        Error::ResourceLimit(format!(
            "sample sizes {sizes:?} need more than {} payoff queries; raise epsilon",
            params.max_queries
        ))
    })?;

    let lists: Vec<Vec<usize>> =
        (0..m).map(|_| (0..sizes.k).map(|_| rng.random_range(0..n)).collect()).collect();
    let devs: Vec<Vec<usize>> =
        (0..m).map(|_| (0..sizes.big_n).map(|_| rng.random_range(0..n)).collect()).collect();
    let supports: Vec<Vec<usize>> = lists
        .iter()
        .map(|l| {
            let mut s = l.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();

    let per: Vec<u64> = supports.iter().map(|s| count_k_uniform(s.len(), sizes.t)).collect();
    let total = joint_count(&per, params.max_profiles).ok_or_else(|| {
        Error::ResourceLimit(format!(
            "candidate profiles {per:?} exceed the cap of {}; raise epsilon",
            params.max_profiles
        ))
    })?;

    let start = oracle.query_count();
    let mut cache = PayoffCache::new();
    let mut actions = vec![0usize; m];
    for j in 0..m {
        // deviation rows: R_j x the other players' sampled lists
        let others: Vec<usize> = (0..m).filter(|&p| p != j).collect();
        for &r in &devs[j] {
            for_each_tuple(&others, &lists, &mut actions, &mut |a| {
                a[j] = r;
                cache.fetch(oracle, j, a);
            });
        }
        let all: Vec<usize> = (0..m).collect();
        for_each_tuple(&all, &lists, &mut actions, &mut |a| cache.fetch(oracle, j, a));
    }
    let issued = oracle.query_count() - start;
    if issued != planned {
        return Err(Error::Internal(format!("issued {issued} queries, planned {planned}")));
    }

    let tables = (0..m).map(|j| build_tables(&cache, j, &devs[j], &supports)).collect::<Result<Vec<_>>>()?;
    let comps: Vec<Vec<Vec<u32>>> =
        supports.iter().map(|s| enumerate_k_uniform(s.len(), sizes.t).collect()).collect();
    let t = sizes.t as f64;
    let half = params.epsilon / 2.0;
    let sigma = params.sigma;
    let dims: Vec<usize> = supports.iter().map(Vec::len).collect();

    let hit = (0..total).into_par_iter().find_map_first(|index| {
        let mut idx = vec![0usize; m];
        decode(index, &per, &mut idx);
        let weights: Vec<Vec<f64>> =
            (0..m).map(|j| comps[j][idx[j]].iter().map(|&c| c as f64 / t).collect()).collect();
        let mut worst = f64::NEG_INFINITY;
        for (j, tab) in tables.iter().enumerate() {
            let w_hat: Vec<Option<&[f64]>> = std::iter::once(None)
                .chain((0..m).filter(|&p| p != j).map(|p| Some(weights[p].as_slice())))
                .collect();
            let rows = contract_dims(&tab.hat, &tab.hat_dims, &w_hat);
            let v_hat = match top_fraction_mean(&rows, sigma) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            let w_all: Vec<Option<&[f64]>> = weights.iter().map(|w| Some(w.as_slice())).collect();
            let v_tilde = contract_dims(&tab.tilde, &dims, &w_all)[0];
            let gain = v_hat - v_tilde;
            if gain > half {
                return None;
            }
            worst = worst.max(gain);
        }
        Some(Ok((idx, worst)))
    });

    let query_count = oracle.query_count() - start;
    match hit {
        Some(Err(e)) => Err(e),
        Some(Ok((idx, gain))) => {
            let strategies = (0..m)
                .map(|j| {
                    let mut p = vec![0.0; n];
                    for (&a, &c) in supports[j].iter().zip(&comps[j][idx[j]]) {
                        p[a] = c as f64 / t;
                    }
                    MixedStrategy::from_vec_unchecked(p)
                })
                .collect();
            Ok(QueryOutcome {
                profile: StrategyProfile::new(strategies)?,
                found: true,
                query_count,
                sizes,
                supports,
                estimated_gain: Some(gain),
            })
        }
        None => Ok(QueryOutcome {
            profile: StrategyProfile::uniform(m, n),
            found: false,
            query_count,
            sizes,
            supports,
            estimated_gain: None,
        }),
    }
}

/// Calls `f` on every tuple drawn position-wise from `lists[p]` for `p` in
/// `axes`, writing the chosen actions into `actions`.
fn for_each_tuple(
    axes: &[usize],
    lists: &[Vec<usize>],
    actions: &mut [usize],
    f: &mut impl FnMut(&mut [usize]),
) {
    let mut idx = vec![0usize; axes.len()];
    loop {
        for (slot, &p) in idx.iter().zip(axes) {
            actions[p] = lists[p][*slot];
        }
        f(actions);
        let mut carry = true;
        for d in (0..axes.len()).rev() {
            idx[d] += 1;
            if idx[d] < lists[axes[d]].len() {
                carry = false;
                break;
            }
            idx[d] = 0;
        }
        if carry {
            return;
        }
    }
}

fn build_tables(
    cache: &PayoffCache,
    player: usize,
    devs: &[usize],
    supports: &[Vec<usize>],
) -> Result<PlayerTables> {
    let m = supports.len();
    let others: Vec<usize> = (0..m).filter(|&p| p != player).collect();
    let all: Vec<usize> = (0..m).collect();
    let mut actions = vec![0usize; m];
    let mut hat = Vec::new();
    for &r in devs {
        let mut err = None;
        for_each_tuple(&others, supports, &mut actions, &mut |a| {
            a[player] = r;
            match cache.get(player, a) {
                Ok(v) => hat.push(v),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    let mut tilde = Vec::new();
    let mut err = None;
    for_each_tuple(&all, supports, &mut actions, &mut |a| match cache.get(player, a) {
        Ok(v) => tilde.push(v),
        Err(e) => err = Some(e),
    });
    if let Some(e) = err {
        return Err(e);
    }
    let hat_dims =
        std::iter::once(devs.len()).chain(others.iter().map(|&p| supports[p].len())).collect();
    Ok(PlayerTables { hat, hat_dims, tilde })
}

/// Checks both conditions of an `epsilon`-good deviation sample for every
/// player, using full payoff access.
///
/// The top set of a player is the support of the greedy best smooth response.
pub fn check_good_collection(
    game: &Game,
    deviation_sets: &[Vec<usize>],
    profile: &StrategyProfile,
    smooth: &SmoothParams,
    epsilon: f64,
) -> Result<Vec<bool>> {
    if deviation_sets.len() != game.num_players() {
        return Err(invalid("need one deviation set per player"));
    }
    (0..game.num_players())
        .map(|j| {
            let set = &deviation_sets[j];
            let u = game.deviation_payoffs(profile, j)?;
            let top = top_smooth(&u, smooth)?;
            let mut in_top = vec![false; u.len()];
            for &(i, _) in &top.support {
                in_top[i] = true;
            }
            let hits: Vec<f64> = set.iter().filter(|&&r| in_top[r]).map(|&r| u[r]).collect();
            let big_n = set.len() as f64;
            let s = smooth.sigma();
            let size_ok = (hits.len() as f64 - big_n * s).abs() <= epsilon * s * big_n;
            let mean_ok = !hits.is_empty()
                && (hits.iter().sum::<f64>() / hits.len() as f64 - top.value).abs() <= epsilon;
            Ok(size_ok && mean_ok)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::best_smooth_response;
    use crate::game::HashedGame;
    use crate::rng;

    fn full_cache(game: &Game, oracle: &mut QueryCountingOracle) -> PayoffCache {
        let mut cache = PayoffCache::new();
        let n = game.num_actions();
        for a in 0..n {
            for b in 0..n {
                for j in 0..2 {
                    cache.fetch(oracle, j, &[a, b]);
                }
            }
        }
        cache
    }

    #[test]
    fn every_action_once_matches_exact() {
        let g = Game::random(2, 7, 3).unwrap();
        let mut o = QueryCountingOracle::new(&g);
        let cache = full_cache(&g, &mut o);
        let p = StrategyProfile::new(vec![
            MixedStrategy::uniform(7),
            MixedStrategy::new(vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let all: Vec<usize> = (0..7).collect();
        for sigma in [1.0 / 7.0, 0.3, 1.0] {
            let s = SmoothParams::new(sigma, 7).unwrap();
            let est = optimize_deviation(&all, &cache, 0, &p, &s).unwrap();
            let (exact, _) = best_smooth_response(&g, &p, 0, &s).unwrap();
            assert!((est - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_payoffs_give_constant() {
        let g = Game::from_fn(2, 4, |_, _| 0.3).unwrap();
        let mut o = QueryCountingOracle::new(&g);
        let cache = full_cache(&g, &mut o);
        let s = SmoothParams::new(0.5, 4).unwrap();
        let v = optimize_deviation(&[0, 0, 3, 1], &cache, 1, &StrategyProfile::uniform(2, 4), &s)
            .unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cache_miss_is_internal_error() {
        let cache = PayoffCache::new();
        let s = SmoothParams::new(0.5, 2).unwrap();
        let e = optimize_deviation(&[0], &cache, 0, &StrategyProfile::uniform(2, 2), &s);
        assert!(matches!(e, Err(Error::Internal(_))));
    }

    #[test]
    fn sampled_deviation_is_close() {
        let mut close = 0;
        let s = SmoothParams::new(0.25, 20).unwrap();
        for seed in 0..100 {
            let g = Game::random(2, 20, seed).unwrap();
            let mut o = QueryCountingOracle::new(&g);
            let cache = full_cache(&g, &mut o);
            let p = StrategyProfile::uniform(2, 20);
            let mut r = rng::seeded(1000 + seed);
            let set: Vec<usize> = (0..200).map(|_| r.random_range(0..20)).collect();
            let est = optimize_deviation(&set, &cache, 0, &p, &s).unwrap();
            let (exact, _) = best_smooth_response(&g, &p, 0, &s).unwrap();
            if (est - exact).abs() <= 0.1 {
                close += 1;
            }
        }
        assert!(close >= 95, "{close} of 100");
    }

    #[test]
    fn sizes_follow_formulas() {
        let p = QueryParams::new(0.35, 0.3, 0.25).with_constants(0.001, 0.02);
        let s = p.sizes(2).unwrap();
        let t = (0.001 * 2.0 * (64.0f64 / 0.075).ln() / (0.35f64 / 4.0).powi(2)).ceil() as usize;
        assert_eq!(s.t, t);
        assert_eq!(s.l, ((4.0 * t as f64 * 2.0 / 0.25).ln() / 0.3).ceil() as usize);
        assert_eq!(s.k, s.t * s.l);
        let n = (16.0 * 0.02 * t as f64 * 2.0 * (s.k as f64 / 0.25).ln() / (0.35f64.powi(2) * 0.09))
            .ceil() as usize;
        assert_eq!(s.big_n, n);
    }

    #[test]
    fn constant_game_accepts_first_profile() {
        let g = Game::from_fn(2, 30, |_, _| 0.5).unwrap();
        let params = QueryParams::new(0.4, 0.5, 0.5).with_constants(0.001, 0.005);
        let mut o = QueryCountingOracle::new(&g);
        let out = query_equilibrium(&mut o, &params, &mut rng::seeded(4)).unwrap();
        assert!(out.found);
        assert!(out.estimated_gain.unwrap().abs() < 1e-12);
        let first = out.supports[0][0];
        assert_eq!(out.profile.strategy(0).probs()[first], 1.0);
        let sizes = params.sizes(2).unwrap();
        assert_eq!(out.query_count, sizes.query_count(2).unwrap());
    }

    #[test]
    fn query_count_ignores_action_count() {
        let params = QueryParams::new(0.4, 0.5, 0.5).with_constants(0.001, 0.005);
        let want = params.sizes(2).unwrap().query_count(2).unwrap();
        for n in [50, 5000] {
            let g = HashedGame::new(2, n, 9).unwrap();
            let mut o = QueryCountingOracle::new(&g);
            let out = query_equilibrium(&mut o, &params, &mut rng::seeded(1)).unwrap();
            assert_eq!(out.query_count, want);
            assert_eq!(o.query_count(), want);
        }
    }

    #[test]
    fn good_collection_full_enumeration() {
        let g = Game::random(2, 8, 5).unwrap();
        let s = SmoothParams::new(0.25, 8).unwrap();
        let all: Vec<usize> = (0..8).collect();
        let ok = check_good_collection(
            &g,
            &[all.clone(), all],
            &StrategyProfile::uniform(2, 8),
            &s,
            0.01,
        )
        .unwrap();
        assert_eq!(ok, vec![true, true]);
    }

    #[test]
    fn good_collection_tiny_bimodal_fails() {
        // player 0 payoffs: action 0 pays 1, the rest pay 0
        let g = Game::from_fn(2, 4, |j, a| if j == 0 && a[0] == 0 { 1.0 } else { 0.0 }).unwrap();
        let s = SmoothParams::new(0.5, 4).unwrap();
        let ok = check_good_collection(
            &g,
            &[vec![2, 3], vec![0, 1]],
            &StrategyProfile::uniform(2, 4),
            &s,
            0.1,
        )
        .unwrap();
        assert!(!ok[0]);
    }
}
