//! Sparsification of smooth equilibria by sampling, and the coupling between
//! draws from a smooth distribution and uniform draws.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::game::{contract, Game, MixedStrategy, StrategyProfile};
use crate::polytope::{is_smooth, top_smooth, SmoothParams};

/// Largest flattened domain the hybrid certificate will enumerate.
pub const MAX_HYBRID_ENTRIES: usize = 10_000_000;

/// Accuracy targets for sampling a k-uniform profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub delta: f64,
    pub num_players: usize,
    pub constant_c1: f64,
}

impl SamplingParams {
    pub fn new(epsilon: f64, sigma: f64, delta: f64, num_players: usize) -> Self {
        Self { epsilon, sigma, delta, num_players, constant_c1: 1.0 }
    }

    pub fn with_c1(mut self, c1: f64) -> Self {
        self.constant_c1 = c1;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("sigma", self.sigma), ("delta", self.delta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.num_players == 0 || !(self.constant_c1 > 0.0) {
            return Err(invalid("need at least one player and a positive constant"));
        }
        Ok(())
    }

    /// `ceil(c1 * m * log(8m / (delta sigma)) / epsilon^2)`, at least 1.
    pub fn k(&self) -> Result<usize> {
        self.validate()?;
        let m = self.num_players as f64;
        let k = self.constant_c1 * m * (8.0 * m / (self.delta * self.sigma)).ln()
            / (self.epsilon * self.epsilon);
        Ok((k.ceil() as usize).max(1))
    }
}

/// Profile whose strategies are empirical distributions of `k` draws.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KUniformProfile {
    pub k: usize,
    pub counts: Vec<Vec<u32>>,
}

impl KUniformProfile {
    pub fn new(k: usize, counts: Vec<Vec<u32>>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        for (j, c) in counts.iter().enumerate() {
            let total: u64 = c.iter().map(|&x| x as u64).sum();
            if total != k as u64 {
                return Err(invalid(format!("counts of player {j} sum to {total}, not {k}")));
            }
        }
        Ok(Self { k, counts })
    }

    pub fn strategy(&self, player: usize) -> MixedStrategy {
        let k = self.k as f64;
        MixedStrategy::from_vec_unchecked(
            self.counts[player].iter().map(|&c| c as f64 / k).collect(),
        )
    }

    pub fn to_profile(&self) -> StrategyProfile {
        let strategies = (0..self.counts.len()).map(|j| self.strategy(j)).collect();
        StrategyProfile::new(strategies).expect("counts have equal lengths")
    }
}

fn sampler(x: &MixedStrategy) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(x.probs()).map_err(|e| invalid(format!("cannot sample strategy: {e}")))
}

/// Draws `k` actions i.i.d. from each player's strategy and returns the counts.
pub fn sample_k_uniform(
    profile: &StrategyProfile,
    k: usize,
    rng: &mut impl Rng,
) -> Result<KUniformProfile> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let counts = profile
        .strategies()
        .iter()
        .map(|x| {
            let dist = sampler(x)?;
            let mut c = vec![0u32; x.len()];
            for _ in 0..k {
                c[dist.sample(rng)] += 1;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    KUniformProfile::new(k, counts)
}

/// Result of one run of the rejection coupling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coupling {
    /// `t` draws, each distributed according to `p`.
    pub targets: Vec<usize>,
    /// `t` rows of `l` uniform draws.
    pub uniforms: Vec<Vec<usize>>,
    /// Every target appears in its own row.
    pub contained: bool,
}

/// Couples `t` draws from a smooth `p` with `t` rows of `l` uniform draws.
///
/// Each uniform draw `D` is accepted with probability `sigma n p(D)`; the
/// target of a row is its first accepted draw, or a fresh draw from `p` when
/// none is accepted.
pub fn couple_smooth_to_uniform(
    p: &MixedStrategy,
    smooth: &SmoothParams,
    t: usize,
    l: usize,
    rng: &mut impl Rng,
) -> Result<Coupling> {
    if !is_smooth(p, smooth) {
        return Err(invalid("distribution is not smooth"));
    }
    let n = p.len();
    let scale = smooth.sigma() * n as f64;
    let fallback = sampler(p)?;
    let mut targets = Vec::with_capacity(t);
    let mut uniforms = Vec::with_capacity(t);
    let mut contained = true;
    for _ in 0..t {
        let row: Vec<usize> = (0..l).map(|_| rng.random_range(0..n)).collect();
        let mut accepted = None;
        for &d in &row {
            if rng.random::<f64>() < scale * p.probs()[d] {
                accepted = Some(d);
                break;
            }
        }
        let target = match accepted {
            Some(d) => d,
            None => {
                let b = fallback.sample(rng);
                contained &= row.contains(&b);
                b
            }
        };
        targets.push(target);
        uniforms.push(row);
    }
    Ok(Coupling { targets, uniforms, contained })
}

/// Which family of hybrid quantity a gap belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridKind {
    /// Free joint distribution over players `1..l-1`.
    AllPrevious,
    /// Free joint distribution over players `1..l-1` and the payoff owner.
    OneMore,
}

/// One hybrid deviation gap between the sampled and the original profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridGap {
    pub player: usize,
    /// Zero-based index of the player whose strategy is swapped.
    pub level: usize,
    pub kind: HybridKind,
    pub gap: f64,
}

/// `sup` over the `sigma^d`-smooth joint distributions on the kept axes of
/// `|A_player(., y_level, x_rest) - A_player(., x_level, x_rest)|`, where
/// `x_rest` are the sampled strategies of the remaining later players.
pub(crate) fn hybrid_sup(
    game: &Game,
    player: usize,
    level: usize,
    keep_owner: bool,
    diff: &[f64],
    rest: &StrategyProfile,
    sigma: f64,
) -> Result<f64> {
    let m = game.num_players();
    let n = game.num_actions();
    let weights: Vec<Option<&[f64]>> = (0..m)
        .map(|p| {
            if p < level || (keep_owner && p == player) {
                None
            } else if p == level {
                Some(diff)
            } else {
                Some(rest.strategy(p).probs())
            }
        })
        .collect();
    let kept = weights.iter().filter(|w| w.is_none()).count();
    let d = contract(game.tensor(player), n, &weights);
    let smooth = SmoothParams::new(sigma.powi(kept as i32), d.len())?;
    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
    Ok(top_smooth(&d, &smooth)?.value.max(top_smooth(&neg, &smooth)?.value))
}

/// Samples a k-uniform profile from a strong equilibrium and evaluates every
/// hybrid gap between the two profiles.
pub fn strong_sampling_certificate(
    game: &Game,
    strong_eq: &StrategyProfile,
    params: &SamplingParams,
    rng: &mut impl Rng,
) -> Result<(KUniformProfile, Vec<HybridGap>)> {
    let m = game.num_players();
    let n = game.num_actions();
    let flat = n
        .checked_pow(m as u32 - 1)
        .and_then(|v| v.checked_mul(m))
        .filter(|&v| v <= MAX_HYBRID_ENTRIES);
    if flat.is_none() {
        return Err(Error::ResourceLimit(format!(
            "hybrid certificate over {m} x {n}^{} entries exceeds {MAX_HYBRID_ENTRIES}",
            m - 1
        )));
    }
    if params.num_players != m {
        return Err(invalid("sampling parameters and game disagree on the player count"));
    }
    let k = params.k()?;
    let sampled = sample_k_uniform(strong_eq, k, rng)?;
    let hat = sampled.to_profile();
    let mut gaps = Vec::new();
    for player in 0..m {
        for level in 0..m {
            let diff: Vec<f64> = hat
                .strategy(level)
                .probs()
                .iter()
                .zip(strong_eq.strategy(level).probs())
                .map(|(a, b)| a - b)
                .collect();
            let gap = hybrid_sup(game, player, level, false, &diff, &hat, params.sigma)?;
            gaps.push(HybridGap { player, level, kind: HybridKind::AllPrevious, gap });
            if level < player {
                let gap = hybrid_sup(game, player, level, true, &diff, &hat, params.sigma)?;
                gaps.push(HybridGap { player, level, kind: HybridKind::OneMore, gap });
            }
        }
    }
    Ok((sampled, gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn k_formula() {
        let p = SamplingParams::new(0.2, 0.25, 0.25, 2);
        let want = (2.0 * (16.0f64 / 0.0625).ln() / 0.04).ceil() as usize;
        assert_eq!(p.k().unwrap(), want);
        assert_eq!(p.with_c1(1e-9).k().unwrap(), 1);
    }

    #[test]
    fn point_masses_concentrate() {
        let p = StrategyProfile::new(vec![MixedStrategy::pure(4, 2), MixedStrategy::pure(4, 0)])
            .unwrap();
        let s = sample_k_uniform(&p, 17, &mut rng::seeded(1)).unwrap();
        assert_eq!(s.counts, vec![vec![0, 0, 17, 0], vec![17, 0, 0, 0]]);
    }

    #[test]
    fn uniform_binomial_concentration() {
        let k = 100_000;
        let p = StrategyProfile::uniform(1, 2);
        let s = sample_k_uniform(&p, k, &mut rng::seeded(99)).unwrap();
        let dev = (s.counts[0][0] as f64 - k as f64 / 2.0).abs();
        assert!(dev <= 5.0 * (k as f64 / 4.0).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = StrategyProfile::uniform(3, 5);
        let a = sample_k_uniform(&p, 40, &mut rng::seeded(5)).unwrap();
        let b = sample_k_uniform(&p, 40, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_sigma_one_takes_first_draw() {
        let s = SmoothParams::new(1.0, 6).unwrap();
        let p = MixedStrategy::uniform(6);
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let c = couple_smooth_to_uniform(&p, &s, 4, 3, &mut r).unwrap();
            assert!(c.contained);
            for (t, row) in c.targets.iter().zip(&c.uniforms) {
                assert_eq!(*t, row[0]);
            }
        }
    }

    #[test]
    fn coupling_rejects_non_smooth() {
        let s = SmoothParams::new(0.5, 4).unwrap();
        let p = MixedStrategy::pure(4, 0);
        assert!(couple_smooth_to_uniform(&p, &s, 2, 2, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn coupling_marginal_matches_target() {
        let n = 10;
        let s = SmoothParams::new(0.5, n).unwrap();
        let p = MixedStrategy::new(vec![0.2, 0.2, 0.15, 0.15, 0.1, 0.1, 0.05, 0.05, 0.0, 0.0])
            .unwrap();
        let mut r = rng::seeded(8);
        let trials = 100_000;
        let mut hist = vec![0usize; n];
        for _ in 0..trials {
            let c = couple_smooth_to_uniform(&p, &s, 1, 3, &mut r).unwrap();
            hist[c.targets[0]] += 1;
        }
        let tv: f64 = hist
            .iter()
            .zip(p.probs())
            .map(|(&h, &q)| (h as f64 / trials as f64 - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv}");
    }

    #[test]
    fn single_player_certificate_is_payoff_difference() {
        let g = Game::new(1, 3, vec![vec![0.1, 0.5, 0.9]]).unwrap();
        let x = StrategyProfile::uniform(1, 3);
        let params = SamplingParams::new(0.5, 0.5, 0.5, 1);
        let (s, gaps) = strong_sampling_certificate(&g, &x, &params, &mut rng::seeded(2)).unwrap();
        assert_eq!(gaps.len(), 1);
        let hat = s.to_profile();
        let want = (g.expected_payoff(&hat, 0).unwrap() - 0.5).abs();
        assert!((gaps[0].gap - want).abs() < 1e-12);
    }
}
