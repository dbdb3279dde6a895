//! Normal-form games, mixed strategies and payoff-tensor contraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Largest payoff tensor (entries per player) a [`Game`] will hold.
pub const MAX_TENSOR_ENTRIES: usize = 100_000_000;

/// Default tolerance for simplex membership and cap checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Read access to payoffs, either from a stored tensor or computed lazily.
pub trait PayoffSource: Sync {
    fn num_players(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Payoff of `player` when the action profile is `actions`.
    fn payoff(&self, player: usize, actions: &[usize]) -> f64;
}

/// `m`-player game with `n` actions each and payoffs in `[0, 1]`.
///
/// Payoffs are stored per player as a row-major tensor over `[n]^m`, with
/// player 0's action the most significant index.
#[derive(Clone, Debug, PartialEq)]
pub struct Game {
    m: usize,
    n: usize,
    payoffs: Vec<Vec<f64>>,
}

/// Number of entries in an `[n]^m` tensor, or `None` on overflow.
pub fn tensor_len(n: usize, m: u32) -> Option<usize> {
    n.checked_pow(m)
}

fn checked_tensor_len(n: usize, m: usize) -> Result<usize> {
    let len = u32::try_from(m)
        .ok()
        .and_then(|m| tensor_len(n, m))
        .filter(|&len| len <= MAX_TENSOR_ENTRIES);
    len.ok_or_else(|| {
        Error::ResourceLimit(format!(
            "payoff tensor with {n}^{m} entries exceeds the limit of {MAX_TENSOR_ENTRIES}"
        ))
    })
}

impl Game {
    /// Builds a game from one flat row-major tensor per player.
    pub fn new(m: usize, n: usize, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(invalid("a game needs at least one player and one action"));
        }
        let len = checked_tensor_len(n, m)?;
        if payoffs.len() != m {
            return Err(invalid(format!(
                "expected {m} payoff tensors, got {}",
                payoffs.len()
            )));
        }
        for (j, t) in payoffs.iter().enumerate() {
            if t.len() != len {
                return Err(invalid(format!(
                    "payoff tensor of player {j} has {} entries, expected {len}",
                    t.len()
                )));
            }
            if let Some(pos) = t.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!(
                    "payoff of player {j} at flat index {pos} is {} (must lie in [0, 1])",
                    t[pos]
                )));
            }
        }
        Ok(Self { m, n, payoffs })
    }

    /// Two-player game from row-major `n x n` matrices.
    pub fn bimatrix(n: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(2, n, vec![a, b])
    }

    /// Builds a game by evaluating `f(player, actions)` on every profile.
    pub fn from_fn(m: usize, n: usize, f: impl Fn(usize, &[usize]) -> f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(invalid("a game needs at least one player and one action"));
        }
        let len = checked_tensor_len(n, m)?;
        let mut payoffs = vec![Vec::with_capacity(len); m];
        let mut actions = vec![0usize; m];
        for _ in 0..len {
            for (j, t) in payoffs.iter_mut().enumerate() {
                t.push(f(j, &actions));
            }
            increment(&mut actions, n);
        }
        Self::new(m, n, payoffs)
    }

    /// Game with payoffs drawn i.i.d. uniform on `[0, 1]`.
    pub fn random(m: usize, n: usize, seed: u64) -> Result<Self> {
        let len = checked_tensor_len(n.max(1), m.max(1))?;
        let mut r = rng::seeded(seed);
        let payoffs = (0..m)
            .map(|_| (0..len).map(|_| r.random::<f64>()).collect())
            .collect();
        Self::new(m, n, payoffs)
    }

    pub fn num_players(&self) -> usize {
        self.m
    }

    pub fn num_actions(&self) -> usize {
        self.n
    }

    /// Flat row-major payoff tensor of `player`.
    pub fn tensor(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.payoffs
    }

    pub fn into_tensors(self) -> Vec<Vec<f64>> {
        self.payoffs
    }

    /// Flat index of an action profile.
    pub fn flat_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.n + a)
    }

    fn check_profile(&self, profile: &StrategyProfile) -> Result<()> {
        if profile.num_players() != self.m {
            return Err(invalid(format!(
                "profile has {} strategies, game has {} players",
                profile.num_players(),
                self.m
            )));
        }
        for (j, s) in profile.strategies().iter().enumerate() {
            if s.len() != self.n {
                return Err(invalid(format!(
                    "strategy of player {j} has {} entries, game has {} actions",
                    s.len(),
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Payoff to `player` of each pure action against the others' strategies.
    pub fn deviation_payoffs(&self, profile: &StrategyProfile, player: usize) -> Result<Vec<f64>> {
        self.check_profile(profile)?;
        let weights: Vec<Option<&[f64]>> = (0..self.m)
            .map(|j| (j != player).then(|| profile.strategy(j).probs()))
            .collect();
        Ok(contract(&self.payoffs[player], self.n, &weights))
    }

    /// Expected payoff of `player` under `profile`.
    pub fn expected_payoff(&self, profile: &StrategyProfile, player: usize) -> Result<f64> {
        let u = self.deviation_payoffs(profile, player)?;
        Ok(dot(&u, profile.strategy(player).probs()))
    }
}

impl PayoffSource for Game {
    fn num_players(&self) -> usize {
        self.m
    }

    fn num_actions(&self) -> usize {
        self.n
    }

    fn payoff(&self, player: usize, actions: &[usize]) -> f64 {
        self.payoffs[player][self.flat_index(actions)]
    }
}

/// Game whose payoffs are a deterministic hash of `(seed, player, actions)`.
///
/// Nothing is stored, so the action count can be far larger than a dense
/// tensor allows. Used to exercise query-based solvers at scale.
#[derive(Clone, Debug)]
pub struct HashedGame {
    m: usize,
    n: usize,
    seed: u64,
}

impl HashedGame {
    pub fn new(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(invalid("a game needs at least one player and one action"));
        }
        Ok(Self { m, n, seed })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PayoffSource for HashedGame {
    fn num_players(&self) -> usize {
        self.m
    }

    fn num_actions(&self) -> usize {
        self.n
    }

    fn payoff(&self, player: usize, actions: &[usize]) -> f64 {
        let mut h = splitmix64(self.seed ^ (player as u64).wrapping_mul(0xa076_1d64_78bd_642f));
        for &a in actions {
            h = splitmix64(h ^ a as u64);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Probability vector over `n` actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedStrategy(Vec<f64>);

impl MixedStrategy {
    /// Validates `probs` against [`DEFAULT_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tol(probs, DEFAULT_TOL)
    }

    /// Accepts entries `>= -tol` summing to within `tol` of one. Slightly
    /// negative entries are clamped to zero.
    pub fn with_tol(mut probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("a strategy needs at least one action"));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < -tol) {
            return Err(invalid(format!(
                "strategy entry {i} is {} (must be non-negative)",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(invalid(format!("strategy sums to {sum}, not 1")));
        }
        for p in &mut probs {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        Ok(Self(probs))
    }

    /// Caller guarantees a valid probability vector.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut v = vec![0.0; n];
        v[action] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One mixed strategy per player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyProfile(Vec<MixedStrategy>);

impl StrategyProfile {
    pub fn new(strategies: Vec<MixedStrategy>) -> Result<Self> {
        let Some(first) = strategies.first() else {
            return Err(invalid("a profile needs at least one strategy"));
        };
        let n = first.len();
        if strategies.iter().any(|s| s.len() != n) {
            return Err(invalid("all strategies in a profile must have the same length"));
        }
        Ok(Self(strategies))
    }

    pub fn uniform(m: usize, n: usize) -> Self {
        Self(vec![MixedStrategy::uniform(n); m])
    }

    pub fn num_players(&self) -> usize {
        self.0.len()
    }

    pub fn strategy(&self, player: usize) -> &MixedStrategy {
        &self.0[player]
    }

    pub fn strategies(&self) -> &[MixedStrategy] {
        &self.0
    }

    pub fn into_strategies(self) -> Vec<MixedStrategy> {
        self.0
    }

    /// Copy with `player`'s strategy replaced.
    pub fn with_strategy(&self, player: usize, s: MixedStrategy) -> Self {
        let mut v = self.0.clone();
        v[player] = s;
        Self(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Advances a mixed-radix counter (last digit fastest). Returns `false` on wrap.
pub(crate) fn increment(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Contracts a row-major `[n]^m` tensor against weight vectors.
///
/// Axis `p` is summed against `weights[p]` when it is `Some`, and kept when it
/// is `None`. Kept axes stay in their original order in the row-major result.
/// Zero weights are skipped, so sparse strategies are cheap.
pub fn contract(tensor: &[f64], n: usize, weights: &[Option<&[f64]>]) -> Vec<f64> {
    contract_dims(tensor, &vec![n; weights.len()], weights)
}

/// [`contract`] for a row-major tensor whose axes have sizes `dims`.
pub fn contract_dims(tensor: &[f64], dims: &[usize], weights: &[Option<&[f64]>]) -> Vec<f64> {
    let mut prefix = tensor.len();
    let mut suffix = 1usize;
    let mut cur: Option<Vec<f64>> = None;
    for axis in (0..dims.len()).rev() {
        let n = dims[axis];
        prefix /= n;
        let Some(w) = weights[axis] else {
            suffix *= n;
            continue;
        };
        let src: &[f64] = cur.as_deref().unwrap_or(tensor);
        let mut out = vec![0.0; prefix * suffix];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for p in 0..prefix {
                let s = &src[(p * n + i) * suffix..(p * n + i + 1) * suffix];
                let o = &mut out[p * suffix..(p + 1) * suffix];
                for (oo, ss) in o.iter_mut().zip(s) {
                    *oo += wi * ss;
                }
            }
        }
        cur = Some(out);
    }
    cur.unwrap_or_else(|| tensor.to_vec())
}
