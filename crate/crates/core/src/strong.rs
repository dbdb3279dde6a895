//! Strong smooth equilibria: every player's own strategy is smooth too.
//!
//! The anchor solvers enumerate sparse weak equilibria and, for each, search
//! by linear programming for a smooth profile that every smooth deviation
//! values almost like the anchor. [`lemke_smooth_equilibrium`] computes an
//! exact strong equilibrium of a bimatrix game by complementary pivoting.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enumeration::{count_k_uniform, decode, enumerate_k_uniform, joint_count};
use crate::equilibrium::{is_weak_equilibrium, verify, EquilibriumReport};
use crate::error::{invalid, Error, Result};
use crate::game::{contract, dot, Game, MixedStrategy, StrategyProfile};
use crate::lp::{solve_feasibility, Feasibility, FeasibilityProblem, LinearCut, CUT_TOL};
use crate::polytope::{top_smooth, SmoothParams, SmoothTop};
use crate::rng;
use crate::sampling::KUniformProfile;

/// Largest flattened deviation domain the multi-player solver will build.
pub const MAX_FLAT_ENTRIES: usize = 10_000_000;

/// Settings shared by [`bimatrix_strong`] and [`general_strong`].
#[derive(Clone, Debug, PartialEq)]
pub struct StrongConfig {
    /// Constant in the anchor support size formula.
    pub constant_c: f64,
    pub k_override: Option<usize>,
    /// Number of times `k` is doubled after every anchor failed.
    pub escalations: usize,
    /// Cutting-plane rounds per LP; `None` means `10 n m`.
    pub max_rounds: Option<usize>,
    pub max_anchors: u64,
}

impl Default for StrongConfig {
    fn default() -> Self {
        Self {
            constant_c: 1.0,
            k_override: None,
            escalations: 1,
            max_rounds: None,
            max_anchors: 100_000_000,
        }
    }
}

/// A strong equilibrium together with the anchor it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongOutcome {
    pub profile: StrategyProfile,
    pub report: EquilibriumReport,
    pub anchor: KUniformProfile,
    /// Slack used in the LP constraints.
    pub eps0: f64,
    /// Cutting-plane rounds spent on the accepted anchor.
    pub rounds: usize,
    /// Raw LP solutions before projection, one per player.
    pub lp_points: Vec<Vec<f64>>,
}

fn mat_vec(a: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * n..(i + 1) * n], v)).collect()
}

fn mat_t_vec(a: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            for (o, &aij) in out.iter_mut().zip(&a[i * n..(i + 1) * n]) {
                *o += vi * aij;
            }
        }
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

fn dense(top: &SmoothTop, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for &(i, p) in &top.support {
        w[i] = p;
    }
    w
}

/// Tracks the most violated cut seen so far.
struct Worst {
    violation: f64,
    cut: Option<LinearCut>,
}

impl Worst {
    fn new() -> Self {
        Self { violation: CUT_TOL, cut: None }
    }

    fn offer(&mut self, violation: f64, make: impl FnOnce() -> LinearCut) {
        if violation > self.violation {
            self.violation = violation;
            self.cut = Some(make());
        }
    }
}

fn embed(dim: usize, offset: usize, coeffs: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; dim];
    z[offset..offset + coeffs.len()].copy_from_slice(coeffs);
    z
}

/// Most violated constraint of the bimatrix anchor program at `(x, y)`.
///
/// Variables are stacked as `(x, y)`. The constraints keep both players'
/// values at the anchor within `eps0`, and keep every smooth deviation's
/// value against `y` (resp. `x`) within `eps0` of its value against the
/// anchor. The smooth families are separated exactly by the greedy best
/// smooth response to the difference vectors.
#[allow(clippy::too_many_arguments)]
pub fn separation_bimatrix(
    x: &[f64],
    y: &[f64],
    x_hat: &[f64],
    y_hat: &[f64],
    a: &[f64],
    b: &[f64],
    smooth: &SmoothParams,
    eps0: f64,
) -> Result<Option<LinearCut>> {
    let n = x.len();
    let dim = 2 * n;
    let mut worst = Worst::new();

    // |x'A y_hat - x_hat' A y_hat| <= eps0
    let c = mat_vec(a, n, y_hat);
    let gap = dot(&c, x) - dot(&c, x_hat);
    for s in [1.0, -1.0] {
        worst.offer(s * gap - eps0, || LinearCut {
            coefficients: embed(dim, 0, &c.iter().map(|v| s * v).collect::<Vec<_>>()),
            bound: eps0 + s * dot(&c, x_hat),
        });
    }

    // |x_hat' B y - x_hat' B y_hat| <= eps0
    let d = mat_t_vec(b, n, x_hat);
    let gap = dot(&d, y) - dot(&d, y_hat);
    for s in [1.0, -1.0] {
        worst.offer(s * gap - eps0, || LinearCut {
            coefficients: embed(dim, n, &d.iter().map(|v| s * v).collect::<Vec<_>>()),
            bound: eps0 + s * dot(&d, y_hat),
        });
    }

    // sup over smooth x' of |x' A (y - y_hat)| <= eps0
    let v = mat_vec(a, n, &sub(y, y_hat));
    for (s, vals) in [(1.0, v.clone()), (-1.0, neg(&v))] {
        let top = top_smooth(&vals, smooth)?;
        worst.offer(top.value - eps0, || {
            let w = dense(&top, n);
            let row = mat_t_vec(a, n, &w);
            LinearCut {
                coefficients: embed(dim, n, &row.iter().map(|r| s * r).collect::<Vec<_>>()),
                bound: eps0 + s * dot(&row, y_hat),
            }
        });
    }

    // sup over smooth y' of |(x - x_hat)' B y'| <= eps0
    let v = mat_t_vec(b, n, &sub(x, x_hat));
    for (s, vals) in [(1.0, v.clone()), (-1.0, neg(&v))] {
        let top = top_smooth(&vals, smooth)?;
        worst.offer(top.value - eps0, || {
            let w = dense(&top, n);
            let col = mat_vec(b, n, &w);
            LinearCut {
                coefficients: embed(dim, 0, &col.iter().map(|r| s * r).collect::<Vec<_>>()),
                bound: eps0 + s * dot(&col, x_hat),
            }
        });
    }
    Ok(worst.cut)
}

/// Largest violation of the bimatrix anchor program at `(x, y)`, including
/// the smooth families. Zero or negative means feasible.
pub fn bimatrix_program_violation(
    x: &[f64],
    y: &[f64],
    x_hat: &[f64],
    y_hat: &[f64],
    a: &[f64],
    b: &[f64],
    smooth: &SmoothParams,
    eps0: f64,
) -> Result<f64> {
    let n = x.len();
    let c = mat_vec(a, n, y_hat);
    let d = mat_t_vec(b, n, x_hat);
    let v = mat_vec(a, n, &sub(y, y_hat));
    let w = mat_t_vec(b, n, &sub(x, x_hat));
    let sup = |u: &[f64]| -> Result<f64> {
        Ok(top_smooth(u, smooth)?.value.max(top_smooth(&neg(u), smooth)?.value))
    };
    let worst = [
        (dot(&c, x) - dot(&c, x_hat)).abs(),
        (dot(&d, y) - dot(&d, y_hat)).abs(),
        sup(&v)?,
        sup(&w)?,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst - eps0)
}

fn anchor_k(config: &StrongConfig, formula: f64) -> Result<usize> {
    match config.k_override {
        Some(0) => Err(invalid("k must be positive")),
        Some(k) => Ok(k),
        None => Ok((formula.ceil() as usize).max(1)),
    }
}

/// Runs `attempt` on every weak-`eps0` k-uniform anchor in lexicographic
/// order and returns the first success, doubling `k` when all fail.
fn anchor_search<T: Send>(
    game: &Game,
    smooth: &SmoothParams,
    eps0: f64,
    k0: usize,
    config: &StrongConfig,
    attempt: impl Fn(&StrategyProfile) -> Result<Option<T>> + Sync,
) -> Result<(KUniformProfile, T)> {
    let m = game.num_players();
    let n = game.num_actions();
    let mut k = k0;
    for _ in 0..=config.escalations {
        let per = count_k_uniform(n, k);
        let total = joint_count(&vec![per; m], config.max_anchors).ok_or_else(|| {
            Error::ResourceLimit(format!(
                "{per}^{m} anchors of {k}-uniform strategies exceed the cap of {}",
                config.max_anchors
            ))
        })?;
        let comps: Vec<Vec<u32>> = enumerate_k_uniform(n, k).collect();
        let radices = vec![comps.len() as u64; m];
        let hit = (0..total).into_par_iter().find_map_first(|index| {
            let mut idx = vec![0usize; m];
            decode(index, &radices, &mut idx);
            let counts: Vec<Vec<u32>> = idx.iter().map(|&i| comps[i].clone()).collect();
            let anchor = KUniformProfile { k, counts };
            let profile = anchor.to_profile();
            match is_weak_equilibrium(game, &profile, smooth, eps0) {
                Ok(false) => return None,
                Err(e) => return Some(Err(e)),
                Ok(true) => {}
            }
            match attempt(&profile) {
                Ok(Some(t)) => Some(Ok((anchor, t))),
                Ok(None) => None,
                Err(e) => Some(Err(e)),
            }
        });
        match hit {
            Some(r) => return r,
            None => k *= 2,
        }
    }
    Err(Error::NotFound(format!(
        "no anchor up to k = {} yields a feasible program",
        k / 2
    )))
}

fn check_two_player(game: &Game, smooth: &SmoothParams, epsilon: f64) -> Result<()> {
    if game.num_players() != 2 {
        return Err(invalid("this solver needs a two-player game"));
    }
    if smooth.n() != game.num_actions() {
        return Err(invalid("smoothness parameters do not match the action count"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Strong `epsilon`-approximate smooth equilibrium of a two-player game.
///
/// Uses `eps0 = epsilon / 4` and anchors of size
/// `k = ceil(2 c log(2 / sigma) / eps0^2)`.
pub fn bimatrix_strong(
    game: &Game,
    smooth: &SmoothParams,
    epsilon: f64,
    config: &StrongConfig,
) -> Result<StrongOutcome> {
    check_two_player(game, smooth, epsilon)?;
    let n = game.num_actions();
    let eps0 = epsilon / 4.0;
    let k = anchor_k(config, 2.0 * config.constant_c * (2.0 / smooth.sigma()).ln() / (eps0 * eps0))?;
    let max_rounds = config.max_rounds.unwrap_or(10 * n * 2);
    let (a, b) = (game.tensor(0), game.tensor(1));
    let (anchor, (strategies, raw, rounds)) = anchor_search(game, smooth, eps0, k, config, |hat| {
        let (x_hat, y_hat) = (hat.strategy(0).probs(), hat.strategy(1).probs());
        let problem = FeasibilityProblem::new(vec![smooth.clone(), smooth.clone()]);
        let mut err = None;
        let oracle = |z: &[f64]| {
            let (x, y) = z.split_at(n);
            match separation_bimatrix(x, y, x_hat, y_hat, a, b, smooth, eps0) {
                Ok(c) => c,
                Err(e) => {
                    err = Some(e);
                    None
                }
            }
        };
        let result = solve_feasibility(problem, oracle, max_rounds)?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(match result {
            Feasibility::Feasible { raw, strategies, rounds } => Some((strategies, raw, rounds)),
            Feasibility::Infeasible { .. } => None,
        })
    })?;
    let profile = StrategyProfile::new(strategies)?;
    let report = verify(game, &profile, smooth, epsilon)?;
    if !report.strong_ok {
        return Err(Error::Internal(format!(
            "program solution has gain {} above epsilon {epsilon}",
            report.max_gain()
        )));
    }
    let lp_points = vec![raw[..n].to_vec(), raw[n..].to_vec()];
    Ok(StrongOutcome { profile, report, anchor, eps0, rounds, lp_points })
}

/// Constraint family of the level-`level` program: rows of `matrix` are the
/// payoff of `player` at each tuple of the kept axes, as a linear function of
/// the level player's strategy.
#[derive(Clone, Debug)]
pub struct HybridFamily {
    pub player: usize,
    /// Number of kept axes besides the level player.
    pub kept: usize,
    /// Row-major `rows x n`.
    pub matrix: Vec<f64>,
    pub rows: usize,
}

/// Builds the constraint families of the level-`level` program around `hat`:
/// for every player the earlier players are free, and for every later player
/// that player is free as well.
pub fn hybrid_families(game: &Game, hat: &StrategyProfile, level: usize) -> Vec<HybridFamily> {
    let m = game.num_players();
    let n = game.num_actions();
    let mut out = Vec::new();
    for player in 0..m {
        let weights: Vec<Option<&[f64]>> =
            (0..m).map(|p| (p > level).then(|| hat.strategy(p).probs())).collect();
        // kept axes 0..=level, level last: already rows x n
        let matrix = contract(game.tensor(player), n, &weights);
        let rows = matrix.len() / n;
        out.push(HybridFamily { player, kept: level, matrix, rows });
        if player > level {
            let weights: Vec<Option<&[f64]>> = (0..m)
                .map(|p| (p > level && p != player).then(|| hat.strategy(p).probs()))
                .collect();
            // kept axes (0..level, level, player): move the level axis last
            let t = contract(game.tensor(player), n, &weights);
            let prefix = t.len() / (n * n);
            let mut matrix = vec![0.0; t.len()];
            for p in 0..prefix {
                for i in 0..n {
                    for bj in 0..n {
                        matrix[(p * n + bj) * n + i] = t[(p * n + i) * n + bj];
                    }
                }
            }
            out.push(HybridFamily { player, kept: level + 1, matrix, rows: prefix * n });
        }
    }
    out
}

/// Most violated member of the level program at candidate `x`, or `None`.
pub fn separation_hybrid(
    families: &[HybridFamily],
    x: &[f64],
    x_hat: &[f64],
    sigma: f64,
    eps0: f64,
) -> Result<Option<LinearCut>> {
    let n = x.len();
    let diff = sub(x, x_hat);
    let mut worst = Worst::new();
    for f in families {
        let vals: Vec<f64> = (0..f.rows).map(|r| dot(&f.matrix[r * n..(r + 1) * n], &diff)).collect();
        let smooth = SmoothParams::new(sigma.powi(f.kept as i32), f.rows)?;
        for (s, v) in [(1.0, vals.clone()), (-1.0, neg(&vals))] {
            let top = top_smooth(&v, &smooth)?;
            worst.offer(top.value - eps0, || {
                let mut coeff = vec![0.0; n];
                for &(r, w) in &top.support {
                    for (c, &g) in coeff.iter_mut().zip(&f.matrix[r * n..(r + 1) * n]) {
                        *c += s * w * g;
                    }
                }
                let bound = eps0 + dot(&coeff, x_hat);
                LinearCut { coefficients: coeff, bound }
            });
        }
    }
    Ok(worst.cut)
}

/// Largest violation of a level program at `x` (non-positive means feasible).
pub fn hybrid_violation(
    families: &[HybridFamily],
    x: &[f64],
    x_hat: &[f64],
    sigma: f64,
    eps0: f64,
) -> Result<f64> {
    let n = x.len();
    let diff = sub(x, x_hat);
    let mut worst = f64::NEG_INFINITY;
    for f in families {
        let vals: Vec<f64> = (0..f.rows).map(|r| dot(&f.matrix[r * n..(r + 1) * n], &diff)).collect();
        let smooth = SmoothParams::new(sigma.powi(f.kept as i32), f.rows)?;
        worst = worst.max(top_smooth(&vals, &smooth)?.value).max(top_smooth(&neg(&vals), &smooth)?.value);
    }
    Ok(worst - eps0)
}

/// Strong `epsilon`-approximate smooth equilibrium of an `m`-player game.
///
/// Uses `eps0 = epsilon / (2m)` and anchors of size
/// `k = ceil(4 c m log(m / sigma) / eps0^2)`. For each anchor the players'
/// strategies are found one at a time, each by its own program.
pub fn general_strong(
    game: &Game,
    smooth: &SmoothParams,
    epsilon: f64,
    config: &StrongConfig,
) -> Result<StrongOutcome> {
    let m = game.num_players();
    let n = game.num_actions();
    if smooth.n() != n {
        return Err(invalid("smoothness parameters do not match the action count"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let flat = n.checked_pow(m as u32 - 1).filter(|&v| v <= MAX_FLAT_ENTRIES);
    if flat.is_none() {
        return Err(Error::ResourceLimit(format!(
            "deviation domains of {n}^{} tuples exceed {MAX_FLAT_ENTRIES}",
            m - 1
        )));
    }
    let mf = m as f64;
    let eps0 = epsilon / (2.0 * mf);
    let k = anchor_k(
        config,
        4.0 * config.constant_c * mf * (mf / smooth.sigma()).ln().max(f64::MIN_POSITIVE) / (eps0 * eps0),
    )?;
    let max_rounds = config.max_rounds.unwrap_or(10 * n * m);
    let sigma = smooth.sigma();
    let (anchor, (strategies, raws, rounds)) = anchor_search(game, smooth, eps0, k, config, |hat| {
        let mut strategies = Vec::with_capacity(m);
        let mut raws = Vec::with_capacity(m);
        let mut total_rounds = 0;
        for level in 0..m {
            let families = hybrid_families(game, hat, level);
            let x_hat = hat.strategy(level).probs();
            let mut err = None;
            let oracle = |x: &[f64]| match separation_hybrid(&families, x, x_hat, sigma, eps0) {
                Ok(c) => c,
                Err(e) => {
                    err = Some(e);
                    None
                }
            };
            let result =
                solve_feasibility(FeasibilityProblem::new(vec![smooth.clone()]), oracle, max_rounds)?;
            if let Some(e) = err {
                return Err(e);
            }
            match result {
                Feasibility::Feasible { raw, strategies: mut s, rounds } => {
                    strategies.push(s.remove(0));
                    raws.push(raw);
                    total_rounds += rounds;
                }
                Feasibility::Infeasible { .. } => return Ok(None),
            }
        }
        Ok(Some((strategies, raws, total_rounds)))
    })?;
    let profile = StrategyProfile::new(strategies)?;
    let report = verify(game, &profile, smooth, epsilon)?;
    if !report.strong_ok {
        return Err(Error::Internal(format!(
            "program solution has gain {} above epsilon {epsilon}",
            report.max_gain()
        )));
    }
    Ok(StrongOutcome { profile, report, anchor, eps0, rounds, lp_points: raws })
}

/// Exact strong smooth equilibrium of a two-player game (gain zero up to
/// rounding), by Lemke's algorithm.
///
/// Each player's best smooth response is the linear program
/// `min x.c` over `{sum x >= 1, 0 <= x <= cap}` with positive costs
/// `c = 2 - payoff`. Stacking both players' optimality conditions gives a
/// linear complementarity problem in `(x, u, t, y, v, t')`, where `u`, `t`
/// are the multipliers of the caps and of the sum constraint.
pub fn lemke_smooth_equilibrium(game: &Game, smooth: &SmoothParams) -> Result<StrategyProfile> {
    check_two_player(game, smooth, 1.0)?;
    let n = game.num_actions();
    let size = 4 * n + 2;
    let (bx, bu, bt, by, bv, bt2) = (0, n, 2 * n, 2 * n + 1, 3 * n + 1, 4 * n + 1);
    let a = game.tensor(0);
    let b = game.tensor(1);
    let mut mat = vec![0.0; size * size];
    let mut q = vec![0.0; size];
    let idx = |r: usize, c: usize| r * size + c;
    for i in 0..n {
        for j in 0..n {
            mat[idx(bx + i, by + j)] = 2.0 - a[i * n + j];
            mat[idx(by + j, bx + i)] = 2.0 - b[i * n + j];
        }
        mat[idx(bx + i, bt)] = -1.0;
        mat[idx(bx + i, bu + i)] = 1.0;
        mat[idx(bu + i, bx + i)] = -1.0;
        q[bu + i] = smooth.cap(i);
        mat[idx(bt, bx + i)] = 1.0;

        mat[idx(by + i, bt2)] = -1.0;
        mat[idx(by + i, bv + i)] = 1.0;
        mat[idx(bv + i, by + i)] = -1.0;
        q[bv + i] = smooth.cap(i);
        mat[idx(bt2, by + i)] = 1.0;
    }
    q[bt] = -1.0;
    q[bt2] = -1.0;
    let clean = |s: &[f64]| -> Result<MixedStrategy> {
        let v: Vec<f64> = s.iter().enumerate().map(|(i, &p)| p.clamp(0.0, smooth.cap(i))).collect();
        let total: f64 = v.iter().sum();
        MixedStrategy::with_tol(v.iter().map(|p| p / total).collect(), 1e-6)
    };
    let mut last = None;
    for attempt in 0..=LEMKE_RETRIES {
        let basis = if attempt == 0 {
            lemke(&mat, &q, size)
        } else {
            // degenerate instances can defeat the ratio test in floating
            // point; a perturbed right-hand side has no ties, and its final
            // basis is re-solved with the exact one
            let mut r = rng::seeded(attempt as u64);
            let shifted: Vec<f64> = q.iter().map(|&v| v + LEMKE_PERTURBATION * r.random_range(1.0..2.0)).collect();
            lemke(&mat, &shifted, size)
        };
        let z = match basis.and_then(|b| basic_solution(&mat, &q, size, &b)) {
            Ok(z) => z,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let profile = StrategyProfile::new(vec![clean(&z[bx..bx + n])?, clean(&z[by..by + n])?])?;
        let gain = verify(game, &profile, smooth, 0.0)?.max_gain();
        if gain <= 1e-9 {
            return Ok(profile);
        }
        last = Some(Error::SolverFailure {
            rounds: 0,
            message: format!("complementary solution has gain {gain}"),
        });
    }
    Err(last.unwrap_or_else(|| Error::Internal("no Lemke attempt ran".into())))
}

/// Perturbed restarts after the exact run fails.
const LEMKE_RETRIES: usize = 3;

/// Scale of the right-hand side perturbation used by restarts.
const LEMKE_PERTURBATION: f64 = 1e-7;

/// `z` of the basic solution of `w = q + M z` for a basis of columns of
/// `[I | -M]`, with rounding-level negatives set to zero.
fn basic_solution(mat: &[f64], q: &[f64], size: usize, basis: &[usize]) -> Result<Vec<f64>> {
    let b = DMatrix::from_columns(&basis.iter().map(|&c| column(mat, size, c)).collect::<Vec<_>>());
    let rhs = b
        .lu()
        .solve(&DVector::from_column_slice(q))
        .ok_or_else(|| Error::SolverFailure { rounds: 0, message: "final basis is singular".into() })?;
    let mut z = vec![0.0; size];
    for (r, &v) in basis.iter().enumerate() {
        if (size..2 * size).contains(&v) {
            z[v - size] = rhs[r].max(0.0);
        }
    }
    Ok(z)
}

/// Column `c` of `[I | -M | -1]`.
fn column(mat: &[f64], size: usize, c: usize) -> DVector<f64> {
    if c < size {
        DVector::from_fn(size, |r, _| if r == c { 1.0 } else { 0.0 })
    } else if c < 2 * size {
        DVector::from_fn(size, |r, _| -mat[r * size + c - size])
    } else {
        DVector::from_element(size, -1.0)
    }
}

/// Pivots between fresh factorizations of the basis in [`lemke`].
const REFACTOR_EVERY: usize = 32;

/// Lemke's algorithm with covering vector `1` and lexicographic ratio test.
/// Returns the final complementary basis of `w = q + M z`, `w, z >= 0`,
/// `w.z = 0`.
///
/// The basis inverse is updated in product form and refactored from the
/// original columns every few pivots, so rounding does not accumulate along
/// long paths.
fn lemke(mat: &[f64], q: &[f64], size: usize) -> Result<Vec<usize>> {
    let mut basis: Vec<usize> = (0..size).collect();
    let Some(start) = (0..size).min_by(|&i, &j| q[i].total_cmp(&q[j])) else {
        return Ok(basis);
    };
    if q[start] >= 0.0 {
        return Ok(basis);
    }
    // columns of [I | -M | -1]: w_i, then z_i, then z0
    let z0 = 2 * size;
    let q = DVector::from_column_slice(q);
    basis[start] = z0;
    let mut entering = start + size;
    // paths of several hundred times the size occur for large sigma
    let max_pivots = 2000 * size;
    let singular = || Error::SolverFailure { rounds: 0, message: "basis became singular".into() };
    let factor = |basis: &[usize]| {
        DMatrix::from_columns(&basis.iter().map(|&c| column(mat, size, c)).collect::<Vec<_>>()).try_inverse()
    };
    let mut binv = factor(&basis).ok_or_else(singular)?;
    // once a basis repeats, degenerate ties are broken at random
    let mut seen = HashSet::new();
    let mut breaker: Option<rng::SeededRng> = None;
    for pivots in 0..max_pivots {
        if pivots % REFACTOR_EVERY == 0 {
            binv = factor(&basis).ok_or_else(singular)?;
        }
        let d = &binv * column(mat, size, entering);
        let rhs = &binv * &q;
        let row = lex_ratio(&d, &rhs, &binv, &basis, z0, breaker.as_mut()).ok_or_else(|| Error::SolverFailure {
            rounds: pivots,
            message: "complementary pivoting hit a ray".into(),
        })?;
        let leaving = basis[row];
        basis[row] = entering;
        if leaving == z0 {
            return Ok(basis);
        }
        if breaker.is_none() {
            let mut key = basis.clone();
            key.sort_unstable();
            if !seen.insert(key) {
                breaker = Some(rng::seeded(pivots as u64));
                seen = HashSet::new();
            }
        }
        // product-form update of the inverse
        let pivot_row = binv.row(row) / d[row];
        for r in 0..size {
            if r != row && d[r] != 0.0 {
                let f = d[r];
                let updated = binv.row(r) - &pivot_row * f;
                binv.set_row(r, &updated);
            }
        }
        binv.set_row(row, &pivot_row);
        entering = if leaving < size { leaving + size } else { leaving - size };
    }
    Err(Error::SolverFailure { rounds: max_pivots, message: "pivot limit reached".into() })
}

/// Lexicographic minimum ratio over rows with a clearly positive entry in
/// `d`, preferring the row of `z0` and then the largest pivot among ties.
/// Right-hand sides within rounding of zero count as zero. With a `breaker`,
/// ties in the ratio itself are broken at random instead.
fn lex_ratio(
    d: &DVector<f64>,
    rhs: &DVector<f64>,
    binv: &DMatrix<f64>,
    basis: &[usize],
    z0: usize,
    breaker: Option<&mut rng::SeededRng>,
) -> Option<usize> {
    const PIVOT_TOL: f64 = 1e-9;
    const TIE_TOL: f64 = 1e-11;
    let size = d.len();
    let dmax = d.amax();
    let mut cands: Vec<usize> = (0..size).filter(|&r| d[r] > PIVOT_TOL * dmax.max(1.0)).collect();
    if cands.is_empty() {
        return None;
    }
    for key in 0..=size {
        let value = |r: usize| if key == 0 { rhs[r].max(0.0) } else { binv[(r, key - 1)] };
        let ratio = |r: usize| value(r) / d[r];
        let best = cands.iter().map(|&r| ratio(r)).fold(f64::INFINITY, f64::min);
        cands.retain(|&r| ratio(r) <= best + TIE_TOL * best.abs().max(1.0));
        if let Some(&r) = cands.iter().find(|&&r| basis[r] == z0) {
            return Some(r);
        }
        if cands.len() == 1 {
            return Some(cands[0]);
        }
        if key == 0 {
            if let Some(r) = breaker {
                return Some(cands[r.random_range(0..cands.len())]);
            }
        }
    }
    cands.into_iter().max_by(|&a, &b| d[a].total_cmp(&d[b]))
}
