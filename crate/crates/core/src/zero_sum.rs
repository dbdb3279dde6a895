//! Smooth equilibria of two-player zero-sum games by no-regret dynamics.
//!
//! The row player picks `x` to minimize `x^T A y`, the column player picks `y`
//! to maximize it. Both are restricted to the smooth polytope, and both run
//! the same learner against each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{verify, EquilibriumReport};
use crate::error::{invalid, Result};
use crate::game::{dot, Game, MixedStrategy, StrategyProfile};
use crate::polytope::{kl_project, max_kl_to_uniform, top_smooth, SmoothParams};
use crate::rng;

/// Largest OMD step size.
pub const OMD_MAX_STEP: f64 = 1.0 / 11.0;

/// Square loss matrix with entries in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroSumGame {
    n: usize,
    matrix: Vec<f64>,
}

impl ZeroSumGame {
    pub fn new(n: usize, matrix: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("a zero-sum game needs at least one action"));
        }
        if matrix.len() != n * n {
            return Err(invalid(format!("matrix has {} entries, expected {}", matrix.len(), n * n)));
        }
        if let Some(i) = matrix.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!("entry ({}, {}) is {}, outside [0, 1]", i / n, i % n, matrix[i])));
        }
        Ok(Self { n, matrix })
    }

    /// Entries drawn i.i.d. uniform on `[0, 1]`.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let matrix = (0..n * n).map(|_| r.random::<f64>()).collect();
        Self::new(n, matrix)
    }

    /// Inverts [`ZeroSumGame::to_game`]: the game must have payoffs
    /// `(1 - A, A)` up to rounding.
    pub fn from_game(game: &Game) -> Result<Self> {
        if game.num_players() != 2 {
            return Err(invalid("only two-player games embed a zero-sum game"));
        }
        let (a, b) = (game.tensor(0), game.tensor(1));
        if let Some(i) = a.iter().zip(b).position(|(x, y)| (x + y - 1.0).abs() > 1e-12) {
            return Err(invalid(format!("payoffs at flat index {i} do not sum to 1")));
        }
        Self::new(game.num_actions(), b.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `A y`: the row player's loss per action.
    pub fn row_losses(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.chunks(self.n).map(|row| dot(row, y)).collect()
    }

    /// `A^T x`: the column player's payoff per action.
    pub fn column_values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &w) in self.matrix.chunks(self.n).zip(x) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += w * a;
            }
        }
        out
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.row_losses(y))
    }

    /// The general-sum form with payoffs `(1 - A, A)`.
    pub fn to_game(&self) -> Game {
        let a = self.matrix.iter().map(|v| 1.0 - v).collect();
        Game::bimatrix(self.n, a, self.matrix.clone()).expect("entries already lie in [0, 1]")
    }
}

/// `max_{y' in K} x^T A y' - min_{x' in K} x'^T A y`.
pub fn duality_gap(game: &ZeroSumGame, x: &MixedStrategy, y: &MixedStrategy, smooth: &SmoothParams) -> Result<f64> {
    if x.len() != game.n() || y.len() != game.n() {
        return Err(invalid("strategy length does not match the game"));
    }
    let upper = top_smooth(&game.column_values(x.probs()), smooth)?.value;
    let neg: Vec<f64> = game.row_losses(y.probs()).iter().map(|v| -v).collect();
    let lower = -top_smooth(&neg, smooth)?.value;
    Ok(upper - lower)
}

/// Duality gap of the running averages after `iteration` rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub iteration: usize,
    pub gap: f64,
}

/// Everything a run of [`solve_pmwu`] or [`solve_omd`] produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    /// Played strategies `x_1, .., x_T`.
    pub xs: Vec<MixedStrategy>,
    pub ys: Vec<MixedStrategy>,
    pub x_avg: MixedStrategy,
    pub y_avg: MixedStrategy,
    /// Gaps at every power of two and at `T`.
    pub gaps: Vec<GapPoint>,
    /// Step size used in each round, per player.
    pub eta_x: Vec<f64>,
    pub eta_y: Vec<f64>,
    /// `max_{p in K} KL(p || uniform)` for each player.
    pub r2_x: f64,
    pub r2_y: f64,
}

impl IterateTrace {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().map_or(f64::NAN, |g| g.gap)
    }

    /// Gap recorded at exactly `iteration`, if any.
    pub fn gap_at(&self, iteration: usize) -> Option<f64> {
        self.gaps.iter().find(|g| g.iteration == iteration).map(|g| g.gap)
    }

    /// Verifies the averaged profile on the embedded general-sum game.
    pub fn report(&self, game: &ZeroSumGame, smooth: &SmoothParams, epsilon: f64) -> Result<EquilibriumReport> {
        let profile = StrategyProfile::new(vec![self.x_avg.clone(), self.y_avg.clone()])?;
        verify(&game.to_game(), &profile, smooth, epsilon)
    }
}

/// Step size `min(1/2, sqrt(ln(1/sigma) / T))`.
pub fn default_pmwu_eta(sigma: f64, iterations: usize) -> f64 {
    (sigma.recip().ln() / iterations as f64).sqrt().min(0.5)
}

fn check_inputs(game: &ZeroSumGame, smooth: &SmoothParams, iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(invalid("at least one iteration is required"));
    }
    if smooth.n() != game.n() {
        return Err(invalid(format!("smoothness parameters are for {} actions, game has {}", smooth.n(), game.n())));
    }
    Ok(())
}

struct Recorder {
    n: usize,
    total: usize,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    xs: Vec<MixedStrategy>,
    ys: Vec<MixedStrategy>,
    gaps: Vec<GapPoint>,
}

impl Recorder {
    fn new(n: usize, total: usize) -> Self {
        Self {
            n,
            total,
            sum_x: vec![0.0; n],
            sum_y: vec![0.0; n],
            xs: Vec::with_capacity(total),
            ys: Vec::with_capacity(total),
            gaps: Vec::new(),
        }
    }

    fn averages(&self) -> (MixedStrategy, MixedStrategy) {
        let t = self.xs.len() as f64;
        let avg = |s: &[f64]| MixedStrategy::from_vec_unchecked(s.iter().map(|v| v / t).collect());
        (avg(&self.sum_x), avg(&self.sum_y))
    }

    fn push(&mut self, game: &ZeroSumGame, smooth: &SmoothParams, x: MixedStrategy, y: MixedStrategy) -> Result<()> {
        for i in 0..self.n {
            self.sum_x[i] += x.probs()[i];
            self.sum_y[i] += y.probs()[i];
        }
        self.xs.push(x);
        self.ys.push(y);
        let t = self.xs.len();
        if t.is_power_of_two() || t == self.total {
            let (xa, ya) = self.averages();
            self.gaps.push(GapPoint { iteration: t, gap: duality_gap(game, &xa, &ya, smooth)? });
        }
        Ok(())
    }

    fn finish(self, eta_x: Vec<f64>, eta_y: Vec<f64>, r2: f64) -> IterateTrace {
        let (x_avg, y_avg) = self.averages();
        IterateTrace { xs: self.xs, ys: self.ys, x_avg, y_avg, gaps: self.gaps, eta_x, eta_y, r2_x: r2, r2_y: r2 }
    }
}

/// Projected multiplicative weights for both players with a fixed step.
///
/// Each round `x <- KL-projection of x_i (1 - eta l_i)` with `l = A y` for the
/// row player and `l = -A^T x` for the column player.
pub fn solve_pmwu(game: &ZeroSumGame, smooth: &SmoothParams, iterations: usize, eta: f64) -> Result<IterateTrace> {
    check_inputs(game, smooth, iterations)?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid(format!("step size must lie in (0, 1), got {eta}")));
    }
    let n = game.n();
    let mut rec = Recorder::new(n, iterations);
    let mut x = MixedStrategy::uniform(n);
    let mut y = MixedStrategy::uniform(n);
    for _ in 0..iterations {
        let loss_x = game.row_losses(y.probs());
        let gain_y = game.column_values(x.probs());
        let qx: Vec<f64> = x.probs().iter().zip(&loss_x).map(|(p, l)| p * (1.0 - eta * l)).collect();
        let qy: Vec<f64> = y.probs().iter().zip(&gain_y).map(|(p, g)| p * (1.0 + eta * g)).collect();
        let next_x = kl_project(&qx, smooth)?;
        let next_y = kl_project(&qy, smooth)?;
        rec.push(game, smooth, std::mem::replace(&mut x, next_x), std::mem::replace(&mut y, next_y))?;
    }
    let r2 = max_kl_to_uniform(smooth);
    Ok(rec.finish(vec![eta; iterations], vec![eta; iterations], r2))
}

/// `argmin_{p in K} eta <p, loss> + KL(p || prior)`: an exponentiated
/// gradient step followed by a KL projection.
pub fn entropic_step(prior: &[f64], loss: &[f64], eta: f64, smooth: &SmoothParams) -> Result<MixedStrategy> {
    let shift = loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let q: Vec<f64> = prior.iter().zip(loss).map(|(p, l)| p * (-eta * (l - shift)).exp()).collect();
    kl_project(&q, smooth)
}

/// Adaptive step schedule driven by squared max-norm differences of
/// consecutive loss vectors.
struct Schedule {
    r2: f64,
    prev_sum: f64,
    sum: f64,
}

impl Schedule {
    fn eta(&self) -> f64 {
        let denom = self.sum.sqrt() + self.prev_sum.sqrt();
        if denom > 0.0 {
            (self.r2 / denom).min(OMD_MAX_STEP)
        } else {
            OMD_MAX_STEP
        }
    }

    fn observe(&mut self, current: &[f64], previous: &[f64]) {
        let d = current.iter().zip(previous).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.prev_sum = self.sum;
        self.sum += d * d;
    }
}

/// Optimistic mirror descent with entropy regularization for both players.
///
/// Round `t` plays `x_t`, observes `l_t = A y_t`, sets
/// `x~_t = step(x~_{t-1}, l_t)` and `x_{t+1} = step(x~_t, l_t)`. The column
/// player mirrors this with losses `-A^T x_t`. Step sizes follow
/// `eta_t = min(R^2 / (sqrt(S_{t-1}) + sqrt(S_{t-2})), 1/11)` where `S_t` sums
/// squared max-norm differences of consecutive losses up to round `t` and
/// `R^2` is the largest KL divergence from the polytope to uniform. Both
/// `x~_0` and the opponent's round-0 strategy are uniform.
pub fn solve_omd(game: &ZeroSumGame, smooth: &SmoothParams, iterations: usize) -> Result<IterateTrace> {
    check_inputs(game, smooth, iterations)?;
    let n = game.n();
    let r2 = max_kl_to_uniform(smooth);
    let mut rec = Recorder::new(n, iterations);
    let uniform = MixedStrategy::uniform(n);
    let (mut x, mut y) = (uniform.clone(), uniform.clone());
    let (mut x_tilde, mut y_tilde) = (uniform.clone(), uniform);
    let mut loss_x_prev = game.row_losses(y.probs());
    let mut loss_y_prev: Vec<f64> = game.column_values(x.probs()).iter().map(|v| -v).collect();
    let mut sched_x = Schedule { r2, prev_sum: 0.0, sum: 0.0 };
    let mut sched_y = Schedule { r2, prev_sum: 0.0, sum: 0.0 };
    let mut eta_x = Vec::with_capacity(iterations);
    let mut eta_y = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let loss_x = game.row_losses(y.probs());
        let loss_y: Vec<f64> = game.column_values(x.probs()).iter().map(|v| -v).collect();
        let (ex, ey) = (sched_x.eta(), sched_y.eta());
        eta_x.push(ex);
        eta_y.push(ey);
        x_tilde = entropic_step(x_tilde.probs(), &loss_x, ex, smooth)?;
        y_tilde = entropic_step(y_tilde.probs(), &loss_y, ey, smooth)?;
        let next_x = entropic_step(x_tilde.probs(), &loss_x, ex, smooth)?;
        let next_y = entropic_step(y_tilde.probs(), &loss_y, ey, smooth)?;
        rec.push(game, smooth, std::mem::replace(&mut x, next_x), std::mem::replace(&mut y, next_y))?;
        sched_x.observe(&loss_x, &loss_x_prev);
        sched_y.observe(&loss_y, &loss_y_prev);
        loss_x_prev = loss_x;
        loss_y_prev = loss_y;
    }
    Ok(rec.finish(eta_x, eta_y, r2))
}
