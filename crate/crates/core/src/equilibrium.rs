//! Smooth best responses and equilibrium verification.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::game::{dot, Game, MixedStrategy, StrategyProfile};
use crate::polytope::{is_smooth, top_smooth, top_smooth_average, SmoothParams};

/// Per-player verification result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerReport {
    pub current_payoff: f64,
    pub best_smooth_value: f64,
    pub gain: f64,
    pub smooth_member: bool,
}

/// Outcome of checking a profile for an approximate smooth equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub players: Vec<PlayerReport>,
    pub epsilon: f64,
    pub sigma: f64,
    pub tol: f64,
    /// Every gain is at most `epsilon + tol`.
    pub weak_ok: bool,
    /// `weak_ok` and every strategy is smooth.
    pub strong_ok: bool,
}

impl EquilibriumReport {
    pub fn max_gain(&self) -> f64 {
        self.players.iter().map(|p| p.gain).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Best smooth deviation of `player` against the others in `profile`.
pub fn best_smooth_response(
    game: &Game,
    profile: &StrategyProfile,
    player: usize,
    smooth: &SmoothParams,
) -> Result<(f64, MixedStrategy)> {
    if player >= game.num_players() {
        return Err(invalid(format!("player {player} out of range")));
    }
    let u = game.deviation_payoffs(profile, player)?;
    top_smooth_average(&u, smooth)
}

fn check_smooth_size(game: &Game, smooth: &SmoothParams) -> Result<()> {
    if smooth.n() != game.num_actions() {
        return Err(invalid(format!(
            "smoothness parameters are for {} actions, game has {}",
            smooth.n(),
            game.num_actions()
        )));
    }
    Ok(())
}

/// Computes every player's smooth-deviation gain and the two verdicts.
pub fn verify(
    game: &Game,
    profile: &StrategyProfile,
    smooth: &SmoothParams,
    epsilon: f64,
) -> Result<EquilibriumReport> {
    check_smooth_size(game, smooth)?;
    if !(epsilon >= 0.0) {
        return Err(invalid(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let tol = smooth.tol();
    let players = (0..game.num_players())
        .map(|j| {
            let u = game.deviation_payoffs(profile, j)?;
            let x = profile.strategy(j);
            let current = dot(&u, x.probs());
            let best = top_smooth(&u, smooth)?.value;
            Ok(PlayerReport {
                current_payoff: current,
                best_smooth_value: best,
                gain: best - current,
                smooth_member: is_smooth(x, smooth),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let weak_ok = players.iter().all(|p| p.gain <= epsilon + tol);
    let strong_ok = weak_ok && players.iter().all(|p| p.smooth_member);
    Ok(EquilibriumReport { players, epsilon, sigma: smooth.sigma(), tol, weak_ok, strong_ok })
}

/// Weak check that stops at the first player whose gain exceeds the bound.
pub fn is_weak_equilibrium(
    game: &Game,
    profile: &StrategyProfile,
    smooth: &SmoothParams,
    epsilon: f64,
) -> Result<bool> {
    check_smooth_size(game, smooth)?;
    for j in 0..game.num_players() {
        let u = game.deviation_payoffs(profile, j)?;
        let gain = top_smooth(&u, smooth)?.value - dot(&u, profile.strategy(j).probs());
        if gain > epsilon + smooth.tol() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matching_pennies() -> Game {
        Game::bimatrix(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn uniform_sigma_one_has_zero_gain() {
        let g = Game::random(3, 4, 11).unwrap();
        let s = SmoothParams::new(1.0, 4).unwrap();
        let r = verify(&g, &StrategyProfile::uniform(3, 4), &s, 0.0).unwrap();
        assert!(r.max_gain().abs() < 1e-12);
        assert!(r.strong_ok);
    }

    #[test]
    fn pure_profile_weak_but_not_strong() {
        let mut a = vec![0.0; 16];
        a[0] = 1.0;
        let g = Game::bimatrix(4, a.clone(), a).unwrap();
        let p = StrategyProfile::new(vec![MixedStrategy::pure(4, 0), MixedStrategy::pure(4, 0)])
            .unwrap();
        // cap is 1/2, so a point mass is not smooth but nothing beats it
        let s = SmoothParams::new(0.5, 4).unwrap();
        let r = verify(&g, &p, &s, 0.0).unwrap();
        assert!(r.weak_ok);
        assert!(!r.strong_ok);
    }

    #[test]
    fn matching_pennies_gain() {
        let g = matching_pennies();
        let p = StrategyProfile::new(vec![MixedStrategy::pure(2, 0), MixedStrategy::pure(2, 0)])
            .unwrap();
        let s = SmoothParams::new(0.5, 2).unwrap();
        let r = verify(&g, &p, &s, 0.1).unwrap();
        assert_eq!(r.players[0].gain, 0.0);
        assert_eq!(r.players[1].gain, 1.0);
        assert!(!r.weak_ok);
        assert!(!is_weak_equilibrium(&g, &p, &s, 0.1).unwrap());
    }

    #[test]
    fn size_mismatch_errors() {
        let g = matching_pennies();
        let s = SmoothParams::new(0.5, 3).unwrap();
        assert!(verify(&g, &StrategyProfile::uniform(2, 2), &s, 0.1).is_err());
    }
}
