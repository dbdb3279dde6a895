//! Computing and verifying approximate smooth Nash equilibria.
//!
//! A strategy is `sigma`-smooth when no action has probability above
//! `1/(n sigma)`. Deviations are measured against the best smooth strategy,
//! which makes approximate equilibria cheap to find and to certify.

pub mod enumeration;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod io;
pub mod lp;
pub mod polytope;
pub mod query;
pub mod reductions;
pub mod rng;
pub mod sampling;
pub mod strong;
pub mod zero_sum;

pub use equilibrium::{best_smooth_response, verify, EquilibriumReport, PlayerReport};
pub use error::{Error, Result};
pub use game::{Game, HashedGame, MixedStrategy, PayoffSource, StrategyProfile};
pub use polytope::{is_smooth, kl_project, top_smooth_average, SmoothParams};
