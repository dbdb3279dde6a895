//! Cutting-plane feasibility over products of smooth polytopes.
//!
//! The program has a box (caps plus simplex sum, each relaxed by a small
//! additive slack) and a family of linear constraints too large to list. A
//! separation oracle supplies violated members one at a time. Each round the
//! LP over the box and the cuts found so far is solved for its deepest point.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Solution, Variable};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::game::MixedStrategy;
use crate::polytope::{euclidean_project, SmoothParams};

/// Additive relaxation of the caps and of the simplex sum.
pub const BOX_SLACK: f64 = 1e-7;

/// Violation below which a cut is not reported.
pub const CUT_TOL: f64 = 1e-9;

/// `coefficients . z <= bound` over the stacked decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCut {
    pub coefficients: Vec<f64>,
    pub bound: f64,
}

impl LinearCut {
    pub fn violation(&self, z: &[f64]) -> f64 {
        self.coefficients.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - self.bound
    }
}

/// Decision variables are one strategy per block, stacked in order.
#[derive(Clone, Debug)]
pub struct FeasibilityProblem {
    pub blocks: Vec<SmoothParams>,
    pub cuts: Vec<LinearCut>,
    pub slack: f64,
}

impl FeasibilityProblem {
    pub fn new(blocks: Vec<SmoothParams>) -> Self {
        Self { blocks, cuts: Vec::new(), slack: BOX_SLACK }
    }

    pub fn dimension(&self) -> usize {
        self.blocks.iter().map(SmoothParams::n).sum()
    }

    /// Splits a stacked point into blocks.
    pub fn split<'a>(&self, z: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for b in &self.blocks {
            out.push(&z[start..start + b.n()]);
            start += b.n();
        }
        out
    }
}

/// Outcome of [`solve_feasibility`].
#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Feasible {
        /// LP point before projection.
        raw: Vec<f64>,
        /// Each block projected onto its exact smooth polytope.
        strategies: Vec<MixedStrategy>,
        rounds: usize,
    },
    Infeasible {
        rounds: usize,
        /// True when the round cap, not an empty LP, ended the search.
        round_limit: bool,
    },
}

struct CutLp {
    vars: Vec<Variable>,
    depth: Variable,
    solution: Solution,
}

fn lp_error(rounds: usize, e: microlp::Error) -> Error {
    Error::SolverFailure { rounds, message: format!("LP subroutine: {e}") }
}

impl CutLp {
    /// Box LP with `min s`; cuts enter as `a.z - |a| s <= b`.
    fn new(problem: &FeasibilityProblem) -> std::result::Result<Option<Self>, microlp::Error> {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut vars = Vec::with_capacity(problem.dimension());
        for b in &problem.blocks {
            let start = vars.len();
            for i in 0..b.n() {
                vars.push(lp.add_var(0.0, (0.0, b.cap(i) + problem.slack)));
            }
            let sum: LinearExpr = vars[start..].iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(sum.clone(), ComparisonOp::Le, 1.0 + problem.slack);
            lp.add_constraint(sum, ComparisonOp::Ge, 1.0 - problem.slack);
        }
        let depth = lp.add_var(1.0, (-1.0, f64::INFINITY));
        for cut in &problem.cuts {
            lp.add_constraint(cut_expr(&vars, depth, cut), ComparisonOp::Le, cut.bound);
        }
        match lp.solve() {
            Ok(outcome) => Ok(outcome.into_solution().ok().map(|solution| Self { vars, depth, solution })),
            Err(microlp::Error::Infeasible) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn point(&self) -> Vec<f64> {
        self.vars.iter().map(|&v| self.solution.var_value(v)).collect()
    }

    fn depth(&self) -> f64 {
        self.solution.var_value(self.depth)
    }

    fn add(self, cut: &LinearCut) -> std::result::Result<Option<Self>, microlp::Error> {
        let Self { vars, depth, solution } = self;
        let expr = cut_expr(&vars, depth, cut);
        match solution.add_constraint(expr, ComparisonOp::Le, cut.bound) {
            Ok(outcome) => Ok(outcome.into_solution().ok().map(|solution| Self { vars, depth, solution })),
            Err(microlp::Error::Infeasible) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn cut_expr(vars: &[Variable], depth: Variable, cut: &LinearCut) -> LinearExpr {
    let norm = cut.coefficients.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut expr: LinearExpr =
        vars.iter().zip(&cut.coefficients).filter(|(_, &a)| a != 0.0).map(|(&v, &a)| (v, a)).collect();
    expr.add(depth, -norm);
    expr
}

/// Cutting-plane loop. `oracle` returns a violated cut for a candidate point,
/// or `None` when the point satisfies the whole family.
///
/// A point is accepted only if every accumulated cut holds within
/// [`CUT_TOL`]; otherwise the program is reported infeasible.
pub fn solve_feasibility(
    mut problem: FeasibilityProblem,
    mut oracle: impl FnMut(&[f64]) -> Option<LinearCut>,
    max_rounds: usize,
) -> Result<Feasibility> {
    if problem.blocks.is_empty() {
        return Err(invalid("a feasibility problem needs at least one block"));
    }
    let dim = problem.dimension();
    if let Some(c) = problem.cuts.iter().find(|c| c.coefficients.len() != dim) {
        return Err(invalid(format!("cut has {} coefficients, expected {dim}", c.coefficients.len())));
    }
    let mut lp = match CutLp::new(&problem).map_err(|e| lp_error(0, e))? {
        Some(lp) => lp,
        None => return Ok(Feasibility::Infeasible { rounds: 0, round_limit: false }),
    };
    for round in 1..=max_rounds {
        if lp.depth() > CUT_TOL {
            return Ok(Feasibility::Infeasible { rounds: round - 1, round_limit: false });
        }
        let z = lp.point();
        match oracle(&z) {
            None => {
                let strategies = problem
                    .split(&z)
                    .into_iter()
                    .zip(&problem.blocks)
                    .map(|(x, b)| euclidean_project(x, b))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(Feasibility::Feasible { raw: z, strategies, rounds: round });
            }
            Some(cut) => {
                if cut.coefficients.len() != dim || cut.coefficients.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Internal("separation oracle returned a malformed cut".into()));
                }
                lp = match lp.add(&cut).map_err(|e| lp_error(round, e))? {
                    Some(next) => next,
                    None => return Ok(Feasibility::Infeasible { rounds: round, round_limit: false }),
                };
                problem.cuts.push(cut);
            }
        }
    }
    Ok(Feasibility::Infeasible { rounds: max_rounds, round_limit: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_cuts_returns_first_point() {
        let p = FeasibilityProblem::new(vec![SmoothParams::new(0.5, 4).unwrap()]);
        match solve_feasibility(p, |_| None, 10).unwrap() {
            Feasibility::Feasible { strategies, rounds, .. } => {
                assert_eq!(rounds, 1);
                let s: f64 = strategies[0].probs().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(strategies[0].probs().iter().all(|&p| p <= 0.5 + 1e-12));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sigma_one_box_is_uniform() {
        let p = FeasibilityProblem::new(vec![SmoothParams::new(1.0, 5).unwrap()]);
        match solve_feasibility(p, |_| None, 10).unwrap() {
            Feasibility::Feasible { strategies, .. } => {
                for &x in strategies[0].probs() {
                    assert!((x - 0.2).abs() < 1e-9);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn finds_point_satisfying_oracle_family() {
        // family: x_0 >= 0.3 and x_1 <= 0.1, offered one at a time
        let p = FeasibilityProblem::new(vec![SmoothParams::new(0.5, 3).unwrap()]);
        let oracle = |z: &[f64]| {
            if z[0] < 0.3 - CUT_TOL {
                Some(LinearCut { coefficients: vec![-1.0, 0.0, 0.0], bound: -0.3 })
            } else if z[1] > 0.1 + CUT_TOL {
                Some(LinearCut { coefficients: vec![0.0, 1.0, 0.0], bound: 0.1 })
            } else {
                None
            }
        };
        match solve_feasibility(p, oracle, 50).unwrap() {
            Feasibility::Feasible { raw, .. } => {
                assert!(raw[0] >= 0.3 - 1e-8 && raw[1] <= 0.1 + 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn contradictory_cuts_are_infeasible() {
        // caps are 1/2 on two actions with x_0 <= 0.2 forces x_1 >= 0.8
        let p = FeasibilityProblem::new(vec![SmoothParams::new(1.0, 2).unwrap()]);
        let oracle = |z: &[f64]| {
            (z[0] > 0.2 + CUT_TOL).then(|| LinearCut { coefficients: vec![1.0, 0.0], bound: 0.2 })
        };
        match solve_feasibility(p, oracle, 50).unwrap() {
            Feasibility::Infeasible { round_limit, .. } => assert!(!round_limit),
            other => panic!("{other:?}"),
        }
    }
}
