//! JSON game files and run reports.
//!
//! A game file holds one payoff tensor per player, either flat in row-major
//! order (player 0's action most significant) or as nested arrays of depth
//! `m`. Floats are written in shortest round-trip form, so a save and load
//! reproduces every bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::equilibrium::EquilibriumReport;
use crate::error::{Error, Result};
use crate::game::{Game, MixedStrategy, StrategyProfile};
use crate::reductions::{AffineScale, GmpParams};

pub const FORMAT_VERSION: u32 = 1;

/// Provenance of a generated game.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GameMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Map from raw payoffs to the stored `[0, 1]` payoffs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<AffineScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmp: Option<GmpParams>,
    /// `(n, k)` of a padded game built from an `n`-action game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<(usize, usize)>,
}

/// On-disk form of a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub format_version: u32,
    pub m: usize,
    pub n: usize,
    /// `[n; m]` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    /// One tensor per player, flat or nested.
    pub payoffs: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<GameMetadata>,
}

impl GameFile {
    /// Flat encoding of `game`.
    pub fn from_game(game: &Game, metadata: Option<GameMetadata>) -> Self {
        let payoffs = game.tensors().iter().map(|t| Value::from(t.clone())).collect();
        Self {
            format_version: FORMAT_VERSION,
            m: game.num_players(),
            n: game.num_actions(),
            shape: Some(vec![game.num_actions(); game.num_players()]),
            payoffs,
            metadata,
        }
    }

    /// Decodes and validates the tensors.
    pub fn to_game(&self) -> Result<Game> {
        if self.format_version != FORMAT_VERSION {
            return Err(parse(format!(
                "format_version: unsupported version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        if self.m == 0 || self.n == 0 {
            return Err(parse("m, n: must both be positive"));
        }
        if let Some(shape) = &self.shape {
            if shape.len() != self.m || shape.iter().any(|&d| d != self.n) {
                return Err(parse(format!("shape: {shape:?} does not match m = {}, n = {}", self.m, self.n)));
            }
        }
        if self.payoffs.len() != self.m {
            return Err(parse(format!("payoffs: expected {} tensors, found {}", self.m, self.payoffs.len())));
        }
        let len = u32::try_from(self.m)
            .ok()
            .and_then(|m| self.n.checked_pow(m))
            .ok_or_else(|| Error::ResourceLimit(format!("{}^{} entries overflow", self.n, self.m)))?;
        let tensors = self
            .payoffs
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let path = format!("payoffs[{j}]");
                let mut out = Vec::new();
                match v {
                    Value::Array(items) if items.len() == len && items.iter().all(Value::is_number) => {
                        out.extend(items.iter().filter_map(Value::as_f64));
                    }
                    _ => flatten(v, self.m, self.n, &path, &mut out)?,
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Game::new(self.m, self.n, tensors).map_err(|e| match e {
            Error::InvalidArgument(msg) => parse(format!("payoffs: {msg}")),
            other => other,
        })
    }
}

fn parse(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Appends the leaves of a nested array of the given depth, `n` entries per
/// level.
fn flatten(v: &Value, depth: usize, n: usize, path: &str, out: &mut Vec<f64>) -> Result<()> {
    let Value::Array(items) = v else {
        return Err(parse(format!("{path}: expected an array")));
    };
    if items.len() != n {
        return Err(parse(format!("{path}: expected {n} entries, found {}", items.len())));
    }
    for (i, item) in items.iter().enumerate() {
        let here = format!("{path}[{i}]");
        if depth > 1 {
            flatten(item, depth - 1, n, &here, out)?;
        } else {
            let x = item.as_f64().ok_or_else(|| parse(format!("{here}: expected a number, found {item}")))?;
            out.push(x);
        }
    }
    Ok(())
}

/// Parses a game file from text, reporting the line and column of syntax
/// errors and the field path of structural ones.
pub fn parse_game_file(text: &str) -> Result<GameFile> {
    let file: GameFile =
        serde_json::from_str(text).map_err(|e| parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
    file.to_game()?;
    Ok(file)
}

pub fn load_game_file(path: &Path) -> Result<GameFile> {
    let text = std::fs::read_to_string(path)?;
    parse_game_file(&text).map_err(|e| match e {
        Error::Parse(msg) => parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn load_game(path: &Path) -> Result<Game> {
    load_game_file(path)?.to_game()
}

pub fn save_game_file(file: &GameFile, path: &Path) -> Result<()> {
    write_json(file, path)
}

pub fn save_game(game: &Game, path: &Path) -> Result<()> {
    save_game_file(&GameFile::from_game(game, None), path)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Output of one solver or verifier invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Inputs that determine the result: epsilon, sigma, delta, constants,
    /// seed and the like.
    pub params: BTreeMap<String, Value>,
    pub wall_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EquilibriumReport>,
    /// One probability vector per player.
    #[serde(default)]
    pub strategies: Vec<Vec<f64>>,
    /// Command-specific details.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            params: BTreeMap::new(),
            wall_time_ms: 0.0,
            query_count: None,
            report: None,
            strategies: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    pub fn with_profile(mut self, profile: &StrategyProfile) -> Self {
        self.strategies = profile.strategies().iter().map(|s| s.probs().to_vec()).collect();
        self
    }

    /// Rebuilds the recorded profile.
    pub fn profile(&self) -> Result<StrategyProfile> {
        let strategies = self
            .strategies
            .iter()
            .enumerate()
            .map(|(j, s)| {
                MixedStrategy::new(s.clone()).map_err(|e| parse(format!("strategies[{j}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        StrategyProfile::new(strategies)
    }
}

pub fn parse_run_report(text: &str) -> Result<RunReport> {
    serde_json::from_str(text).map_err(|e| parse(format!("line {} column {}: {e}", e.line(), e.column())))
}

pub fn load_run_report(path: &Path) -> Result<RunReport> {
    parse_run_report(&std::fs::read_to_string(path)?)
}

pub fn save_run_report(report: &RunReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (m, n, seed) in [(1, 5, 1), (2, 4, 2), (3, 3, 3)] {
            let g = Game::random(m, n, seed).unwrap();
            let path = dir.path().join(format!("g{m}.json"));
            save_game(&g, &path).unwrap();
            assert_eq!(load_game(&path).unwrap(), g);
        }
    }

    #[test]
    fn nested_and_flat_agree() {
        let nested = r#"{"format_version": 1, "m": 2, "n": 2,
            "payoffs": [[[0.1, 0.2], [0.3, 0.4]], [0.5, 0.6, 0.7, 0.8]]}"#;
        let g = parse_game_file(nested).unwrap().to_game().unwrap();
        assert_eq!(g.tensor(0), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(g.tensor(1), &[0.5, 0.6, 0.7, 0.8]);
    }

    #[test]
    fn bad_files_name_the_problem() {
        let short = r#"{"format_version": 1, "m": 2, "n": 2, "payoffs": [[[0.1, 0.2], [0.3]], [0, 0, 0, 0]]}"#;
        let msg = parse_game_file(short).unwrap_err().to_string();
        assert!(msg.contains("payoffs[0][1]"), "{msg}");
        let shape = r#"{"format_version": 1, "m": 2, "n": 2, "shape": [2, 3], "payoffs": [[0,0,0,0],[0,0,0,0]]}"#;
        assert!(parse_game_file(shape).unwrap_err().to_string().contains("shape"));
        let syntax = "{\n  \"format_version\": 1,\n  \"m\": 2 \"n\": 2\n}";
        let msg = parse_game_file(syntax).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        let range = r#"{"format_version": 1, "m": 1, "n": 2, "payoffs": [[0.5, 1.5]]}"#;
        assert!(matches!(parse_game_file(range), Err(Error::Parse(_))));
        let text = r#"{"format_version": 1, "m": 1, "n": 2, "payoffs": [[0.5, "x"]]}"#;
        assert!(parse_game_file(text).unwrap_err().to_string().contains("payoffs[0][1]"));
    }

    #[test]
    fn report_round_trip() {
        let p = StrategyProfile::new(vec![
            MixedStrategy::new(vec![0.1, 0.2, 0.7]).unwrap(),
            MixedStrategy::new(vec![1.0 / 3.0; 3]).unwrap(),
        ])
        .unwrap();
        let r = RunReport::new("verify").param("sigma", 0.5).with_profile(&p);
        let back = parse_run_report(&to_json(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.profile().unwrap(), p);
    }
}
