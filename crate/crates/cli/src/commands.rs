//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use smooth_nash::enumeration::{find_weak, FindWeakConfig, DEFAULT_MAX_PROFILES};
use smooth_nash::io::{
    load_game_file, load_run_report, save_game_file, save_run_report, to_json, GameFile, GameMetadata, RunReport,
};
use smooth_nash::query::{query_equilibrium, QueryCountingOracle, QueryParams};
use smooth_nash::reductions::{
    check_gmp_marginals, lift_profile, logit_fixed_point, pad_game, random_gmp, unpad_profile, GmpParams,
};
use smooth_nash::strong::{bimatrix_strong, general_strong, lemke_smooth_equilibrium, StrongConfig};
use smooth_nash::zero_sum::{default_pmwu_eta, solve_omd, solve_pmwu, IterateTrace, ZeroSumGame};
use smooth_nash::{rng, verify, Error, Game, Result, SmoothParams, StrategyProfile};

/// Process exit status for runs that did not fail with an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    NotFound = 2,
}

#[derive(Debug, Parser)]
#[command(name = "smoothnash", version, about = "Approximate smooth Nash equilibria of normal-form games")]
pub struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exhaustive search over k-uniform profiles for a weak equilibrium.
    SolveWeak(SolveWeakArgs),
    /// Strong equilibrium by cutting planes, or exactly by complementary pivoting.
    SolveStrong(SolveStrongArgs),
    /// No-regret dynamics on a zero-sum game.
    SolveZerosum(SolveZerosumArgs),
    /// Randomized weak solver with counted payoff queries.
    QuerySolve(QuerySolveArgs),
    /// Checks a recorded profile against a game.
    Verify(VerifyArgs),
    /// Writes a generated game.
    MakeGame(MakeGameArgs),
    /// Pads a game, or unpads and verifies a profile of the padded game.
    Pad(PadArgs),
    /// Damped fixed-point iteration for a logit equilibrium.
    Qre(QreArgs),
}

#[derive(Debug, Args)]
struct Target {
    /// Game file.
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct Output {
    /// Write the JSON result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveWeakArgs {
    #[command(flatten)]
    target: Target,
    /// Fixed support size instead of the default formula.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 4)]
    escalations: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_PROFILES)]
    max_profiles: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrongMethod {
    /// Anchor enumeration plus a cutting-plane feasibility program.
    Lp,
    /// Exact two-player equilibrium by complementary pivoting.
    Lemke,
}

#[derive(Debug, Args)]
struct SolveStrongArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long, value_enum, default_value_t = StrongMethod::Lp)]
    method: StrongMethod,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1)]
    escalations: usize,
    /// Cutting-plane rounds per program.
    #[arg(long)]
    max_rounds: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ZeroSumAlg {
    Pmwu,
    Omd,
}

#[derive(Debug, Args)]
struct SolveZerosumArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long, value_enum, default_value_t = ZeroSumAlg::Omd)]
    alg: ZeroSumAlg,
    #[arg(long, default_value_t = 1024)]
    iterations: usize,
    /// Fixed step size for pmwu; defaults to `min(1/2, sqrt(ln(1/sigma) / T))`.
    #[arg(long)]
    eta: Option<f64>,
    /// CSV file receiving the gap and step sizes at each checkpoint.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct QuerySolveArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, env = "SMOOTHNASH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000_000)]
    max_profiles: u64,
    #[arg(long, default_value_t = 100_000_000)]
    max_queries: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    target: Target,
    /// Run report holding the profile to check.
    #[arg(long)]
    profile: PathBuf,
    /// Marginal tolerance for generalized matching pennies games; defaults
    /// to the smallest value the marginal lemma supports.
    #[arg(long)]
    marginal_epsilon: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct MakeGameArgs {
    #[command(subcommand)]
    kind: GameKind,
    #[arg(long, env = "SMOOTHNASH_SEED", default_value_t = 0, global = true)]
    seed: u64,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum GameKind {
    /// Payoffs i.i.d. uniform on [0, 1].
    Random {
        #[arg(long)]
        players: usize,
        #[arg(long)]
        actions: usize,
    },
    /// Zero-sum game stored as payoffs (1 - A, A).
    Zerosum {
        #[arg(long)]
        actions: usize,
    },
    /// Generalized matching pennies on 2K actions with random perturbations.
    Gmp {
        #[arg(long = "K", alias = "k")]
        k: usize,
    },
    /// Copies of each action of a two-player game.
    Pad {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        factor: usize,
    },
}

#[derive(Debug, Args)]
struct PadArgs {
    /// Original (unpadded) game.
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    factor: usize,
    /// Run report on the padded game; its profile is unpadded and verified.
    #[arg(long, requires_all = ["sigma", "epsilon"])]
    profile: Option<PathBuf>,
    /// Report a profile of the original game lifted to the padded game.
    #[arg(long, conflicts_with = "profile", requires_all = ["sigma", "epsilon"])]
    lift: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct QreArgs {
    #[arg(long)]
    game: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[command(flatten)]
    output: Output,
}

pub fn run(cli: Cli) -> Result<Status> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SolveWeak(a) => solve_weak(a),
        Command::SolveStrong(a) => solve_strong(a),
        Command::SolveZerosum(a) => solve_zerosum(a),
        Command::QuerySolve(a) => query_solve(a),
        Command::Verify(a) => verify_cmd(a),
        Command::MakeGame(a) => make_game(a),
        Command::Pad(a) => pad(a),
        Command::Qre(a) => qre(a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn finish(mut report: RunReport, start: Instant, out: &Output) -> Result<()> {
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    match &out.out {
        Some(path) => save_run_report(&report, path),
        None => emit(&to_json(&report)?, None),
    }
}

fn base_report(command: &str, t: &Target) -> RunReport {
    RunReport::new(command)
        .param("game", t.game.display().to_string())
        .param("sigma", t.sigma)
        .param("epsilon", t.epsilon)
}

fn load(t: &Target) -> Result<(Game, SmoothParams)> {
    let game = load_game_file(&t.game)?.to_game()?;
    let smooth = SmoothParams::new(t.sigma, game.num_actions())?;
    Ok((game, smooth))
}

/// Records a search that came back empty and maps it to exit status 2.
fn not_found(mut report: RunReport, start: Instant, out: &Output, err: Error) -> Result<Status> {
    match err {
        Error::NotFound(msg) => {
            eprintln!("not found: {msg}");
            report.extra.insert("found".into(), json!(false));
            report.extra.insert("message".into(), json!(msg));
            finish(report, start, out)?;
            Ok(Status::NotFound)
        }
        other => Err(other),
    }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Success
    } else {
        Status::NotFound
    }
}

fn solve_weak(a: SolveWeakArgs) -> Result<Status> {
    let start = Instant::now();
    let (game, smooth) = load(&a.target)?;
    let config = FindWeakConfig {
        k_override: a.k,
        constant_c1: a.c1,
        escalations: a.escalations,
        max_profiles: a.max_profiles,
    };
    let report = base_report("solve-weak", &a.target)
        .param("k", a.k.map_or(Value::Null, Value::from))
        .param("c1", a.c1)
        .param("escalations", a.escalations);
    match find_weak(&game, &smooth, a.target.epsilon, &config) {
        Ok((profile, verified)) => {
            let ok = verified.weak_ok;
            let mut report = report.with_profile(&profile.to_profile());
            report.extra.insert("support_size".into(), json!(profile.k));
            report.report = Some(verified);
            finish(report, start, &a.output)?;
            Ok(verdict(ok))
        }
        Err(e) => not_found(report, start, &a.output, e),
    }
}

fn solve_strong(a: SolveStrongArgs) -> Result<Status> {
    let start = Instant::now();
    let (game, smooth) = load(&a.target)?;
    let eps = a.target.epsilon;
    let mut report = base_report("solve-strong", &a.target)
        .param("method", format!("{:?}", a.method).to_lowercase())
        .param("k", a.k.map_or(Value::Null, Value::from))
        .param("c", a.c);
    let profile = match a.method {
        StrongMethod::Lemke => lemke_smooth_equilibrium(&game, &smooth)?,
        StrongMethod::Lp => {
            let config = StrongConfig {
                constant_c: a.c,
                k_override: a.k,
                escalations: a.escalations,
                max_rounds: a.max_rounds,
                ..Default::default()
            };
            let result = if game.num_players() == 2 {
                bimatrix_strong(&game, &smooth, eps, &config)
            } else {
                general_strong(&game, &smooth, eps, &config)
            };
            match result {
                Ok(o) => {
                    report.extra.insert("anchor".into(), json!(o.anchor));
                    report.extra.insert("eps0".into(), json!(o.eps0));
                    report.extra.insert("rounds".into(), json!(o.rounds));
                    o.profile
                }
                Err(e) => return not_found(report, start, &a.output, e),
            }
        }
    };
    let verified = verify(&game, &profile, &smooth, eps)?;
    let ok = verified.strong_ok;
    report = report.with_profile(&profile);
    report.report = Some(verified);
    finish(report, start, &a.output)?;
    Ok(verdict(ok))
}

fn trace_csv(trace: &IterateTrace) -> String {
    let mut s = String::from("iteration,gap,eta_x,eta_y\n");
    for g in &trace.gaps {
        let i = g.iteration - 1;
        let _ = writeln!(s, "{},{},{},{}", g.iteration, g.gap, trace.eta_x[i], trace.eta_y[i]);
    }
    s
}

fn solve_zerosum(a: SolveZerosumArgs) -> Result<Status> {
    let start = Instant::now();
    let (game, smooth) = load(&a.target)?;
    let zs = ZeroSumGame::from_game(&game)?;
    let mut report = base_report("solve-zerosum", &a.target)
        .param("alg", format!("{:?}", a.alg).to_lowercase())
        .param("iterations", a.iterations);
    let trace = match a.alg {
        ZeroSumAlg::Pmwu => {
            let eta = a.eta.unwrap_or_else(|| default_pmwu_eta(a.target.sigma, a.iterations));
            report = report.param("eta", eta);
            solve_pmwu(&zs, &smooth, a.iterations, eta)?
        }
        ZeroSumAlg::Omd => solve_omd(&zs, &smooth, a.iterations)?,
    };
    if let Some(path) = &a.trace {
        std::fs::write(path, trace_csv(&trace))?;
    }
    let verified = trace.report(&zs, &smooth, a.target.epsilon)?;
    let ok = verified.strong_ok;
    let profile = StrategyProfile::new(vec![trace.x_avg.clone(), trace.y_avg.clone()])?;
    report = report.with_profile(&profile);
    report.extra.insert("duality_gap".into(), json!(trace.final_gap()));
    report.report = Some(verified);
    finish(report, start, &a.output)?;
    Ok(verdict(ok))
}

fn query_solve(a: QuerySolveArgs) -> Result<Status> {
    let start = Instant::now();
    let (game, smooth) = load(&a.target)?;
    let mut params = QueryParams::new(a.target.epsilon, a.target.sigma, a.delta).with_constants(a.c1, a.c2);
    params.max_profiles = a.max_profiles;
    params.max_queries = a.max_queries;
    let m = game.num_players();
    let sizes = params.sizes(m)?;
    let mut oracle = QueryCountingOracle::new(&game);
    let mut r = rng::seeded(a.seed);
    let outcome = query_equilibrium(&mut oracle, &params, &mut r)?;
    let verified = verify(&game, &outcome.profile, &smooth, a.target.epsilon)?;
    let mut report = base_report("query-solve", &a.target)
        .param("delta", a.delta)
        .param("c1", a.c1)
        .param("c2", a.c2)
        .param("seed", a.seed)
        .with_profile(&outcome.profile);
    report.query_count = Some(outcome.query_count);
    report.extra.insert("found".into(), json!(outcome.found));
    report.extra.insert("sizes".into(), json!(sizes));
    report.extra.insert("closed_form_query_count".into(), json!(sizes.query_count(m)));
    report.extra.insert("estimated_gain".into(), json!(outcome.estimated_gain));
    let ok = outcome.found && verified.weak_ok;
    report.report = Some(verified);
    finish(report, start, &a.output)?;
    Ok(verdict(ok))
}

fn verify_cmd(a: VerifyArgs) -> Result<Status> {
    let start = Instant::now();
    let file = load_game_file(&a.target.game)?;
    let game = file.to_game()?;
    let smooth = SmoothParams::new(a.target.sigma, game.num_actions())?;
    let profile = load_run_report(&a.profile)?.profile()?;
    let verified = verify(&game, &profile, &smooth, a.target.epsilon)?;
    let mut ok = verified.weak_ok;
    let mut report = base_report("verify", &a.target)
        .param("profile", a.profile.display().to_string())
        .with_profile(&profile);
    let meta = file.metadata.unwrap_or_default();
    if let (Some(gmp), Some(scale)) = (meta.gmp, meta.scale) {
        // the marginal lemma covers gains of at most 1 in raw payoff units
        let qualifies = verified.max_gain() * scale.scale <= 1.0 + 1e-9;
        let eps = a.marginal_epsilon.unwrap_or_else(|| gmp.marginal_threshold(a.target.sigma));
        let m = check_gmp_marginals(profile.strategy(0), profile.strategy(1), &gmp, a.target.sigma, eps)?;
        report.extra.insert(
            "gmp".into(),
            json!({ "qualifies": qualifies, "marginal_epsilon": eps, "marginals": m }),
        );
        if qualifies {
            ok &= m.ok;
        }
    }
    report.report = Some(verified);
    finish(report, start, &a.output)?;
    Ok(verdict(ok))
}

fn make_game(a: MakeGameArgs) -> Result<Status> {
    let seed = a.seed;
    let meta = |generator: &str| GameMetadata { generator: Some(generator.into()), seed: Some(seed), ..Default::default() };
    let file = match a.kind {
        GameKind::Random { players, actions } => GameFile::from_game(&Game::random(players, actions, seed)?, Some(meta("random"))),
        GameKind::Zerosum { actions } => {
            GameFile::from_game(&ZeroSumGame::random(actions, seed)?.to_game(), Some(meta("zerosum")))
        }
        GameKind::Gmp { k } => {
            let g = random_gmp(GmpParams::new(k), seed)?;
            let metadata = GameMetadata { gmp: Some(g.params), scale: Some(g.scale), ..meta("gmp") };
            GameFile::from_game(&g.normalized, Some(metadata))
        }
        GameKind::Pad { game, factor } => {
            let g = load_game_file(&game)?.to_game()?;
            let padded = pad_game(&g, factor)?;
            let metadata = GameMetadata {
                generator: Some("pad".into()),
                padding: Some((g.num_actions(), factor)),
                ..Default::default()
            };
            GameFile::from_game(&padded, Some(metadata))
        }
    };
    match &a.out {
        Some(path) => save_game_file(&file, path)?,
        None => emit(&to_json(&file)?, None)?,
    }
    Ok(Status::Success)
}

fn pad(a: PadArgs) -> Result<Status> {
    let start = Instant::now();
    let game = load_game_file(&a.game)?.to_game()?;
    let n = game.num_actions();
    let padded = pad_game(&game, a.factor)?;
    let (Some(sigma), Some(epsilon)) = (a.sigma, a.epsilon) else {
        let metadata =
            GameMetadata { generator: Some("pad".into()), padding: Some((n, a.factor)), ..Default::default() };
        let file = GameFile::from_game(&padded, Some(metadata));
        match &a.output.out {
            Some(path) => save_game_file(&file, path)?,
            None => emit(&to_json(&file)?, None)?,
        }
        return Ok(Status::Success);
    };
    let base = RunReport::new("pad")
        .param("game", a.game.display().to_string())
        .param("factor", a.factor)
        .param("sigma", sigma)
        .param("epsilon", epsilon);
    let (report, verified) = if let Some(path) = &a.profile {
        let big = load_run_report(path)?.profile()?;
        let small = big
            .strategies()
            .iter()
            .map(|s| unpad_profile(s, n, a.factor))
            .collect::<Result<Vec<_>>>()?;
        let small = StrategyProfile::new(small)?;
        let smooth = SmoothParams::new(sigma, n)?;
        let verified = verify(&game, &small, &smooth, epsilon)?;
        (base.param("profile", path.display().to_string()).with_profile(&small), verified)
    } else if let Some(path) = &a.lift {
        let small = load_run_report(path)?.profile()?;
        let big = small
            .strategies()
            .iter()
            .map(|s| lift_profile(s, a.factor))
            .collect::<Result<Vec<_>>>()?;
        let big = StrategyProfile::new(big)?;
        let smooth = SmoothParams::new(sigma, n * a.factor)?;
        let verified = verify(&padded, &big, &smooth, epsilon)?;
        (base.param("lift", path.display().to_string()).with_profile(&big), verified)
    } else {
        return Err(Error::InvalidArgument("--sigma and --epsilon need --profile or --lift".into()));
    };
    let ok = verified.weak_ok;
    let mut report = report;
    report.report = Some(verified);
    finish(report, start, &a.output)?;
    Ok(verdict(ok))
}

fn qre(a: QreArgs) -> Result<Status> {
    let start = Instant::now();
    let game = load_game_file(&a.game)?.to_game()?;
    let fp = logit_fixed_point(&game, a.lambda, a.damping, a.max_iter, a.tol)?;
    let mut report = RunReport::new("qre")
        .param("game", a.game.display().to_string())
        .param("lambda", a.lambda)
        .param("damping", a.damping)
        .param("max_iter", a.max_iter)
        .param("tol", a.tol)
        .with_profile(&fp.profile);
    report.extra.insert("residual".into(), json!(fp.residual));
    report.extra.insert("iterations".into(), json!(fp.iterations));
    report.extra.insert("converged".into(), json!(fp.converged));
    finish(report, start, &a.output)?;
    Ok(verdict(fp.converged))
}
