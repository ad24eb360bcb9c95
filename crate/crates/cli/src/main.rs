use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lpos_core::cost::{write_cost_csv, CostParams, Scheme};
use lpos_core::protocol::LambdaPolicy;
use lpos_core::selftest::run_selftest;
use lpos_core::sim::scenario::parse_lambda;
use lpos_core::sim::{run_scenario, write_metrics_csv, Event, EventKind, Profile, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "lpos",
    version,
    about = "Privacy-preserving cooperative spectrum sensing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a sensing scenario and write per-round metrics as CSV.
    Run(RunArgs),
    /// Sweep the closed-form communication cost of each scheme.
    Cost(CostArgs),
    /// Run the oracle-equivalence, invocation-bound and taint suites.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file (`key = value` lines); flags override its values.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<u64>,
    #[arg(long)]
    gamma: Option<u32>,
    /// Voting threshold: an integer or "auto" for half voting.
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<LambdaPolicy>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Overridden by the LPOS_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop K reporting users at round R (R:K, repeatable).
    #[arg(long, value_name = "R:K", value_parser = event(EventKind::Drop))]
    drop: Vec<Event>,
    /// K users join before round R.
    #[arg(long, value_name = "R:K", value_parser = event(EventKind::Join))]
    join: Vec<Event>,
    /// K users leave before round R.
    #[arg(long, value_name = "R:K", value_parser = event(EventKind::Leave))]
    leave: Vec<Event>,
    /// The K highest readers stop answering comparisons in round R.
    #[arg(long, value_name = "R:K", value_parser = event(EventKind::Stall))]
    stall: Vec<Event>,
    /// Group parameters: test (small, fast) or nist (1024/160).
    #[arg(long)]
    profile: Option<Profile>,
    /// Run the report phase on one thread per user.
    #[arg(long)]
    parallel: bool,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[arg(long, value_delimiter = ',', default_value = "lpos,eceg,pdaft,ppss")]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 2)]
    n_min: u64,
    #[arg(long, default_value_t = 2048)]
    n_max: u64,
    #[arg(long, default_value_t = 16)]
    gamma: u64,
    #[arg(long, default_value_t = 1024)]
    p_bits: u64,
    #[arg(long, default_value_t = 160)]
    q_bits: u64,
    #[arg(long, default_value_t = 1024)]
    paillier_bits: u64,
    #[arg(long, default_value_t = 128)]
    eps_ope: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Overridden by the LPOS_SEED environment variable.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn event(kind: EventKind) -> impl Fn(&str) -> Result<Event, String> + Clone {
    move |s| Event::parse(kind, s)
}

enum Failure {
    Usage(String),
    Run(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            Failure::Run(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("LPOS_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Failure::Usage(format!("LPOS_SEED must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(None),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| Failure::Run(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn build_scenario(a: &RunArgs) -> Result<Scenario, Failure> {
    let mut s = match &a.scenario {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let mut s: Scenario = text
                .parse()
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if let Some(v) = a.n {
                s.n = v;
            }
            if let Some(v) = a.tau {
                s.tau = v;
            }
            if let Some(v) = a.gamma {
                s.gamma = v;
            }
            if let Some(v) = a.rounds {
                s.rounds = v;
            }
            if let Some(v) = a.seed {
                s.seed = v;
            }
            s
        }
        None => {
            let tau = a
                .tau
                .ok_or_else(|| Failure::Usage("--tau is required without --scenario".into()))?;
            Scenario::new(
                a.n.unwrap_or(16),
                a.rounds.unwrap_or(10),
                tau,
                a.gamma.unwrap_or(16),
                a.seed.unwrap_or(0),
            )
        }
    };
    if let Some(l) = a.lambda {
        s.lambda = l;
    }
    if let Some(p) = a.profile {
        s.profile = p;
    }
    if let Some(seed) = env_seed()? {
        s.seed = seed;
    }
    s.parallel |= a.parallel;
    s.events.extend(
        a.drop
            .iter()
            .chain(&a.join)
            .chain(&a.leave)
            .chain(&a.stall)
            .copied(),
    );
    s.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(s)
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let scenario = build_scenario(&a)?;
    let rounds = run_scenario(&scenario).map_err(|e| Failure::Run(e.to_string()))?;
    let out = output(a.out.as_deref())?;
    write_metrics_csv(out, &rounds).map_err(|e| Failure::Run(e.to_string()))?;
    let decided = rounds.iter().filter(|t| t.decision.is_some()).count();
    let busy = rounds
        .iter()
        .filter(|t| {
            t.decision
                .is_some_and(|d| d.outcome == lpos_core::protocol::Outcome::Busy)
        })
        .count();
    let agree = rounds.iter().filter(|t| t.agrees_with_oracle()).count();
    eprintln!(
        "{} rounds: {decided} decided ({busy} busy), {agree} agree with the plaintext rule",
        rounds.len()
    );
    Ok(())
}

fn cost(a: CostArgs) -> Result<(), Failure> {
    if a.n_min == 0 || a.n_min > a.n_max {
        return Err(Failure::Usage(format!(
            "need 1 <= n-min <= n-max, got {}..={}",
            a.n_min, a.n_max
        )));
    }
    let params = CostParams {
        gamma: a.gamma,
        p_bits: a.p_bits,
        q_bits: a.q_bits,
        n_bits: a.paillier_bits,
        eps_ope: a.eps_ope,
        ..CostParams::default()
    };
    let out = output(a.out.as_deref())?;
    write_cost_csv(out, &a.schemes, a.n_min, a.n_max, &params)
        .map_err(|e| Failure::Run(e.to_string()))
}

fn selftest(a: SelftestArgs) -> Result<(), Failure> {
    let seed = env_seed()?.unwrap_or(a.seed);
    let results = run_selftest(seed);
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    match results.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        k => Err(Failure::Run(format!("{k} suite(s) failed"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
