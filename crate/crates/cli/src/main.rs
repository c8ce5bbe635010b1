//! `sbvote`: drives simulated elections phase by phase.
//!
//! `init` writes a state file holding the whole simulated world (contracts,
//! ledger and voter keys). Each phase command loads it, runs the phase and
//! writes it back. `run` does all phases in one go without a state file.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sbvote_core::ledger::{calibrate, max_candidates, HARMONY_ANCHORS};
use sbvote_core::{
    solve, sweep, BoothId, BoothState, CostModel, Phase, PlatformProfile, ScenarioConfig, SweepAxis, TallyProblem,
    VoteDistribution, World,
};

#[derive(Parser)]
#[command(
    name = "sbvote",
    version,
    about = "Simulated self-tallying elections with booth contracts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a state file from a config file and/or flags.
    Init {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Enroll every voter with the main contract.
    Enroll(StateArg),
    /// Shuffle voters into booths and deploy the booth contracts.
    Assign(StateArg),
    /// Register every voter's key and deposit with its booth.
    Signup(StateArg),
    /// Compute MPC keys in every booth.
    Mpc(StateArg),
    /// Cast all votes except those of voters stalling in round 0.
    Vote(StateArg),
    /// Close voting and run fault-recovery rounds until every booth can tally.
    Recover(StateArg),
    /// Compute booth tallies, or solve a single booth snapshot.
    Tally {
        /// State file to advance.
        #[arg(long, required_unless_present = "booth_transcript")]
        state: Option<PathBuf>,
        /// Booth snapshot or tally problem JSON; prints the tally JSON.
        #[arg(long, conflicts_with = "state")]
        booth_transcript: Option<PathBuf>,
    },
    /// Print the final tally.
    Aggregate(StateArg),
    /// Print the election report.
    Report {
        #[command(flatten)]
        state: StateArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the ledger transcript (JSON lines).
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Write per-operation costs as CSV.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Print this booth's contract state instead of the report.
        #[arg(long)]
        booth: Option<u32>,
    },
    /// Meter costs along one axis and print CSV.
    Sweep {
        /// mpc_batch, k, n or period.
        #[arg(long)]
        axis: SweepAxis,
        /// Inclusive range `a..b` or `a..=b`, or a comma-separated list.
        #[arg(long)]
        range: String,
        #[arg(long, default_value_t = 1)]
        step: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every phase and print the report.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Fit the transaction and exponentiation prices to two capacity anchors.
    Calibrate {
        /// Indices into the three built-in anchors.
        #[arg(long, num_args = 2, default_values_t = [1usize, 2])]
        anchors: Vec<usize>,
    },
}

#[derive(Args)]
struct StateArg {
    /// State file.
    #[arg(long)]
    state: PathBuf,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    election_id: Option<String>,
    #[arg(long, short = 'n')]
    n_voters: Option<usize>,
    #[arg(long, short = 'k')]
    k_candidates: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    mpc_batch: Option<usize>,
    #[arg(long)]
    deposit_amount: Option<u64>,
    #[arg(long)]
    recovery_deposit_step: Option<u64>,
    #[arg(long)]
    platform_profile: Option<String>,
    #[arg(long)]
    voting_period_seconds: Option<u64>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    prime_bits: Option<u32>,
    /// `ROUND=I,J,...`; round 0 lists non-voters. Repeatable.
    #[arg(long = "stall", value_name = "ROUND=VOTERS")]
    stall: Vec<String>,
    /// Per-voter 1-based choices, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "weights")]
    choices: Option<Vec<usize>>,
    /// Per-candidate weights, comma-separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    share_batch: Option<usize>,
    #[arg(long)]
    enroll_batch: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => {
                let need =
                    |v: Option<usize>, flag: &str| v.ok_or_else(|| anyhow!("--{flag} is required without --config"));
                let n = need(self.n_voters, "n-voters")?;
                let k = need(self.k_candidates, "k-candidates")?;
                let g = need(self.group_size, "group-size")?;
                let seed = self
                    .seed
                    .clone()
                    .ok_or_else(|| anyhow!("--seed is required without --config"))?;
                ScenarioConfig::simple(n, k, g, &seed)
            }
        };
        if let Some(v) = &self.election_id {
            cfg.election_id = v.clone();
        }
        if let Some(v) = self.n_voters {
            cfg.n_voters = v;
        }
        if let Some(v) = self.k_candidates {
            cfg.k_candidates = v;
        }
        if let Some(v) = self.group_size {
            cfg.group_size = v;
            if self.mpc_batch.is_none() && self.config.is_none() {
                cfg.mpc_batch = v;
            }
        }
        if let Some(v) = self.mpc_batch {
            cfg.mpc_batch = v;
        }
        if let Some(v) = self.deposit_amount {
            cfg.deposit_amount = v;
        }
        if let Some(v) = self.recovery_deposit_step {
            cfg.recovery_deposit_step = v;
        }
        if let Some(v) = &self.platform_profile {
            cfg.platform_profile = v.clone();
        }
        if let Some(v) = self.voting_period_seconds {
            cfg.voting_period_seconds = v;
        }
        if let Some(v) = &self.seed {
            cfg.seed = v.clone();
        }
        if let Some(v) = self.prime_bits {
            cfg.prime_bits = v;
        }
        if let Some(v) = self.share_batch {
            cfg.share_batch = v;
        }
        if let Some(v) = self.enroll_batch {
            cfg.enroll_batch = v;
        }
        for s in &self.stall {
            let (round, voters) = parse_stall(s)?;
            if cfg.stall_plan.len() <= round {
                cfg.stall_plan.resize(round + 1, Vec::new());
            }
            cfg.stall_plan[round].extend(voters);
        }
        if let Some(c) = &self.choices {
            cfg.vote_distribution = VoteDistribution::Choices(c.clone());
        } else if let Some(w) = &self.weights {
            cfg.vote_distribution = VoteDistribution::Weights(w.clone());
        } else if let VoteDistribution::Choices(c) = &cfg.vote_distribution {
            if c.len() != cfg.n_voters && self.config.is_none() {
                cfg.vote_distribution = VoteDistribution::Choices(vec![1; cfg.n_voters]);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_stall(s: &str) -> Result<(usize, Vec<usize>)> {
    let (round, voters) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("stall {s:?} is not ROUND=VOTERS"))?;
    let round = round.trim().parse().with_context(|| format!("stall round in {s:?}"))?;
    let voters = voters
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse().with_context(|| format!("voter index in {s:?}")))
        .collect::<Result<_>>()?;
    Ok((round, voters))
}

fn parse_range(s: &str, step: u64) -> Result<Vec<u64>> {
    if step == 0 {
        bail!("--step must be positive");
    }
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: u64 = a.trim().parse().with_context(|| format!("range start in {s:?}"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("range end in {s:?}"))?;
        if a > b {
            bail!("empty range {s:?}");
        }
        return Ok((a..=b).step_by(step as usize).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("value {v:?} in {s:?}")))
        .collect()
}

fn load(path: &Path) -> Result<World> {
    let text = fs::read_to_string(path).with_context(|| format!("reading state {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing state {}", path.display()))
}

fn save(path: &Path, world: &World) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing state {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, world)?;
    w.flush()?;
    Ok(())
}

/// Loads the state, runs one phase, and saves the state even on rejection so
/// the receipt stays on the ledger.
fn step(path: &Path, f: impl FnOnce(&mut World) -> Result<(), sbvote_core::ScenarioError>) -> Result<()> {
    let mut world = load(path)?;
    let res = f(&mut world);
    save(path, &world)?;
    res.map_err(Into::into)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            let res = out.write_all(text.as_bytes()).and_then(|()| {
                if text.ends_with('\n') {
                    Ok(())
                } else {
                    out.write_all(b"\n")
                }
            });
            match res {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn write_transcript(path: &Path, world: &World) -> Result<()> {
    let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    world.ledger().write_transcript(&mut w)?;
    w.flush()?;
    Ok(())
}

fn solve_snapshot(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let problem = match serde_json::from_str::<TallyProblem>(&text) {
        Ok(p) => p,
        Err(_) => {
            let booth: BoothState = serde_json::from_str(&text)
                .with_context(|| format!("{} is neither a booth snapshot nor a tally problem", path.display()))?;
            TallyProblem::from_booth(&booth)?
        }
    };
    let tally = solve(&problem)?;
    Ok(serde_json::to_string(&tally)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Init { state, config } => {
            let world = World::new(config.build()?)?;
            save(&state.state, &world)?;
            eprintln!(
                "initialized {} voters, {} candidates, {}-bit group",
                world.config().n_voters,
                world.config().k_candidates,
                world.params().bits()
            );
        }
        Command::Enroll(s) => step(&s.state, World::enroll)?,
        Command::Assign(s) => step(&s.state, World::assign)?,
        Command::Signup(s) => step(&s.state, World::signup)?,
        Command::Mpc(s) => step(&s.state, World::mpc)?,
        Command::Vote(s) => step(&s.state, World::vote)?,
        Command::Recover(s) => step(&s.state, |w| {
            if w.booths().values().any(|b| b.phase() == Phase::Voting) {
                w.close_voting()?;
            }
            w.recover()
        })?,
        Command::Tally {
            state,
            booth_transcript,
        } => match (state, booth_transcript) {
            (_, Some(path)) => write_out(None, &solve_snapshot(&path)?)?,
            (Some(path), None) => step(&path, World::tally)?,
            (None, None) => unreachable!("clap requires one of them"),
        },
        Command::Aggregate(s) => {
            let world = load(&s.state)?;
            let tally = world
                .aggregate()
                .ok_or_else(|| anyhow!("final tally not available; some booths have not reported"))?;
            write_out(None, &serde_json::to_string(tally)?)?;
        }
        Command::Report {
            state,
            out,
            transcript,
            costs,
            booth,
        } => {
            let world = load(&state.state)?;
            if let Some(path) = &transcript {
                write_transcript(path, &world)?;
            }
            if let Some(path) = &costs {
                let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
                world.ledger().write_cost_csv(file)?;
            }
            let text = match booth {
                Some(id) => {
                    let b = world
                        .booths()
                        .get(&BoothId(id))
                        .ok_or_else(|| anyhow!("no booth {id}"))?;
                    serde_json::to_string_pretty(b)?
                }
                None => world.report().to_json(),
            };
            write_out(out.as_deref(), &text)?;
        }
        Command::Sweep {
            axis,
            range,
            step,
            config,
        } => {
            let values = parse_range(&range, step)?;
            write_out(None, &sweep(&config.build()?, axis, &values)?)?;
        }
        Command::Run {
            config,
            out,
            transcript,
        } => {
            let mut world = World::new(config.build()?)?;
            world.run_all()?;
            if let Some(path) = &transcript {
                write_transcript(path, &world)?;
            }
            write_out(out.as_deref(), &world.report().to_json())?;
        }
        Command::Calibrate { anchors } => {
            let pick = |i: usize| {
                HARMONY_ANCHORS
                    .get(i)
                    .copied()
                    .ok_or_else(|| anyhow!("anchor index {i} outside 0..3"))
            };
            let (a, b) = (pick(anchors[0])?, pick(anchors[1])?);
            let profile = PlatformProfile::harmony_like();
            let model = calibrate(&profile, &CostModel::BASE, a, b)?;
            let mut out = io::stdout().lock();
            writeln!(out, "tx_overhead {}", model.tx_overhead)?;
            writeln!(out, "exponentiation {}", model.exponentiation)?;
            for (i, anchor) in HARMONY_ANCHORS.iter().enumerate() {
                let predicted = sbvote_core::capacity(&profile, &model, anchor.k, anchor.period_secs);
                let err = (predicted as f64 - anchor.voters as f64) / anchor.voters as f64 * 100.0;
                writeln!(
                    out,
                    "anchor {i}: k={} period={}s quoted={} predicted={predicted} ({err:+.1}%)",
                    anchor.k, anchor.period_secs, anchor.voters
                )?;
            }
            for p in [PlatformProfile::harmony_like(), PlatformProfile::gnosis_like()] {
                writeln!(out, "max candidates on {}: {}", p.name, max_candidates(&p, &model))?;
            }
        }
    }
    Ok(())
}
