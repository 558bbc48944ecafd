use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vaxledger_core::certificates::{
    decode_payload, encode_payload, issue_certificate, verify_certificate, TrustMap,
};
use vaxledger_core::coldchain::{builtin_profiles, profiles_from_toml, profiles_to_toml};
use vaxledger_core::consensus::NetConfig;
use vaxledger_core::contract::replay;
use vaxledger_core::identity::{Directory, PermissionMatrix};
use vaxledger_core::ledger::{verify_snapshot, LedgerState, QueryFilter, TxKind};
use vaxledger_core::scenario::{
    parse_actors, parse_duration, parse_scenario_file, run_scenario, ScenarioConfig,
};
use vaxledger_core::telemetry::{generate_trace, write_trace, TraceProfile};
use vaxledger_core::{format_timestamp, parse_timestamp};

#[derive(Parser)]
#[command(name = "vaxledger", version, about = "Replicated vaccination supply-chain ledger simulator")]
struct Cli {
    /// Root seed for keys and network randomness.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Number of validator nodes.
    #[arg(long, global = true, default_value_t = 1)]
    nodes: usize,
    /// Write the command's main output to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the replicated ledger and print the report.
    Run(RunArgs),
    /// Verify a ledger snapshot from its bytes.
    VerifyChain { snapshot: PathBuf },
    /// List transactions in a snapshot.
    Query(QueryArgs),
    /// Cold-chain product profiles.
    Profiles {
        #[command(subcommand)]
        command: DumpOnly,
    },
    /// The role-by-transaction permission matrix.
    Permissions {
        #[command(subcommand)]
        command: DumpOnly,
    },
    /// Generate a sensor trace from a TOML trace profile.
    GenTelemetry {
        profile: PathBuf,
        /// Trace length: seconds or a value like 30m, 7h, 2d.
        #[arg(long)]
        duration: String,
    },
    /// Vaccination certificates.
    Cert {
        #[command(subcommand)]
        command: CertCommand,
    },
}

#[derive(Subcommand)]
enum DumpOnly {
    Dump,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Actors file: `actor_id role [hex-seed]` per line.
    #[arg(long)]
    actors: PathBuf,
    /// Product profiles (TOML). Defaults to the built-in set.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Network model (TOML).
    #[arg(long)]
    net: Option<PathBuf>,
    /// Write node 0's ledger snapshot here.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Write the event log (one JSON object per line) here.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    snapshot: PathBuf,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    author: Option<String>,
    /// Lot, vehicle, unit or beneficiary id.
    #[arg(long)]
    subject: Option<String>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
}

#[derive(Subcommand)]
enum CertCommand {
    /// Issue a certificate for a beneficiary's latest dose on the chain.
    Issue {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        actors: PathBuf,
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        bid: String,
    },
    /// Verify a certificate payload offline.
    Verify {
        payload: String,
        /// Trust map: `actor_id hex-public-key` per line.
        #[arg(long)]
        trust: PathBuf,
    },
    /// Print the trust map for the doctors and centers of an actors file.
    TrustMap {
        #[arg(long)]
        actors: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_actors(path: &Path, seed: u64) -> Result<Directory> {
    parse_actors(&read(path)?, seed).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_snapshot(path: &Path) -> Result<LedgerState> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    LedgerState::from_snapshot(&bytes).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn run(cli: &Cli, args: &RunArgs) -> Result<ExitCode> {
    let events = parse_scenario_file(&args.scenario)?;
    let actors = load_actors(&args.actors, cli.seed)?;
    let products = match &args.profiles {
        Some(p) => profiles_from_toml(&read(p)?)?,
        None => builtin_profiles(),
    };
    let mut net = match &args.net {
        Some(p) => NetConfig::from_toml(&read(p)?).map_err(|e| anyhow!("{}: {e}", p.display()))?,
        None => NetConfig::default(),
    };
    net.seed = cli.seed;
    let config = ScenarioConfig {
        seed: cli.seed,
        nodes: cli.nodes,
        net,
        products,
    };
    let outcome = run_scenario(&events, &actors, &config)?;
    print!("{}", outcome.report);
    if let Some(p) = &cli.out {
        let json = serde_json::to_string_pretty(&outcome.report)?;
        fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.snapshot {
        fs::write(p, outcome.ledger.to_snapshot())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.events {
        let mut text = String::new();
        for e in &outcome.events {
            text.push_str(&serde_json::to_string(e)?);
            text.push('\n');
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if outcome.report.exit_code() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn query(cli: &Cli, args: &QueryArgs) -> Result<()> {
    let ledger = load_snapshot(&args.snapshot)?;
    let time = |s: &Option<String>| -> Result<Option<i64>> {
        s.as_deref()
            .map(|v| parse_timestamp(v).ok_or_else(|| anyhow!("bad time `{v}`")))
            .transpose()
    };
    let filter = QueryFilter {
        kinds: match &args.kind {
            Some(k) => vec![k.parse::<TxKind>().map_err(|e| anyhow!("{e}"))?],
            None => Vec::new(),
        },
        author: args.author.clone(),
        subject: args.subject.clone(),
        from: time(&args.from)?,
        to: time(&args.to)?,
    };
    let mut text = String::new();
    for tx in ledger.query(&filter) {
        let (height, index) = ledger.locate(&tx.tx_id()).unwrap_or_default();
        text.push_str(&format!(
            "{height}:{index} {} {} {} {}\n",
            format_timestamp(tx.timestamp),
            tx.kind,
            tx.author,
            tx.tx_id().short()
        ));
    }
    emit(&cli.out, &text)
}

fn cert(cli: &Cli, command: &CertCommand) -> Result<ExitCode> {
    match command {
        CertCommand::Issue {
            snapshot,
            actors,
            issuer,
            bid,
        } => {
            let ledger = load_snapshot(snapshot)?;
            let dir = load_actors(actors, cli.seed)?;
            let issuer = dir
                .get(issuer)
                .ok_or_else(|| anyhow!("unknown issuer {issuer}"))?;
            if ledger.public_key(issuer.actor_id()) != Some(issuer.public_key()) {
                bail!(
                    "{} does not hold the key registered on this chain; check --seed",
                    issuer.actor_id()
                );
            }
            let world = replay(&ledger, &PermissionMatrix::standard())?.world;
            let cert = issue_certificate(&world, bid, issuer)?;
            emit(&cli.out, &format!("{}\n", encode_payload(&cert)?))?;
            eprintln!("{cert}");
            Ok(ExitCode::SUCCESS)
        }
        CertCommand::Verify { payload, trust } => {
            let trust = TrustMap::parse(&read(trust)?)?;
            let payload = payload.trim();
            let result = verify_certificate(payload, &trust);
            let detail = decode_payload(payload)
                .map(|c| format!(" {c}"))
                .unwrap_or_default();
            emit(&cli.out, &format!("{result}{detail}\n"))?;
            Ok(if result.is_valid() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        CertCommand::TrustMap { actors } => {
            let dir = load_actors(actors, cli.seed)?;
            emit(&cli.out, &TrustMap::from_directory(&dir).to_text())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run(args) => run(cli, args),
        Command::VerifyChain { snapshot } => {
            let bytes = fs::read(snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
            let report = verify_snapshot(&bytes);
            emit(&cli.out, &format!("{report}\n"))?;
            Ok(if report.is_valid() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Query(args) => query(cli, args).map(|_| ExitCode::SUCCESS),
        Command::Profiles { .. } => {
            emit(&cli.out, &profiles_to_toml(&builtin_profiles())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Permissions { .. } => {
            emit(&cli.out, &PermissionMatrix::standard().dump())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenTelemetry { profile, duration } => {
            let p = TraceProfile::from_toml(&read(profile)?)?;
            let secs = parse_duration(duration).map_err(|e| anyhow!(e))?;
            let readings = generate_trace(&p, secs)?;
            emit(&cli.out, &write_trace(&p, &readings))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Cert { command } => cert(cli, command),
    }
}
