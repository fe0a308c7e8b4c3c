//! Command line front end: generates scenario configs, runs them, and
//! rebuilds cost tables from recorded event logs.
//!
//! Exit codes: 0 for a clean run, 2 when any epoch ends in an attack or
//! consistency verdict, 1 for harness errors (bad config, I/O, parse).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use chainaudit::chainsim::ChainParams;
use chainaudit::contract::ContractConfig;
use chainaudit::cost::{aggregate, CostReport};
use chainaudit::events::SimEvent;
use chainaudit::scenario::{
    run, CensorRule, PartitionPlan, RunOutput, ScenarioConfig, ScriptedOp,
};
use chainaudit::actors::ServerBehavior;
use chainaudit::types::OpKind;
use chainaudit::workload::{KeyDistribution, WorkloadSpec};

#[derive(Parser)]
#[command(name = "chainaudit", version, about = "Contract-arbitrated storage auditing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a starter scenario configuration.
    Gen {
        /// Scenario family to start from.
        #[arg(long, value_enum, default_value_t = Preset::Honest)]
        preset: Preset,
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 9)]
        seed: u64,
        /// Target file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for events, verdicts, and the cost table.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Encoding for the cost table; events are always JSON lines.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Rebuild the cost table from a recorded event log.
    Report {
        /// Event log written by a previous run (JSON lines).
        #[arg(long)]
        events: PathBuf,
        /// Scenario config the run used; defaults fill in when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Honest parties over a zipfian read-write workload.
    Honest,
    /// Server hides one client's operations while the chain censors the
    /// victim's attestations; resubmission is left on so it surfaces.
    Omission,
    /// Server attests diverging logs to both sides of a chain partition.
    Fork,
    /// Three scripted operations ending in a stale read.
    StaleTrace,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            preset,
            clients,
            seed,
            out,
        } => {
            let config = preset_config(preset, clients, seed)?;
            let text = config.to_toml_string();
            match out {
                Some(path) => fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            seed,
            out,
            format,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut scenario = ScenarioConfig::from_toml_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let output = run(&scenario).context("running scenario")?;
            write_artifacts(&output, &out, format, scenario.contract.epoch_interval)?;
            Ok(ExitCode::from(u8::try_from(output.exit_code).unwrap_or(1)))
        }
        Command::Report {
            events,
            config,
            out,
            format,
        } => {
            let log = read_events(&events)?;
            let prices = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    ScenarioConfig::from_toml_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                        .chain
                        .prices
                }
                None => ChainParams::default().prices,
            };
            let report = aggregate(&log, &prices).context("aggregating events")?;
            let table = cost_table(&report, format)?;
            match out {
                Some(path) => fs::write(&path, table)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{table}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn preset_config(preset: Preset, clients: usize, seed: u64) -> Result<ScenarioConfig> {
    anyhow::ensure!(clients >= 3, "presets need at least 3 clients");
    let workload = WorkloadSpec {
        clients,
        keyspace: 24,
        epochs: 3,
        load_epochs: 1,
        ops_per_epoch: 24,
        read_fraction: 0.5,
        distribution: KeyDistribution::Zipfian { theta: 0.99 },
        deterministic_mix: false,
    };
    let mut config = ScenarioConfig {
        version: 1,
        seed,
        clients,
        chain: ChainParams::default(),
        contract: ContractConfig::default(),
        workload: Some(workload),
        trace: Vec::new(),
        server_behavior: ServerBehavior::Honest,
        client_behaviors: Vec::new(),
        inactive_fraction: 0.0,
        resubmission: true,
        base_fee: 10,
        settle_blocks: 12,
        censor: Vec::new(),
        partition: None,
    };
    match preset {
        Preset::Honest => {}
        Preset::Omission => {
            config.server_behavior = ServerBehavior::SelectiveOmission { victim: 1 };
            config.censor = (0..4)
                .map(|epoch| CensorRule {
                    epoch,
                    client: 1,
                    count: 1,
                })
                .collect();
        }
        Preset::Fork => {
            anyhow::ensure!(clients >= 4, "the fork preset needs at least 4 clients");
            config.server_behavior = ServerBehavior::ForkByChainForks;
            config.partition = Some(PartitionPlan {
                epoch: 2,
                groups: vec![
                    (0..clients / 2).collect(),
                    (clients / 2..clients).collect(),
                ],
                miner_shares: Vec::new(),
                heal_blocks_after_close: 1,
            });
        }
        Preset::StaleTrace => {
            config.workload = None;
            config.trace = vec![
                ScriptedOp {
                    client: 0,
                    kind: OpKind::Write,
                    key: "k".into(),
                    value: Some("v1".into()),
                    returned: None,
                    t_begin: 1,
                    t_end: 2,
                },
                ScriptedOp {
                    client: 1,
                    kind: OpKind::Write,
                    key: "k".into(),
                    value: Some("v2".into()),
                    returned: None,
                    t_begin: 4,
                    t_end: 5,
                },
                ScriptedOp {
                    client: 2,
                    kind: OpKind::Read,
                    key: "k".into(),
                    value: None,
                    returned: Some("v1".into()),
                    t_begin: 8,
                    t_end: 9,
                },
            ];
        }
    }
    config.validate()?;
    Ok(config)
}

fn write_artifacts(
    output: &RunOutput,
    dir: &Path,
    format: Format,
    epoch_ticks: u64,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut events = Vec::new();
    for event in &output.events {
        serde_json::to_writer(&mut events, event)?;
        events.push(b'\n');
    }
    fs::write(dir.join("events.jsonl"), events)?;

    let mut verdicts = Vec::new();
    for verdict in output.verdicts.values() {
        serde_json::to_writer(&mut verdicts, verdict)?;
        verdicts.push(b'\n');
    }
    fs::write(dir.join("verdicts.jsonl"), verdicts)?;

    let (name, table) = match format {
        Format::Csv => ("cost.csv", cost_table(&output.cost, Format::Csv)?),
        Format::Jsonl => ("cost.jsonl", cost_table(&output.cost, Format::Jsonl)?),
    };
    fs::write(dir.join(name), table)?;

    let mut stdout = std::io::stdout().lock();
    for (epoch, verdict) in &output.verdicts {
        writeln!(stdout, "epoch {epoch}: {:?}", verdict.outcome)?;
    }
    let total = output.cost.total();
    writeln!(
        stdout,
        "total gas {} over {} transactions; {} operations retired",
        total.total_gas(),
        total.txs,
        output.cost.retired_ops
    )?;
    if let Some(unit) = output.cost.measured_unit_cost(epoch_ticks as f64) {
        writeln!(stdout, "client storage unit cost {unit:.4}")?;
    }
    Ok(())
}

fn read_events(path: &Path) -> Result<Vec<SimEvent>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}: bad event", path.display(), i + 1))
        })
        .collect()
}

#[derive(serde::Serialize)]
struct CostRow<'a> {
    epoch: &'a str,
    txs: u64,
    fees: u64,
    intrinsic: u64,
    execution: u64,
    storage_write_gas: u64,
    storage_read_gas: u64,
    hash_gas: u64,
    memory_gas: u64,
    total_gas: u64,
    attested_ops: Option<u64>,
    gas_per_op: Option<f64>,
}

fn cost_table(report: &CostReport, format: Format) -> Result<String> {
    let mut rows = Vec::new();
    for (epoch, bucket) in &report.per_epoch {
        let label = epoch.to_string();
        rows.push((label, *bucket, report.attested_ops.get(epoch).copied(), report.gas_per_op(*epoch)));
    }
    rows.push(("total".into(), report.total(), None, None));

    match format {
        Format::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            for (label, bucket, ops, per_op) in &rows {
                writer.serialize(CostRow {
                    epoch: label,
                    txs: bucket.txs,
                    fees: bucket.fees,
                    intrinsic: bucket.intrinsic,
                    execution: bucket.execution,
                    storage_write_gas: bucket.storage_write_gas,
                    storage_read_gas: bucket.storage_read_gas,
                    hash_gas: bucket.hash_gas,
                    memory_gas: bucket.memory_gas,
                    total_gas: bucket.total_gas(),
                    attested_ops: *ops,
                    gas_per_op: *per_op,
                })?;
            }
            Ok(String::from_utf8(writer.into_inner()?)?)
        }
        Format::Jsonl => {
            let mut out = String::new();
            for (label, bucket, ops, per_op) in &rows {
                let row = serde_json::json!({
                    "epoch": label,
                    "bucket": bucket,
                    "attested_ops": ops,
                    "gas_per_op": per_op,
                });
                out.push_str(&serde_json::to_string(&row)?);
                out.push('\n');
            }
            Ok(out)
        }
    }
}
