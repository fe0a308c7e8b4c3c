//! Scenario orchestration: one deterministic run of the whole protocol.
//!
//! A [`ScenarioConfig`] names the chain parameters, the contract settings,
//! the agents and their behaviors, and either a statistical workload or a
//! scripted operation trace. [`run`] wires clients, server, chain, and
//! contract together, steps logical time block by block, and returns the
//! event log, the per-epoch verdicts, and the folded cost report.
//!
//! Chain-level adversities are scripted here too: censoring a client's
//! attestation for an epoch, or partitioning the chain across an epoch and
//! healing it later. The config schema is versioned and rejects unknown
//! fields so that stored scenario files stay unambiguous.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::actors::{
    ClientAgent, ClientBehavior, EpochSchedule, Request, ServerAgent, ServerBehavior,
};
use crate::chainsim::{ChainParams, ChainSim, ForkId};
use crate::contract::{ContractCall, ContractConfig, ContractState, EpochVerdict};
use crate::cost::{aggregate, CostReport};
use crate::events::SimEvent;
use crate::sig::{self, IdentityRegistry, KeyPair, PublicKey};
use crate::types::{Address, Digest, Epoch, Nonce, OpKind, Operation, Role, Tick, NOT_FOUND};
use crate::workload::{self, WorkloadError, WorkloadSpec};

pub const CONFIG_VERSION: u32 = 1;

/// One replayed operation in a scripted trace. Writes carry a `value`
/// label; a read may name an earlier write's label in `returned` to replay
/// the exact answer the server gave, honest or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedOp {
    pub client: usize,
    pub kind: OpKind,
    pub key: String,
    #[serde(default)]
    pub value: Option<String>,
    #[serde(default)]
    pub returned: Option<String>,
    pub t_begin: Tick,
    pub t_end: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientBehaviorOverride {
    pub client: usize,
    pub behavior: ClientBehavior,
}

/// Swallow `count` submissions from one client, applied just before the
/// epoch's attestations go out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensorRule {
    pub epoch: Epoch,
    pub client: usize,
    #[serde(default = "one")]
    pub count: u32,
}

/// Split the chain for the duration of one epoch. Groups are client
/// indices; the server and the identity provider ride with group 0 for
/// routing, though a forking server talks to every side explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub epoch: Epoch,
    pub groups: Vec<Vec<usize>>,
    /// Blocks each side mines per boundary; defaults to 1 each, which lets
    /// the lowest fork id win the heal.
    #[serde(default)]
    pub miner_shares: Vec<u32>,
    /// Heal this many blocks after the epoch closes.
    #[serde(default = "one_u64")]
    pub heal_blocks_after_close: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub clients: usize,
    #[serde(default)]
    pub chain: ChainParams,
    #[serde(default)]
    pub contract: ContractConfig,
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
    #[serde(default)]
    pub trace: Vec<ScriptedOp>,
    #[serde(default = "honest_server")]
    pub server_behavior: ServerBehavior,
    #[serde(default)]
    pub client_behaviors: Vec<ClientBehaviorOverride>,
    /// Fraction of clients that sit out each epoch; their slots reroute to
    /// the active ones.
    #[serde(default)]
    pub inactive_fraction: f64,
    #[serde(default = "yes")]
    pub resubmission: bool,
    #[serde(default = "default_fee")]
    pub base_fee: u64,
    /// Blocks mined after the last epoch closes, so late audits, timeouts,
    /// and finality settle before the run ends.
    #[serde(default = "default_settle")]
    pub settle_blocks: u64,
    #[serde(default)]
    pub censor: Vec<CensorRule>,
    #[serde(default)]
    pub partition: Option<PartitionPlan>,
}

fn one() -> u32 {
    1
}
fn one_u64() -> u64 {
    1
}
fn yes() -> bool {
    true
}
fn honest_server() -> ServerBehavior {
    ServerBehavior::Honest
}
fn default_fee() -> u64 {
    10
}
fn default_settle() -> u64 {
    12
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config version {0} unsupported, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("scenario needs a workload or a scripted trace")]
    NoTraffic,
    #[error("workload and scripted trace are mutually exclusive")]
    TwoTraffic,
    #[error("scenario needs at least one client")]
    NoClients,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("client index {0} out of range")]
    BadClient(usize),
    #[error("epoch interval must be a whole, positive number of blocks")]
    EpochGrid,
    #[error("scripted write at t={0} has no value label")]
    MissingValue(Tick),
    #[error("scripted read at t={t}: no earlier write labels {label:?}")]
    UnknownValue { t: Tick, label: String },
    #[error("scripted op at t={0} spans an epoch boundary")]
    CrossEpoch(Tick),
    #[error("trace must be ordered by begin tick")]
    UnorderedTrace,
    #[error("partition needs at least two non-empty client groups")]
    BadPartition,
    #[error("inactive fraction {0} outside [0, 1)")]
    BadInactive(f64),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub events: Vec<SimEvent>,
    pub verdicts: BTreeMap<Epoch, EpochVerdict>,
    pub cost: CostReport,
    /// 0 when every epoch with traffic got a clean verdict, 2 otherwise.
    pub exit_code: i32,
}

pub fn digest_of_label(label: &str) -> Digest {
    Digest(sig::hash(b"scripted-value", &[label.as_bytes()]))
}

struct PlanOp {
    client: usize,
    request: Request,
    forced: Option<String>,
    label: Option<String>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != CONFIG_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        if self.clients == 0 {
            return Err(ScenarioError::NoClients);
        }
        match (&self.workload, self.trace.is_empty()) {
            (Some(_), false) => return Err(ScenarioError::TwoTraffic),
            (None, true) => return Err(ScenarioError::NoTraffic),
            _ => {}
        }
        if self.contract.epoch_interval == 0
            || self.chain.block_interval == 0
            || self.contract.epoch_interval % self.chain.block_interval != 0
        {
            return Err(ScenarioError::EpochGrid);
        }
        if !(0.0..1.0).contains(&self.inactive_fraction) {
            return Err(ScenarioError::BadInactive(self.inactive_fraction));
        }
        for o in &self.client_behaviors {
            if o.client >= self.clients {
                return Err(ScenarioError::BadClient(o.client));
            }
        }
        for c in &self.censor {
            if c.client >= self.clients {
                return Err(ScenarioError::BadClient(c.client));
            }
        }
        if let Some(p) = &self.partition {
            if p.groups.len() < 2 || p.groups.iter().any(|g| g.is_empty()) {
                return Err(ScenarioError::BadPartition);
            }
            for &c in p.groups.iter().flatten() {
                if c >= self.clients {
                    return Err(ScenarioError::BadClient(c));
                }
            }
        }
        self.validate_trace()?;
        Ok(())
    }

    fn validate_trace(&self) -> Result<(), ScenarioError> {
        let schedule = self.schedule();
        let mut labels: Vec<&str> = Vec::new();
        let mut last_begin = 0;
        for op in &self.trace {
            if op.client >= self.clients {
                return Err(ScenarioError::BadClient(op.client));
            }
            if op.t_begin < last_begin {
                return Err(ScenarioError::UnorderedTrace);
            }
            last_begin = op.t_begin;
            if schedule.epoch_of(op.t_begin) != schedule.epoch_of(op.t_end) {
                return Err(ScenarioError::CrossEpoch(op.t_begin));
            }
            match op.kind {
                OpKind::Write => match &op.value {
                    Some(l) => labels.push(l),
                    None => return Err(ScenarioError::MissingValue(op.t_begin)),
                },
                OpKind::Read => {
                    if let Some(l) = &op.returned {
                        if !labels.contains(&l.as_str()) {
                            return Err(ScenarioError::UnknownValue {
                                t: op.t_begin,
                                label: l.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn schedule(&self) -> EpochSchedule {
        EpochSchedule {
            interval: self.contract.epoch_interval,
        }
    }

    fn behavior_of(&self, client: usize) -> ClientBehavior {
        self.client_behaviors
            .iter()
            .find(|o| o.client == client)
            .map(|o| o.behavior)
            .unwrap_or(ClientBehavior::Honest)
    }

    fn plans(&self) -> Result<Vec<Vec<PlanOp>>, ScenarioError> {
        let schedule = self.schedule();
        if let Some(spec) = &self.workload {
            let plans = workload::generate(spec, &schedule, self.seed)?;
            return Ok(plans
                .into_iter()
                .map(|p| {
                    p.requests
                        .into_iter()
                        .map(|(client, request)| PlanOp {
                            client,
                            request,
                            forced: None,
                            label: None,
                        })
                        .collect()
                })
                .collect());
        }
        let epochs = self
            .trace
            .iter()
            .map(|o| schedule.epoch_of(o.t_begin))
            .max()
            .map_or(0, |e| e + 1);
        let mut plans: Vec<Vec<PlanOp>> = (0..epochs).map(|_| Vec::new()).collect();
        for op in &self.trace {
            let value_digest = match op.kind {
                OpKind::Write => digest_of_label(op.value.as_deref().expect("validated")),
                OpKind::Read => NOT_FOUND,
            };
            plans[schedule.epoch_of(op.t_begin) as usize].push(PlanOp {
                client: op.client,
                request: Request {
                    kind: op.kind,
                    key: op.key.clone().into_bytes(),
                    value_digest,
                    t_begin: op.t_begin,
                    t_end: op.t_end,
                },
                forced: op.returned.clone(),
                label: op.value.clone(),
            });
        }
        Ok(plans)
    }
}

struct World {
    sim: ChainSim<ContractState>,
    clients: Vec<ClientAgent>,
    server: ServerAgent,
    server_key: PublicKey,
    events: Vec<SimEvent>,
    block: Tick,
    heal_at: Option<Tick>,
    fork_ids: Vec<ForkId>,
}

impl World {
    /// Mines every boundary up to `to`, giving agents a turn after each
    /// block: the server answers open challenges, clients resubmit and
    /// retire. The scripted heal fires on its boundary before agents act.
    fn advance(&mut self, to: Tick) {
        let mut boundary = (self.sim.now() / self.block + 1) * self.block;
        while boundary <= to {
            self.sim.advance_to(boundary);
            if self.heal_at == Some(boundary) {
                self.heal_at = None;
                self.fork_ids.clear();
                self.sim.heal().expect("scripted heal during partition");
            }
            self.server.answer_challenges(&mut self.sim);
            for c in self.clients.iter_mut() {
                c.maintain(&mut self.sim, &mut self.events);
            }
            boundary += self.block;
        }
        self.sim.advance_to(to);
    }
}

/// Runs the scenario to completion. Same config and seed, same output,
/// byte for byte.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    config.validate()?;
    let schedule = config.schedule();
    let plans = config.plans()?;

    let client_keys: Vec<KeyPair> = (0..config.clients)
        .map(|i| KeyPair::from_seed(100 + i as u64, Role::Client))
        .collect();
    let server_kp = KeyPair::from_seed(999, Role::Server);
    let provider = KeyPair::from_seed(7, Role::IdentityProvider);

    let mut registry = IdentityRegistry::default();
    for kp in &client_keys {
        registry.register_client(kp.party.address, kp.public);
    }
    registry.set_server(server_kp.party.address, server_kp.public);
    registry.set_identity_provider(provider.party.address, provider.public);

    let clients: Vec<ClientAgent> = client_keys
        .iter()
        .enumerate()
        .map(|(i, kp)| {
            let mut c = ClientAgent::new(
                kp.clone(),
                config.behavior_of(i),
                config.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_0000_0001),
            );
            c.base_fee = config.base_fee;
            c.resubmission = config.resubmission;
            c
        })
        .collect();
    let server_key = server_kp.public;
    let mut server = ServerAgent::new(
        server_kp,
        config.server_behavior,
        config.seed ^ 0x5eed_0000,
    );
    server.base_fee = config.base_fee;
    server.bind_victim(&clients);

    let state = ContractState::new(config.contract.clone(), registry);
    let mut world = World {
        sim: ChainSim::new(config.chain.clone(), state),
        clients,
        server,
        server_key,
        events: Vec::new(),
        block: config.chain.block_interval,
        heal_at: None,
        fork_ids: Vec::new(),
    };

    let group_addresses: Vec<Vec<Address>> = config
        .partition
        .as_ref()
        .map(|p| {
            p.groups
                .iter()
                .map(|g| g.iter().map(|&i| world.clients[i].address()).collect())
                .collect()
        })
        .unwrap_or_default();

    let mut inactive_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1dac_71fe);
    let mut value_index: BTreeMap<String, (Nonce, Digest)> = BTreeMap::new();

    for (e, plan) in plans.iter().enumerate() {
        let e = e as Epoch;
        if let Some(p) = &config.partition {
            if p.epoch == e {
                let mut groups: Vec<crate::chainsim::PartitionGroup> = Vec::new();
                for (gi, members) in group_addresses.iter().enumerate() {
                    let mut members = members.clone();
                    if gi == 0 {
                        members.push(world.server.kp.party.address);
                        members.push(provider.party.address);
                    }
                    groups.push(crate::chainsim::PartitionGroup {
                        members,
                        miner_share: p.miner_shares.get(gi).copied().unwrap_or(1),
                    });
                }
                world.fork_ids = world.sim.partition(&groups).expect("scripted partition");
                world.heal_at =
                    Some(schedule.end_tick(e) + p.heal_blocks_after_close * world.block);
            }
        }

        let reroute = build_reroute(config, &mut inactive_rng, e);

        for op in plan {
            world.advance(op.request.t_begin);
            let client = reroute.as_ref().map_or(op.client, |m| m[op.client]);
            let begun = world.clients[client].begin(&op.request);
            let nonce = begun.nonce;
            let served = match &op.forced {
                Some(label) => {
                    let (wn, wd) = value_index[label];
                    let answer = Operation::read_digest(wn, wd);
                    world.server.serve_forced_read(begun, answer)
                }
                None => world.server.serve(begun),
            };
            world.clients[client].complete(served, &world.server_key);
            if let Some(label) = &op.label {
                value_index.insert(label.clone(), (nonce, op.request.value_digest));
            }
        }

        world.advance(schedule.end_tick(e));
        for rule in config.censor.iter().filter(|c| c.epoch == e) {
            let addr = world.clients[rule.client].address();
            world.sim.censor_next(addr, rule.count);
        }
        close_epoch(config, &mut world, e, schedule.end_tick(e), &group_addresses);
    }

    let settle = world.sim.now() + config.settle_blocks * world.block;
    world.advance(settle);

    let mut events = world.sim.take_events();
    events.extend(world.events);
    events.sort_by_key(|e| e.tick());

    let cost = aggregate(&events, &config.chain.prices).expect("run log is complete");
    let mut verdicts = BTreeMap::new();
    for e in 0..plans.len() as Epoch {
        if let Some(v) = world.sim.executor().consistency_result(e) {
            verdicts.insert(e, v.clone());
        }
    }
    let clean = (0..plans.len() as Epoch).all(|e| {
        let idle = plans[e as usize].is_empty();
        match verdicts.get(&e) {
            Some(v) => v.outcome.is_clean(),
            None => idle,
        }
    });
    Ok(RunOutput {
        events,
        verdicts,
        cost,
        exit_code: if clean { 0 } else { 2 },
    })
}

/// With inactive clients this epoch, a slot map sending every client index
/// to an active stand-in (identity for active ones).
fn build_reroute(
    config: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    _epoch: Epoch,
) -> Option<Vec<usize>> {
    if config.inactive_fraction == 0.0 {
        return None;
    }
    let n = config.clients;
    let idle_count = (config.inactive_fraction * n as f64).floor() as usize;
    let idle = rand::seq::index::sample(rng, n, idle_count).into_vec();
    let active: Vec<usize> = (0..n).filter(|i| !idle.contains(i)).collect();
    let mut map = vec![0usize; n];
    let mut next = 0usize;
    for (i, slot) in map.iter_mut().enumerate() {
        if idle.contains(&i) {
            *slot = active[next % active.len()];
            next += 1;
        } else {
            *slot = i;
        }
    }
    Some(map)
}

fn close_epoch(
    config: &ScenarioConfig,
    world: &mut World,
    epoch: Epoch,
    end_tick: Tick,
    group_addresses: &[Vec<Address>],
) {
    match config.server_behavior {
        ServerBehavior::ForkByRaces => {
            if let Some((truthful, tampered)) = world.server.race_views(epoch) {
                world
                    .server
                    .submit(&mut world.sim, truthful, config.base_fee + 1);
                submit_active_clients(world, epoch, end_tick);
                world
                    .server
                    .submit(&mut world.sim, tampered, config.base_fee.saturating_sub(1));
            } else if let Some(att) = world.server.attest(epoch) {
                world.server.submit(&mut world.sim, att, config.base_fee);
                submit_active_clients(world, epoch, end_tick);
            }
        }
        ServerBehavior::ForkByChainForks if !world.fork_ids.is_empty() => {
            let views = world.server.group_views(epoch, group_addresses);
            for (fork, view) in world.fork_ids.clone().into_iter().zip(views) {
                world
                    .sim
                    .submit_on(
                        fork,
                        world.server.kp.party,
                        ContractCall::AttestServer(view).encode(),
                        config.base_fee,
                    )
                    .expect("fork exists while partitioned");
            }
            submit_active_clients(world, epoch, end_tick);
        }
        _ => {
            if let Some(att) = world.server.attest(epoch) {
                world.server.submit(&mut world.sim, att, config.base_fee);
            }
            submit_active_clients(world, epoch, end_tick);
        }
    }
    world.server.seal_epoch(epoch);
}

fn submit_active_clients(world: &mut World, epoch: Epoch, end_tick: Tick) {
    for c in world.clients.iter_mut() {
        if c.log_len() == 0 {
            continue;
        }
        c.attest(epoch, end_tick);
        c.submit(&mut world.sim, epoch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::Violation;
    use crate::contract::Outcome;
    use crate::events::to_jsonl;

    fn small_workload(clients: usize) -> ScenarioConfig {
        ScenarioConfig {
            version: 1,
            seed: 9,
            clients,
            chain: ChainParams::default(),
            contract: ContractConfig::default(),
            workload: Some(WorkloadSpec {
                clients,
                keyspace: 24,
                epochs: 3,
                load_epochs: 1,
                ops_per_epoch: 24,
                read_fraction: 0.5,
                distribution: crate::workload::KeyDistribution::Zipfian { theta: 0.99 },
                deterministic_mix: false,
            }),
            trace: Vec::new(),
            server_behavior: ServerBehavior::Honest,
            client_behaviors: Vec::new(),
            inactive_fraction: 0.0,
            resubmission: true,
            base_fee: 10,
            settle_blocks: 12,
            censor: Vec::new(),
            partition: None,
        }
    }

    #[test]
    fn honest_workload_run_is_clean_everywhere() {
        let config = small_workload(3);
        let out = run(&config).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.verdicts.len(), 4);
        assert!(out.verdicts.values().all(|v| v.outcome == Outcome::Consistent));
        assert!(out.cost.retired_ops > 0, "clients retired their logs");
        assert!(out.cost.total().execution > 0);
    }

    #[test]
    fn honest_read_heavy_replay_stays_consistent_every_epoch() {
        let spec = WorkloadSpec::profile_b(4);
        let epochs = spec.total_epochs();
        let ops = spec.ops_per_epoch;
        let mut config = small_workload(4);
        config.contract.epoch_interval = 288;
        config.workload = Some(spec);
        let out = run(&config).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.verdicts.len() as u64, epochs);
        assert!(out.verdicts.values().all(|v| v.outcome == Outcome::Consistent
            && v.violations.is_empty()
            && v.attributions.is_empty()));
        for epoch in 0..epochs {
            assert_eq!(out.cost.attested_ops.get(&epoch), Some(&ops));
        }
    }

    /// Pure-read epochs of growing size, resolved against the previous
    /// epoch's record. Gas must grow with the read count under either
    /// placement, and lookups from an on-chain record must stay cheaper
    /// than challenge-and-prove against an off-chain root.
    #[test]
    fn sequential_read_gas_grows_with_size_and_prefers_the_onchain_record() {
        use crate::contract::Placement;

        let measure = |reads: u64, persistent: Placement| {
            let mut config = small_workload(3);
            config.contract.placement.persistent = persistent;
            config.workload = Some(WorkloadSpec {
                clients: 3,
                keyspace: 40,
                epochs: 2,
                load_epochs: 1,
                ops_per_epoch: reads.max(40),
                read_fraction: 1.0,
                distribution: crate::workload::KeyDistribution::Uniform,
                deterministic_mix: true,
            });
            let out = run(&config).unwrap();
            assert_eq!(out.exit_code, 0);
            out.cost.per_epoch[&1].total_gas()
        };

        let sizes = [40u64, 80, 120];
        let on: Vec<u64> = sizes.iter().map(|&k| measure(k, Placement::OnChain)).collect();
        let off: Vec<u64> = sizes.iter().map(|&k| measure(k, Placement::OffChain)).collect();
        for series in [&on, &off] {
            assert!(series.windows(2).all(|w| w[0] < w[1]), "gas not growing: {series:?}");
        }
        for (o, n) in off.iter().zip(&on) {
            assert!(o > n, "off-chain lookups should cost more: {off:?} vs {on:?}");
        }
    }

    #[test]
    fn equal_seeds_reproduce_the_event_log_byte_for_byte() {
        let config = small_workload(2);
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(to_jsonl(&a.events), to_jsonl(&b.events));
        let mut other = config;
        other.seed = 10;
        let c = run(&other).unwrap();
        assert_ne!(to_jsonl(&a.events), to_jsonl(&c.events));
    }

    fn anchor_trace(concurrent: bool) -> ScenarioConfig {
        let trace = if concurrent {
            vec![
                ScriptedOp {
                    client: 1,
                    kind: OpKind::Write,
                    key: "k".into(),
                    value: Some("v2".into()),
                    returned: None,
                    t_begin: 1,
                    t_end: 6,
                },
                ScriptedOp {
                    client: 0,
                    kind: OpKind::Write,
                    key: "k".into(),
                    value: Some("v1".into()),
                    returned: None,
                    t_begin: 2,
                    t_end: 4,
                },
                ScriptedOp {
                    client: 2,
                    kind: OpKind::Read,
                    key: "k".into(),
                    value: None,
                    returned: None,
                    t_begin: 8,
                    t_end: 9,
                },
            ]
        } else {
            vec![
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
            ]
        };
        ScenarioConfig {
            workload: None,
            trace,
            clients: 3,
            ..small_workload(3)
        }
    }

    #[test]
    fn stale_read_trace_lands_inconsistent_with_the_read_named() {
        let out = run(&anchor_trace(false)).unwrap();
        assert_eq!(out.exit_code, 2);
        let v = &out.verdicts[&0];
        assert_eq!(v.outcome, Outcome::Inconsistent);
        assert_eq!(v.violations.len(), 1);
        match &v.violations[0] {
            Violation::StaleRead {
                read,
                expected,
                returned,
            } => {
                let fresher = expected.expect("the fresh write was in the history");
                assert_ne!(fresher, *read);
                assert!(
                    matches!(returned, crate::consistency::ReturnedValue::Write(w) if *w != fresher),
                    "the read returned the outdated write: {returned:?}"
                );
            }
            other => panic!("expected a stale read, got {other:?}"),
        }
    }

    #[test]
    fn concurrent_variant_is_consistent_under_declared_order() {
        let out = run(&anchor_trace(true)).unwrap();
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.verdicts[&0].outcome, Outcome::Consistent);
    }

    #[test]
    fn toml_round_trip_and_unknown_fields() {
        let config = small_workload(2);
        let text = config.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, config);

        let bad = format!("mystery = 1\n{text}");
        assert!(matches!(
            ScenarioConfig::from_toml_str(&bad),
            Err(ScenarioError::Parse(_))
        ));

        let mut wrong = config;
        wrong.version = 9;
        assert!(matches!(
            ScenarioConfig::from_toml_str(&wrong.to_toml_string()),
            Err(ScenarioError::Version(9))
        ));
    }

    #[test]
    fn selective_omission_fools_the_audit_until_the_victim_resubmits() {
        let mut config = small_workload(3);
        config.server_behavior = ServerBehavior::SelectiveOmission { victim: 1 };
        config.censor = (0..4)
            .map(|e| CensorRule {
                epoch: e,
                client: 1,
                count: 1,
            })
            .collect();

        config.resubmission = false;
        let fooled = run(&config).unwrap();
        assert_eq!(fooled.exit_code, 0, "omission plus censorship goes unseen");
        assert!(fooled
            .verdicts
            .values()
            .all(|v| v.outcome == Outcome::Consistent));

        config.resubmission = true;
        let caught = run(&config).unwrap();
        assert_eq!(caught.exit_code, 2);
        assert!(
            caught
                .verdicts
                .values()
                .any(|v| v.outcome == Outcome::AttackDetected),
            "resubmitted evidence convicts the server: {:?}",
            caught.verdicts
        );
    }

    #[test]
    fn partitioned_fork_views_are_detected_after_heal() {
        let mut config = small_workload(4);
        config.server_behavior = ServerBehavior::ForkByChainForks;
        config.partition = Some(PartitionPlan {
            epoch: 2,
            groups: vec![vec![0, 1], vec![2, 3]],
            miner_shares: Vec::new(),
            heal_blocks_after_close: 1,
        });
        let out = run(&config).unwrap();
        assert_eq!(out.exit_code, 2);
        assert_eq!(out.verdicts[&2].outcome, Outcome::AttackDetected);
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, SimEvent::ForkEvidenceRecorded { .. })));
    }

    #[test]
    fn resting_clients_do_not_change_the_verdicts() {
        let mut config = small_workload(10);
        config.workload.as_mut().unwrap().clients = 10;
        let all_active = run(&config).unwrap();
        config.inactive_fraction = 0.3;
        let with_idle = run(&config).unwrap();
        assert_eq!(all_active.exit_code, 0);
        assert_eq!(with_idle.exit_code, 0);
        let outcomes = |o: &RunOutput| {
            o.verdicts
                .iter()
                .map(|(e, v)| (*e, v.outcome.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(outcomes(&all_active), outcomes(&with_idle));
    }
}
