//! The arbitration contract.
//!
//! Parties call it through transactions: clients and the server attest
//! their epoch logs, the identity provider manages the client whitelist,
//! and the server answers lookup challenges. Once an epoch is fully
//! attested the contract crosschecks the logs, attributes discrepancies,
//! repairs the server's declared history, audits it for consistency, and
//! records a verdict. Late attestations that add information reopen the
//! verdict under a bumped revision; conflicting resubmissions are kept out
//! and recorded as fork evidence instead.
//!
//! # Locking
//!
//! `lock_enabled` models the contract's concurrency discipline. With the
//! lock, the audit pipeline runs atomically inside the transaction that
//! completes the epoch, and a second differing attestation can only ever
//! be rejected. Without it, the pipeline is staged: every later
//! transaction in the block advances one stage before its own payload
//! runs, the rest completes at block end, and an attestation arriving
//! between stages silently replaces the stored log. The difference is
//! observable and deliberate; one acceptance scenario exploits it.
//!
//! # Placement and gas
//!
//! Storage placement does not change results, only costs and data flow.
//! On-chain temporary logs are written to contract storage word by word
//! and read back during the audit; off-chain temporary logs ride in
//! calldata, cost memory words, and leave only a digest in storage.
//! The persistent key directory works the same way: on-chain it is a
//! storage map consulted directly, off-chain the contract keeps only an
//! authenticated-dictionary root and resolves cross-epoch reads by
//! challenging the server for proofs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ads::{self, AdsState};
use crate::chainsim::{BlockCtx, ExecReport, GasMeter, Transaction, TxExecutor};
use crate::codec::{self, CodecError, Decoder, Encoder};
use crate::consistency::{
    audit_ordered_tolerant, BaseState, BaseWrite, OrderedHistory, VerdictStatus, Violation,
};
use crate::crosscheck::{
    attribute, check_client_log, check_server_log, crosscheck, repair_server_log, Attribution,
    CrosscheckReport, MatchedPair,
};
use crate::events::{addr_hex, SimEvent};
use crate::sig::{IdentityRegistry, PublicKey};
use crate::types::{Address, Attestation, Digest, Epoch, Key, Operation, PartyId, Role, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    OnChain,
    OffChain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub client_log: Placement,
    pub server_log: Placement,
    pub persistent: Placement,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            client_log: Placement::OffChain,
            server_log: Placement::OffChain,
            persistent: Placement::OnChain,
        }
    }
}

impl PlacementConfig {
    fn log_placement(&self, role: Role) -> Placement {
        if role == Role::Server {
            self.server_log
        } else {
            self.client_log
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub lock_enabled: bool,
    pub double_signing: bool,
    pub skew_tolerance: Tick,
    pub placement: PlacementConfig,
    /// Ticks per epoch; epoch `e` ends at `(e + 1) * epoch_interval`.
    pub epoch_interval: Tick,
    /// Blocks past an epoch's close before missing attesters are reported.
    pub timeout_blocks: u64,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            lock_enabled: true,
            double_signing: true,
            skew_tolerance: 0,
            placement: PlacementConfig::default(),
            epoch_interval: 480,
            timeout_blocks: 4,
        }
    }
}

/// Everything callable through a transaction payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContractCall {
    AttestClient(Attestation),
    AttestServer(Attestation),
    RegisterClient { address: Address, key: PublicKey },
    DeregisterClient { address: Address },
    AnswerChallenge { challenge: u64, proof: Vec<u8> },
}

const CALL_ATTEST_CLIENT: u8 = 1;
const CALL_ATTEST_SERVER: u8 = 2;
const CALL_REGISTER: u8 = 3;
const CALL_DEREGISTER: u8 = 4;
const CALL_ANSWER: u8 = 5;

impl ContractCall {
    pub fn epoch(&self) -> Epoch {
        match self {
            ContractCall::AttestClient(a) | ContractCall::AttestServer(a) => a.epoch,
            _ => 0,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        match self {
            ContractCall::AttestClient(a) => {
                e.u8(CALL_ATTEST_CLIENT).u64(a.epoch);
                e.fixed(&codec::encode_attestation(a));
            }
            ContractCall::AttestServer(a) => {
                e.u8(CALL_ATTEST_SERVER).u64(a.epoch);
                e.fixed(&codec::encode_attestation(a));
            }
            ContractCall::RegisterClient { address, key } => {
                e.u8(CALL_REGISTER).u64(0);
                e.fixed(&address.0).fixed(&key.0);
            }
            ContractCall::DeregisterClient { address } => {
                e.u8(CALL_DEREGISTER).u64(0);
                e.fixed(&address.0);
            }
            ContractCall::AnswerChallenge { challenge, proof } => {
                e.u8(CALL_ANSWER).u64(0);
                e.u64(*challenge).bytes(proof);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let id = d.u8()?;
        let _epoch = d.u64()?;
        let call = match id {
            CALL_ATTEST_CLIENT | CALL_ATTEST_SERVER => {
                let rest = d.take_rest();
                let a = codec::decode_attestation(&rest)?;
                if id == CALL_ATTEST_CLIENT {
                    return Ok(ContractCall::AttestClient(a));
                }
                return Ok(ContractCall::AttestServer(a));
            }
            CALL_REGISTER => ContractCall::RegisterClient {
                address: Address(d.fixed::<20>()?),
                key: PublicKey(d.fixed::<32>()?),
            },
            CALL_DEREGISTER => ContractCall::DeregisterClient {
                address: Address(d.fixed::<20>()?),
            },
            CALL_ANSWER => ContractCall::AnswerChallenge {
                challenge: d.u64()?,
                proof: d.bytes()?,
            },
            v => {
                return Err(CodecError::BadTag {
                    field: "contract-call",
                    value: v,
                })
            }
        };
        d.expect_end()?;
        Ok(call)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Consistent,
    Inconsistent,
    AttackDetected,
    AttackSuspected { missing: Vec<Address> },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Consistent => "consistent",
            Outcome::Inconsistent => "inconsistent",
            Outcome::AttackDetected => "attack_detected",
            Outcome::AttackSuspected { .. } => "attack_suspected",
        }
    }

    pub fn is_clean(&self) -> bool {
        matches!(self, Outcome::Consistent)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochVerdict {
    pub epoch: Epoch,
    pub outcome: Outcome,
    pub violations: Vec<Violation>,
    pub attributions: Vec<Attribution>,
    pub revision: u32,
    pub decided_at_block: u64,
}

#[derive(Clone, Debug)]
struct Challenge {
    epoch: Epoch,
    key: Key,
    root: Digest,
    resolved: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Phase {
    /// Crosschecking one client log at a time against the stored server log.
    Client(usize),
    /// Full-report assembly, attribution, and repair.
    Assemble,
    /// Resolving cross-epoch base values, possibly via challenges.
    Resolve,
    /// Final audit and verdict recording.
    Verdict,
}

#[derive(Clone, Debug)]
struct Assembled {
    attributions: Vec<Attribution>,
    repaired: Option<OrderedHistory>,
}

#[derive(Clone, Debug)]
struct PendingAudit {
    epoch: Epoch,
    revision: u32,
    phase: Phase,
    client_order: Vec<Address>,
    staged_client_only: Vec<Operation>,
    staged_divergences: Vec<MatchedPair>,
    assembled: Option<Assembled>,
    base: BaseState,
    awaiting: Vec<u64>,
}

enum Pump {
    Progress,
    Waiting,
    Done,
}

fn words(bytes: usize) -> u64 {
    (bytes as u64).div_ceil(32)
}

/// Contract storage and logic. Cloning forks the whole state; the chain
/// simulator does exactly that on a partition.
#[derive(Clone)]
pub struct ContractState {
    config: ContractConfig,
    registry: IdentityRegistry,
    client_atts: BTreeMap<Epoch, BTreeMap<Address, Attestation>>,
    server_atts: BTreeMap<Epoch, Attestation>,
    fork_evidence: BTreeMap<Epoch, Vec<PartyId>>,
    verdicts: BTreeMap<Epoch, EpochVerdict>,
    latest_writes: BTreeMap<Key, BaseWrite>,
    applied_writes: BTreeMap<Epoch, Vec<(Key, BaseWrite)>>,
    base_snapshots: BTreeMap<Epoch, BaseState>,
    ads_roots: BTreeMap<Epoch, Digest>,
    challenges: BTreeMap<u64, Challenge>,
    next_challenge: u64,
    pending: Option<PendingAudit>,
    close_heights: BTreeMap<Epoch, u64>,
}

impl ContractState {
    pub fn new(config: ContractConfig, registry: IdentityRegistry) -> Self {
        ContractState {
            config,
            registry,
            client_atts: BTreeMap::new(),
            server_atts: BTreeMap::new(),
            fork_evidence: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            latest_writes: BTreeMap::new(),
            applied_writes: BTreeMap::new(),
            base_snapshots: BTreeMap::new(),
            ads_roots: BTreeMap::new(),
            challenges: BTreeMap::new(),
            next_challenge: 1,
            pending: None,
            close_heights: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ContractConfig {
        &self.config
    }

    pub fn registry(&self) -> &IdentityRegistry {
        &self.registry
    }

    /// Free read-only query clients poll to learn whether they may discard
    /// their temporary logs.
    pub fn consistency_result(&self, epoch: Epoch) -> Option<&EpochVerdict> {
        self.verdicts.get(&epoch)
    }

    pub fn fork_evidence(&self, epoch: Epoch) -> &[PartyId] {
        self.fork_evidence
            .get(&epoch)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn latest_write(&self, key: &[u8]) -> Option<&BaseWrite> {
        self.latest_writes.get(key)
    }

    pub fn ads_root(&self, epoch: Epoch) -> Digest {
        self.ads_roots
            .get(&epoch)
            .copied()
            .unwrap_or_else(ads::empty_root)
    }

    /// Free query the server heartbeat polls: challenges still waiting for
    /// a proof, as `(id, epoch, key)`.
    pub fn open_challenges(&self) -> Vec<(u64, Epoch, Key)> {
        self.challenges
            .iter()
            .filter(|(_, c)| !c.resolved)
            .map(|(id, c)| (*id, c.epoch, c.key.clone()))
            .collect()
    }

    pub fn server_attestation(&self, epoch: Epoch) -> Option<&Attestation> {
        self.server_atts.get(&epoch)
    }

    pub fn client_attestation(&self, epoch: Epoch, client: &Address) -> Option<&Attestation> {
        self.client_atts.get(&epoch)?.get(client)
    }

    fn epoch_end_tick(&self, epoch: Epoch) -> Tick {
        (epoch + 1) * self.config.epoch_interval
    }

    fn att_words(a: &Attestation) -> u64 {
        words(codec::encode_attestation(a).len())
    }

    fn charge_log_store(&self, meter: &mut GasMeter, a: &Attestation) {
        let w = Self::att_words(a);
        meter.hash(w);
        match self.config.placement.log_placement(a.party.role) {
            Placement::OnChain => meter.storage_write(w + 2),
            Placement::OffChain => {
                meter.memory(w);
                meter.storage_write(1);
            }
        }
    }

    fn charge_log_read(&self, meter: &mut GasMeter, a: &Attestation) {
        let w = Self::att_words(a);
        match self.config.placement.log_placement(a.party.role) {
            Placement::OnChain => meter.storage_read(w),
            Placement::OffChain => meter.memory(w),
        }
    }

    fn reject(
        events: &mut Vec<SimEvent>,
        tick: Tick,
        epoch: Epoch,
        party: Address,
        reason: &str,
    ) {
        events.push(SimEvent::AttestationRejected {
            tick,
            epoch,
            party: addr_hex(party),
            reason: reason.to_string(),
        });
    }

    /// True once the epoch can be audited: the server attested, and every
    /// registered client the server's log names has attested too.
    fn complete(&self, epoch: Epoch) -> bool {
        let Some(server) = self.server_atts.get(&epoch) else {
            return false;
        };
        let attested = self.client_atts.get(&epoch);
        server
            .client_addresses()
            .into_iter()
            .filter(|a| self.registry.client_key(a).is_some())
            .all(|a| attested.is_some_and(|m| m.contains_key(&a)))
    }

    fn attest_client(
        &mut self,
        sender: PartyId,
        a: Attestation,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        let epoch = a.epoch;
        if sender != a.party || sender.role != Role::Client {
            Self::reject(events, ctx.tick, epoch, sender.address, "bad_submitter");
            return;
        }
        let check = check_client_log(&a, &self.registry, self.config.double_signing);
        meter.hash(Self::att_words(&a));
        if !check.admissible() {
            let reason = if check.envelope_ok { "bad_locality" } else { "bad_envelope" };
            Self::reject(events, ctx.tick, epoch, sender.address, reason);
            return;
        }
        match self.client_atts.entry(epoch).or_default().get(&sender.address) {
            Some(prev) if *prev == a => return,
            Some(_) if self.config.lock_enabled => {
                self.fork_evidence.entry(epoch).or_default().push(sender);
                events.push(SimEvent::ForkEvidenceRecorded {
                    tick: ctx.tick,
                    epoch,
                    party: addr_hex(sender.address),
                });
                return;
            }
            _ => {}
        }
        self.charge_log_store(meter, &a);
        events.push(SimEvent::AttestationAccepted {
            tick: ctx.tick,
            epoch,
            party: addr_hex(sender.address),
            ops: a.ops.len() as u64,
        });
        self.client_atts.get_mut(&epoch).unwrap().insert(sender.address, a);
        self.maybe_audit(epoch, ctx, meter, events);
    }

    fn attest_server(
        &mut self,
        sender: PartyId,
        a: Attestation,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        let epoch = a.epoch;
        if sender != a.party || sender.role != Role::Server {
            Self::reject(events, ctx.tick, epoch, sender.address, "bad_submitter");
            return;
        }
        let check = check_server_log(&a, &self.registry, self.config.double_signing);
        meter.hash(Self::att_words(&a));
        if !check.admissible() {
            let reason = if check.envelope_ok { "no_total_order" } else { "bad_envelope" };
            Self::reject(events, ctx.tick, epoch, sender.address, reason);
            return;
        }
        match self.server_atts.get(&epoch) {
            Some(prev) if *prev == a => return,
            Some(_) if self.config.lock_enabled => {
                self.fork_evidence.entry(epoch).or_default().push(sender);
                events.push(SimEvent::ForkEvidenceRecorded {
                    tick: ctx.tick,
                    epoch,
                    party: addr_hex(sender.address),
                });
                return;
            }
            _ => {}
        }
        self.charge_log_store(meter, &a);
        events.push(SimEvent::AttestationAccepted {
            tick: ctx.tick,
            epoch,
            party: addr_hex(sender.address),
            ops: a.ops.len() as u64,
        });
        self.server_atts.insert(epoch, a);
        self.maybe_audit(epoch, ctx, meter, events);
    }

    /// Starts (or restarts, for a recompute) the audit pipeline if the
    /// epoch is ready and nothing is already in flight.
    fn maybe_audit(
        &mut self,
        epoch: Epoch,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        if !self.complete(epoch) || self.pending.is_some() {
            return;
        }
        let revision = self.verdicts.get(&epoch).map_or(0, |v| v.revision + 1);
        self.base_snapshots
            .entry(epoch)
            .or_insert_with(|| self.latest_writes.clone());
        self.pending = Some(PendingAudit {
            epoch,
            revision,
            phase: Phase::Client(0),
            client_order: self
                .client_atts
                .get(&epoch)
                .map(|m| m.keys().copied().collect())
                .unwrap_or_default(),
            staged_client_only: Vec::new(),
            staged_divergences: Vec::new(),
            assembled: None,
            base: BaseState::new(),
            awaiting: Vec::new(),
        });
        if self.config.lock_enabled {
            self.pump_to_completion(ctx, meter, events);
        }
    }

    fn pump_to_completion(
        &mut self,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        loop {
            match self.pump(ctx, meter, events) {
                Pump::Progress => continue,
                Pump::Waiting | Pump::Done => break,
            }
        }
    }

    /// Advances the audit one stage. Stages re-read contract state on
    /// entry, which is exactly what makes the unlocked mode exploitable.
    fn pump(&mut self, ctx: BlockCtx, meter: &mut GasMeter, events: &mut Vec<SimEvent>) -> Pump {
        let Some(mut p) = self.pending.take() else {
            return Pump::Done;
        };
        let epoch = p.epoch;
        let Some(server) = self.server_atts.get(&epoch).cloned() else {
            return Pump::Done;
        };
        let tol = self.config.skew_tolerance;

        match p.phase.clone() {
            Phase::Client(i) => {
                if i == 0 || !self.config.lock_enabled {
                    self.charge_log_read(meter, &server);
                }
                let addr = p.client_order[i];
                if let Some(client) = self
                    .client_atts
                    .get(&epoch)
                    .and_then(|m| m.get(&addr))
                    .cloned()
                {
                    self.charge_log_read(meter, &client);
                    meter.hash(2 * Self::att_words(&client));
                    meter.memory(Self::att_words(&client));
                    let mini = crosscheck(&[&client], &server, tol);
                    p.staged_client_only.extend(mini.client_only);
                    p.staged_divergences.extend(mini.timestamp_divergences);
                }
                p.phase = if i + 1 < p.client_order.len() {
                    Phase::Client(i + 1)
                } else {
                    Phase::Assemble
                };
                self.pending = Some(p);
                Pump::Progress
            }
            Phase::Assemble => {
                self.charge_log_read(meter, &server);
                meter.hash(2 * Self::att_words(&server));
                meter.memory(2 * Self::att_words(&server));
                let clients: Vec<Attestation> = p
                    .client_order
                    .iter()
                    .filter_map(|a| self.client_atts.get(&epoch).and_then(|m| m.get(a)))
                    .cloned()
                    .collect();
                let refs: Vec<&Attestation> = clients.iter().collect();
                let full = crosscheck(&refs, &server, tol);

                let mut client_only = std::mem::take(&mut p.staged_client_only);
                client_only.sort_by_key(|o| (o.t_begin, o.nonce));
                client_only.dedup_by_key(|o| o.identity());
                let mut divergences = std::mem::take(&mut p.staged_divergences);
                divergences.sort_by_key(|m| (m.client_copy.t_begin, m.client_copy.nonce));
                divergences.dedup_by_key(|m| m.client_copy.identity());

                let report = CrosscheckReport {
                    matched: full.matched,
                    server_only: full.server_only,
                    client_only,
                    server_duplicates: full.server_duplicates,
                    client_duplicates: full.client_duplicates,
                    order_breaks: full.order_breaks,
                    client_sequence_breaks: full.client_sequence_breaks,
                    timestamp_divergences: divergences,
                    skew_tolerance: tol,
                };
                let attributions = attribute(&report, &self.registry, self.config.double_signing);
                let repaired = repair_server_log(&server, &attributions).ok();
                p.assembled = Some(Assembled {
                    attributions,
                    repaired,
                });
                p.phase = Phase::Resolve;
                self.pending = Some(p);
                Pump::Progress
            }
            Phase::Resolve => {
                let needed = p
                    .assembled
                    .as_ref()
                    .and_then(|a| a.repaired.as_ref())
                    .map(|h| base_keys_needed(&h.ops))
                    .unwrap_or_default();
                let snapshot = self.base_snapshots.get(&epoch).cloned().unwrap_or_default();
                match self.config.placement.persistent {
                    Placement::OnChain => {
                        for key in needed {
                            if p.base.contains_key(&key) {
                                continue;
                            }
                            meter.storage_read(4);
                            if let Some(w) = snapshot.get(&key) {
                                p.base.insert(key, *w);
                            }
                        }
                        p.phase = Phase::Verdict;
                        self.pending = Some(p);
                        Pump::Progress
                    }
                    Placement::OffChain => {
                        let root = if epoch == 0 {
                            ads::empty_root()
                        } else {
                            self.ads_root(epoch - 1)
                        };
                        let already: Vec<Key> = self
                            .challenges
                            .values()
                            .filter(|c| c.epoch == epoch)
                            .map(|c| c.key.clone())
                            .collect();
                        for key in needed {
                            if p.base.contains_key(&key) || already.contains(&key) {
                                continue;
                            }
                            let id = self.next_challenge;
                            self.next_challenge += 1;
                            meter.storage_write(1);
                            self.challenges.insert(
                                id,
                                Challenge {
                                    epoch,
                                    key,
                                    root,
                                    resolved: false,
                                },
                            );
                            events.push(SimEvent::ChallengePosted {
                                tick: ctx.tick,
                                epoch,
                                challenge: id,
                            });
                            p.awaiting.push(id);
                        }
                        if p.awaiting.is_empty() {
                            p.phase = Phase::Verdict;
                            self.pending = Some(p);
                            Pump::Progress
                        } else {
                            self.pending = Some(p);
                            Pump::Waiting
                        }
                    }
                }
            }
            Phase::Verdict => {
                let assembled = p.assembled.take().expect("assemble ran");
                meter.memory(Self::att_words(&server));
                let (violations, status) = match &assembled.repaired {
                    Some(history) => {
                        let v = audit_ordered_tolerant(history, &p.base);
                        (v.violations, v.status)
                    }
                    None => (Vec::new(), VerdictStatus::Inconsistent),
                };
                let outcome = if !assembled.attributions.is_empty() || assembled.repaired.is_none()
                {
                    Outcome::AttackDetected
                } else if status == VerdictStatus::Inconsistent {
                    Outcome::Inconsistent
                } else {
                    Outcome::Consistent
                };

                if let Some(history) = &assembled.repaired {
                    self.apply_persistent(epoch, history, meter);
                }
                meter.storage_write(4);
                let verdict = EpochVerdict {
                    epoch,
                    outcome,
                    violations,
                    attributions: assembled.attributions,
                    revision: p.revision,
                    decided_at_block: ctx.height,
                };
                events.push(SimEvent::VerdictRecorded {
                    tick: ctx.tick,
                    epoch,
                    revision: verdict.revision,
                    outcome: verdict.outcome.label().to_string(),
                    violations: verdict.violations.len() as u64,
                    attributions: verdict.attributions.len() as u64,
                    height: ctx.height,
                });
                self.verdicts.insert(epoch, verdict);
                Pump::Done
            }
        }
    }

    /// Replays the repaired history's writes into the persistent directory.
    /// A recompute rebuilds from the epoch's snapshot and replays any later
    /// epochs already applied, so revisions stay deterministic.
    fn apply_persistent(&mut self, epoch: Epoch, history: &OrderedHistory, meter: &mut GasMeter) {
        let mut writes: Vec<(Key, BaseWrite)> = Vec::new();
        for op in &history.ops {
            if op.kind == crate::types::OpKind::Write {
                writes.push((
                    op.key.clone(),
                    BaseWrite {
                        nonce: op.nonce,
                        value_digest: op.value_digest,
                    },
                ));
            }
        }
        self.applied_writes.insert(epoch, writes);

        let mut state = self.base_snapshots.get(&epoch).cloned().unwrap_or_default();
        for (_, writes) in self.applied_writes.range(epoch..) {
            for (k, w) in writes {
                state.insert(k.clone(), *w);
            }
        }
        self.latest_writes = state;

        let distinct: std::collections::BTreeSet<&Key> = self.applied_writes[&epoch]
            .iter()
            .map(|(k, _)| k)
            .collect();
        match self.config.placement.persistent {
            Placement::OnChain => meter.storage_write(4 * distinct.len() as u64),
            Placement::OffChain => {
                meter.storage_write(1);
                meter.hash(4);
            }
        }

        let mut ads = AdsState::new();
        for (k, w) in &self.latest_writes {
            ads.insert_write(k.clone(), w.nonce, w.value_digest);
        }
        self.ads_roots.insert(epoch, ads.root());
    }

    fn answer_challenge(
        &mut self,
        sender: PartyId,
        id: u64,
        proof_bytes: Vec<u8>,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        if sender.role != Role::Server
            || self.registry.server_address() != Some(sender.address)
        {
            Self::reject(events, ctx.tick, 0, sender.address, "not_authorized");
            return;
        }
        let Some(challenge) = self.challenges.get(&id) else {
            Self::reject(events, ctx.tick, 0, sender.address, "unknown_challenge");
            return;
        };
        if challenge.resolved {
            return;
        }
        let (epoch, key, root) = (challenge.epoch, challenge.key.clone(), challenge.root);
        meter.hash(words(proof_bytes.len()));
        meter.memory(words(proof_bytes.len()));
        meter.storage_read(1);
        let verified = ads::Proof::decode(&proof_bytes)
            .ok()
            .and_then(|p| p.verify(&root, &key).ok().map(|r| r.cloned()));
        let Some(resolution) = verified else {
            Self::reject(events, ctx.tick, epoch, sender.address, "bad_proof");
            return;
        };
        self.challenges.get_mut(&id).unwrap().resolved = true;
        meter.storage_write(1);
        events.push(SimEvent::ChallengeAnswered {
            tick: ctx.tick,
            epoch,
            challenge: id,
            proof_bytes: proof_bytes.len() as u64,
        });
        if let Some(p) = self.pending.as_mut() {
            if p.epoch == epoch {
                p.awaiting.retain(|c| *c != id);
                if let Some(leaf) = resolution {
                    p.base.insert(
                        key,
                        BaseWrite {
                            nonce: leaf.nonce,
                            value_digest: leaf.value_digest,
                        },
                    );
                }
                if p.awaiting.is_empty() {
                    if let Some(p) = self.pending.as_mut() {
                        p.phase = Phase::Verdict;
                    }
                    if self.config.lock_enabled {
                        self.pump_to_completion(ctx, meter, events);
                    }
                }
            }
        }
    }

    fn register(
        &mut self,
        sender: PartyId,
        address: Address,
        key: Option<PublicKey>,
        ctx: BlockCtx,
        meter: &mut GasMeter,
        events: &mut Vec<SimEvent>,
    ) {
        if !self.registry.is_identity_provider(&sender.address) {
            Self::reject(events, ctx.tick, 0, sender.address, "not_authorized");
            return;
        }
        meter.storage_write(2);
        match key {
            Some(k) => self.registry.register_client(address, k),
            None => {
                self.registry.deregister_client(&address);
            }
        }
    }

    fn check_timeouts(&mut self, ctx: BlockCtx, events: &mut Vec<SimEvent>) {
        let known: Vec<Epoch> = self
            .server_atts
            .keys()
            .chain(self.client_atts.keys())
            .copied()
            .collect();
        for epoch in known {
            if self.close_heights.contains_key(&epoch)
                || ctx.tick < self.epoch_end_tick(epoch)
            {
                continue;
            }
            self.close_heights.insert(epoch, ctx.height);
        }
        let due: Vec<(Epoch, u64)> = self
            .close_heights
            .iter()
            .map(|(e, h)| (*e, *h))
            .filter(|(e, h)| {
                !self.verdicts.contains_key(e) && ctx.height >= h + self.config.timeout_blocks
            })
            .collect();
        for (epoch, _) in due {
            if self.pending.as_ref().is_some_and(|p| p.epoch == epoch) {
                continue;
            }
            let attested = self.client_atts.get(&epoch);
            let mut missing: Vec<Address> = match self.server_atts.get(&epoch) {
                Some(server) => server
                    .client_addresses()
                    .into_iter()
                    .filter(|a| self.registry.client_key(a).is_some())
                    .filter(|a| !attested.is_some_and(|m| m.contains_key(a)))
                    .collect(),
                None => {
                    let mut v: Vec<Address> = self
                        .registry
                        .client_addresses()
                        .filter(|a| !attested.is_some_and(|m| m.contains_key(a)))
                        .copied()
                        .collect();
                    if let Some(s) = self.registry.server_address() {
                        v.insert(0, s);
                    }
                    v
                }
            };
            missing.sort();
            events.push(SimEvent::AttestationTimedOut {
                tick: ctx.tick,
                epoch,
                missing: missing.iter().map(|a| addr_hex(*a)).collect(),
            });
            events.push(SimEvent::VerdictRecorded {
                tick: ctx.tick,
                epoch,
                revision: 0,
                outcome: "attack_suspected".to_string(),
                violations: 0,
                attributions: 0,
                height: ctx.height,
            });
            self.verdicts.insert(
                epoch,
                EpochVerdict {
                    epoch,
                    outcome: Outcome::AttackSuspected { missing },
                    violations: Vec::new(),
                    attributions: Vec::new(),
                    revision: 0,
                    decided_at_block: ctx.height,
                },
            );
        }
    }
}

/// Keys whose first access in the declared order is a read, so their
/// freshness depends on the previous epoch's state.
fn base_keys_needed(ops: &[Operation]) -> Vec<Key> {
    let mut written: Vec<&Key> = Vec::new();
    let mut needed: Vec<Key> = Vec::new();
    for op in ops {
        match op.kind {
            crate::types::OpKind::Write => written.push(&op.key),
            crate::types::OpKind::Read => {
                if !written.contains(&&op.key) && !needed.contains(&op.key) {
                    needed.push(op.key.clone());
                }
            }
        }
    }
    needed
}

impl TxExecutor for ContractState {
    fn execute(
        &mut self,
        tx: &Transaction,
        ctx: BlockCtx,
        events: &mut Vec<SimEvent>,
    ) -> ExecReport {
        let mut meter = GasMeter::default();
        if !self.config.lock_enabled && self.pending.is_some() {
            let _ = self.pump(ctx, &mut meter, events);
        }
        let call = match ContractCall::decode(&tx.payload) {
            Ok(c) => c,
            Err(_) => {
                Self::reject(events, ctx.tick, 0, tx.sender.address, "bad_payload");
                return ExecReport {
                    meter,
                    epoch: None,
                };
            }
        };
        let epoch = match &call {
            ContractCall::AttestClient(a) | ContractCall::AttestServer(a) => Some(a.epoch),
            ContractCall::AnswerChallenge { challenge, .. } => {
                self.challenges.get(challenge).map(|c| c.epoch)
            }
            _ => None,
        };
        match call {
            ContractCall::AttestClient(a) => {
                self.attest_client(tx.sender, a, ctx, &mut meter, events)
            }
            ContractCall::AttestServer(a) => {
                self.attest_server(tx.sender, a, ctx, &mut meter, events)
            }
            ContractCall::RegisterClient { address, key } => {
                self.register(tx.sender, address, Some(key), ctx, &mut meter, events)
            }
            ContractCall::DeregisterClient { address } => {
                self.register(tx.sender, address, None, ctx, &mut meter, events)
            }
            ContractCall::AnswerChallenge { challenge, proof } => {
                self.answer_challenge(tx.sender, challenge, proof, ctx, &mut meter, events)
            }
        }
        ExecReport { meter, epoch }
    }

    fn end_block(&mut self, ctx: BlockCtx, events: &mut Vec<SimEvent>) {
        if self.pending.is_some() {
            let mut meter = GasMeter::default();
            let epoch = self.pending.as_ref().map(|p| p.epoch);
            loop {
                match self.pump(ctx, &mut meter, events) {
                    Pump::Progress => continue,
                    Pump::Waiting => break,
                    Pump::Done => {
                        self.pending = None;
                        break;
                    }
                }
            }
            if meter != GasMeter::default() {
                events.push(SimEvent::GasUsed {
                    tick: ctx.tick,
                    tx: 0,
                    epoch,
                    intrinsic: 0,
                    execution: meter.execution_gas(&ctx.prices),
                    storage_writes: meter.storage_writes,
                    storage_reads: meter.storage_reads,
                    hash_words: meter.hash_words,
                    memory_words: meter.memory_words,
                    tx_bytes: 0,
                });
            }
        }
        self.check_timeouts(ctx, events);
    }
}
