//! Protocol agents: the clients and the storage server.
//!
//! Agents run the serve protocol off-chain and talk to the contract through
//! transactions. A request is signed by the issuing client before the server
//! sees it; the server executes it, fills in the returned value for reads,
//! and signs the completed record; the client checks that signature and only
//! then keeps the record. Both sides hold byte-identical copies afterwards,
//! which is what makes the on-chain crosscheck sharp.
//!
//! Every dishonest strategy lives here as a behavior variant. Server-side
//! misbehavior mutates the attested log (or, for the omission and fork
//! strategies, what gets served and logged in the first place); client-side
//! misbehavior mutates the client's own attestation. The honest code path
//! is identical in every case, so a strategy can't be told apart until the
//! contract crosschecks the logs.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ads::AdsState;
use crate::chainsim::{ChainSim, TxId, TxStatus};
use crate::codec;
use crate::contract::{ContractCall, ContractState};
use crate::events::{addr_hex, SimEvent};
use crate::sig::{verify, KeyPair, Signature};
use crate::types::{
    Address, Attestation, Digest, Epoch, Key, Nonce, NonceGen, OpKind, Operation, Tick,
    NOT_FOUND,
};

/// One operation a workload asks a client to perform.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub kind: OpKind,
    pub key: Key,
    /// Digest of the payload a write carries; ignored for reads, where the
    /// server's answer decides the value.
    pub value_digest: Digest,
    pub t_begin: Tick,
    pub t_end: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientBehavior {
    Honest,
    /// Leaves one served operation out of its attestation.
    OmitOwnOp,
    /// Attests an operation the server never executed, under a fabricated
    /// response signature.
    ForgeServerResponse,
    /// Attests one of its operations twice.
    ReplayOwnOp,
    /// Swaps two of its operations so the declared sequence contradicts
    /// their real-time order.
    InvertOwnOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerBehavior {
    Honest,
    /// Attests an operation no client issued, under a fabricated request
    /// signature.
    ForgeClientRequest,
    /// Executes an operation normally but leaves it out of the attested log.
    OmitClientOp,
    /// Attests one executed operation twice.
    ReplayClientOp,
    /// Backdates one operation's timestamps in the attested log. Signatures
    /// stay valid because timestamps are client-vouched, not signed.
    TamperTimestamps,
    /// Hides one client: serves everyone else stale values for keys that
    /// client wrote, and keeps that client's operations out of the log. The
    /// scenario pairs this with censorship of the victim's attestations.
    SelectiveOmission { victim: usize },
    /// Serves one stale read, then prepares two attestations: the truthful
    /// log and a variant whose backdating makes the stale read look fresh.
    /// Works only when the epoch has no later read of the disputed key.
    ForkByRaces,
    /// During a network partition, attests to each side only the operations
    /// of the clients it can see there.
    ForkByChainForks,
    /// Never attests.
    Unresponsive,
}

/// Signs `ops` into an attestation for `party` behind `kp`.
pub fn sign_attestation(
    kp: &KeyPair,
    epoch: Epoch,
    ops: Vec<Operation>,
    total_order_declared: bool,
) -> Attestation {
    let mut a = Attestation {
        epoch,
        party: kp.party,
        ops,
        total_order_declared,
        sig: Signature([0; 32]),
    };
    a.sig = kp.sign(&codec::attestation_message(&a));
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub interval: Tick,
}

impl EpochSchedule {
    pub fn epoch_of(&self, tick: Tick) -> Epoch {
        tick / self.interval
    }

    pub fn start_tick(&self, epoch: Epoch) -> Tick {
        epoch * self.interval
    }

    pub fn end_tick(&self, epoch: Epoch) -> Tick {
        (epoch + 1) * self.interval
    }
}

#[derive(Clone, Debug)]
struct HeldEpoch {
    attestation: Attestation,
    held_ops: u64,
    end_tick: Tick,
    tx: Option<TxId>,
    fee: u64,
}

/// A storage client. Keeps its temporary log until the contract has ruled
/// on the epoch, resubmitting its attestation at escalating fees if the
/// chain drops it.
#[derive(Clone, Debug)]
pub struct ClientAgent {
    pub kp: KeyPair,
    pub behavior: ClientBehavior,
    pub base_fee: u64,
    pub resubmission: bool,
    nonces: NonceGen,
    log: Vec<Operation>,
    held: BTreeMap<Epoch, HeldEpoch>,
    rng: ChaCha8Rng,
}

impl ClientAgent {
    pub fn new(kp: KeyPair, behavior: ClientBehavior, seed: u64) -> Self {
        ClientAgent {
            kp,
            behavior,
            base_fee: 10,
            resubmission: true,
            nonces: NonceGen::new(seed),
            log: Vec::new(),
            held: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xc11e_a6e7),
        }
    }

    pub fn address(&self) -> Address {
        self.kp.party.address
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    pub fn held_epochs(&self) -> Vec<Epoch> {
        self.held.keys().copied().collect()
    }

    /// Builds and signs the request half of an operation.
    pub fn begin(&mut self, req: &Request) -> Operation {
        let mut op = Operation {
            nonce: self.nonces.next(),
            client: self.kp.party,
            kind: req.kind,
            key: req.key.clone(),
            value_digest: match req.kind {
                OpKind::Write => req.value_digest,
                OpKind::Read => NOT_FOUND,
            },
            t_begin: req.t_begin,
            t_end: req.t_end,
            client_sig: None,
            server_sig: None,
        };
        op.client_sig = Some(self.kp.sign(&op.request_message()));
        op
    }

    /// Accepts the server-completed record after checking its signature.
    /// Returns false (and keeps nothing) when the signature is bad; an
    /// honest client never acknowledges an unsigned response.
    pub fn complete(&mut self, op: Operation, server_key: &crate::sig::PublicKey) -> bool {
        let ok = op
            .server_sig
            .as_ref()
            .is_some_and(|s| verify(&op.response_message(), s, server_key));
        if ok {
            self.log.push(op);
        }
        ok
    }

    /// Closes the epoch: applies the behavior to the log copy, signs it,
    /// and holds the original until a verdict lands.
    pub fn attest(&mut self, epoch: Epoch, end_tick: Tick) -> Attestation {
        let held_ops = self.log.len() as u64;
        let mut ops = std::mem::take(&mut self.log);
        match self.behavior {
            ClientBehavior::Honest => {}
            ClientBehavior::OmitOwnOp => {
                if !ops.is_empty() {
                    let i = self.rng.random_range(0..ops.len());
                    ops.remove(i);
                }
            }
            ClientBehavior::ForgeServerResponse => {
                let t = ops.last().map_or(end_tick, |o| o.t_end) + 1;
                let mut op = Operation {
                    nonce: self.nonces.next(),
                    client: self.kp.party,
                    kind: OpKind::Write,
                    key: b"phantom".to_vec(),
                    value_digest: Digest(self.rng.random()),
                    t_begin: t,
                    t_end: t + 1,
                    client_sig: None,
                    server_sig: Some(Signature(self.rng.random())),
                };
                op.client_sig = Some(self.kp.sign(&op.request_message()));
                ops.push(op);
            }
            ClientBehavior::ReplayOwnOp => {
                if !ops.is_empty() {
                    let i = self.rng.random_range(0..ops.len());
                    let copy = ops[i].clone();
                    ops.insert(i + 1, copy);
                }
            }
            ClientBehavior::InvertOwnOrder => {
                if let Some(i) = (0..ops.len().saturating_sub(1))
                    .find(|&i| ops[i].precedes(&ops[i + 1]))
                {
                    ops.swap(i, i + 1);
                }
            }
        }
        let a = sign_attestation(&self.kp, epoch, ops, false);
        self.held.insert(
            epoch,
            HeldEpoch {
                attestation: a.clone(),
                held_ops,
                end_tick,
                tx: None,
                fee: self.base_fee,
            },
        );
        a
    }

    /// Submits the attestation for `epoch` (first submission only).
    pub fn submit(&mut self, sim: &mut ChainSim<ContractState>, epoch: Epoch) {
        let Some(h) = self.held.get_mut(&epoch) else {
            return;
        };
        if h.tx.is_none() {
            let call = ContractCall::AttestClient(h.attestation.clone());
            h.tx = Some(sim.submit(self.kp.party, call.encode(), h.fee));
        }
    }

    /// Housekeeping the client runs every block: resubmit attestations the
    /// chain dropped (at doubled fee), and retire temporary logs for epochs
    /// the contract has ruled on.
    pub fn maintain(&mut self, sim: &mut ChainSim<ContractState>, events: &mut Vec<SimEvent>) {
        let now = sim.now();
        if self.resubmission {
            let dropped: Vec<Epoch> = self
                .held
                .iter()
                .filter(|(_, h)| {
                    h.tx
                        .is_some_and(|t| sim.status(t) == Ok(TxStatus::Dropped))
                })
                .map(|(e, _)| *e)
                .collect();
            for e in dropped {
                let h = self.held.get_mut(&e).unwrap();
                h.fee *= 2;
                let call = ContractCall::AttestClient(h.attestation.clone());
                h.tx = Some(sim.submit(self.kp.party, call.encode(), h.fee));
            }
        }
        let retire: Vec<Epoch> = self
            .held
            .iter()
            .filter(|(e, h)| {
                if sim.executor().consistency_result(**e).is_none() {
                    return false;
                }
                if !self.resubmission {
                    return true;
                }
                // With resubmission on, don't drop the log while our own
                // evidence could still be reorganized out of the chain.
                h.tx.is_some_and(|t| {
                    matches!(sim.status(t), Ok(TxStatus::Finalized { .. }))
                })
            })
            .map(|(e, _)| *e)
            .collect();
        for e in retire {
            let h = self.held.remove(&e).unwrap();
            events.push(SimEvent::ClientEpochRetired {
                tick: now,
                client: addr_hex(self.address()),
                epoch: e,
                ops: h.held_ops,
                held_ticks: now.saturating_sub(h.end_tick),
            });
        }
    }
}

/// Which write a stale read was steered away from, for the race strategy.
#[derive(Clone, Copy, Debug)]
struct RaceTarget {
    stale_write: Nonce,
    fresh_write: Nonce,
}

/// The storage server. One instance serves every client; behavior decides
/// what it logs and attests.
#[derive(Clone, Debug)]
pub struct ServerAgent {
    pub kp: KeyPair,
    pub behavior: ServerBehavior,
    pub base_fee: u64,
    nonces: NonceGen,
    /// What was actually written, keyed by key.
    true_store: BTreeMap<Key, (Nonce, Digest)>,
    /// What non-victim clients are shown under selective omission.
    public_store: BTreeMap<Key, (Nonce, Digest)>,
    victim: Option<Address>,
    log: Vec<Operation>,
    race: Option<RaceTarget>,
    /// Directory state after each sealed epoch, for answering challenges.
    ads_history: BTreeMap<Epoch, AdsState>,
    answered: BTreeSet<u64>,
    rng: ChaCha8Rng,
}

impl ServerAgent {
    pub fn new(kp: KeyPair, behavior: ServerBehavior, seed: u64) -> Self {
        ServerAgent {
            kp,
            behavior,
            base_fee: 10,
            nonces: NonceGen::new(seed ^ 0x5eed),
            true_store: BTreeMap::new(),
            public_store: BTreeMap::new(),
            victim: None,
            log: Vec::new(),
            race: None,
            ads_history: BTreeMap::new(),
            answered: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5e77e7),
        }
    }

    /// Resolves the victim index to an address once the client set exists.
    pub fn bind_victim(&mut self, clients: &[ClientAgent]) {
        if let ServerBehavior::SelectiveOmission { victim } = self.behavior {
            self.victim = clients.get(victim).map(|c| c.address());
        }
    }

    pub fn victim(&self) -> Option<Address> {
        self.victim
    }

    pub fn log_len(&self) -> usize {
        self.log.len()
    }

    fn is_victim(&self, a: &Address) -> bool {
        self.victim.as_ref() == Some(a)
    }

    /// Executes a signed request and returns the completed, server-signed
    /// record. What lands in the server's own log depends on the behavior.
    pub fn serve(&mut self, mut op: Operation) -> Operation {
        match op.kind {
            OpKind::Write => {
                let value = (op.nonce, op.value_digest);
                self.true_store.insert(op.key.clone(), value);
                if !self.is_victim(&op.client.address) {
                    self.public_store.insert(op.key.clone(), value);
                }
            }
            OpKind::Read => {
                let serve_public = matches!(
                    self.behavior,
                    ServerBehavior::SelectiveOmission { .. }
                ) && !self.is_victim(&op.client.address);
                let store = if serve_public {
                    &self.public_store
                } else {
                    &self.true_store
                };
                let mut answer = store
                    .get(&op.key)
                    .map(|(n, d)| Operation::read_digest(*n, *d))
                    .unwrap_or(NOT_FOUND);
                if self.behavior == ServerBehavior::ForkByRaces && self.race.is_none() {
                    if let Some((stale, fresh)) = self.race_candidate(&op.key) {
                        answer = Operation::read_digest(stale.0, stale.1);
                        self.race = Some(RaceTarget {
                            stale_write: stale.0,
                            fresh_write: fresh,
                        });
                    }
                }
                op.value_digest = answer;
            }
        }
        op.server_sig = Some(self.kp.sign(&op.response_message()));
        if !(matches!(self.behavior, ServerBehavior::SelectiveOmission { .. })
            && self.is_victim(&op.client.address))
        {
            self.log.push(op.clone());
        }
        op
    }

    /// Serves a read with a dictated answer instead of a store lookup.
    /// Scripted traces use this to replay recorded serving mistakes, stale
    /// answers included, without modeling what caused them.
    pub fn serve_forced_read(&mut self, mut op: Operation, answer: Digest) -> Operation {
        debug_assert_eq!(op.kind, OpKind::Read);
        op.value_digest = answer;
        op.server_sig = Some(self.kp.sign(&op.response_message()));
        self.log.push(op.clone());
        op
    }

    /// Two same-epoch writes to `key`: the older one's value and the newer
    /// one's nonce, if both exist in the current log.
    fn race_candidate(&self, key: &[u8]) -> Option<((Nonce, Digest), Nonce)> {
        let writes: Vec<&Operation> = self
            .log
            .iter()
            .filter(|o| o.kind == OpKind::Write && o.key == key)
            .collect();
        if writes.len() < 2 {
            return None;
        }
        let stale = writes[writes.len() - 2];
        let fresh = writes[writes.len() - 1];
        if !stale.precedes(fresh) {
            return None;
        }
        Some(((stale.nonce, stale.value_digest), fresh.nonce))
    }

    /// Closes the epoch: applies the behavior to the log copy and signs the
    /// declared total order. `None` means the server stays silent.
    pub fn attest(&mut self, epoch: Epoch) -> Option<Attestation> {
        let mut ops = self.log.clone();
        match self.behavior {
            ServerBehavior::Honest
            | ServerBehavior::SelectiveOmission { .. }
            | ServerBehavior::ForkByRaces
            | ServerBehavior::ForkByChainForks => {}
            ServerBehavior::Unresponsive => return None,
            ServerBehavior::ForgeClientRequest => {
                if !ops.is_empty() {
                    let target = ops[self.rng.random_range(0..ops.len())].client;
                    let t = ops.last().map(|o| o.t_end).unwrap_or(0) + 1;
                    let mut forged = Operation {
                        nonce: self.nonces.next(),
                        client: target,
                        kind: OpKind::Write,
                        key: b"phantom".to_vec(),
                        value_digest: Digest(self.rng.random()),
                        t_begin: t,
                        t_end: t + 1,
                        client_sig: Some(Signature(self.rng.random())),
                        server_sig: None,
                    };
                    forged.server_sig = Some(self.kp.sign(&forged.response_message()));
                    ops.push(forged);
                }
            }
            ServerBehavior::OmitClientOp => {
                if !ops.is_empty() {
                    let i = self.rng.random_range(0..ops.len());
                    ops.remove(i);
                }
            }
            ServerBehavior::ReplayClientOp => {
                if !ops.is_empty() {
                    let i = self.rng.random_range(0..ops.len());
                    let copy = ops[i].clone();
                    ops.insert(i + 1, copy);
                }
            }
            ServerBehavior::TamperTimestamps => {
                if ops.len() > 1 {
                    let i = self.rng.random_range(1..ops.len());
                    ops[i].t_begin = ops[i].t_begin.saturating_sub(1_000);
                    ops[i].t_end = ops[i].t_end.saturating_sub(1_000);
                }
            }
        }
        Some(sign_attestation(&self.kp, epoch, ops, true))
    }

    /// The two halves of the attestation race: the truthful log, and a
    /// variant where the write that outdated the stale read is backdated
    /// and reordered to sit just before the write the read returned.
    pub fn race_views(&self, epoch: Epoch) -> Option<(Attestation, Attestation)> {
        let target = self.race?;
        let truthful = sign_attestation(&self.kp, epoch, self.log.clone(), true);

        let mut ops = self.log.clone();
        let fresh_pos = ops.iter().position(|o| o.nonce == target.fresh_write)?;
        let stale_pos = ops.iter().position(|o| o.nonce == target.stale_write)?;
        let mut fresh = ops.remove(fresh_pos);
        let stale_pos = if fresh_pos < stale_pos { stale_pos - 1 } else { stale_pos };
        fresh.t_begin = ops[stale_pos].t_begin;
        fresh.t_end = ops[stale_pos].t_end;
        ops.insert(stale_pos, fresh);
        Some((truthful, sign_attestation(&self.kp, epoch, ops, true)))
    }

    /// Per-partition views: each group's attestation covers only operations
    /// issued by that group's clients.
    pub fn group_views(&self, epoch: Epoch, groups: &[Vec<Address>]) -> Vec<Attestation> {
        groups
            .iter()
            .map(|members| {
                let ops: Vec<Operation> = self
                    .log
                    .iter()
                    .filter(|o| members.contains(&o.client.address))
                    .cloned()
                    .collect();
                sign_attestation(&self.kp, epoch, ops, true)
            })
            .collect()
    }

    /// Archives the directory state the epoch ends with and clears the
    /// temporary log.
    pub fn seal_epoch(&mut self, epoch: Epoch) {
        let mut ads = AdsState::new();
        for (k, (n, d)) in &self.true_store {
            ads.insert_write(k.clone(), *n, *d);
        }
        self.ads_history.insert(epoch, ads);
        self.log.clear();
        self.race = None;
    }

    pub fn sealed_root(&self, epoch: Epoch) -> Option<Digest> {
        self.ads_history.get(&epoch).map(|a| a.root())
    }

    /// Answers every challenge the contract has open, with proofs built
    /// from the directory state of the epoch before the audited one.
    pub fn answer_challenges(&mut self, sim: &mut ChainSim<ContractState>) {
        if self.behavior == ServerBehavior::Unresponsive {
            return;
        }
        let open = sim.executor().open_challenges();
        for (id, epoch, key) in open {
            if !self.answered.insert(id) {
                continue;
            }
            let empty = AdsState::new();
            let state = match epoch {
                0 => &empty,
                e => self.ads_history.get(&(e - 1)).unwrap_or(&empty),
            };
            let call = ContractCall::AnswerChallenge {
                challenge: id,
                proof: state.prove(&key).encode(),
            };
            sim.submit(self.kp.party, call.encode(), self.base_fee);
        }
    }

    /// Submits an attestation under the server's identity.
    pub fn submit(
        &self,
        sim: &mut ChainSim<ContractState>,
        attestation: Attestation,
        fee: u64,
    ) -> TxId {
        sim.submit(
            self.kp.party,
            ContractCall::AttestServer(attestation).encode(),
            fee,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{ChainParams, ChainSim};
    use crate::consistency::{audit_ordered_tolerant, BaseState, OrderedHistory, VerdictStatus};
    use crate::contract::{
        ContractConfig, ContractState, Outcome, Placement, PlacementConfig,
    };
    use crate::crosscheck::{
        attribute, crosscheck, repair_server_log, verify_server_log, AttackCode,
    };
    use crate::sig::IdentityRegistry;
    use crate::types::Role;

    fn world(
        n: u64,
        server_behavior: ServerBehavior,
        client_behaviors: &[ClientBehavior],
    ) -> (Vec<ClientAgent>, ServerAgent, IdentityRegistry) {
        let mut reg = IdentityRegistry::default();
        let clients: Vec<ClientAgent> = (0..n)
            .map(|i| {
                let kp = KeyPair::from_seed(100 + i, Role::Client);
                reg.register_client(kp.party.address, kp.public);
                let b = client_behaviors
                    .get(i as usize)
                    .copied()
                    .unwrap_or(ClientBehavior::Honest);
                ClientAgent::new(kp, b, 1_000 + i)
            })
            .collect();
        let skp = KeyPair::from_seed(999, Role::Server);
        reg.set_server(skp.party.address, skp.public);
        let mut server = ServerAgent::new(skp, server_behavior, 42);
        server.bind_victim(&clients);
        (clients, server, reg)
    }

    fn wreq(key: &str, d: u8, t: (Tick, Tick)) -> Request {
        Request {
            kind: OpKind::Write,
            key: key.as_bytes().to_vec(),
            value_digest: Digest([d; 32]),
            t_begin: t.0,
            t_end: t.1,
        }
    }

    fn rreq(key: &str, t: (Tick, Tick)) -> Request {
        Request {
            kind: OpKind::Read,
            key: key.as_bytes().to_vec(),
            value_digest: NOT_FOUND,
            t_begin: t.0,
            t_end: t.1,
        }
    }

    fn exchange(
        client: &mut ClientAgent,
        server: &mut ServerAgent,
        req: Request,
    ) -> Operation {
        let op = client.begin(&req);
        let served = server.serve(op);
        let pk = server.kp.public;
        assert!(client.complete(served.clone(), &pk), "honest ack");
        served
    }

    /// Five operations over two keys; every client issues at least two
    /// strictly ordered operations.
    fn traffic(clients: &mut [ClientAgent], server: &mut ServerAgent) {
        exchange(&mut clients[0], server, wreq("k1", 1, (0, 1)));
        exchange(&mut clients[1], server, wreq("k2", 2, (2, 3)));
        exchange(&mut clients[0], server, rreq("k2", (4, 5)));
        exchange(&mut clients[1], server, rreq("k1", (6, 7)));
        exchange(&mut clients[0], server, wreq("k1", 3, (8, 9)));
    }

    fn run_epoch(
        server_behavior: ServerBehavior,
        client_behaviors: &[ClientBehavior],
    ) -> (Vec<Attestation>, Option<Attestation>, IdentityRegistry) {
        let (mut clients, mut server, reg) = world(2, server_behavior, client_behaviors);
        traffic(&mut clients, &mut server);
        let satt = server.attest(0);
        let catts: Vec<Attestation> = clients.iter_mut().map(|c| c.attest(0, 10)).collect();
        (catts, satt, reg)
    }

    #[test]
    fn honest_exchange_is_byte_identical_and_audits_clean() {
        let (catts, satt, reg) = run_epoch(ServerBehavior::Honest, &[]);
        let satt = satt.unwrap();
        assert!(verify_server_log(&satt, &reg, true));
        assert_eq!(satt.ops.len(), 5);

        let refs: Vec<&Attestation> = catts.iter().collect();
        let report = crosscheck(&refs, &satt, 0);
        assert!(report.is_clean(), "{report:?}");
        assert!(attribute(&report, &reg, true).is_empty());

        let verdict = audit_ordered_tolerant(
            &OrderedHistory::new(satt.ops.clone()),
            &BaseState::new(),
        );
        assert_eq!(verdict.status, VerdictStatus::Consistent);
    }

    #[test]
    fn every_dishonest_strategy_lands_its_attack_code() {
        let server_cases = [
            (ServerBehavior::ForgeClientRequest, AttackCode::As1),
            (ServerBehavior::OmitClientOp, AttackCode::As2),
            (ServerBehavior::ReplayClientOp, AttackCode::As3),
            (ServerBehavior::TamperTimestamps, AttackCode::As4),
        ];
        let (honest_catts, honest_satt, _) = run_epoch(ServerBehavior::Honest, &[]);
        let truthful_ops = honest_satt.unwrap().ops;
        let _ = honest_catts;

        for (behavior, expected) in server_cases {
            let (catts, satt, reg) = run_epoch(behavior, &[]);
            let satt = satt.unwrap();
            let refs: Vec<&Attestation> = catts.iter().collect();
            let report = crosscheck(&refs, &satt, 0);
            let attributions = attribute(&report, &reg, true);
            assert!(
                attributions.iter().any(|a| a.code == expected),
                "{behavior:?} should yield {expected:?}, got {attributions:?}"
            );
            assert!(attributions
                .iter()
                .filter(|a| a.code == expected)
                .all(|a| a.accused.map(|p| p.role) == Some(Role::Server)));

            let repaired = repair_server_log(&satt, &attributions).expect("repairable");
            assert_eq!(
                repaired.ops, truthful_ops,
                "{behavior:?} repair must recover the executed history"
            );
        }

        let client_cases = [
            (ClientBehavior::OmitOwnOp, AttackCode::Ac1),
            (ClientBehavior::ForgeServerResponse, AttackCode::Ac2),
            (ClientBehavior::ReplayOwnOp, AttackCode::Ac3),
            (ClientBehavior::InvertOwnOrder, AttackCode::Ac4),
        ];
        for (behavior, expected) in client_cases {
            let (catts, satt, reg) = run_epoch(ServerBehavior::Honest, &[behavior]);
            let satt = satt.unwrap();
            let refs: Vec<&Attestation> = catts.iter().collect();
            let report = crosscheck(&refs, &satt, 0);
            let attributions = attribute(&report, &reg, true);
            let accused_client = catts[0].party;
            assert!(
                attributions
                    .iter()
                    .any(|a| a.code == expected && a.accused == Some(accused_client)),
                "{behavior:?} should pin {expected:?} on the client, got {attributions:?}"
            );
            let repaired = repair_server_log(&satt, &attributions).expect("repairable");
            assert_eq!(repaired.ops, satt.ops, "server log needed no repair");
        }
    }

    #[test]
    fn selective_omission_serves_stale_and_hides_the_victim() {
        let (mut clients, mut server, reg) =
            world(3, ServerBehavior::SelectiveOmission { victim: 0 }, &[]);

        let w1 = exchange(&mut clients[1], &mut server, wreq("k1", 1, (0, 1)));
        let wv = exchange(&mut clients[0], &mut server, wreq("k1", 9, (2, 3)));
        let r_other = exchange(&mut clients[2], &mut server, rreq("k1", (4, 5)));
        let r_victim = exchange(&mut clients[0], &mut server, rreq("k1", (6, 7)));

        assert_eq!(
            r_other.value_digest,
            Operation::read_digest(w1.nonce, Digest([1; 32])),
            "non-victim must see the pre-victim value"
        );
        assert_eq!(
            r_victim.value_digest,
            Operation::read_digest(wv.nonce, Digest([9; 32])),
            "the victim must see its own write"
        );

        let satt = server.attest(0).unwrap();
        assert_eq!(satt.ops.len(), 2, "victim operations are not logged");

        let catts: Vec<Attestation> = clients.iter_mut().map(|c| c.attest(0, 10)).collect();
        let refs: Vec<&Attestation> = catts.iter().collect();
        let report = crosscheck(&refs, &satt, 0);
        assert_eq!(report.client_only.len(), 2);
        let attributions = attribute(&report, &reg, true);
        assert_eq!(
            attributions
                .iter()
                .filter(|a| a.code == AttackCode::As2)
                .count(),
            2
        );

        let repaired = repair_server_log(&satt, &attributions).unwrap();
        let verdict = audit_ordered_tolerant(&repaired, &BaseState::new());
        assert_eq!(verdict.status, VerdictStatus::Inconsistent);
    }

    #[test]
    fn race_views_disagree_about_the_stale_read() {
        let (mut clients, mut server, reg) = world(2, ServerBehavior::ForkByRaces, &[]);

        let w_old = exchange(&mut clients[1], &mut server, wreq("k", 1, (0, 1)));
        exchange(&mut clients[0], &mut server, wreq("k", 2, (2, 3)));
        let r = exchange(&mut clients[1], &mut server, rreq("k", (4, 5)));
        assert_eq!(
            r.value_digest,
            Operation::read_digest(w_old.nonce, Digest([1; 32])),
            "the race strategy serves the outdated value"
        );

        let (truthful, tampered) = server.race_views(0).expect("race armed");
        assert!(verify_server_log(&truthful, &reg, true));
        assert!(verify_server_log(&tampered, &reg, true), "backdating keeps signatures valid");

        let v1 = audit_ordered_tolerant(&OrderedHistory::new(truthful.ops), &BaseState::new());
        assert_eq!(v1.status, VerdictStatus::Inconsistent, "the truth convicts");
        let v2 = audit_ordered_tolerant(&OrderedHistory::new(tampered.ops), &BaseState::new());
        assert_eq!(v2.status, VerdictStatus::Consistent, "the tampered view looks fine");
    }

    #[test]
    fn group_views_split_the_log_by_membership() {
        let (mut clients, mut server, _) = world(2, ServerBehavior::ForkByChainForks, &[]);
        traffic(&mut clients, &mut server);
        let groups = vec![vec![clients[0].address()], vec![clients[1].address()]];
        let views = server.group_views(0, &groups);
        assert_eq!(views.len(), 2);
        assert_eq!(views[0].ops.len(), 3);
        assert_eq!(views[1].ops.len(), 2);
        assert!(views[0].ops.iter().all(|o| o.client.address == clients[0].address()));
        assert!(views[1].ops.iter().all(|o| o.client.address == clients[1].address()));
    }

    fn chain_world(
        config: ContractConfig,
    ) -> (ChainSim<ContractState>, Vec<ClientAgent>, ServerAgent) {
        let (clients, server, reg) = world(2, ServerBehavior::Honest, &[]);
        let sim = ChainSim::new(ChainParams::default(), ContractState::new(config, reg));
        (sim, clients, server)
    }

    #[test]
    fn two_epochs_over_the_chain_with_challenge_heartbeat() {
        let config = ContractConfig {
            placement: PlacementConfig {
                client_log: Placement::OffChain,
                server_log: Placement::OffChain,
                persistent: Placement::OffChain,
            },
            epoch_interval: 48,
            ..ContractConfig::default()
        };
        let schedule = EpochSchedule { interval: 48 };
        let (mut sim, mut clients, mut server) = chain_world(config);
        let mut events = Vec::new();

        exchange(&mut clients[0], &mut server, wreq("k", 1, (5, 6)));
        let satt = server.attest(0).unwrap();
        server.seal_epoch(0);
        server.submit(&mut sim, satt, 10);
        for c in clients.iter_mut() {
            c.attest(0, schedule.end_tick(0));
            c.submit(&mut sim, 0);
        }
        sim.advance_blocks(1);
        for c in clients.iter_mut() {
            c.maintain(&mut sim, &mut events);
        }
        let v0 = sim.executor().consistency_result(0).cloned().unwrap();
        assert_eq!(v0.outcome, Outcome::Consistent);
        assert_eq!(
            server.sealed_root(0),
            Some(sim.executor().ads_root(0)),
            "an honest server's directory matches the contract's"
        );

        exchange(&mut clients[1], &mut server, rreq("k", (50, 51)));
        let satt = server.attest(1).unwrap();
        server.seal_epoch(1);
        server.submit(&mut sim, satt, 10);
        for c in clients.iter_mut() {
            c.attest(1, schedule.end_tick(1));
            c.submit(&mut sim, 1);
        }
        sim.advance_blocks(1);
        assert!(
            sim.executor().consistency_result(1).is_none(),
            "cross-epoch read needs a proof first"
        );
        server.answer_challenges(&mut sim);
        sim.advance_blocks(1);
        let v1 = sim.executor().consistency_result(1).cloned().unwrap();
        assert_eq!(v1.outcome, Outcome::Consistent);

        sim.advance_blocks(sim.params().finality_depth);
        for c in clients.iter_mut() {
            c.maintain(&mut sim, &mut events);
        }
        let retired: Vec<_> = events
            .iter()
            .filter(|e| matches!(e, SimEvent::ClientEpochRetired { .. }))
            .collect();
        assert_eq!(retired.len(), 4, "both clients retired both epochs");
        assert!(clients.iter().all(|c| c.held_epochs().is_empty()));
    }

    #[test]
    fn censored_attestation_is_resubmitted_at_double_fee() {
        let config = ContractConfig {
            epoch_interval: 48,
            ..ContractConfig::default()
        };
        let (mut sim, mut clients, mut server) = chain_world(config);
        let mut events = Vec::new();
        let victim = clients[0].address();

        exchange(&mut clients[0], &mut server, wreq("k", 1, (0, 1)));
        exchange(&mut clients[1], &mut server, wreq("q", 2, (2, 3)));

        sim.censor_next(victim, 1);
        let satt = server.attest(0).unwrap();
        server.submit(&mut sim, satt, 10);
        for c in clients.iter_mut() {
            c.attest(0, 48);
            c.submit(&mut sim, 0);
        }
        sim.advance_blocks(1);
        assert!(
            sim.executor().consistency_result(0).is_none(),
            "audit must wait for the censored client"
        );

        for c in clients.iter_mut() {
            c.maintain(&mut sim, &mut events);
        }
        sim.advance_blocks(1);
        let v = sim.executor().consistency_result(0).cloned().unwrap();
        assert_eq!(v.outcome, Outcome::Consistent);

        let resubmitted = sim
            .events()
            .iter()
            .filter_map(|e| match e {
                SimEvent::TxSubmitted { sender, fee, .. }
                    if *sender == addr_hex(victim) =>
                {
                    Some(*fee)
                }
                _ => None,
            })
            .collect::<Vec<_>>();
        assert_eq!(resubmitted, vec![10, 20], "escalated retry after the drop");

        sim.advance_blocks(sim.params().finality_depth);
        for c in clients.iter_mut() {
            c.maintain(&mut sim, &mut events);
        }
        assert!(clients.iter().all(|c| c.held_epochs().is_empty()));
    }
}
