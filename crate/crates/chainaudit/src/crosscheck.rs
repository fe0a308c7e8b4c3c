//! Log crosscheck, attack attribution, and server-log repair.
//!
//! The contract receives one attestation per client plus the server's
//! declared total order. [`crosscheck`] compares them as multisets keyed by
//! `(nonce, content digest)` and collects every discrepancy. [`attribute`]
//! turns discrepancies into accusations backed by signature evidence, using
//! the fact that each operation was signed twice: the client signed the
//! request before the server saw it, and the server signed the response it
//! produced. A missing or invalid signature therefore pins a discrepancy on
//! one side. [`repair_server_log`] then rebuilds the most plausible history
//! from the surviving dual-signed records so the audit can run on what
//! actually happened rather than on what the attacker submitted.
//!
//! Timestamps are not covered by the signatures; they are the client's local
//! measurements. Matched copies whose intervals diverge beyond the skew
//! tolerance are treated as evidence of a reordering attack, and repair
//! restores the client-attested intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::OrderedHistory;
use crate::sig::{self, IdentityRegistry};
use crate::types::{Attestation, Digest, Nonce, Operation, PartyId, Role, Tick};

/// Attack classes. `AS` codes accuse the server, `AC` codes accuse a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackCode {
    /// Server forged an operation no client requested.
    As1,
    /// Server omitted an operation it served.
    As2,
    /// Server replayed an operation it served once.
    As3,
    /// Server reordered serially executed operations.
    As4,
    /// Client omitted one of her own operations.
    Ac1,
    /// Client forged an operation the server never served.
    Ac2,
    /// Client replayed her own operation.
    Ac3,
    /// Client reordered her own log against her own timestamps.
    Ac4,
    /// Discrepancy detected but not attributable without double signing.
    Unattributed,
}

/// Facts backing an attribution. Every variant embeds the operations in
/// question so the claim re-verifies from the evidence alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Evidence {
    /// In the server log with an invalid or missing client signature.
    ForgedClientSig { op: Operation },
    /// In the server log under a valid client signature, but missing from
    /// the signing client's attestation.
    OmittedByClient { op: Operation },
    /// In a client log with an invalid or missing server signature.
    ForgedServerSig { op: Operation },
    /// In a client log under a valid server signature, but missing from the
    /// server's attestation.
    OmittedByServer { op: Operation },
    /// The same dual-signed record appears `copies` times on one side.
    Replayed { op: Operation, copies: u32 },
    /// Declared earlier although it began after `second` had finished.
    OrderBreak { first: Operation, second: Operation },
    /// Matched copies whose intervals disagree beyond the skew tolerance.
    TimestampDivergence {
        client_copy: Operation,
        server_copy: Operation,
        tolerance: Tick,
    },
    /// A client's own sequence contradicts her own timestamps.
    SequenceInversion { earlier: Operation, later: Operation },
    /// Mismatch observed without double signing; cause unknowable.
    UnattributableMismatch { op: Operation },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub code: AttackCode,
    pub accused: Option<PartyId>,
    pub evidence: Evidence,
}

/// A pair of copies of the same served operation, one from each side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchedPair {
    pub client_copy: Operation,
    pub server_copy: Operation,
}

impl MatchedPair {
    pub fn divergence(&self) -> Tick {
        let db = self.client_copy.t_begin.abs_diff(self.server_copy.t_begin);
        let de = self.client_copy.t_end.abs_diff(self.server_copy.t_end);
        db.max(de)
    }
}

/// Everything the comparison of one epoch's logs produced.
#[derive(Clone, Debug, Default)]
pub struct CrosscheckReport {
    pub matched: Vec<MatchedPair>,
    pub server_only: Vec<Operation>,
    pub client_only: Vec<Operation>,
    pub server_duplicates: Vec<Operation>,
    pub client_duplicates: Vec<Operation>,
    /// Pairs `(first, second)` declared in that order by the server although
    /// `second` finished before `first` began.
    pub order_breaks: Vec<(Operation, Operation)>,
    /// Per-client sequence positions contradicting the client's own
    /// timestamps.
    pub client_sequence_breaks: Vec<(Operation, Operation)>,
    /// Matched pairs whose intervals diverge beyond the tolerance.
    pub timestamp_divergences: Vec<MatchedPair>,
    pub skew_tolerance: Tick,
}

impl CrosscheckReport {
    /// True when the logs agree and the declared order is plausible.
    pub fn is_clean(&self) -> bool {
        self.server_only.is_empty()
            && self.client_only.is_empty()
            && self.server_duplicates.is_empty()
            && self.client_duplicates.is_empty()
            && self.order_breaks.is_empty()
            && self.client_sequence_breaks.is_empty()
            && self.timestamp_divergences.is_empty()
    }
}

/// Per-attestation signature facts, split so the caller can distinguish a
/// bad envelope (reject the submission) from bad inner signatures (store the
/// submission and let attribution deal with it).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LogCheck {
    pub envelope_ok: bool,
    pub locality_ok: bool,
    pub order_flag_ok: bool,
    pub bad_client_sig: Vec<Nonce>,
    pub bad_server_sig: Vec<Nonce>,
}

impl LogCheck {
    /// The strict verdict: everything checks out.
    pub fn all_ok(&self, double_signing: bool) -> bool {
        self.envelope_ok
            && self.locality_ok
            && self.order_flag_ok
            && self.bad_client_sig.is_empty()
            && (!double_signing || self.bad_server_sig.is_empty())
    }

    /// Whether the attestation may enter the contract at all.
    pub fn admissible(&self) -> bool {
        self.envelope_ok && self.locality_ok && self.order_flag_ok
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RepairError {
    #[error("nonce {nonce} carries two different validly dual-signed contents")]
    IrreparableConflict { nonce: Nonce },
}

fn client_sig_valid(op: &Operation, reg: &IdentityRegistry) -> bool {
    match (&op.client_sig, reg.client_key(&op.client.address)) {
        (Some(sig), Some(key)) => sig::verify(&op.request_message(), sig, key),
        _ => false,
    }
}

fn server_sig_valid(op: &Operation, reg: &IdentityRegistry) -> bool {
    match (&op.server_sig, reg.server_key()) {
        (Some(sig), Some(key)) => sig::verify(&op.response_message(), sig, key),
        _ => false,
    }
}

fn envelope_valid(a: &Attestation, reg: &IdentityRegistry) -> bool {
    reg.party_key(&a.party)
        .is_some_and(|key| sig::verify(&crate::codec::attestation_message(a), &a.sig, key))
}

/// Full signature inspection of a client attestation.
pub fn check_client_log(
    a: &Attestation,
    reg: &IdentityRegistry,
    double_signing: bool,
) -> LogCheck {
    let envelope_ok = a.party.role == Role::Client && envelope_valid(a, reg);
    let locality_ok = a.ops.iter().all(|op| op.client == a.party);
    let order_flag_ok = !a.total_order_declared;
    let mut check = LogCheck {
        envelope_ok,
        locality_ok,
        order_flag_ok,
        ..LogCheck::default()
    };
    for op in &a.ops {
        if !client_sig_valid(op, reg) {
            check.bad_client_sig.push(op.nonce);
        }
        if double_signing && !server_sig_valid(op, reg) {
            check.bad_server_sig.push(op.nonce);
        }
    }
    check
}

/// Full signature inspection of the server attestation.
pub fn check_server_log(
    a: &Attestation,
    reg: &IdentityRegistry,
    double_signing: bool,
) -> LogCheck {
    let envelope_ok = a.party.role == Role::Server
        && reg.server_address() == Some(a.party.address)
        && envelope_valid(a, reg);
    let mut check = LogCheck {
        envelope_ok,
        locality_ok: true,
        order_flag_ok: a.total_order_declared,
        ..LogCheck::default()
    };
    for op in &a.ops {
        if !client_sig_valid(op, reg) {
            check.bad_client_sig.push(op.nonce);
        }
        if double_signing && !server_sig_valid(op, reg) {
            check.bad_server_sig.push(op.nonce);
        }
    }
    check
}

/// Strict boolean verification of a client attestation.
pub fn verify_client_log(a: &Attestation, reg: &IdentityRegistry, double_signing: bool) -> bool {
    check_client_log(a, reg, double_signing).all_ok(double_signing)
}

/// Strict boolean verification of the server attestation.
pub fn verify_server_log(a: &Attestation, reg: &IdentityRegistry, double_signing: bool) -> bool {
    check_server_log(a, reg, double_signing).all_ok(double_signing)
}

fn sort_ops(ops: &mut [Operation]) {
    ops.sort_by(|a, b| (a.t_begin, a.nonce).cmp(&(b.t_begin, b.nonce)));
}

/// Compares the union of client logs against the server's declared order.
pub fn crosscheck(
    clients: &[&Attestation],
    server: &Attestation,
    skew_tolerance: Tick,
) -> CrosscheckReport {
    let mut by_identity: BTreeMap<(Nonce, Digest), (Vec<Operation>, Vec<Operation>)> =
        BTreeMap::new();
    for a in clients {
        for op in &a.ops {
            by_identity
                .entry(op.identity())
                .or_default()
                .0
                .push(op.clone());
        }
    }
    for op in &server.ops {
        by_identity
            .entry(op.identity())
            .or_default()
            .1
            .push(op.clone());
    }

    let mut report = CrosscheckReport {
        skew_tolerance,
        ..CrosscheckReport::default()
    };
    for (_, (client_copies, server_copies)) in by_identity {
        report
            .client_duplicates
            .extend(client_copies.iter().skip(1).cloned());
        report
            .server_duplicates
            .extend(server_copies.iter().skip(1).cloned());
        match (client_copies.first(), server_copies.first()) {
            (Some(c), Some(s)) => {
                let pair = MatchedPair {
                    client_copy: c.clone(),
                    server_copy: s.clone(),
                };
                if pair.divergence() > skew_tolerance {
                    report.timestamp_divergences.push(pair.clone());
                }
                report.matched.push(pair);
            }
            (Some(c), None) => report.client_only.push(c.clone()),
            (None, Some(s)) => report.server_only.push(s.clone()),
            (None, None) => unreachable!("identity inserted without a copy"),
        }
    }

    // Pairs whose endpoints are replayed copies are explained by the replay
    // and would double-report it, so the order scans skip them.
    let server_dup: Vec<(Nonce, Digest)> =
        report.server_duplicates.iter().map(|o| o.identity()).collect();
    let client_dup: Vec<(Nonce, Digest)> =
        report.client_duplicates.iter().map(|o| o.identity()).collect();
    for i in 0..server.ops.len() {
        for j in (i + 1)..server.ops.len() {
            if server.ops[j].precedes(&server.ops[i])
                && !server_dup.contains(&server.ops[i].identity())
                && !server_dup.contains(&server.ops[j].identity())
            {
                report
                    .order_breaks
                    .push((server.ops[i].clone(), server.ops[j].clone()));
            }
        }
    }
    for a in clients {
        for i in 0..a.ops.len() {
            for j in (i + 1)..a.ops.len() {
                if a.ops[j].precedes(&a.ops[i])
                    && !client_dup.contains(&a.ops[i].identity())
                    && !client_dup.contains(&a.ops[j].identity())
                {
                    report
                        .client_sequence_breaks
                        .push((a.ops[i].clone(), a.ops[j].clone()));
                }
            }
        }
    }

    sort_ops(&mut report.server_only);
    sort_ops(&mut report.client_only);
    sort_ops(&mut report.server_duplicates);
    sort_ops(&mut report.client_duplicates);
    report
        .matched
        .sort_by(|a, b| (a.client_copy.t_begin, a.client_copy.nonce)
            .cmp(&(b.client_copy.t_begin, b.client_copy.nonce)));
    report
}

/// Maps each discrepancy in the report to an attack code.
///
/// With `double_signed` set, the decision is a table lookup on which of the
/// two signatures exists and verifies. Without it, membership mismatches
/// cannot be pinned on a side and come back [`AttackCode::Unattributed`];
/// ordering and replay facts still attribute, since they need no response
/// signature.
pub fn attribute(
    report: &CrosscheckReport,
    reg: &IdentityRegistry,
    double_signed: bool,
) -> Vec<Attribution> {
    let server_party = reg
        .server_address()
        .map(|a| PartyId::new(a, Role::Server));
    let mut out = Vec::new();

    for op in &report.server_only {
        if client_sig_valid(op, reg) {
            out.push(Attribution {
                code: AttackCode::Ac1,
                accused: Some(op.client),
                evidence: Evidence::OmittedByClient { op: op.clone() },
            });
        } else {
            out.push(Attribution {
                code: AttackCode::As1,
                accused: server_party,
                evidence: Evidence::ForgedClientSig { op: op.clone() },
            });
        }
    }

    for op in &report.client_only {
        if !double_signed {
            out.push(Attribution {
                code: AttackCode::Unattributed,
                accused: None,
                evidence: Evidence::UnattributableMismatch { op: op.clone() },
            });
        } else if server_sig_valid(op, reg) {
            out.push(Attribution {
                code: AttackCode::As2,
                accused: server_party,
                evidence: Evidence::OmittedByServer { op: op.clone() },
            });
        } else {
            out.push(Attribution {
                code: AttackCode::Ac2,
                accused: Some(op.client),
                evidence: Evidence::ForgedServerSig { op: op.clone() },
            });
        }
    }

    let mut grouped: BTreeMap<(Nonce, Digest), (Operation, u32)> = BTreeMap::new();
    for op in &report.server_duplicates {
        let e = grouped.entry(op.identity()).or_insert((op.clone(), 1));
        e.1 += 1;
    }
    for (_, (op, copies)) in grouped {
        out.push(Attribution {
            code: AttackCode::As3,
            accused: server_party,
            evidence: Evidence::Replayed { op, copies },
        });
    }
    let mut grouped: BTreeMap<(Nonce, Digest), (Operation, u32)> = BTreeMap::new();
    for op in &report.client_duplicates {
        let e = grouped.entry(op.identity()).or_insert((op.clone(), 1));
        e.1 += 1;
    }
    for (_, (op, copies)) in grouped {
        out.push(Attribution {
            code: AttackCode::Ac3,
            accused: Some(op.client),
            evidence: Evidence::Replayed { op, copies },
        });
    }

    for (first, second) in &report.order_breaks {
        out.push(Attribution {
            code: AttackCode::As4,
            accused: server_party,
            evidence: Evidence::OrderBreak {
                first: first.clone(),
                second: second.clone(),
            },
        });
    }
    for pair in &report.timestamp_divergences {
        out.push(Attribution {
            code: AttackCode::As4,
            accused: server_party,
            evidence: Evidence::TimestampDivergence {
                client_copy: pair.client_copy.clone(),
                server_copy: pair.server_copy.clone(),
                tolerance: report.skew_tolerance,
            },
        });
    }
    for (earlier, later) in &report.client_sequence_breaks {
        out.push(Attribution {
            code: AttackCode::Ac4,
            accused: Some(earlier.client),
            evidence: Evidence::SequenceInversion {
                earlier: earlier.clone(),
                later: later.clone(),
            },
        });
    }

    out.sort_by_key(|a| (a.code, primary_nonce(&a.evidence)));
    out
}

fn primary_nonce(e: &Evidence) -> Nonce {
    match e {
        Evidence::ForgedClientSig { op }
        | Evidence::OmittedByClient { op }
        | Evidence::ForgedServerSig { op }
        | Evidence::OmittedByServer { op }
        | Evidence::Replayed { op, .. }
        | Evidence::UnattributableMismatch { op } => op.nonce,
        Evidence::OrderBreak { first, .. } => first.nonce,
        Evidence::TimestampDivergence { client_copy, .. } => client_copy.nonce,
        Evidence::SequenceInversion { earlier, .. } => earlier.nonce,
    }
}

/// Rebuilds the audited history from the server attestation and the
/// attributions produced for it.
///
/// Forged entries are dropped, replayed copies deduplicated, omitted
/// dual-signed operations inserted at the position their interval implies
/// (before the first entry beginning after they ended; ties stay behind the
/// concurrent block), tampered intervals restored from the client copies,
/// and, when a reorder was attributed, the sequence is stably re-sorted to
/// respect real time. Client-side attacks leave the server history as is.
pub fn repair_server_log(
    server: &Attestation,
    attributions: &[Attribution],
) -> Result<OrderedHistory, RepairError> {
    let mut drop_identities: Vec<(Nonce, Digest)> = Vec::new();
    let mut inserts: Vec<Operation> = Vec::new();
    let mut restore_ts: BTreeMap<(Nonce, Digest), (Tick, Tick)> = BTreeMap::new();
    let mut resort = false;
    for a in attributions {
        match &a.evidence {
            Evidence::ForgedClientSig { op } => drop_identities.push(op.identity()),
            Evidence::OmittedByServer { op } => inserts.push(op.clone()),
            Evidence::OrderBreak { .. } => resort = true,
            Evidence::TimestampDivergence { client_copy, .. } => {
                restore_ts.insert(
                    client_copy.identity(),
                    (client_copy.t_begin, client_copy.t_end),
                );
                resort = true;
            }
            _ => {}
        }
    }

    let mut seq: Vec<Operation> = Vec::with_capacity(server.ops.len());
    let mut seen: Vec<(Nonce, Digest)> = Vec::new();
    for op in &server.ops {
        let id = op.identity();
        if drop_identities.contains(&id) || seen.contains(&id) {
            continue;
        }
        seen.push(id);
        let mut op = op.clone();
        if let Some((b, e)) = restore_ts.get(&id) {
            op.t_begin = *b;
            op.t_end = *e;
        }
        seq.push(op);
    }

    inserts.sort_by_key(|o| (o.t_begin, o.nonce));
    for op in inserts {
        if seen.contains(&op.identity()) {
            continue;
        }
        seen.push(op.identity());
        let pos = seq
            .iter()
            .position(|other| other.t_begin > op.t_end)
            .unwrap_or(seq.len());
        seq.insert(pos, op);
    }

    if resort {
        seq = stable_realtime_sort(seq);
    }

    let mut by_nonce: BTreeMap<Nonce, &Operation> = BTreeMap::new();
    for op in &seq {
        if let Some(prev) = by_nonce.get(&op.nonce) {
            if prev.content_digest() != op.content_digest() {
                return Err(RepairError::IrreparableConflict { nonce: op.nonce });
            }
        }
        by_nonce.insert(op.nonce, op);
    }

    Ok(OrderedHistory::new(seq))
}

/// Stable topological sort under real-time precedence: repeatedly emit the
/// earliest-positioned operation none of whose unemitted peers strictly
/// precede it. Concurrent runs keep their declared relative order.
fn stable_realtime_sort(ops: Vec<Operation>) -> Vec<Operation> {
    let n = ops.len();
    let mut emitted = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let next = (0..n)
            .find(|&i| {
                !emitted[i]
                    && (0..n).all(|j| emitted[j] || j == i || !ops[j].precedes(&ops[i]))
            })
            .expect("precedence is acyclic");
        emitted[next] = true;
        out.push(ops[next].clone());
    }
    out
}

/// Re-derives an attribution's claim from its own evidence. Test and audit
/// support: a claim that does not survive this check never leaves the
/// pipeline in the first place.
pub fn evidence_verifies(
    attribution: &Attribution,
    clients: &[&Attestation],
    server: &Attestation,
    reg: &IdentityRegistry,
) -> bool {
    let in_server = |op: &Operation| server.ops.iter().any(|o| o.identity() == op.identity());
    let in_clients = |op: &Operation| {
        clients
            .iter()
            .any(|a| a.ops.iter().any(|o| o.identity() == op.identity()))
    };
    match &attribution.evidence {
        Evidence::ForgedClientSig { op } => in_server(op) && !client_sig_valid(op, reg),
        Evidence::OmittedByClient { op } => {
            in_server(op) && client_sig_valid(op, reg) && !in_clients(op)
        }
        Evidence::ForgedServerSig { op } => in_clients(op) && !server_sig_valid(op, reg),
        Evidence::OmittedByServer { op } => {
            in_clients(op) && server_sig_valid(op, reg) && !in_server(op)
        }
        Evidence::Replayed { op, copies } => {
            let side = match attribution.code {
                AttackCode::As3 => server.ops.iter().filter(|o| o.identity() == op.identity()).count(),
                _ => clients
                    .iter()
                    .map(|a| a.ops.iter().filter(|o| o.identity() == op.identity()).count())
                    .sum(),
            };
            side == *copies as usize && *copies >= 2
        }
        Evidence::OrderBreak { first, second } => {
            let fi = server.ops.iter().position(|o| o.identity() == first.identity());
            let si = server.ops.iter().rposition(|o| o.identity() == second.identity());
            matches!((fi, si), (Some(f), Some(s)) if f < s) && second.precedes(first)
        }
        Evidence::TimestampDivergence {
            client_copy,
            server_copy,
            tolerance,
        } => {
            client_copy.identity() == server_copy.identity()
                && MatchedPair {
                    client_copy: client_copy.clone(),
                    server_copy: server_copy.clone(),
                }
                .divergence()
                    > *tolerance
        }
        Evidence::SequenceInversion { earlier, later } => clients.iter().any(|a| {
            let ei = a.ops.iter().position(|o| o.identity() == earlier.identity());
            let li = a.ops.iter().position(|o| o.identity() == later.identity());
            matches!((ei, li), (Some(e), Some(l)) if e < l) && later.precedes(earlier)
        }),
        Evidence::UnattributableMismatch { op } => in_server(op) != in_clients(op),
    }
}
