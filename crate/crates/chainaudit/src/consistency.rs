//! Linearizability audit of storage histories.
//!
//! A history is consistent when some total order of its operations respects
//! real time (an operation that finished strictly before another began stays
//! in front) and serves every read from the nearest preceding write of its
//! key, or returns [`NOT_FOUND`] when there is none. Operations whose
//! intervals merely touch are treated as concurrent.
//!
//! Three entry points cover the three jobs in the pipeline:
//!
//! * [`audit_ordered`] checks one declared order and enumerates every
//!   violation in it.
//! * [`oracle_linearizable`] brute-forces all real-time-compatible
//!   permutations. It exists as an independent yardstick for the other two
//!   and deliberately shares no search logic with them.
//! * [`find_consistent_order`] is what a rational server runs: exact up to
//!   [`DEFAULT_ORACLE_BOUND`] operations, a greedy sweep past it. The sweep
//!   can miss orders for adversarial interleavings, so a returned order is
//!   always validated before it leaves this function; `None` means "none
//!   found", never "none exists", above the bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Digest, Key, Nonce, OpKind, Operation, Tick, NOT_FOUND};

/// Largest history the exhaustive searches accept.
pub const DEFAULT_ORACLE_BOUND: usize = 8;

/// A history together with a declared total order (the vector order).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct OrderedHistory {
    pub ops: Vec<Operation>,
}

impl OrderedHistory {
    pub fn new(ops: Vec<Operation>) -> Self {
        OrderedHistory { ops }
    }

    pub fn nonces(&self) -> Vec<Nonce> {
        self.ops.iter().map(|o| o.nonce).collect()
    }
}

/// Latest write per key carried over from previous epochs.
pub type BaseState = BTreeMap<Key, BaseWrite>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseWrite {
    pub nonce: Nonce,
    pub value_digest: Digest,
}

impl BaseWrite {
    /// Digest a fresh read of this write must carry.
    pub fn read_digest(&self) -> Digest {
        Operation::read_digest(self.nonce, self.value_digest)
    }
}

/// What a read actually returned, as far as the audit could resolve it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnedValue {
    NotFound,
    Write(Nonce),
    Unresolved(Digest),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// A read that did not return the nearest preceding write of its key.
    StaleRead {
        read: Nonce,
        expected: Option<Nonce>,
        returned: ReturnedValue,
    },
    /// A declared pair that contradicts real time: `first` was declared
    /// earlier yet began only after `second` had already finished.
    RealTimeOrderBreak {
        first: Nonce,
        second: Nonce,
        first_interval: (Tick, Tick),
        second_interval: (Tick, Tick),
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Consistent,
    Inconsistent,
}

/// Result of auditing one declared order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn consistent() -> Self {
        Verdict {
            status: VerdictStatus::Consistent,
            violations: Vec::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.status == VerdictStatus::Consistent
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuditError {
    #[error("nonce {0} appears more than once in the history")]
    DuplicateNonce(Nonce),
    #[error("read {read} returned a digest that matches no write in scope")]
    MalformedRead { read: Nonce, digest: Digest },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("history of {len} operations exceeds the oracle bound {bound}")]
    BoundExceeded { len: usize, bound: usize },
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// How [`audit_ordered_from`] treats a read digest it cannot resolve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MalformedPolicy {
    Reject,
    AsViolation,
}

/// Audits a declared order against an empty initial store.
pub fn audit_ordered(history: &OrderedHistory) -> Result<Verdict, AuditError> {
    audit_ordered_from(history, &BaseState::new())
}

/// Audits a declared order given the latest writes left by earlier epochs.
pub fn audit_ordered_from(
    history: &OrderedHistory,
    base: &BaseState,
) -> Result<Verdict, AuditError> {
    audit_inner(history, base, MalformedPolicy::Reject)
}

/// Variant for audits of attested data: an unresolvable read digest becomes
/// a violation instead of an error, so a forged result cannot stall the
/// pipeline that is trying to flag it.
pub fn audit_ordered_tolerant(history: &OrderedHistory, base: &BaseState) -> Verdict {
    audit_inner(history, base, MalformedPolicy::AsViolation)
        .expect("tolerant audit returns violations, not errors")
}

fn audit_inner(
    history: &OrderedHistory,
    base: &BaseState,
    policy: MalformedPolicy,
) -> Result<Verdict, AuditError> {
    let ops = &history.ops;
    {
        let mut seen = ops.iter().map(|o| o.nonce).collect::<Vec<_>>();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            if policy == MalformedPolicy::Reject {
                return Err(AuditError::DuplicateNonce(w[0]));
            }
        }
    }

    let mut violations = Vec::new();

    // Real-time check over every declared pair.
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            if ops[j].precedes(&ops[i]) {
                violations.push(Violation::RealTimeOrderBreak {
                    first: ops[i].nonce,
                    second: ops[j].nonce,
                    first_interval: ops[i].interval(),
                    second_interval: ops[j].interval(),
                });
            }
        }
    }

    // Freshness check along the declared order.
    let mut last_write: BTreeMap<&[u8], BaseWrite> = base
        .iter()
        .map(|(k, w)| (k.as_slice(), *w))
        .collect();
    // Digests of every write in scope, for naming the write a stale read
    // actually returned.
    let mut source_by_digest: BTreeMap<Digest, Nonce> = base
        .values()
        .map(|w| (w.read_digest(), w.nonce))
        .collect();
    for op in ops.iter().filter(|o| o.kind == OpKind::Write) {
        source_by_digest.insert(
            Operation::read_digest(op.nonce, op.value_digest),
            op.nonce,
        );
    }

    for op in ops {
        match op.kind {
            OpKind::Write => {
                last_write.insert(
                    op.key.as_slice(),
                    BaseWrite {
                        nonce: op.nonce,
                        value_digest: op.value_digest,
                    },
                );
            }
            OpKind::Read => {
                let expected = last_write.get(op.key.as_slice()).copied();
                let fresh = match expected {
                    Some(w) => op.value_digest == w.read_digest(),
                    None => op.value_digest == NOT_FOUND,
                };
                if fresh {
                    continue;
                }
                let returned = if op.value_digest == NOT_FOUND {
                    ReturnedValue::NotFound
                } else if let Some(n) = source_by_digest.get(&op.value_digest) {
                    ReturnedValue::Write(*n)
                } else {
                    if policy == MalformedPolicy::Reject {
                        return Err(AuditError::MalformedRead {
                            read: op.nonce,
                            digest: op.value_digest,
                        });
                    }
                    ReturnedValue::Unresolved(op.value_digest)
                };
                violations.push(Violation::StaleRead {
                    read: op.nonce,
                    expected: expected.map(|w| w.nonce),
                    returned,
                });
            }
        }
    }

    let status = if violations.is_empty() {
        VerdictStatus::Consistent
    } else {
        VerdictStatus::Inconsistent
    };
    Ok(Verdict { status, violations })
}

/// Oracle answer: whether any valid order exists, and one witness if so.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    pub linearizable: bool,
    pub witness: Option<Vec<Nonce>>,
}

/// Brute-force linearizability over an empty initial store.
pub fn oracle_linearizable(
    ops: &[Operation],
    bound: usize,
) -> Result<OracleReport, OracleError> {
    oracle_linearizable_from(ops, &BaseState::new(), bound)
}

/// Brute-force linearizability check.
///
/// Enumerates every permutation compatible with real-time precedence and
/// runs a plain sequential scan over each candidate. Kept intentionally
/// naive; correctness here anchors the cleverer searches elsewhere.
pub fn oracle_linearizable_from(
    ops: &[Operation],
    base: &BaseState,
    bound: usize,
) -> Result<OracleReport, OracleError> {
    if ops.len() > bound {
        return Err(OracleError::BoundExceeded {
            len: ops.len(),
            bound,
        });
    }
    {
        let mut nonces: Vec<Nonce> = ops.iter().map(|o| o.nonce).collect();
        nonces.sort_unstable();
        if let Some(w) = nonces.windows(2).find(|w| w[0] == w[1]) {
            return Err(OracleError::Audit(AuditError::DuplicateNonce(w[0])));
        }
    }

    let n = ops.len();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let found = permute(ops, base, &mut order, &mut used);
    Ok(OracleReport {
        linearizable: found.is_some(),
        witness: found.map(|idx| idx.iter().map(|&i| ops[i].nonce).collect()),
    })
}

fn permute(
    ops: &[Operation],
    base: &BaseState,
    order: &mut Vec<usize>,
    used: &mut [bool],
) -> Option<Vec<usize>> {
    if order.len() == ops.len() {
        if scan_is_consistent(ops, base, order) {
            return Some(order.clone());
        }
        return None;
    }
    for i in 0..ops.len() {
        if used[i] {
            continue;
        }
        // Real-time pruning only: an operation may not be placed while an
        // unplaced operation strictly precedes it.
        let blocked = (0..ops.len())
            .any(|j| !used[j] && j != i && ops[j].precedes(&ops[i]));
        if blocked {
            continue;
        }
        used[i] = true;
        order.push(i);
        if let Some(hit) = permute(ops, base, order, used) {
            return Some(hit);
        }
        order.pop();
        used[i] = false;
    }
    None
}

fn scan_is_consistent(ops: &[Operation], base: &BaseState, order: &[usize]) -> bool {
    let mut last: BTreeMap<&[u8], Digest> = base
        .iter()
        .map(|(k, w)| (k.as_slice(), w.read_digest()))
        .collect();
    for &i in order {
        let op = &ops[i];
        match op.kind {
            OpKind::Write => {
                last.insert(
                    op.key.as_slice(),
                    Operation::read_digest(op.nonce, op.value_digest),
                );
            }
            OpKind::Read => {
                let want = last.get(op.key.as_slice()).copied().unwrap_or(NOT_FOUND);
                if op.value_digest != want {
                    return false;
                }
            }
        }
    }
    true
}

/// Searches for a consistent total order of an unordered operation set.
///
/// Exact (backtracking with per-key freshness state) while the set fits the
/// bound. Past the bound, a greedy sweep sorts by begin tick and pulls each
/// read's matching write in front of it when precedence allows. Any
/// candidate is audited before being returned.
pub fn find_consistent_order(
    ops: &[Operation],
    base: &BaseState,
    bound: usize,
) -> Option<OrderedHistory> {
    let candidate = if ops.len() <= bound {
        exact_search(ops, base)
    } else {
        greedy_order(ops)
    }?;
    let history = OrderedHistory::new(candidate);
    match audit_ordered_from(&history, base) {
        Ok(v) if v.is_consistent() => Some(history),
        _ => None,
    }
}

fn exact_search(ops: &[Operation], base: &BaseState) -> Option<Vec<Operation>> {
    #[derive(Clone)]
    struct Frame {
        placed: Vec<usize>,
        last: BTreeMap<Vec<u8>, Digest>,
    }

    fn step(ops: &[Operation], used: &mut [bool], frame: &mut Frame) -> bool {
        if frame.placed.len() == ops.len() {
            return true;
        }
        for i in 0..ops.len() {
            if used[i] {
                continue;
            }
            if (0..ops.len()).any(|j| !used[j] && j != i && ops[j].precedes(&ops[i])) {
                continue;
            }
            let op = &ops[i];
            let prev = match op.kind {
                OpKind::Write => Some(frame.last.insert(
                    op.key.clone(),
                    Operation::read_digest(op.nonce, op.value_digest),
                )),
                OpKind::Read => {
                    let want = frame.last.get(&op.key).copied().unwrap_or(NOT_FOUND);
                    if op.value_digest != want {
                        continue;
                    }
                    None
                }
            };
            used[i] = true;
            frame.placed.push(i);
            if step(ops, used, frame) {
                return true;
            }
            frame.placed.pop();
            used[i] = false;
            if op.kind == OpKind::Write {
                match prev.expect("write saved previous entry") {
                    Some(d) => frame.last.insert(op.key.clone(), d),
                    None => frame.last.remove(&op.key),
                };
            }
        }
        false
    }

    let mut used = vec![false; ops.len()];
    let mut frame = Frame {
        placed: Vec::new(),
        last: base
            .iter()
            .map(|(k, w)| (k.clone(), w.read_digest()))
            .collect(),
    };
    if step(ops, &mut used, &mut frame) {
        Some(frame.placed.iter().map(|&i| ops[i].clone()).collect())
    } else {
        None
    }
}

fn greedy_order(ops: &[Operation]) -> Option<Vec<Operation>> {
    let mut sorted: Vec<Operation> = ops.to_vec();
    sorted.sort_by(|a, b| (a.t_begin, a.nonce).cmp(&(b.t_begin, b.nonce)));

    // Where each read wants its source write.
    let mut want_before: BTreeMap<Nonce, Digest> = BTreeMap::new();
    for op in &sorted {
        if op.kind == OpKind::Read && op.value_digest != NOT_FOUND {
            want_before.insert(op.nonce, op.value_digest);
        }
    }
    let digest_of = |w: &Operation| Operation::read_digest(w.nonce, w.value_digest);

    // Sweep: when a read appears before the write it returned and the two
    // are concurrent, hoist the write directly in front of the read.
    let mut out: Vec<Operation> = Vec::with_capacity(sorted.len());
    let mut pending: Vec<Operation> = sorted;
    while !pending.is_empty() {
        let op = pending.remove(0);
        if let Some(want) = want_before.get(&op.nonce).copied() {
            if let Some(pos) = pending
                .iter()
                .position(|w| w.kind == OpKind::Write && digest_of(w) == want)
            {
                if !op.precedes(&pending[pos]) {
                    let w = pending.remove(pos);
                    out.push(w);
                }
            }
        }
        out.push(op);
    }
    Some(out)
}
