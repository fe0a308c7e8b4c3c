//! Gas accounting over the event log, operation batching, and the
//! analytical client-cost model.
//!
//! Everything here is pure post-processing: the simulation writes a flat
//! event log, and this module folds it into per-epoch gas series, fee
//! totals, and the per-operation storage-unit measure that the client-side
//! cost comparison is stated in. One cost unit is one operation stored by
//! one client for one epoch.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::chainsim::GasPrices;
use crate::events::SimEvent;
use crate::types::Epoch;

/// Inputs to the analytical model comparing delegated auditing against
/// every client auditing every other client's log locally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientCostParams {
    /// Epoch length in ticks (E).
    pub epoch_ticks: f64,
    /// Ticks between blocks (B).
    pub block_ticks: f64,
    /// Blocks until a transaction is final (F).
    pub finality_blocks: f64,
    /// Average ticks a transaction waits in the mempool (P).
    pub pending_ticks: f64,
    /// Average submissions needed per attestation (r), 1 when nothing is
    /// censored or dropped.
    pub resubmits: f64,
    /// Number of clients (N).
    pub clients: f64,
    /// Operations per client per epoch (M).
    pub ops_per_epoch: f64,
    /// Epochs in the process (T).
    pub epochs: f64,
}

impl ClientCostParams {
    /// Ticks an attestation takes from first submission to finality:
    /// `r * (B * F + P)`.
    pub fn attestation_delay(&self) -> f64 {
        self.resubmits * (self.block_ticks * self.finality_blocks + self.pending_ticks)
    }

    /// Lower bound on the total units a client pays when every client
    /// stores every other client's operations for one epoch: `T * M * N`.
    pub fn client_audit_total(&self) -> f64 {
        self.epochs * self.ops_per_epoch * self.clients
    }
}

/// Predicted per-epoch-per-operation storage units for the two designs:
/// delegated auditing costs `delay / E` (an operation is held only until
/// its attestation is final), while client-side auditing costs at least
/// `N` (every operation is replicated to every client).
pub fn predict_client_cost(p: &ClientCostParams) -> (f64, f64) {
    (p.attestation_delay() / p.epoch_ticks, p.clients)
}

/// Budget arithmetic: how many operations a budget buys at a given
/// currency-per-gas rate and gas-per-operation cost.
pub fn ops_per_budget(budget: f64, price_per_gas: f64, gas_per_op: f64) -> f64 {
    budget / (price_per_gas * gas_per_op)
}

/// One packed transaction produced by [`batch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchTx {
    pub ops: usize,
    pub bytes: u64,
    pub fee: u64,
}

/// Packs operation payloads into transactions of at most `batch_size`
/// operations each. The per-transaction fee is the intrinsic inclusion
/// price, so batching amortizes the flat part across the batch.
pub fn batch(op_bytes: &[u64], batch_size: usize, prices: &GasPrices) -> Vec<BatchTx> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    op_bytes
        .chunks(batch_size)
        .map(|chunk| {
            let bytes: u64 = chunk.iter().sum();
            BatchTx {
                ops: chunk.len(),
                bytes,
                fee: prices.tx_base + bytes * prices.tx_byte,
            }
        })
        .collect()
}

/// Gas and fee totals for one epoch, split by resource class. Class gas is
/// counts multiplied by the price table, so `execution` always equals the
/// sum of the four class columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasBucket {
    pub intrinsic: u64,
    pub execution: u64,
    pub storage_write_gas: u64,
    pub storage_read_gas: u64,
    pub hash_gas: u64,
    pub memory_gas: u64,
    pub fees: u64,
    pub txs: u64,
}

impl GasBucket {
    pub fn total_gas(&self) -> u64 {
        self.intrinsic + self.execution
    }

    fn add(&mut self, other: &GasBucket) {
        self.intrinsic += other.intrinsic;
        self.execution += other.execution;
        self.storage_write_gas += other.storage_write_gas;
        self.storage_read_gas += other.storage_read_gas;
        self.hash_gas += other.hash_gas;
        self.memory_gas += other.memory_gas;
        self.fees += other.fees;
        self.txs += other.txs;
    }
}

/// Everything the reporting layer needs, derived from the event log alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_epoch: BTreeMap<Epoch, GasBucket>,
    /// Gas and fees that could not be attributed to an epoch (rejected
    /// payloads, registrations).
    pub unattributed: GasBucket,
    /// Largest single attestation per epoch, i.e. the full log size when
    /// the server is honest.
    pub attested_ops: BTreeMap<Epoch, u64>,
    /// Operations retired from client temporary logs.
    pub retired_ops: u64,
    /// Sum over retired operations of the ticks each was held past its
    /// epoch boundary.
    pub held_op_ticks: u64,
}

impl CostReport {
    pub fn total(&self) -> GasBucket {
        let mut t = self.unattributed;
        for b in self.per_epoch.values() {
            t.add(b);
        }
        t
    }

    /// Measured storage units per operation per epoch: average hold time
    /// past the epoch boundary, in epochs. `None` until something retired.
    pub fn measured_unit_cost(&self, epoch_ticks: f64) -> Option<f64> {
        if self.retired_ops == 0 {
            return None;
        }
        Some(self.held_op_ticks as f64 / self.retired_ops as f64 / epoch_ticks)
    }

    /// Per-operation execution-plus-intrinsic gas for one epoch.
    pub fn gas_per_op(&self, epoch: Epoch) -> Option<f64> {
        let bucket = self.per_epoch.get(&epoch)?;
        let ops = *self.attested_ops.get(&epoch)?;
        if ops == 0 {
            return None;
        }
        Some(bucket.total_gas() as f64 / ops as f64)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("event log references transaction {tx} before its submission")]
    IncompleteLog { tx: u64 },
    #[error("gas record for transaction {tx} disagrees with the price table")]
    PriceMismatch { tx: u64 },
}

/// Folds an event log into a [`CostReport`]. `prices` must be the table the
/// run used; the fold recomputes class gas from the raw counters and
/// refuses logs whose charged totals disagree.
pub fn aggregate(events: &[SimEvent], prices: &GasPrices) -> Result<CostReport, CostError> {
    let mut report = CostReport::default();
    let mut fees: BTreeMap<u64, u64> = BTreeMap::new();
    let mut epoch_of_tx: BTreeMap<u64, Epoch> = BTreeMap::new();

    for event in events {
        match event {
            SimEvent::TxSubmitted { tx, fee, .. } => {
                fees.insert(*tx, *fee);
            }
            SimEvent::TxIncluded { tx, .. }
            | SimEvent::TxFinalized { tx, .. }
            | SimEvent::TxDropped { tx, .. } => {
                if !fees.contains_key(tx) {
                    return Err(CostError::IncompleteLog { tx: *tx });
                }
            }
            SimEvent::GasUsed {
                tx,
                epoch,
                intrinsic,
                execution,
                storage_writes,
                storage_reads,
                hash_words,
                memory_words,
                ..
            } => {
                // Transaction id 0 carries contract work finished at a
                // block boundary rather than inside a submitted payload.
                if *tx != 0 && !fees.contains_key(tx) {
                    return Err(CostError::IncompleteLog { tx: *tx });
                }
                let bucket = GasBucket {
                    intrinsic: *intrinsic,
                    execution: *execution,
                    storage_write_gas: storage_writes * prices.storage_word_write,
                    storage_read_gas: storage_reads * prices.storage_word_read,
                    hash_gas: hash_words * prices.hash_per_word,
                    memory_gas: memory_words * prices.memory_word,
                    fees: 0,
                    txs: u64::from(*tx != 0),
                };
                let class_sum = bucket.storage_write_gas
                    + bucket.storage_read_gas
                    + bucket.hash_gas
                    + bucket.memory_gas;
                if class_sum != *execution {
                    return Err(CostError::PriceMismatch { tx: *tx });
                }
                if let Some(e) = epoch {
                    epoch_of_tx.insert(*tx, *e);
                    report.per_epoch.entry(*e).or_default().add(&bucket);
                } else {
                    report.unattributed.add(&bucket);
                }
            }
            SimEvent::AttestationAccepted { epoch, ops, .. } => {
                let slot = report.attested_ops.entry(*epoch).or_default();
                *slot = (*slot).max(*ops);
            }
            SimEvent::ClientEpochRetired {
                ops, held_ticks, ..
            } => {
                report.retired_ops += ops;
                report.held_op_ticks += ops * held_ticks;
            }
            _ => {}
        }
    }

    // Fees are paid on inclusion; attribute each to the epoch its payload
    // touched, if any.
    for event in events {
        if let SimEvent::TxIncluded { tx, .. } = event {
            let fee = fees[tx];
            match epoch_of_tx.get(tx) {
                Some(e) => {
                    let b = report.per_epoch.entry(*e).or_default();
                    b.fees += fee;
                }
                None => report.unattributed.fees += fee,
            }
        }
    }
    Ok(report)
}
