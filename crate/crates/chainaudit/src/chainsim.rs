//! Deterministic single-process blockchain simulator.
//!
//! Time is a logical tick counter. One logical miner produces a block per
//! fork at fixed boundaries; transactions wait in per-fork mempools and are
//! packed by fee priority. The simulator owns one executor instance per
//! fork, so contract state forks and heals together with the chain: on
//! partition the executor is cloned into each side, on heal the losing
//! side's state is discarded and its included transactions return to the
//! winning mempool.
//!
//! Everything observable is pushed into the event log: submissions,
//! inclusions, per-transaction gas splits, drops, partitions, heals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{addr_hex, SimEvent};
use crate::types::{Address, Epoch, PartyId, Tick};

pub type TxId = u64;
pub type ForkId = u32;

/// Per-unit gas prices. The relative order matters more than the absolute
/// numbers: persistent storage writes dwarf hashing, hashing dwarfs calldata
/// bytes, and reads and scratch memory are near-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasPrices {
    pub tx_base: u64,
    pub tx_byte: u64,
    pub storage_word_write: u64,
    pub storage_word_read: u64,
    pub hash_per_word: u64,
    pub memory_word: u64,
}

impl Default for GasPrices {
    fn default() -> Self {
        GasPrices {
            tx_base: 21_000,
            tx_byte: 16,
            storage_word_write: 20_000,
            storage_word_read: 4,
            hash_per_word: 600,
            memory_word: 3,
        }
    }
}

impl GasPrices {
    /// Cost of getting a payload of `len` bytes into a block at all.
    pub fn intrinsic(&self, len: usize) -> u64 {
        self.tx_base + len as u64 * self.tx_byte
    }
}

/// Execution-side resource counter, charged by the contract as it runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasMeter {
    pub storage_writes: u64,
    pub storage_reads: u64,
    pub hash_words: u64,
    pub memory_words: u64,
}

impl GasMeter {
    pub fn storage_write(&mut self, words: u64) {
        self.storage_writes += words;
    }

    pub fn storage_read(&mut self, words: u64) {
        self.storage_reads += words;
    }

    pub fn hash(&mut self, words: u64) {
        self.hash_words += words;
    }

    pub fn memory(&mut self, words: u64) {
        self.memory_words += words;
    }

    pub fn add(&mut self, other: &GasMeter) {
        self.storage_writes += other.storage_writes;
        self.storage_reads += other.storage_reads;
        self.hash_words += other.hash_words;
        self.memory_words += other.memory_words;
    }

    pub fn execution_gas(&self, p: &GasPrices) -> u64 {
        self.storage_writes * p.storage_word_write
            + self.storage_reads * p.storage_word_read
            + self.hash_words * p.hash_per_word
            + self.memory_words * p.memory_word
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Ticks between block boundaries.
    pub block_interval: Tick,
    /// Intrinsic-gas budget per block; packing stops charging against it.
    pub block_capacity_gas: u64,
    /// Blocks on top before an inclusion is final.
    pub finality_depth: u64,
    /// Blocks a transaction must have waited before fee pressure may drop it.
    pub drop_window: u64,
    /// Mempool size above which fee pressure starts dropping.
    pub mempool_soft_cap: usize,
    pub prices: GasPrices,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            block_interval: 12,
            block_capacity_gas: 10_000_000,
            finality_depth: 2,
            drop_window: 10,
            mempool_soft_cap: 1_000,
            prices: GasPrices::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub id: TxId,
    pub sender: PartyId,
    pub payload: Vec<u8>,
    pub fee: u64,
    pub submitted_at: Tick,
    pub submitted_height: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxStatus {
    Pending,
    Included { fork: ForkId, height: u64 },
    Finalized { height: u64 },
    Dropped,
}

/// What executing one transaction cost and which epoch to book it under.
#[derive(Clone, Debug, Default)]
pub struct ExecReport {
    pub meter: GasMeter,
    pub epoch: Option<Epoch>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockCtx {
    pub tick: Tick,
    pub height: u64,
    pub fork: ForkId,
    pub prices: GasPrices,
}

/// The state machine blocks are executed against. Cloning must produce an
/// independent copy; forks rely on it.
pub trait TxExecutor: Clone {
    fn execute(
        &mut self,
        tx: &Transaction,
        ctx: BlockCtx,
        events: &mut Vec<SimEvent>,
    ) -> ExecReport;

    /// Called once per mined block after its transactions ran.
    fn end_block(&mut self, ctx: BlockCtx, events: &mut Vec<SimEvent>);
}

/// Executor that does nothing; useful for pure chain-behavior tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullExecutor;

impl TxExecutor for NullExecutor {
    fn execute(&mut self, _: &Transaction, _: BlockCtx, _: &mut Vec<SimEvent>) -> ExecReport {
        ExecReport::default()
    }

    fn end_block(&mut self, _: BlockCtx, _: &mut Vec<SimEvent>) {}
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub fork: ForkId,
    pub height: u64,
    pub tick: Tick,
    pub txs: Vec<TxId>,
    pub inclusion_gas: u64,
}

#[derive(Clone, Debug)]
pub struct PartitionGroup {
    pub members: Vec<Address>,
    /// Blocks this side mines per boundary while partitioned.
    pub miner_share: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain is already partitioned")]
    PartitionWhilePartitioned,
    #[error("chain is not partitioned")]
    NoPartition,
    #[error("unknown transaction {0}")]
    UnknownTx(TxId),
    #[error("unknown fork {0}")]
    UnknownFork(ForkId),
    #[error("partition needs at least two groups")]
    EmptyPartition,
}

#[derive(Clone, Debug)]
struct TxRecord {
    tx: Transaction,
    status: TxStatus,
}

#[derive(Clone, Debug)]
struct ForkState {
    mempool: Vec<TxId>,
    height: u64,
    miner_share: u32,
    members: Option<Vec<Address>>,
    blocks: Vec<Block>,
}

pub struct ChainSim<E: TxExecutor> {
    params: ChainParams,
    now: Tick,
    next_boundary: Tick,
    forks: BTreeMap<ForkId, ForkState>,
    next_fork_id: ForkId,
    partition_base: Option<u64>,
    txs: BTreeMap<TxId, TxRecord>,
    next_tx_id: TxId,
    executors: BTreeMap<ForkId, E>,
    finalized_up_to: u64,
    censored: Vec<(Address, u32)>,
    events: Vec<SimEvent>,
}

impl<E: TxExecutor> ChainSim<E> {
    pub fn new(params: ChainParams, executor: E) -> Self {
        let genesis = ForkState {
            mempool: Vec::new(),
            height: 0,
            miner_share: 1,
            members: None,
            blocks: Vec::new(),
        };
        let next_boundary = params.block_interval;
        ChainSim {
            params,
            now: 0,
            next_boundary,
            forks: BTreeMap::from([(0, genesis)]),
            next_fork_id: 1,
            partition_base: None,
            txs: BTreeMap::new(),
            next_tx_id: 1,
            executors: BTreeMap::from([(0, executor)]),
            finalized_up_to: 0,
            censored: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn is_partitioned(&self) -> bool {
        self.partition_base.is_some()
    }

    pub fn fork_ids(&self) -> Vec<ForkId> {
        self.forks.keys().copied().collect()
    }

    /// Height of the named fork, or of the sole fork when healthy.
    pub fn height(&self) -> u64 {
        self.forks.values().map(|f| f.height).max().unwrap_or(0)
    }

    pub fn height_of(&self, fork: ForkId) -> Result<u64, ChainError> {
        self.forks
            .get(&fork)
            .map(|f| f.height)
            .ok_or(ChainError::UnknownFork(fork))
    }

    /// The executor whose state would survive a heal right now.
    pub fn executor(&self) -> &E {
        let id = self.leading_fork();
        &self.executors[&id]
    }

    pub fn executor_on(&self, fork: ForkId) -> Result<&E, ChainError> {
        self.executors.get(&fork).ok_or(ChainError::UnknownFork(fork))
    }

    fn leading_fork(&self) -> ForkId {
        *self
            .forks
            .iter()
            .max_by(|(ida, a), (idb, b)| a.height.cmp(&b.height).then(idb.cmp(ida)))
            .map(|(id, _)| id)
            .expect("at least one fork")
    }

    fn fork_for_sender(&self, sender: Address) -> ForkId {
        let mut fallback = *self.forks.keys().next().expect("at least one fork");
        for (id, f) in &self.forks {
            match &f.members {
                None => return *id,
                Some(m) if m.contains(&sender) => return *id,
                Some(_) => {
                    fallback = fallback.min(*id);
                }
            }
        }
        fallback
    }

    /// Queues a transaction in the submitter's partition. A censorship
    /// script may swallow it instead; the submitter cannot tell at
    /// submission time either way.
    pub fn submit(&mut self, sender: PartyId, payload: Vec<u8>, fee: u64) -> TxId {
        let id = self.next_tx_id;
        self.next_tx_id += 1;
        let fork = self.fork_for_sender(sender.address);
        let tx = Transaction {
            id,
            sender,
            payload,
            fee,
            submitted_at: self.now,
            submitted_height: self.forks[&fork].height,
        };
        self.events.push(SimEvent::TxSubmitted {
            tick: self.now,
            tx: id,
            sender: addr_hex(sender.address),
            fork,
            fee,
            bytes: tx.payload.len() as u64,
        });

        if let Some(slot) = self
            .censored
            .iter_mut()
            .find(|(a, n)| *a == sender.address && *n > 0)
        {
            slot.1 -= 1;
            self.txs.insert(id, TxRecord { tx, status: TxStatus::Dropped });
            self.events.push(SimEvent::TxDropped {
                tick: self.now,
                tx: id,
                reason: "censored".into(),
            });
            return id;
        }

        self.txs.insert(id, TxRecord { tx, status: TxStatus::Pending });
        self.forks.get_mut(&fork).unwrap().mempool.push(id);
        id
    }

    /// Queues a transaction on one specific fork, bypassing sender routing.
    /// A partitioned party that can still reach both sides of the network
    /// (the storage server, in the scenarios that matter) uses this to tell
    /// each side a different story.
    pub fn submit_on(
        &mut self,
        fork: ForkId,
        sender: PartyId,
        payload: Vec<u8>,
        fee: u64,
    ) -> Result<TxId, ChainError> {
        if !self.forks.contains_key(&fork) {
            return Err(ChainError::UnknownFork(fork));
        }
        let id = self.next_tx_id;
        self.next_tx_id += 1;
        let tx = Transaction {
            id,
            sender,
            payload,
            fee,
            submitted_at: self.now,
            submitted_height: self.forks[&fork].height,
        };
        self.events.push(SimEvent::TxSubmitted {
            tick: self.now,
            tx: id,
            sender: addr_hex(sender.address),
            fork,
            fee,
            bytes: tx.payload.len() as u64,
        });
        if let Some(slot) = self
            .censored
            .iter_mut()
            .find(|(a, n)| *a == sender.address && *n > 0)
        {
            slot.1 -= 1;
            self.txs.insert(id, TxRecord { tx, status: TxStatus::Dropped });
            self.events.push(SimEvent::TxDropped {
                tick: self.now,
                tx: id,
                reason: "censored".into(),
            });
            return Ok(id);
        }
        self.txs.insert(id, TxRecord { tx, status: TxStatus::Pending });
        self.forks.get_mut(&fork).unwrap().mempool.push(id);
        Ok(id)
    }

    /// The next `count` submissions from `sender` vanish without inclusion.
    pub fn censor_next(&mut self, sender: Address, count: u32) {
        self.censored.push((sender, count));
    }

    pub fn status(&self, tx: TxId) -> Result<TxStatus, ChainError> {
        self.txs
            .get(&tx)
            .map(|r| r.status)
            .ok_or(ChainError::UnknownTx(tx))
    }

    pub fn transaction(&self, tx: TxId) -> Result<&Transaction, ChainError> {
        self.txs.get(&tx).map(|r| &r.tx).ok_or(ChainError::UnknownTx(tx))
    }

    pub fn take_events(&mut self) -> Vec<SimEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    /// Splits the chain. Parties named in a group submit to that side;
    /// parties named nowhere follow the first group. Pending transactions
    /// are re-routed by their sender.
    pub fn partition(&mut self, groups: &[PartitionGroup]) -> Result<Vec<ForkId>, ChainError> {
        if self.partition_base.is_some() {
            return Err(ChainError::PartitionWhilePartitioned);
        }
        if groups.len() < 2 {
            return Err(ChainError::EmptyPartition);
        }
        let (base_id, base) = {
            let (id, f) = self.forks.iter().next().expect("one fork");
            (*id, f.clone())
        };
        let executor = self.executors[&base_id].clone();
        self.partition_base = Some(base.height);
        self.forks.clear();
        self.executors.clear();

        let mut ids = Vec::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            let id = if i == 0 {
                base_id
            } else {
                let id = self.next_fork_id;
                self.next_fork_id += 1;
                id
            };
            self.forks.insert(
                id,
                ForkState {
                    mempool: Vec::new(),
                    height: base.height,
                    miner_share: g.miner_share.max(1),
                    members: Some(g.members.clone()),
                    blocks: base.blocks.clone(),
                },
            );
            self.executors.insert(id, executor.clone());
            ids.push(id);
        }
        for txid in base.mempool {
            let sender = self.txs[&txid].tx.sender.address;
            let fork = self.fork_for_sender(sender);
            self.forks.get_mut(&fork).unwrap().mempool.push(txid);
        }
        self.events.push(SimEvent::PartitionStarted {
            tick: self.now,
            forks: ids.len() as u64,
        });
        Ok(ids)
    }

    /// Ends the partition: the longest fork wins (ties go to the lowest
    /// id), losing forks' included transactions return to pending, and the
    /// losing executor states are discarded.
    pub fn heal(&mut self) -> Result<ForkId, ChainError> {
        let base = self.partition_base.take().ok_or(ChainError::NoPartition)?;
        let winner = *self
            .forks
            .iter()
            .max_by(|(ida, a), (idb, b)| a.height.cmp(&b.height).then(idb.cmp(ida)))
            .map(|(id, _)| id)
            .expect("at least one fork");

        let losers: Vec<ForkId> = self.forks.keys().copied().filter(|id| *id != winner).collect();
        let mut returned: Vec<TxId> = Vec::new();
        for id in losers {
            let fork = self.forks.remove(&id).expect("loser exists");
            self.executors.remove(&id);
            for b in fork.blocks.iter().filter(|b| b.height > base) {
                returned.extend(&b.txs);
            }
            returned.extend(fork.mempool);
        }
        returned.sort_unstable();
        let orphaned = returned
            .iter()
            .filter(|id| matches!(self.txs[id].status, TxStatus::Included { .. }))
            .count() as u64;
        let win = self.forks.get_mut(&winner).expect("winner exists");
        win.members = None;
        win.miner_share = 1;
        for txid in returned {
            let rec = self.txs.get_mut(&txid).expect("returned tx exists");
            rec.status = TxStatus::Pending;
            rec.tx.submitted_height = base;
            win.mempool.push(txid);
        }
        self.events.push(SimEvent::PartitionHealed {
            tick: self.now,
            winner,
            orphaned_txs: orphaned,
        });
        Ok(winner)
    }

    /// Advances logical time, mining every block boundary on the way.
    pub fn advance_to(&mut self, tick: Tick) {
        while self.next_boundary <= tick {
            let boundary = self.next_boundary;
            self.now = boundary;
            let fork_ids: Vec<ForkId> = self.forks.keys().copied().collect();
            for fork in fork_ids {
                for _ in 0..self.forks[&fork].miner_share {
                    self.mine_one(fork, boundary);
                }
            }
            if self.partition_base.is_none() {
                self.finalize(boundary);
            }
            self.next_boundary += self.params.block_interval;
        }
        self.now = self.now.max(tick);
    }

    /// Mines the next `n` boundaries.
    pub fn advance_blocks(&mut self, n: u64) {
        if n == 0 {
            return;
        }
        let target = self.next_boundary + (n - 1) * self.params.block_interval;
        self.advance_to(target);
    }

    fn mine_one(&mut self, fork: ForkId, tick: Tick) {
        let height = self.forks[&fork].height + 1;
        let mut pool = std::mem::take(&mut self.forks.get_mut(&fork).unwrap().mempool);
        pool.sort_by(|a, b| {
            let ta = &self.txs[a].tx;
            let tb = &self.txs[b].tx;
            tb.fee
                .cmp(&ta.fee)
                .then(ta.submitted_at.cmp(&tb.submitted_at))
                .then(ta.id.cmp(&tb.id))
        });

        let mut included: Vec<TxId> = Vec::new();
        let mut rest: Vec<TxId> = Vec::new();
        let mut gas = 0u64;
        for id in pool {
            let w = self.params.prices.intrinsic(self.txs[&id].tx.payload.len());
            if gas + w <= self.params.block_capacity_gas {
                gas += w;
                included.push(id);
            } else {
                rest.push(id);
            }
        }

        let ctx = BlockCtx {
            tick,
            height,
            fork,
            prices: self.params.prices,
        };
        let cutoff = included.iter().map(|id| self.txs[id].tx.fee).min();
        for id in &included {
            let rec = self.txs.get_mut(id).expect("included tx exists");
            rec.status = TxStatus::Included { fork, height };
            let tx = rec.tx.clone();
            self.events.push(SimEvent::TxIncluded {
                tick,
                tx: *id,
                fork,
                height,
            });
            let exec = self.executors.get_mut(&fork).expect("fork executor");
            let report = exec.execute(&tx, ctx, &mut self.events);
            let intrinsic = self.params.prices.intrinsic(tx.payload.len());
            self.events.push(SimEvent::GasUsed {
                tick,
                tx: *id,
                epoch: report.epoch,
                intrinsic,
                execution: report.meter.execution_gas(&self.params.prices),
                storage_writes: report.meter.storage_writes,
                storage_reads: report.meter.storage_reads,
                hash_words: report.meter.hash_words,
                memory_words: report.meter.memory_words,
                tx_bytes: tx.payload.len() as u64,
            });
        }

        // Fee pressure: transactions that waited out the window lose their
        // slot when the pool is oversubscribed and the going rate beats them.
        let over_cap = rest.len() > self.params.mempool_soft_cap;
        let mut kept = Vec::with_capacity(rest.len());
        for id in rest {
            let rec = &self.txs[&id];
            let waited = height.saturating_sub(rec.tx.submitted_height);
            let outbid = cutoff.is_some_and(|c| rec.tx.fee < c);
            if over_cap && waited > self.params.drop_window && outbid {
                self.txs.get_mut(&id).unwrap().status = TxStatus::Dropped;
                self.events.push(SimEvent::TxDropped {
                    tick,
                    tx: id,
                    reason: "fee_pressure".into(),
                });
            } else {
                kept.push(id);
            }
        }

        let f = self.forks.get_mut(&fork).unwrap();
        f.height = height;
        f.mempool = kept;
        f.blocks.push(Block {
            fork,
            height,
            tick,
            txs: included.clone(),
            inclusion_gas: gas,
        });
        self.events.push(SimEvent::BlockMined {
            tick,
            fork,
            height,
            txs: included.len() as u64,
            inclusion_gas: gas,
        });
        let exec = self.executors.get_mut(&fork).expect("fork executor");
        exec.end_block(ctx, &mut self.events);
    }

    fn finalize(&mut self, tick: Tick) {
        let fork = self.forks.values().next().expect("one fork");
        let tip = fork.height;
        let newly_final = tip.saturating_sub(self.params.finality_depth);
        if newly_final <= self.finalized_up_to {
            return;
        }
        let final_txs: Vec<(TxId, u64)> = fork
            .blocks
            .iter()
            .filter(|b| b.height > self.finalized_up_to && b.height <= newly_final)
            .flat_map(|b| b.txs.iter().map(|t| (*t, b.height)))
            .collect();
        for (id, height) in final_txs {
            let rec = self.txs.get_mut(&id).expect("final tx exists");
            if matches!(rec.status, TxStatus::Included { .. }) {
                rec.status = TxStatus::Finalized { height };
                self.events.push(SimEvent::TxFinalized { tick, tx: id, height });
            }
        }
        self.finalized_up_to = newly_final;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Role;

    fn party(n: u8) -> PartyId {
        PartyId::new(Address([n; 20]), Role::Client)
    }

    fn quick_params() -> ChainParams {
        ChainParams {
            block_interval: 10,
            block_capacity_gas: 3 * 21_000,
            finality_depth: 2,
            drop_window: 2,
            mempool_soft_cap: 2,
            ..ChainParams::default()
        }
    }

    #[test]
    fn blocks_pack_by_fee_then_age_then_id() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        let low = sim.submit(party(1), vec![], 10);
        let mid = sim.submit(party(2), vec![], 50);
        sim.advance_to(1);
        let high = sim.submit(party(3), vec![], 90);
        let tie = sim.submit(party(4), vec![], 50);
        sim.advance_blocks(1);

        let order: Vec<TxId> = sim
            .events()
            .iter()
            .filter_map(|e| match e {
                SimEvent::TxIncluded { tx, .. } => Some(*tx),
                _ => None,
            })
            .collect();
        assert_eq!(order, vec![high, mid, tie]);
        assert_eq!(sim.status(low).unwrap(), TxStatus::Pending);
        sim.advance_blocks(1);
        assert!(matches!(
            sim.status(low).unwrap(),
            TxStatus::Included { height: 2, .. }
        ));
    }

    #[test]
    fn capacity_spreads_submissions_across_blocks() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        for i in 0..7 {
            sim.submit(party(i), vec![], 10);
        }
        sim.advance_blocks(3);
        let per_block: Vec<u64> = sim
            .events()
            .iter()
            .filter_map(|e| match e {
                SimEvent::BlockMined { txs, .. } => Some(*txs),
                _ => None,
            })
            .collect();
        assert_eq!(per_block, vec![3, 3, 1]);
    }

    #[test]
    fn finality_lags_by_depth() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        let tx = sim.submit(party(1), vec![], 10);
        sim.advance_blocks(1);
        assert!(matches!(sim.status(tx).unwrap(), TxStatus::Included { .. }));
        sim.advance_blocks(1);
        assert!(matches!(sim.status(tx).unwrap(), TxStatus::Included { .. }));
        sim.advance_blocks(1);
        assert_eq!(sim.status(tx).unwrap(), TxStatus::Finalized { height: 1 });
    }

    #[test]
    fn fee_pressure_drops_stale_outbid_transactions() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        let victim = sim.submit(party(9), vec![], 1);
        for round in 0..5u8 {
            for i in 0..6 {
                sim.submit(party(round * 6 + i), vec![], 100);
            }
            sim.advance_blocks(1);
        }
        assert_eq!(sim.status(victim).unwrap(), TxStatus::Dropped);
        let dropped = sim.events().iter().any(|e| {
            matches!(e, SimEvent::TxDropped { tx, reason, .. } if *tx == victim && reason == "fee_pressure")
        });
        assert!(dropped);
    }

    #[test]
    fn censorship_swallows_exactly_the_scripted_count() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        sim.censor_next(party(1).address, 1);
        let first = sim.submit(party(1), vec![], 10);
        let second = sim.submit(party(1), vec![], 10);
        sim.advance_blocks(1);
        assert_eq!(sim.status(first).unwrap(), TxStatus::Dropped);
        assert!(matches!(sim.status(second).unwrap(), TxStatus::Included { .. }));
    }

    #[derive(Clone, Default)]
    struct Tally {
        executed: Vec<TxId>,
    }

    impl TxExecutor for Tally {
        fn execute(&mut self, tx: &Transaction, _: BlockCtx, _: &mut Vec<SimEvent>) -> ExecReport {
            self.executed.push(tx.id);
            ExecReport::default()
        }

        fn end_block(&mut self, _: BlockCtx, _: &mut Vec<SimEvent>) {}
    }

    #[test]
    fn partition_routes_by_sender_and_double_partition_errors() {
        let mut sim = ChainSim::new(quick_params(), Tally::default());
        let a = party(1);
        let b = party(2);
        let ids = sim
            .partition(&[
                PartitionGroup { members: vec![a.address], miner_share: 1 },
                PartitionGroup { members: vec![b.address], miner_share: 1 },
            ])
            .unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(
            sim.partition(&[]).unwrap_err(),
            ChainError::PartitionWhilePartitioned
        );

        let ta = sim.submit(a, vec![], 10);
        let tb = sim.submit(b, vec![], 10);
        sim.advance_blocks(1);
        assert_eq!(sim.status(ta).unwrap(), TxStatus::Included { fork: ids[0], height: 1 });
        assert_eq!(sim.status(tb).unwrap(), TxStatus::Included { fork: ids[1], height: 1 });
        assert_eq!(sim.executor_on(ids[0]).unwrap().executed, vec![ta]);
        assert_eq!(sim.executor_on(ids[1]).unwrap().executed, vec![tb]);
    }

    #[test]
    fn heal_prefers_longer_fork_and_requeues_orphans() {
        let mut sim = ChainSim::new(quick_params(), Tally::default());
        let a = party(1);
        let b = party(2);
        let ids = sim
            .partition(&[
                PartitionGroup { members: vec![a.address], miner_share: 1 },
                PartitionGroup { members: vec![b.address], miner_share: 2 },
            ])
            .unwrap();
        let ta = sim.submit(a, vec![], 10);
        let tb = sim.submit(b, vec![], 10);
        sim.advance_blocks(1);
        assert!(matches!(sim.status(ta).unwrap(), TxStatus::Included { .. }));

        let winner = sim.heal().unwrap();
        assert_eq!(winner, ids[1], "share 2 mined the longer chain");
        assert_eq!(sim.status(ta).unwrap(), TxStatus::Pending);
        assert!(matches!(sim.status(tb).unwrap(), TxStatus::Included { .. }));
        assert!(!sim.executor().executed.contains(&ta));

        sim.advance_blocks(1);
        assert!(matches!(sim.status(ta).unwrap(), TxStatus::Included { .. }));
        assert!(sim.executor().executed.contains(&ta));
        assert_eq!(sim.heal().unwrap_err(), ChainError::NoPartition);
    }

    #[test]
    fn heal_tie_goes_to_lowest_fork_id() {
        let mut sim = ChainSim::new(quick_params(), NullExecutor);
        let ids = sim
            .partition(&[
                PartitionGroup { members: vec![party(1).address], miner_share: 1 },
                PartitionGroup { members: vec![party(2).address], miner_share: 1 },
            ])
            .unwrap();
        sim.advance_blocks(2);
        assert_eq!(sim.heal().unwrap(), *ids.iter().min().unwrap());
    }

    #[test]
    fn unknown_ids_error() {
        let sim = ChainSim::new(quick_params(), NullExecutor);
        assert_eq!(sim.status(77).unwrap_err(), ChainError::UnknownTx(77));
        assert_eq!(sim.height_of(9).unwrap_err(), ChainError::UnknownFork(9));
    }

    #[test]
    fn equal_runs_emit_identical_event_bytes() {
        let run = || {
            let mut sim = ChainSim::new(quick_params(), NullExecutor);
            for i in 0..5 {
                sim.submit(party(i), vec![i; 3], 10 + i as u64);
            }
            sim.advance_blocks(4);
            crate::events::to_jsonl(sim.events())
        };
        assert_eq!(run(), run());
    }
}
