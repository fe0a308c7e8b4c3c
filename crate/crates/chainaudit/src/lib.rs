//! Desk-scale simulation of a blockchain-arbitrated consistency audit for
//! outsourced key-value storage.
//!
//! Clients of an untrusted storage server attest their operation logs to a
//! smart contract running on a simulated chain. The contract crosschecks the
//! client logs against the server's declared total order, attributes any
//! discrepancy to the misbehaving party, repairs the server log from the
//! surviving dual-signed evidence, and audits the result for linearizability.
//!
//! The crate is organised around that pipeline:
//!
//! * [`types`], [`sig`], [`codec`]: operation records, the keyed-hash
//!   signature scheme, and the canonical byte encoding shared by signatures,
//!   content digests, contract payloads, and on-disk traces.
//! * [`consistency`]: linearizability audit of an ordered history, a
//!   brute-force oracle, and the order search a rational server runs.
//! * [`crosscheck`]: log comparison, attack attribution, and repair.
//! * [`ads`]: the Merkle authenticator used when the persistent log lives
//!   off-chain.
//! * [`chainsim`]: a deterministic discrete-event chain with a fee-priority
//!   mempool, finality depth, partitions, and a gas meter.
//! * [`contract`]: the on-chain state machine that stores attestations and
//!   produces per-epoch verdicts.
//! * [`actors`]: client and server agents, honest and otherwise.
//! * [`workload`], [`scenario`], [`cost`]: trace generation, end-to-end
//!   scenario execution, and cost reporting.
//! * [`batch`]: helpers for running many independent simulations, in
//!   parallel when the `parallel` feature (default) is enabled.

pub mod ads;
pub mod actors;
pub mod batch;
pub mod chainsim;
pub mod codec;
pub mod consistency;
pub mod contract;
pub mod cost;
pub mod crosscheck;
pub mod events;
pub mod scenario;
pub mod sig;
pub mod types;
pub mod workload;
