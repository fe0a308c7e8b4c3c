//! Domain records shared by every stage of the audit pipeline.
//!
//! An [`Operation`] is one read or write as the issuing client observed it:
//! an interval `[t_begin, t_end]` in simulation ticks, a key, a value digest,
//! and up to two signatures. The client signs the request half before the
//! server sees it, the server signs the response half when it serves the
//! operation, and the completed record circulates signed by both. Logs are
//! exchanged as [`Attestation`]s, one per party per epoch.

use serde::{Deserialize, Serialize};

use crate::sig::{self, PublicKey, Signature};

/// Simulation time in integer ticks.
pub type Tick = u64;

/// Epoch index, counted from zero.
pub type Epoch = u64;

/// Unique operation identifier drawn once per operation.
pub type Nonce = u128;

/// Storage key bytes.
pub type Key = Vec<u8>;

/// A 32-byte digest. Values never travel through the pipeline in the clear;
/// every payload is represented by its digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

/// Digest a read reports when the key had no prior write.
pub const NOT_FOUND: Digest = Digest([0xff; 32]);

impl Digest {
    pub fn short_hex(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({}..)", self.short_hex())
    }
}

/// A party address, the truncated hash of its public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Self {
        let h = sig::hash(b"address", &[&pk.0]);
        let mut a = [0u8; 20];
        a.copy_from_slice(&h[..20]);
        Address(a)
    }

    pub fn short_hex(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Debug for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Address({}..)", self.short_hex())
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.short_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Client,
    Server,
    IdentityProvider,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Client => 0,
            Role::Server => 1,
            Role::IdentityProvider => 2,
        }
    }
}

/// Identity of a protocol participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub address: Address,
    pub role: Role,
}

impl PartyId {
    pub fn new(address: Address, role: Role) -> Self {
        PartyId { address, role }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn tag(self) -> u8 {
        match self {
            OpKind::Read => 0,
            OpKind::Write => 1,
        }
    }
}

/// One completed storage operation as recorded by its client.
///
/// `value_digest` is the digest of the written payload for writes. For reads
/// it commits to the write the returned value came from, computed with
/// [`Operation::read_digest`], or [`NOT_FOUND`] when the key was empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub nonce: Nonce,
    pub client: PartyId,
    pub kind: OpKind,
    pub key: Key,
    pub value_digest: Digest,
    pub t_begin: Tick,
    pub t_end: Tick,
    pub client_sig: Option<Signature>,
    pub server_sig: Option<Signature>,
}

impl Operation {
    /// Digest a read carries when it returns the value written by `write`.
    pub fn read_digest(write_nonce: Nonce, write_digest: Digest) -> Digest {
        Digest(sig::hash(
            b"read-of",
            &[&write_nonce.to_be_bytes(), &write_digest.0],
        ))
    }

    /// Content identity used when matching log entries across parties.
    /// Covers everything except the timestamps and the signatures, so two
    /// copies of the same served operation hash equal even if one side
    /// tampered with its interval.
    pub fn content_digest(&self) -> Digest {
        Digest(sig::hash(b"op-content", &[&self.content_bytes()]))
    }

    /// Pair used as a multiset element in crosschecks.
    pub fn identity(&self) -> (Nonce, Digest) {
        (self.nonce, self.content_digest())
    }

    fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.key.len());
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.client.address.0);
        out.push(self.client.role.tag());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.key.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.key);
        out.extend_from_slice(&self.value_digest.0);
        out
    }

    /// Message the client signs when issuing the request. The value digest
    /// is included only for writes; a read does not know its result yet.
    pub fn request_message(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.key.len());
        out.extend_from_slice(b"op-request\0");
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.client.address.0);
        out.push(self.client.role.tag());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.key.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.key);
        if self.kind == OpKind::Write {
            out.extend_from_slice(&self.value_digest.0);
        }
        out
    }

    /// Message the server signs when serving the operation. Covers the full
    /// content, result included.
    pub fn response_message(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(72 + self.key.len());
        out.extend_from_slice(b"op-response\0");
        out.extend_from_slice(&self.content_bytes());
        out
    }

    pub fn interval(&self) -> (Tick, Tick) {
        (self.t_begin, self.t_end)
    }

    /// Strict real-time precedence: `self` finished before `other` began.
    /// Touching endpoints count as concurrent.
    pub fn precedes(&self, other: &Operation) -> bool {
        self.t_end < other.t_begin
    }
}

/// One party's signed per-epoch log.
///
/// Client attestations list the client's own operations in submission order
/// with `total_order_declared` false. The server attestation lists every
/// operation it served in the epoch in its declared total order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub epoch: Epoch,
    pub party: PartyId,
    pub ops: Vec<Operation>,
    pub total_order_declared: bool,
    pub sig: Signature,
}

impl Attestation {
    /// Clients named by the contained operations, deduplicated and sorted.
    pub fn client_addresses(&self) -> Vec<Address> {
        let mut v: Vec<Address> = self.ops.iter().map(|o| o.client.address).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Deterministic nonce source. A session tag from the seed fills the high
/// bits and a counter fills the low bits, so draws never repeat.
#[derive(Clone, Debug)]
pub struct NonceGen {
    tag: u64,
    next: u64,
}

impl NonceGen {
    pub fn new(seed: u64) -> Self {
        let h = sig::hash(b"nonce-tag", &[&seed.to_be_bytes()]);
        let tag = u64::from_be_bytes(h[..8].try_into().unwrap());
        NonceGen { tag, next: 0 }
    }

    pub fn next(&mut self) -> Nonce {
        let n = ((self.tag as u128) << 64) | self.next as u128;
        self.next += 1;
        n
    }
}
