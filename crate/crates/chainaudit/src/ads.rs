//! Authenticated dictionary over the latest write per key.
//!
//! When the persistent log lives off chain, the contract keeps only a
//! commitment to it: the root of a Merkle tree whose leaves are the
//! `(key, nonce, value digest)` records of each key's most recent write,
//! sorted by key. The server updates the tree at every epoch close and posts
//! the new root. A later audit that needs an old value does not read
//! contract storage; it challenges the server, who answers with a proof
//! against the posted root.
//!
//! Sorting the leaves makes absence provable: a key not in the dictionary
//! falls either outside the leaf range or between two adjacent leaves, and
//! both facts are checkable from membership proofs plus the leaf count,
//! which is committed inside the root.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::sig::hash;
use crate::types::{Digest, Key, Nonce, OpKind, Operation};

/// The latest write recorded for one key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub key: Key,
    pub nonce: Nonce,
    pub value_digest: Digest,
}

impl LeafRecord {
    fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(&self.key);
        e.u128(self.nonce);
        e.fixed(&self.value_digest.0);
        e.finish()
    }

    fn decode(d: &mut Decoder) -> Result<Self, CodecError> {
        Ok(LeafRecord {
            key: d.bytes()?,
            nonce: d.u128()?,
            value_digest: Digest(d.fixed::<32>()?),
        })
    }

    fn hash(&self) -> Digest {
        Digest(hash(b"ads-leaf", &[&self.encode()]))
    }
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    Digest(hash(b"ads-node", &[&left.0, &right.0]))
}

fn commit(leaf_count: u64, tree: &Digest) -> Digest {
    Digest(hash(b"ads-root", &[&leaf_count.to_be_bytes(), &tree.0]))
}

/// Root of the empty dictionary.
pub fn empty_root() -> Digest {
    commit(0, &Digest([0; 32]))
}

/// Membership of one leaf: the record, its position, and the sibling path
/// from leaf to root. Odd levels duplicate their last node, so the path can
/// name a node as its own sibling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipProof {
    pub record: LeafRecord,
    pub index: u64,
    pub leaf_count: u64,
    pub path: Vec<Digest>,
}

/// Answer to a lookup challenge: either the key's latest write with its
/// membership proof, or a proof that no leaf carries the key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proof {
    Present(MembershipProof),
    /// The dictionary is empty; the root alone proves absence.
    AbsentEmpty,
    /// The first leaf already sorts above the key.
    AbsentBelow(MembershipProof),
    /// The last leaf still sorts below the key.
    AbsentAbove(MembershipProof),
    /// Adjacent leaves straddle the key.
    AbsentBetween(MembershipProof, MembershipProof),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProofError {
    #[error("proof does not reconstruct the committed root")]
    RootMismatch,
    #[error("path length {got} does not match a {leaves}-leaf tree")]
    BadPathLength { leaves: u64, got: usize },
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: u64, leaves: u64 },
    #[error("proof shape does not support the claim about key {key:02x?}")]
    ClaimShape { key: Key },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn path_len_for(leaves: u64) -> usize {
    let mut n = leaves;
    let mut rounds = 0;
    while n > 1 {
        n = n.div_ceil(2);
        rounds += 1;
    }
    rounds
}

impl MembershipProof {
    /// Recomputes the root this proof commits to.
    pub fn reconstruct_root(&self) -> Result<Digest, ProofError> {
        if self.leaf_count == 0 || self.index >= self.leaf_count {
            return Err(ProofError::IndexOutOfRange {
                index: self.index,
                leaves: self.leaf_count,
            });
        }
        if self.path.len() != path_len_for(self.leaf_count) {
            return Err(ProofError::BadPathLength {
                leaves: self.leaf_count,
                got: self.path.len(),
            });
        }
        let mut acc = self.record.hash();
        let mut idx = self.index;
        for sibling in &self.path {
            acc = if idx % 2 == 0 {
                node_hash(&acc, sibling)
            } else {
                node_hash(sibling, &acc)
            };
            idx /= 2;
        }
        Ok(commit(self.leaf_count, &acc))
    }

    pub fn verify(&self, root: &Digest) -> Result<(), ProofError> {
        if self.reconstruct_root()? == *root {
            Ok(())
        } else {
            Err(ProofError::RootMismatch)
        }
    }
}

impl Proof {
    /// Checks the proof against `root` and returns what it establishes for
    /// `key`: the latest write record, or `None` for proven absence.
    pub fn verify(&self, root: &Digest, key: &[u8]) -> Result<Option<&LeafRecord>, ProofError> {
        let shape_err = || ProofError::ClaimShape { key: key.to_vec() };
        match self {
            Proof::Present(m) => {
                m.verify(root)?;
                if m.record.key != key {
                    return Err(shape_err());
                }
                Ok(Some(&m.record))
            }
            Proof::AbsentEmpty => {
                if *root != empty_root() {
                    return Err(ProofError::RootMismatch);
                }
                Ok(None)
            }
            Proof::AbsentBelow(m) => {
                m.verify(root)?;
                if m.index != 0 || m.record.key.as_slice() <= key {
                    return Err(shape_err());
                }
                Ok(None)
            }
            Proof::AbsentAbove(m) => {
                m.verify(root)?;
                if m.index + 1 != m.leaf_count || m.record.key.as_slice() >= key {
                    return Err(shape_err());
                }
                Ok(None)
            }
            Proof::AbsentBetween(lo, hi) => {
                lo.verify(root)?;
                hi.verify(root)?;
                let adjacent = lo.index + 1 == hi.index && lo.leaf_count == hi.leaf_count;
                let straddles =
                    lo.record.key.as_slice() < key && key < hi.record.key.as_slice();
                if !adjacent || !straddles {
                    return Err(shape_err());
                }
                Ok(None)
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        fn put(e: &mut Encoder, m: &MembershipProof) {
            e.fixed(&m.record.encode());
            e.u64(m.index);
            e.u64(m.leaf_count);
            e.u32(m.path.len() as u32);
            for d in &m.path {
                e.fixed(&d.0);
            }
        }
        let mut e = Encoder::new();
        match self {
            Proof::Present(m) => {
                e.u8(0);
                put(&mut e, m);
            }
            Proof::AbsentEmpty => {
                e.u8(1);
            }
            Proof::AbsentBelow(m) => {
                e.u8(2);
                put(&mut e, m);
            }
            Proof::AbsentAbove(m) => {
                e.u8(3);
                put(&mut e, m);
            }
            Proof::AbsentBetween(lo, hi) => {
                e.u8(4);
                put(&mut e, lo);
                put(&mut e, hi);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProofError> {
        fn take(d: &mut Decoder) -> Result<MembershipProof, CodecError> {
            let record = LeafRecord::decode(d)?;
            let index = d.u64()?;
            let leaf_count = d.u64()?;
            let n = d.count(32)?;
            let mut path = Vec::with_capacity(n);
            for _ in 0..n {
                path.push(Digest(d.fixed::<32>()?));
            }
            Ok(MembershipProof {
                record,
                index,
                leaf_count,
                path,
            })
        }
        let mut d = Decoder::new(bytes);
        let proof = match d.u8()? {
            0 => Proof::Present(take(&mut d)?),
            1 => Proof::AbsentEmpty,
            2 => Proof::AbsentBelow(take(&mut d)?),
            3 => Proof::AbsentAbove(take(&mut d)?),
            4 => Proof::AbsentBetween(take(&mut d)?, take(&mut d)?),
            v => {
                return Err(CodecError::BadTag {
                    field: "proof-kind",
                    value: v,
                }
                .into())
            }
        };
        d.expect_end()?;
        Ok(proof)
    }
}

/// The server-side dictionary, updated once per epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdsState {
    entries: BTreeMap<Key, LeafRecord>,
}

impl AdsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, key: &[u8]) -> Option<&LeafRecord> {
        self.entries.get(key)
    }

    /// Records `key` as last written by `nonce` carrying `value_digest`.
    pub fn insert_write(&mut self, key: Key, nonce: Nonce, value_digest: Digest) {
        self.entries.insert(
            key.clone(),
            LeafRecord {
                key,
                nonce,
                value_digest,
            },
        );
    }

    /// Folds an epoch's write history in, in audit order, so the last write
    /// per key wins.
    pub fn apply_epoch<'a>(&mut self, ordered_ops: impl IntoIterator<Item = &'a Operation>) {
        for op in ordered_ops {
            if op.kind == OpKind::Write {
                self.entries.insert(
                    op.key.clone(),
                    LeafRecord {
                        key: op.key.clone(),
                        nonce: op.nonce,
                        value_digest: op.value_digest,
                    },
                );
            }
        }
    }

    fn levels(&self) -> Vec<Vec<Digest>> {
        let mut level: Vec<Digest> = self.entries.values().map(LeafRecord::hash).collect();
        let mut levels = vec![level.clone()];
        while level.len() > 1 {
            if level.len() % 2 == 1 {
                level.push(*level.last().unwrap());
            }
            level = level
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(level.clone());
        }
        levels
    }

    pub fn root(&self) -> Digest {
        if self.entries.is_empty() {
            return empty_root();
        }
        let tree = *self.levels().last().unwrap().first().unwrap();
        commit(self.entries.len() as u64, &tree)
    }

    fn membership(&self, index: usize) -> MembershipProof {
        let record = self.entries.values().nth(index).unwrap().clone();
        let levels = self.levels();
        let mut path = Vec::new();
        let mut idx = index;
        for level in &levels[..levels.len() - 1] {
            let sibling = if idx % 2 == 0 {
                // Odd level widths duplicate their last node.
                level.get(idx + 1).copied().unwrap_or(level[idx])
            } else {
                level[idx - 1]
            };
            path.push(sibling);
            idx /= 2;
        }
        MembershipProof {
            record,
            index: index as u64,
            leaf_count: self.entries.len() as u64,
            path,
        }
    }

    /// Produces the proof an honest server would answer a challenge with.
    pub fn prove(&self, key: &[u8]) -> Proof {
        if self.entries.is_empty() {
            return Proof::AbsentEmpty;
        }
        let keys: Vec<&Key> = self.entries.keys().collect();
        match keys.binary_search_by(|k| k.as_slice().cmp(key)) {
            Ok(i) => Proof::Present(self.membership(i)),
            Err(0) => Proof::AbsentBelow(self.membership(0)),
            Err(i) if i == keys.len() => Proof::AbsentAbove(self.membership(keys.len() - 1)),
            Err(i) => Proof::AbsentBetween(self.membership(i - 1), self.membership(i)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PartyId;

    fn record(key: &str, nonce: Nonce) -> LeafRecord {
        LeafRecord {
            key: key.as_bytes().to_vec(),
            nonce,
            value_digest: Digest([nonce as u8; 32]),
        }
    }

    fn state_of(records: &[LeafRecord]) -> AdsState {
        let mut s = AdsState::new();
        for r in records {
            s.entries.insert(r.key.clone(), r.clone());
        }
        s
    }

    /// Reference tree built a different way: recursive splitting instead of
    /// iterative level folding. The two must agree on every size.
    fn reference_root(records: &[LeafRecord]) -> Digest {
        fn build(hashes: &[Digest]) -> Digest {
            match hashes.len() {
                0 => unreachable!(),
                1 => hashes[0],
                n => {
                    let padded;
                    let hashes = if n % 2 == 1 {
                        padded = [hashes, &hashes[n - 1..]].concat();
                        &padded[..]
                    } else {
                        hashes
                    };
                    let half: Vec<Digest> = hashes
                        .chunks(2)
                        .map(|p| node_hash(&p[0], &p[1]))
                        .collect();
                    build(&half)
                }
            }
        }
        let mut sorted = records.to_vec();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        if sorted.is_empty() {
            return empty_root();
        }
        let hashes: Vec<Digest> = sorted.iter().map(LeafRecord::hash).collect();
        commit(sorted.len() as u64, &build(&hashes))
    }

    fn seven_records() -> Vec<LeafRecord> {
        (0..7).map(|i| record(&format!("key-{i}"), i as Nonce + 1)).collect()
    }

    #[test]
    fn iterative_and_recursive_builders_agree_on_all_small_sizes() {
        for n in 0..=9 {
            let records: Vec<LeafRecord> =
                (0..n).map(|i| record(&format!("k{i:02}"), i as Nonce)).collect();
            assert_eq!(
                state_of(&records).root(),
                reference_root(&records),
                "size {n}"
            );
        }
    }

    #[test]
    fn seven_record_root_is_frozen() {
        let root = state_of(&seven_records()).root();
        assert_eq!(root, reference_root(&seven_records()));
        let hex: String = root.0.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            hex,
            "6dfa57dbf250dd03394c04c96094bb0faaedf1c5fcc03daf6a86ee4e6295496c"
        );
    }

    #[test]
    fn membership_proofs_verify_for_every_leaf_at_every_size() {
        for n in 1..=9usize {
            let records: Vec<LeafRecord> =
                (0..n).map(|i| record(&format!("k{i:02}"), i as Nonce)).collect();
            let s = state_of(&records);
            let root = s.root();
            for i in 0..n {
                let proof = s.prove(format!("k{i:02}").as_bytes());
                let got = proof.verify(&root, format!("k{i:02}").as_bytes()).unwrap();
                assert_eq!(got.unwrap().nonce, i as Nonce, "leaf {i} of {n}");
            }
        }
    }

    #[test]
    fn absence_proofs_cover_below_between_above_and_empty() {
        let s = state_of(&[record("bb", 1), record("dd", 2), record("ff", 3)]);
        let root = s.root();
        for (key, want) in [
            ("aa", "below"),
            ("cc", "between"),
            ("ee", "between"),
            ("zz", "above"),
        ] {
            let proof = s.prove(key.as_bytes());
            assert_eq!(proof.verify(&root, key.as_bytes()).unwrap(), None, "{want}");
        }
        let empty = AdsState::new();
        assert_eq!(empty.root(), empty_root());
        let proof = empty.prove(b"anything");
        assert_eq!(proof.verify(&empty.root(), b"anything").unwrap(), None);
    }

    #[test]
    fn proof_for_wrong_key_or_wrong_root_is_rejected() {
        let s = state_of(&seven_records());
        let root = s.root();
        let proof = s.prove(b"key-3");
        assert!(proof.verify(&root, b"key-4").is_err());

        let mut other = s.clone();
        other.entries.insert(
            b"key-3".to_vec(),
            record("key-3", 99),
        );
        assert!(proof.verify(&other.root(), b"key-3").is_err());
    }

    #[test]
    fn stale_record_proof_fails_after_update() {
        let mut s = state_of(&seven_records());
        let old_proof = s.prove(b"key-2");
        let client = PartyId::new(crate::types::Address([7; 20]), crate::types::Role::Client);
        s.apply_epoch(&[Operation {
            nonce: 500,
            client,
            kind: OpKind::Write,
            key: b"key-2".to_vec(),
            value_digest: Digest([42; 32]),
            t_begin: 0,
            t_end: 1,
            client_sig: None,
            server_sig: None,
        }]);
        let new_root = s.root();
        assert!(old_proof.verify(&new_root, b"key-2").is_err());
        let fresh = s.prove(b"key-2");
        assert_eq!(
            fresh.verify(&new_root, b"key-2").unwrap().unwrap().nonce,
            500
        );
    }

    #[test]
    fn apply_epoch_keeps_last_write_per_key_and_ignores_reads() {
        let mut s = AdsState::new();
        let client = PartyId::new(crate::types::Address([7; 20]), crate::types::Role::Client);
        let mk = |nonce: Nonce, kind: OpKind, key: &str, d: u8| Operation {
            nonce,
            client,
            kind,
            key: key.as_bytes().to_vec(),
            value_digest: Digest([d; 32]),
            t_begin: nonce as u64,
            t_end: nonce as u64,
            client_sig: None,
            server_sig: None,
        };
        s.apply_epoch(&[
            mk(1, OpKind::Write, "a", 1),
            mk(2, OpKind::Write, "a", 2),
            mk(3, OpKind::Read, "a", 2),
            mk(4, OpKind::Write, "b", 4),
        ]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.lookup(b"a").unwrap().nonce, 2);
        assert_eq!(s.lookup(b"b").unwrap().nonce, 4);
    }

    #[test]
    fn proof_encoding_round_trips_every_variant() {
        let s = state_of(&[record("bb", 1), record("dd", 2), record("ff", 3)]);
        for key in [&b"dd"[..], b"aa", b"cc", b"zz"] {
            let proof = s.prove(key);
            let bytes = proof.encode();
            assert_eq!(Proof::decode(&bytes).unwrap(), proof);
        }
        let empty = AdsState::new().prove(b"x");
        assert_eq!(Proof::decode(&empty.encode()).unwrap(), empty);
    }

    #[test]
    fn single_byte_tampering_in_proof_is_rejected() {
        let s = state_of(&seven_records());
        let root = s.root();
        let bytes = s.prove(b"key-3").encode();
        for i in 0..bytes.len() {
            let mut tampered = bytes.clone();
            tampered[i] ^= 1;
            let survives = Proof::decode(&tampered)
                .ok()
                .and_then(|p| p.verify(&root, b"key-3").ok().map(|_| ()));
            assert_eq!(survives, None, "flip at byte {i} survived");
        }
    }
}
