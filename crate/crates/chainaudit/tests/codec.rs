//! Property tests for the canonical byte encodings: anything encoded
//! decodes back to itself, and no byte soup can panic a decoder.

use proptest::prelude::*;

use chainaudit::ads::{AdsState, Proof};
use chainaudit::codec::{
    decode_attestation, decode_operation, decode_trace, encode_attestation, encode_operation,
    encode_trace,
};
use chainaudit::sig::Signature;
use chainaudit::types::{
    Address, Attestation, Digest, OpKind, Operation, PartyId, Role,
};

fn arb_role() -> impl Strategy<Value = Role> {
    prop_oneof![
        Just(Role::Client),
        Just(Role::Server),
        Just(Role::IdentityProvider),
    ]
}

fn arb_operation() -> impl Strategy<Value = Operation> {
    (
        any::<u128>(),
        any::<[u8; 20]>(),
        arb_role(),
        any::<bool>(),
        proptest::collection::vec(any::<u8>(), 0..40),
        any::<[u8; 32]>(),
        any::<u64>(),
        any::<u64>(),
        proptest::option::of(any::<[u8; 32]>()),
        proptest::option::of(any::<[u8; 32]>()),
    )
        .prop_map(
            |(nonce, addr, role, is_read, key, digest, t0, dt, csig, ssig)| Operation {
                nonce,
                client: PartyId::new(Address(addr), role),
                kind: if is_read { OpKind::Read } else { OpKind::Write },
                key,
                value_digest: Digest(digest),
                t_begin: t0,
                t_end: t0.saturating_add(dt),
                client_sig: csig.map(Signature),
                server_sig: ssig.map(Signature),
            },
        )
}

fn arb_attestation() -> impl Strategy<Value = Attestation> {
    (
        any::<u64>(),
        any::<[u8; 20]>(),
        arb_role(),
        proptest::collection::vec(arb_operation(), 0..8),
        any::<bool>(),
        any::<[u8; 32]>(),
    )
        .prop_map(|(epoch, addr, role, ops, total_order_declared, sig)| Attestation {
            epoch,
            party: PartyId::new(Address(addr), role),
            ops,
            total_order_declared,
            sig: Signature(sig),
        })
}

proptest! {
    #[test]
    fn operations_roundtrip(op in arb_operation()) {
        let bytes = encode_operation(&op);
        prop_assert_eq!(decode_operation(&bytes).unwrap(), op);
    }

    #[test]
    fn attestations_roundtrip(att in arb_attestation()) {
        let bytes = encode_attestation(&att);
        prop_assert_eq!(decode_attestation(&bytes).unwrap(), att);
    }

    #[test]
    fn traces_roundtrip(ops in proptest::collection::vec(arb_operation(), 0..12)) {
        let bytes = encode_trace(&ops);
        prop_assert_eq!(decode_trace(&bytes).unwrap(), ops);
    }

    /// Decoders must reject or accept arbitrary input without panicking
    /// and without count-driven allocation blowups.
    #[test]
    fn byte_soup_never_panics_a_decoder(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let _ = decode_operation(&bytes);
        let _ = decode_attestation(&bytes);
        let _ = decode_trace(&bytes);
        let _ = Proof::decode(&bytes);
    }

    /// Proof bytes are canonical: decoding and re-encoding an honest
    /// proof reproduces the original bytes, for present and absent keys.
    #[test]
    fn proofs_roundtrip_canonically(
        keys in proptest::collection::btree_set(proptest::collection::vec(any::<u8>(), 1..12), 1..20),
        probe in proptest::collection::vec(any::<u8>(), 1..12),
    ) {
        let mut ads = AdsState::new();
        for (i, key) in keys.iter().enumerate() {
            ads.insert_write(key.clone(), i as u128 + 1, Digest([i as u8; 32]));
        }
        let root = ads.root();
        for key in keys.iter().chain(std::iter::once(&probe)) {
            let proof = ads.prove(key);
            let bytes = proof.encode();
            let back = Proof::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(
                back.verify(&root, key).unwrap().is_some(),
                keys.contains(key)
            );
        }
    }
}
