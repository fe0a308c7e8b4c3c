//! Keyed-hash signature scheme and the identity directory.
//!
//! The scheme is deliberately simple: a public key is a hash of the secret,
//! and a signature is a hash of the public key and the message. Verification
//! is a pure function of `(message, signature, public key)`, signing is
//! deterministic, and any single flipped bit fails verification. Within the
//! simulation only the key owner ever calls [`sign`] with its secret, which
//! is the unforgeability assumption this test scheme models. A production
//! deployment would swap in an asymmetric scheme behind the same four
//! functions; nothing outside this module inspects key material.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::types::{Address, PartyId, Role};

/// Domain-separated SHA-256 over the concatenated parts.
pub fn hash(domain: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecretKey(pub [u8; 32]);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(pub [u8; 32]);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature(pub [u8; 32]);

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey(..)")
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

pub fn public_key(secret: &SecretKey) -> PublicKey {
    PublicKey(hash(b"public-key", &[&secret.0]))
}

pub fn sign(message: &[u8], secret: &SecretKey) -> Signature {
    let pk = public_key(secret);
    Signature(hash(b"signature", &[&pk.0, message]))
}

pub fn verify(message: &[u8], signature: &Signature, public: &PublicKey) -> bool {
    signature.0 == hash(b"signature", &[&public.0, message])
}

/// A key pair plus the derived on-chain identity.
#[derive(Clone, Debug)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
    pub party: PartyId,
}

impl KeyPair {
    pub fn from_seed(seed: u64, role: Role) -> Self {
        let secret = SecretKey(hash(b"key-seed", &[&seed.to_be_bytes(), &[role.tag()]]));
        let public = public_key(&secret);
        let party = PartyId::new(Address::from_public_key(&public), role);
        KeyPair {
            secret,
            public,
            party,
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(message, &self.secret)
    }
}

/// Directory mapping whitelisted parties to their verification keys.
#[derive(Clone, Debug, Default)]
pub struct IdentityRegistry {
    clients: BTreeMap<Address, PublicKey>,
    server: Option<(Address, PublicKey)>,
    identity_provider: Option<(Address, PublicKey)>,
}

impl IdentityRegistry {
    pub fn register_client(&mut self, address: Address, key: PublicKey) {
        self.clients.insert(address, key);
    }

    pub fn deregister_client(&mut self, address: &Address) -> bool {
        self.clients.remove(address).is_some()
    }

    pub fn set_server(&mut self, address: Address, key: PublicKey) {
        self.server = Some((address, key));
    }

    pub fn set_identity_provider(&mut self, address: Address, key: PublicKey) {
        self.identity_provider = Some((address, key));
    }

    pub fn client_key(&self, address: &Address) -> Option<&PublicKey> {
        self.clients.get(address)
    }

    pub fn server_key(&self) -> Option<&PublicKey> {
        self.server.as_ref().map(|(_, k)| k)
    }

    pub fn server_address(&self) -> Option<Address> {
        self.server.as_ref().map(|(a, _)| *a)
    }

    pub fn is_identity_provider(&self, address: &Address) -> bool {
        self.identity_provider
            .as_ref()
            .is_some_and(|(a, _)| a == address)
    }

    pub fn is_client(&self, address: &Address) -> bool {
        self.clients.contains_key(address)
    }

    pub fn client_addresses(&self) -> impl Iterator<Item = &Address> {
        self.clients.keys()
    }

    pub fn party_key(&self, party: &PartyId) -> Option<&PublicKey> {
        match party.role {
            Role::Client => self.client_key(&party.address),
            Role::Server => self
                .server
                .as_ref()
                .filter(|(a, _)| *a == party.address)
                .map(|(_, k)| k),
            Role::IdentityProvider => self
                .identity_provider
                .as_ref()
                .filter(|(a, _)| *a == party.address)
                .map(|(_, k)| k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_round_trip() {
        let kp = KeyPair::from_seed(1, Role::Client);
        let sig = kp.sign(b"x");
        assert!(verify(b"x", &sig, &kp.public));
    }

    #[test]
    fn wrong_key_rejects() {
        let k1 = KeyPair::from_seed(1, Role::Client);
        let k2 = KeyPair::from_seed(2, Role::Client);
        let sig = k1.sign(b"x");
        assert!(!verify(b"x", &sig, &k2.public));
    }

    #[test]
    fn wrong_message_rejects() {
        let kp = KeyPair::from_seed(1, Role::Client);
        let sig = kp.sign(b"x");
        assert!(!verify(b"y", &sig, &kp.public));
    }

    #[test]
    fn every_flipped_bit_rejects() {
        let kp = KeyPair::from_seed(3, Role::Server);
        let sig = kp.sign(b"payload");
        for byte in 0..32 {
            for bit in 0..8 {
                let mut bad = sig;
                bad.0[byte] ^= 1 << bit;
                assert!(!verify(b"payload", &bad, &kp.public));
            }
        }
    }

    #[test]
    fn signing_is_deterministic() {
        let kp = KeyPair::from_seed(9, Role::Client);
        assert_eq!(kp.sign(b"m"), kp.sign(b"m"));
    }

    #[test]
    fn registry_roles_do_not_leak_into_each_other() {
        let client = KeyPair::from_seed(1, Role::Client);
        let server = KeyPair::from_seed(2, Role::Server);
        let mut reg = IdentityRegistry::default();
        reg.register_client(client.party.address, client.public);
        reg.set_server(server.party.address, server.public);

        assert!(reg.party_key(&client.party).is_some());
        assert!(reg.party_key(&server.party).is_some());
        let crossed = PartyId::new(client.party.address, Role::Server);
        assert!(reg.party_key(&crossed).is_none());
    }
}
