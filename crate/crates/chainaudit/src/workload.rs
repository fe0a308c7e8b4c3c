//! Synthetic request streams for driving the protocol at desk scale.
//!
//! A workload is generated up front, deterministically from a seed, as a
//! per-epoch list of `(client, request)` pairs. The first `load_epochs`
//! epochs are pure writes that walk the keyspace once so that later reads
//! always have something to find; the remaining epochs mix reads and writes
//! under a configurable key distribution.
//!
//! Three named profiles mirror common storage-benchmark mixes: an
//! update-heavy half-and-half split, a read-mostly split, and a read-mostly
//! split whose reads chase the most recently written key.

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{EpochSchedule, Request};
use crate::types::{Digest, Epoch, Key, OpKind, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KeyDistribution {
    /// Every key equally likely.
    Uniform,
    /// Zipf-skewed popularity with exponent `theta`.
    Zipfian { theta: f64 },
    /// Reads target the key written most recently; writes stay Zipfian.
    Latest { theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub clients: usize,
    pub keyspace: u64,
    /// Epochs of mixed traffic, after the load phase.
    pub epochs: u64,
    /// Leading write-only epochs that cover the keyspace once.
    pub load_epochs: u64,
    pub ops_per_epoch: u64,
    pub read_fraction: f64,
    pub distribution: KeyDistribution,
    /// Fix the per-epoch write count to `round((1 - read_fraction) * ops)`
    /// instead of drawing each operation's kind independently.
    pub deterministic_mix: bool,
}

impl WorkloadSpec {
    /// Update-heavy mix: half reads, half writes, Zipf-skewed keys.
    pub fn profile_a(clients: usize) -> Self {
        WorkloadSpec {
            clients,
            keyspace: 1_400,
            epochs: 71,
            load_epochs: 10,
            ops_per_epoch: 140,
            read_fraction: 0.5,
            distribution: KeyDistribution::Zipfian { theta: 0.99 },
            deterministic_mix: false,
        }
    }

    /// Read-mostly mix: 95% reads, Zipf-skewed keys.
    pub fn profile_b(clients: usize) -> Self {
        WorkloadSpec {
            read_fraction: 0.95,
            ..Self::profile_a(clients)
        }
    }

    /// Read-mostly mix whose reads chase the latest write.
    pub fn profile_d(clients: usize) -> Self {
        WorkloadSpec {
            read_fraction: 0.95,
            distribution: KeyDistribution::Latest { theta: 0.99 },
            ..Self::profile_a(clients)
        }
    }

    pub fn total_epochs(&self) -> u64 {
        self.load_epochs + self.epochs
    }

    pub fn validate(&self, schedule: &EpochSchedule) -> Result<(), WorkloadError> {
        if self.clients == 0 {
            return Err(WorkloadError::NoClients);
        }
        if self.keyspace == 0 {
            return Err(WorkloadError::EmptyKeyspace);
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(WorkloadError::BadReadFraction(self.read_fraction));
        }
        if schedule.interval < 2 * self.ops_per_epoch {
            return Err(WorkloadError::EpochTooShort {
                interval: schedule.interval,
                ops: self.ops_per_epoch,
            });
        }
        if self.load_epochs * self.ops_per_epoch < self.keyspace {
            return Err(WorkloadError::LoadTooSmall {
                slots: self.load_epochs * self.ops_per_epoch,
                keyspace: self.keyspace,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("workload needs at least one client")]
    NoClients,
    #[error("keyspace must not be empty")]
    EmptyKeyspace,
    #[error("read fraction {0} outside [0, 1]")]
    BadReadFraction(f64),
    #[error("epoch interval {interval} too short for {ops} operations")]
    EpochTooShort { interval: Tick, ops: u64 },
    #[error("load phase has {slots} write slots but the keyspace holds {keyspace} keys")]
    LoadTooSmall { slots: u64, keyspace: u64 },
}

/// One epoch's worth of requests, already assigned to clients.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub epoch: Epoch,
    pub requests: Vec<(usize, Request)>,
}

pub fn key_bytes(index: u64) -> Key {
    format!("key-{index:08}").into_bytes()
}

struct KeyPicker {
    keyspace: u64,
    distribution: KeyDistribution,
    zipf: Option<Zipf<f64>>,
    last_written: Option<u64>,
}

impl KeyPicker {
    fn new(spec: &WorkloadSpec) -> Self {
        let theta = match spec.distribution {
            KeyDistribution::Uniform => None,
            KeyDistribution::Zipfian { theta } | KeyDistribution::Latest { theta } => {
                Some(theta)
            }
        };
        KeyPicker {
            keyspace: spec.keyspace,
            distribution: spec.distribution,
            zipf: theta.map(|t| {
                Zipf::new(spec.keyspace as f64, t).expect("keyspace >= 1, theta >= 0")
            }),
            last_written: None,
        }
    }

    fn skewed(&self, rng: &mut ChaCha8Rng) -> u64 {
        match &self.zipf {
            Some(z) => (z.sample(rng) as u64 - 1).min(self.keyspace - 1),
            None => rng.random_range(0..self.keyspace),
        }
    }

    fn pick(&mut self, kind: OpKind, rng: &mut ChaCha8Rng) -> u64 {
        let index = match (self.distribution, kind) {
            (KeyDistribution::Latest { .. }, OpKind::Read) => {
                self.last_written.unwrap_or(0)
            }
            _ => self.skewed(rng),
        };
        if kind == OpKind::Write {
            self.last_written = Some(index);
        }
        index
    }
}

/// Expands the spec into per-epoch request lists. The same seed always
/// yields the same plans.
pub fn generate(
    spec: &WorkloadSpec,
    schedule: &EpochSchedule,
    seed: u64,
) -> Result<Vec<EpochPlan>, WorkloadError> {
    spec.validate(schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picker = KeyPicker::new(spec);
    let slot_width = schedule.interval / spec.ops_per_epoch;
    let mut plans = Vec::with_capacity(spec.total_epochs() as usize);
    let mut load_cursor = 0u64;

    for epoch in 0..spec.total_epochs() {
        let start = schedule.start_tick(epoch);
        let loading = epoch < spec.load_epochs;
        let kinds: Vec<OpKind> = if loading {
            vec![OpKind::Write; spec.ops_per_epoch as usize]
        } else if spec.deterministic_mix {
            let writes = ((1.0 - spec.read_fraction) * spec.ops_per_epoch as f64).round()
                as usize;
            let mut v = vec![OpKind::Write; writes];
            v.resize(spec.ops_per_epoch as usize, OpKind::Read);
            v.shuffle(&mut rng);
            v
        } else {
            (0..spec.ops_per_epoch)
                .map(|_| {
                    if rng.random_bool(spec.read_fraction) {
                        OpKind::Read
                    } else {
                        OpKind::Write
                    }
                })
                .collect()
        };

        let mut requests = Vec::with_capacity(kinds.len());
        for (slot, kind) in kinds.into_iter().enumerate() {
            let index = if loading {
                let k = load_cursor % spec.keyspace;
                load_cursor += 1;
                picker.last_written = Some(k);
                k
            } else {
                picker.pick(kind, &mut rng)
            };
            let t_begin = start + slot as Tick * slot_width;
            let client = slot % spec.clients;
            requests.push((
                client,
                Request {
                    kind,
                    key: key_bytes(index),
                    value_digest: match kind {
                        OpKind::Write => Digest(rng.random()),
                        OpKind::Read => crate::types::NOT_FOUND,
                    },
                    t_begin,
                    t_end: t_begin + 1,
                },
            ));
        }
        plans.push(EpochPlan { epoch, requests });
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn schedule() -> EpochSchedule {
        EpochSchedule { interval: 480 }
    }

    #[test]
    fn same_seed_reproduces_the_exact_plan() {
        let spec = WorkloadSpec::profile_a(4);
        let a = generate(&spec, &schedule(), 7).unwrap();
        let b = generate(&spec, &schedule(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec, &schedule(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn load_phase_covers_every_key_exactly_once() {
        let spec = WorkloadSpec::profile_a(4);
        let plans = generate(&spec, &schedule(), 1).unwrap();
        let mut counts: BTreeMap<Key, u32> = BTreeMap::new();
        for plan in plans.iter().take(spec.load_epochs as usize) {
            for (_, req) in &plan.requests {
                assert_eq!(req.kind, OpKind::Write);
                *counts.entry(req.key.clone()).or_default() += 1;
            }
        }
        assert_eq!(counts.len() as u64, spec.keyspace);
        assert!(counts.values().all(|c| *c == 1));
    }

    #[test]
    fn read_fractions_track_the_profile() {
        let mut write_only = WorkloadSpec::profile_a(4);
        write_only.read_fraction = 0.0;
        for (spec, want) in [
            (WorkloadSpec::profile_a(4), 0.5),
            (WorkloadSpec::profile_b(4), 0.95),
            (write_only, 0.0),
        ] {
            let plans = generate(&spec, &schedule(), 3).unwrap();
            let mixed: Vec<&Request> = plans
                .iter()
                .skip(spec.load_epochs as usize)
                .flat_map(|p| p.requests.iter().map(|(_, r)| r))
                .collect();
            let reads = mixed.iter().filter(|r| r.kind == OpKind::Read).count();
            let got = reads as f64 / mixed.len() as f64;
            assert!(
                (got - want).abs() < 0.02,
                "read fraction {got} too far from {want}"
            );
        }
    }

    #[test]
    fn zipfian_concentrates_and_uniform_spreads() {
        let mut spec = WorkloadSpec::profile_a(4);
        spec.keyspace = 100;
        spec.load_epochs = 1;
        spec.ops_per_epoch = 100;
        spec.epochs = 100;
        let plans = generate(&spec, &schedule(), 5).unwrap();
        let tally = |plans: &[EpochPlan]| {
            let mut counts: BTreeMap<Key, u64> = BTreeMap::new();
            for p in plans.iter().skip(1) {
                for (_, r) in &p.requests {
                    *counts.entry(r.key.clone()).or_default() += 1;
                }
            }
            counts
        };
        let zipf_counts = tally(&plans);
        let zipf_max = *zipf_counts.values().max().unwrap();
        let total: u64 = zipf_counts.values().sum();

        spec.distribution = KeyDistribution::Uniform;
        let plans = generate(&spec, &schedule(), 5).unwrap();
        let uni_counts = tally(&plans);
        let uni_max = *uni_counts.values().max().unwrap();

        let expected_uniform = total / 100;
        assert!(
            zipf_max > 5 * expected_uniform,
            "zipf hot key {zipf_max} vs uniform expectation {expected_uniform}"
        );
        assert!(
            uni_max < 2 * expected_uniform,
            "uniform hot key {uni_max} vs expectation {expected_uniform}"
        );

        // Chi-squared against the flat hypothesis: df = 99; anything under
        // 150 is comfortably inside the distribution for uniform draws.
        let expected = total as f64 / 100.0;
        let chi2: f64 = uni_counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 150.0, "uniform draw failed chi-squared: {chi2}");
    }

    #[test]
    fn latest_reads_chase_the_newest_write() {
        let spec = WorkloadSpec::profile_d(4);
        let plans = generate(&spec, &schedule(), 11).unwrap();
        let mut last_written: Option<Key> = None;
        let mut checked = 0;
        for plan in &plans {
            for (_, req) in &plan.requests {
                match req.kind {
                    OpKind::Write => last_written = Some(req.key.clone()),
                    OpKind::Read => {
                        assert_eq!(Some(&req.key), last_written.as_ref());
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 1_000, "profile is read-mostly: {checked}");
    }

    #[test]
    fn deterministic_mix_pins_the_write_count() {
        let mut spec = WorkloadSpec::profile_a(4);
        spec.deterministic_mix = true;
        spec.read_fraction = 0.69;
        let plans = generate(&spec, &schedule(), 2).unwrap();
        let want = ((1.0 - 0.69) * spec.ops_per_epoch as f64).round() as usize;
        for plan in plans.iter().skip(spec.load_epochs as usize) {
            let writes = plan
                .requests
                .iter()
                .filter(|(_, r)| r.kind == OpKind::Write)
                .count();
            assert_eq!(writes, want);
        }
    }

    #[test]
    fn per_client_sequences_stay_ordered_and_inside_the_epoch() {
        let spec = WorkloadSpec::profile_a(3);
        let sched = schedule();
        let plans = generate(&spec, &sched, 9).unwrap();
        for plan in &plans {
            let mut last_end: BTreeMap<usize, Tick> = BTreeMap::new();
            for (client, req) in &plan.requests {
                assert!(req.t_begin >= sched.start_tick(plan.epoch));
                assert!(req.t_end < sched.end_tick(plan.epoch));
                if let Some(prev) = last_end.get(client) {
                    assert!(req.t_begin > *prev, "client {client} overlaps itself");
                }
                last_end.insert(*client, req.t_end);
            }
        }
    }

    #[test]
    fn bad_specs_are_refused() {
        let sched = EpochSchedule { interval: 100 };
        let mut spec = WorkloadSpec::profile_a(2);
        assert_eq!(
            generate(&spec, &sched, 0).unwrap_err(),
            WorkloadError::EpochTooShort {
                interval: 100,
                ops: 140
            }
        );
        spec.ops_per_epoch = 10;
        spec.load_epochs = 3;
        assert_eq!(
            generate(&spec, &sched, 0).unwrap_err(),
            WorkloadError::LoadTooSmall {
                slots: 30,
                keyspace: 1_400
            }
        );
        spec.clients = 0;
        assert_eq!(
            generate(&spec, &sched, 0).unwrap_err(),
            WorkloadError::NoClients
        );
    }
}
