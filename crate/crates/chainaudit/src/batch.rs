//! Bulk evaluation helpers: fan work out over a thread pool when the
//! `parallel` feature is on (the default), or run the identical code on
//! one thread when it is off. Callers see the same signatures and the
//! same results either way.
//!
//! Also home to the exhaustive two-client history enumerator that the
//! audit-versus-oracle equivalence sweep runs on.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::types::{Address, Digest, OpKind, Operation, PartyId, Role, Tick, NOT_FOUND};

/// Sequential mapping, always available; the benchmark baseline.
pub fn map_sequential<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Maps `f` over `items`, in parallel when the feature allows.
#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Send + Sync) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    map_sequential(items, f)
}

/// True when `pred` holds for every item; stops early on a failure.
#[cfg(feature = "parallel")]
pub fn par_all<T: Sync>(items: &[T], pred: impl Fn(&T) -> bool + Send + Sync) -> bool {
    items.par_iter().all(pred)
}

#[cfg(not(feature = "parallel"))]
pub fn par_all<T>(items: &[T], pred: impl Fn(&T) -> bool) -> bool {
    items.iter().all(pred)
}

/// One operation slot in an interval skeleton: which client issued it and
/// the tick pair carved out of the endpoint interleaving.
pub type Slot = (usize, Tick, Tick);

/// Every strict interleaving of two sequential clients' operation
/// endpoints, for `a` ops on client 0 and `b` ops on client 1. Each
/// client's own operations never overlap; across clients every distinct
/// overlap pattern appears exactly once.
pub fn interval_skeletons(a: usize, b: usize) -> Vec<Vec<Slot>> {
    let total = 2 * (a + b);
    let mut out = Vec::new();
    let mut picks: Vec<bool> = Vec::with_capacity(total);

    fn rec(picks: &mut Vec<bool>, left_a: usize, left_b: usize, out: &mut Vec<Vec<bool>>) {
        if left_a == 0 && left_b == 0 {
            out.push(picks.clone());
            return;
        }
        if left_a > 0 {
            picks.push(true);
            rec(picks, left_a - 1, left_b, out);
            picks.pop();
        }
        if left_b > 0 {
            picks.push(false);
            rec(picks, left_a, left_b - 1, out);
            picks.pop();
        }
    }

    let mut merges = Vec::new();
    rec(&mut picks, 2 * a, 2 * b, &mut merges);

    for merge in merges {
        let mut slots: Vec<Slot> = Vec::with_capacity(a + b);
        let mut begun: [Option<(usize, Tick)>; 2] = [None, None];
        let mut counts = [0usize, 0usize];
        for (tick, from_a) in merge.iter().enumerate() {
            let c = usize::from(!from_a);
            match begun[c].take() {
                None => begun[c] = Some((counts[c], tick as Tick)),
                Some((_, t0)) => {
                    slots.push((c, t0, tick as Tick));
                    counts[c] += 1;
                }
            }
        }
        slots.sort_by_key(|&(_, t0, _)| t0);
        out.push(slots);
    }
    out
}

fn client_address(c: usize) -> PartyId {
    PartyId::new(Address([0xc0 + c as u8; 20]), Role::Client)
}

fn write_digest(index: usize) -> Digest {
    Digest([index as u8 + 1; 32])
}

const GARBAGE: Digest = Digest([0xee; 32]);

/// Materializes one concrete history from a skeleton plus choice masks:
/// which ops are reads, which of the two keys each touches, and what each
/// read claims to have returned (position 0 = missing, 1 = a digest
/// matching no write, 2+j = the value of the j-th write).
fn build_history(
    skeleton: &[Slot],
    kind_mask: u32,
    key_mask: u32,
    read_choice: &[usize],
) -> Vec<Operation> {
    let writes: Vec<usize> = (0..skeleton.len())
        .filter(|i| kind_mask & (1 << i) == 0)
        .collect();
    let mut next_read = 0;
    skeleton
        .iter()
        .enumerate()
        .map(|(i, &(client, t_begin, t_end))| {
            let is_read = kind_mask & (1 << i) != 0;
            let value_digest = if is_read {
                let choice = read_choice[next_read];
                next_read += 1;
                match choice {
                    0 => NOT_FOUND,
                    1 => GARBAGE,
                    j => {
                        let w = writes[j - 2];
                        Operation::read_digest(w as u128 + 1, write_digest(w))
                    }
                }
            } else {
                write_digest(i)
            };
            Operation {
                nonce: i as u128 + 1,
                client: client_address(client),
                kind: if is_read { OpKind::Read } else { OpKind::Write },
                key: vec![b'a' + (key_mask >> i & 1) as u8],
                value_digest,
                t_begin,
                t_end,
                client_sig: None,
                server_sig: None,
            }
        })
        .collect()
}

fn scan_skeleton(
    skeleton: &[Slot],
    check: &(impl Fn(&[Operation]) -> bool + ?Sized),
) -> Result<u64, Vec<Operation>> {
    let n = skeleton.len();
    let mut count = 0u64;
    for kind_mask in 0..1u32 << n {
        let reads = kind_mask.count_ones() as usize;
        let writes = n - reads;
        for key_mask in 0..1u32 << n {
            let mut read_choice = vec![0usize; reads];
            loop {
                let history = build_history(skeleton, kind_mask, key_mask, &read_choice);
                if !check(&history) {
                    return Err(history);
                }
                count += 1;
                // Mixed-radix increment: each read picks among missing,
                // unmatched, or one of the writes.
                let mut pos = 0;
                loop {
                    if pos == reads {
                        break;
                    }
                    read_choice[pos] += 1;
                    if read_choice[pos] < writes + 2 {
                        break;
                    }
                    read_choice[pos] = 0;
                    pos += 1;
                }
                if pos == reads {
                    break;
                }
            }
        }
    }
    Ok(count)
}

/// Runs `check` over every two-client, two-key history with exactly `ops`
/// operations. Returns how many histories passed, or the first failing
/// history encountered (which one is unspecified under parallel order).
pub fn sweep_two_client_histories(
    ops: usize,
    check: &(impl Fn(&[Operation]) -> bool + Sync),
) -> Result<u64, Vec<Operation>> {
    assert!(ops <= 16, "mask-based enumeration tops out at 16 operations");
    let mut skeletons = Vec::new();
    for a in 0..=ops {
        skeletons.extend(interval_skeletons(a, ops - a));
    }

    #[cfg(feature = "parallel")]
    {
        skeletons
            .par_iter()
            .map(|sk| scan_skeleton(sk, check))
            .try_reduce(|| 0, |x, y| Ok(x + y))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut total = 0u64;
        for sk in &skeletons {
            total += scan_skeleton(sk, check)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_map_agree() {
        let items: Vec<u64> = (0..1000).collect();
        let square = |x: &u64| x * x;
        assert_eq!(par_map(&items, square), map_sequential(&items, square));
    }

    #[test]
    fn par_all_finds_the_stray() {
        let items: Vec<u64> = (0..1000).collect();
        assert!(par_all(&items, |x| *x < 1000));
        assert!(!par_all(&items, |x| *x != 977));
    }

    #[test]
    fn skeleton_counts_match_the_merge_arithmetic() {
        // Choosing which of the 2(a+b) endpoint slots belong to client 0:
        // C(2n, 2a) merges.
        assert_eq!(interval_skeletons(0, 0).len(), 1);
        assert_eq!(interval_skeletons(1, 1).len(), 6);
        assert_eq!(interval_skeletons(2, 1).len(), 15);
        assert_eq!(interval_skeletons(2, 3).len(), 210);
        let n5: usize = (0..=5).map(|a| interval_skeletons(a, 5 - a).len()).sum();
        assert_eq!(n5, 512);
    }

    #[test]
    fn skeletons_keep_each_client_sequential() {
        for sk in interval_skeletons(3, 2) {
            let mut last_end = [None, None];
            for (c, t0, t1) in sk {
                assert!(t0 < t1);
                if let Some(prev) = last_end[c] {
                    assert!(t0 > prev);
                }
                last_end[c] = Some(t1);
            }
        }
    }

    #[test]
    fn two_op_sweep_visits_every_variant_once() {
        // 8 skeletons; per skeleton 4 key pairs times kind mixes:
        // ww = 1, wr = rw = 3 (missing, unmatched, the write), rr = 4,
        // so 4 * (1 + 3 + 3 + 4) = 44; 8 * 44 = 352.
        let count = sweep_two_client_histories(2, &|_| true).unwrap();
        assert_eq!(count, 352);
    }

    #[test]
    fn failing_check_surfaces_a_counterexample() {
        let bad = sweep_two_client_histories(2, &|h| {
            !(h[0].kind == OpKind::Read && h[0].value_digest == GARBAGE)
        });
        let history = bad.unwrap_err();
        assert_eq!(history[0].kind, OpKind::Read);
        assert_eq!(history[0].value_digest, GARBAGE);
    }

    #[test]
    fn histories_number_their_ops_distinctly() {
        sweep_two_client_histories(3, &|h| {
            let mut nonces: Vec<_> = h.iter().map(|o| o.nonce).collect();
            nonces.sort_unstable();
            nonces.dedup();
            nonces.len() == h.len()
        })
        .unwrap();
    }
}
