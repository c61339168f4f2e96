//! Owner assignment for dense rows within a fiber.
//!
//! Every dense row (or column) id used inside a fiber gets exactly one owner
//! rank, picked uniformly at random *from the ranks that actually use it*, so
//! ownership never adds communication beyond the lambda bound. The pick is
//! counter-based — `pick(seed, id, n)` — which makes the distributed and the
//! serial paths bit-identical and independent of message arrival order.
//!
//! Ids in the fiber's domain that no rank uses get deterministic round-robin
//! fallback owners; they are memory placement only and never appear in any
//! communication graph.
//!
//! The distributed path shards responsibility for picking owners across the
//! fiber by contiguous near-equal ranges of the fiber's union of used ids,
//! exchanges one candidacy message per peer, picks, all-gathers the result,
//! and finally cross-checks a map checksum so diverging seeds surface as an
//! error instead of silent inconsistency.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::ProcGrid;
use crate::rng::{mix2, splitmix64};
use crate::transport::{tags, Communicator};

/// Owner rank (fiber-local index) for every id in a fiber's domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnerMap {
    owners: BTreeMap<usize, usize>,
}

impl OwnerMap {
    pub fn owner(&self, id: usize) -> Option<usize> {
        self.owners.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.owners.iter().map(|(&id, &o)| (id, o))
    }

    /// Sorted ids owned by the given fiber rank.
    pub fn owned_by(&self, rank: usize) -> Vec<usize> {
        self.owners
            .iter()
            .filter_map(|(&id, &o)| (o == rank).then_some(id))
            .collect()
    }

    /// Order-independent digest for cross-rank consistency checks.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0u64;
        for (&id, &o) in &self.owners {
            acc = acc.wrapping_add(splitmix64(mix2(id as u64, o as u64)));
        }
        acc
    }
}

/// Uniform pick among n candidates, keyed by (seed, id).
fn pick(seed: u64, id: usize, n: usize) -> usize {
    (mix2(seed, id as u64) % n as u64) as usize
}

fn fallback_owner(id: usize, nranks: usize) -> usize {
    id % nranks
}

/// Serial oracle: same contract as the distributed version, computed in one
/// address space. `used[r]` lists the global ids rank r uses (sorted or not);
/// `domain` is the fiber's id range for fallback assignment.
pub fn assign_owners_serial(used: &[Vec<usize>], domain: Range<usize>, seed: u64) -> OwnerMap {
    let nranks = used.len();
    let mut candidates: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (rank, ids) in used.iter().enumerate() {
        for &id in ids {
            candidates.entry(id).or_default().push(rank);
        }
    }
    let mut owners = BTreeMap::new();
    for (id, mut ranks) in candidates {
        ranks.sort_unstable();
        ranks.dedup();
        owners.insert(id, ranks[pick(seed, id, ranks.len())]);
    }
    for id in domain {
        owners
            .entry(id)
            .or_insert_with(|| fallback_owner(id, nranks));
    }
    OwnerMap { owners }
}

/// Distributed owner assignment over a fiber communicator. Bit-identical to
/// [`assign_owners_serial`] on the same (used lists, seed).
pub fn assign_owners_distributed(
    comm: &Communicator,
    my_used: &[usize],
    domain: Range<usize>,
    seed: u64,
) -> Result<OwnerMap> {
    let n = comm.size();
    let me = comm.rank();

    // Agree on the union of used ids; responsibility shards are contiguous
    // near-equal ranges of this union.
    let my_ids: Vec<u64> = my_used.iter().map(|&id| id as u64).collect();
    let gathered = comm.allgather(&my_ids)?;
    let mut union: Vec<usize> = gathered
        .iter()
        .flat_map(|ids| ids.iter().map(|&id| id as usize))
        .collect();
    union.sort_unstable();
    union.dedup();
    let shard_of = |id: usize| -> usize {
        let pos = union.binary_search(&id).expect("used id in union");
        shard_index(pos, union.len(), n)
    };

    // One candidacy message per peer: the ids I use whose pick is that
    // peer's responsibility.
    let mut outgoing: Vec<Vec<u64>> = vec![Vec::new(); n];
    for &id in my_used {
        outgoing[shard_of(id)].push(id as u64);
    }
    let mut candidates: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &id in outgoing[me].iter() {
        candidates.entry(id as usize).or_default().push(me);
    }
    for (peer, ids) in outgoing.iter().enumerate() {
        if peer != me {
            comm.send(peer, tags::OWNER_CANDIDACY, ids.clone());
        }
    }
    for peer in 0..n {
        if peer == me {
            continue;
        }
        let ids: Vec<u64> = comm.recv(peer, tags::OWNER_CANDIDACY)?;
        for id in ids {
            candidates.entry(id as usize).or_default().push(peer);
        }
    }

    // Pick owners for my shard and all-gather the full map.
    let mut my_owner: Vec<u64> = Vec::with_capacity(candidates.len() * 2);
    for (id, mut ranks) in candidates {
        ranks.sort_unstable();
        ranks.dedup();
        let owner = ranks[pick(seed, id, ranks.len())];
        my_owner.push(id as u64);
        my_owner.push(owner as u64);
    }
    let all = comm.allgather(&my_owner)?;
    let mut owners = BTreeMap::new();
    for part in all {
        for pair in part.chunks_exact(2) {
            owners.insert(pair[0] as usize, pair[1] as usize);
        }
    }
    for id in domain {
        owners.entry(id).or_insert_with(|| fallback_owner(id, n));
    }
    let map = OwnerMap { owners };

    // Checksum exchange over (map digest, seed): responsibility sharding
    // keeps the merged map consistent even under diverging seeds, so the
    // seed must be part of the exchanged digest to surface the mismatch.
    let sums = comm.allgather(&[mix2(map.checksum(), seed)])?;
    if sums.iter().any(|s| s[0] != sums[0][0]) {
        return Err(Error::SeedDivergence);
    }
    Ok(map)
}

fn shard_index(pos: usize, total: usize, parts: usize) -> usize {
    debug_assert!(pos < total);
    for p in 0..parts {
        if ProcGrid::range_of(total, parts, p).contains(&pos) {
            return p;
        }
    }
    unreachable!("position {pos} outside [0, {total})")
}

/// Stable per-fiber seed derivation shared by the engine and the predictor.
pub fn fiber_seed(seed: u64, kind: FiberKind, fiber_index: usize, z: usize) -> u64 {
    crate::rng::mix3(
        seed ^ (kind as u64).wrapping_mul(0x9e3779b97f4a7c15),
        fiber_index as u64,
        z as u64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum FiberKind {
    Row = 1,
    Col = 2,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run_ranks, RunOptions};

    #[test]
    fn single_candidate_wins() {
        let used = vec![vec![], vec![], vec![7]];
        let map = assign_owners_serial(&used, 0..0, 1);
        assert_eq!(map.owner(7), Some(2));
    }

    #[test]
    fn empty_need_lists_fallback_only() {
        let used = vec![vec![], vec![], vec![]];
        let map = assign_owners_serial(&used, 0..6, 99);
        assert_eq!(map.len(), 6);
        for id in 0..6 {
            assert_eq!(map.owner(id), Some(id % 3));
        }
    }

    #[test]
    fn owner_always_a_candidate() {
        let used = vec![vec![0, 2, 4, 6], vec![1, 2, 3, 4], vec![4, 5, 6, 7]];
        for seed in 0..50 {
            let map = assign_owners_serial(&used, 0..8, seed);
            for id in 0..8 {
                let cands: Vec<usize> = used
                    .iter()
                    .enumerate()
                    .filter_map(|(r, ids)| ids.contains(&id).then_some(r))
                    .collect();
                if !cands.is_empty() {
                    assert!(cands.contains(&map.owner(id).unwrap()));
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let used = vec![vec![0, 1, 2], vec![1, 2, 3]];
        let a = assign_owners_serial(&used, 0..4, 5);
        let b = assign_owners_serial(&used, 0..4, 5);
        assert_eq!(a, b);
        let c = assign_owners_serial(&used, 0..4, 6);
        assert_eq!(a.len(), c.len());
    }

    #[test]
    fn distributed_equals_serial() {
        let used = vec![vec![0, 2, 5, 9], vec![2, 3, 5], vec![0, 5, 7, 9, 11]];
        for seed in [1u64, 17, 123456] {
            let serial = assign_owners_serial(&used, 0..12, seed);
            let used_ref = &used;
            let (maps, _) = run_ranks(3, &RunOptions::default(), |comm| {
                assign_owners_distributed(&comm, &used_ref[comm.rank()], 0..12, seed)
            })
            .unwrap();
            for map in maps {
                assert_eq!(map, serial);
            }
        }
    }

    #[test]
    fn divergent_seeds_detected() {
        let used = vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3]];
        let used_ref = &used;
        let opts = RunOptions {
            timeout: std::time::Duration::from_secs(5),
            ..RunOptions::default()
        };
        let err = run_ranks(2, &opts, |comm| {
            let seed = if comm.rank() == 0 { 1 } else { 2 };
            assign_owners_distributed(&comm, &used_ref[comm.rank()], 0..4, seed)
        })
        .unwrap_err();
        assert!(matches!(err, Error::SeedDivergence), "{err}");
    }

    #[test]
    fn dense_case_balances_statistically() {
        // Every id used by all 3 ranks: expect about a third each.
        let ids: Vec<usize> = (0..60).collect();
        let used = vec![ids.clone(), ids.clone(), ids];
        let mut totals = [0usize; 3];
        for seed in 0..100 {
            let map = assign_owners_serial(&used, 0..60, seed);
            for (_, o) in map.iter() {
                totals[o] += 1;
            }
        }
        for t in totals {
            let avg = t as f64 / 100.0;
            assert!((avg - 20.0).abs() < 5.0, "avg owned {avg}");
        }
    }
}
