//! Point-to-point communication graphs and their compiled executable plans.
//!
//! A [`CommGraph`] lists, per ordered rank pair in a fiber, the sorted global
//! data-unit ids of the message between them. Broadcast-like graphs move
//! owned rows to their users (incoming messages hold unique ids); reduce-like
//! graphs move partial rows to their owners (outgoing messages hold unique
//! ids).
//!
//! [`compile_plan`] turns a graph into a strategy-specific [`CommPlan`]
//! against a rank's [`DenseRowStore`]:
//!
//! - `BB`: staging buffers with id-to-slot copy schedules on both sides.
//! - `RB`: the unique-id side goes directly into/out of the store, which is
//!   first re-laid out as the concatenation of per-peer groups in ascending
//!   peer order with owned rows after all groups; the non-unique side keeps
//!   a buffer.
//! - `NB`: both sides use maximally coalesced descriptor lists over the
//!   store as stored; duplicates of one id across outgoing messages simply
//!   reference the same offset.
//!
//! The executor counts every word it copies between the store and a plan
//! buffer; wire words are counted by the transport. That split is what the
//! zero-copy claims are tested against.

use std::collections::HashMap;

use serde::Serialize;

use crate::analysis::FiberLambda;
use crate::error::{Error, Result};
use crate::ownership::OwnerMap;
use crate::rng::{mix2, splitmix64};
use crate::transport::{Communicator, Descriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Sparse communication with both buffers.
    BB,
    /// Send/recv buffer only; store re-laid out on the unique side.
    RB,
    /// No buffers; descriptor-based zero copy.
    NB,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::BB => "bb",
            Strategy::RB => "rb",
            Strategy::NB => "nb",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bb" => Ok(Strategy::BB),
            "rb" | "sb" => Ok(Strategy::RB),
            "nb" => Ok(Strategy::NB),
            other => Err(Error::InvalidConfig(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Broadcast,
    Reduce,
}

/// Per-fiber point-to-point message sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    pub direction: Direction,
    pub fiber_size: usize,
    /// (sender, receiver) -> ascending global ids; no self or empty messages.
    messages: std::collections::BTreeMap<(usize, usize), Vec<usize>>,
}

impl CommGraph {
    pub fn messages(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        self.messages
            .iter()
            .map(|(&(s, d), ids)| (s, d, ids.as_slice()))
    }

    /// Outgoing messages of `rank`, ascending receiver.
    pub fn outgoing(&self, rank: usize) -> Vec<(usize, &[usize])> {
        self.messages
            .range((rank, 0)..(rank, usize::MAX))
            .map(|(&(_, d), ids)| (d, ids.as_slice()))
            .collect()
    }

    /// Incoming messages of `rank`, ascending sender.
    pub fn incoming(&self, rank: usize) -> Vec<(usize, &[usize])> {
        self.messages
            .iter()
            .filter(|(&(_, d), _)| d == rank)
            .map(|(&(s, _), ids)| (s, ids.as_slice()))
            .collect()
    }

    pub fn total_ids(&self) -> usize {
        self.messages.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Checks the direction-specific uniqueness invariant: per receiver the
    /// incoming ids are disjoint (broadcast), per sender the outgoing ids
    /// are disjoint (reduce).
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (s, d, ids) in self.messages() {
            if s == d {
                return Err(Error::InvalidConfig(format!("self message at rank {s}")));
            }
            if ids.is_empty() {
                return Err(Error::InvalidConfig(format!("empty message {s}->{d}")));
            }
            let unique_end = match self.direction {
                Direction::Broadcast => d,
                Direction::Reduce => s,
            };
            for &id in ids {
                if let Some(&prev) = seen.get(&(unique_end, id)) {
                    return Err(Error::InvalidConfig(format!(
                        "id {id} appears twice on the unique side of rank {unique_end} (messages {prev:?} and ({s},{d}))"
                    )));
                }
                seen.insert((unique_end, id), (s, d));
            }
        }
        Ok(())
    }

    /// Stable digest of the whole graph, for reuse checks.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0u64;
        for (s, d, ids) in self.messages() {
            for &id in ids {
                acc = acc.wrapping_add(splitmix64(mix2((s as u64) << 32 | d as u64, id as u64)));
            }
        }
        acc
    }
}

fn users_with_owner<'a>(
    lambda: &'a FiberLambda,
    owners: &OwnerMap,
) -> Result<Vec<(usize, &'a [usize], usize)>> {
    let mut out = Vec::with_capacity(lambda.len());
    for (&id, users) in lambda {
        let owner = owners.owner(id).ok_or(Error::OwnerOutsideLambda {
            id,
            owner: usize::MAX,
            users: users.clone(),
        })?;
        if !users.contains(&owner) {
            return Err(Error::OwnerOutsideLambda {
                id,
                owner,
                users: users.clone(),
            });
        }
        out.push((id, users.as_slice(), owner));
    }
    Ok(out)
}

/// Broadcast-like graph: owner sends `id` to every other user.
pub fn build_broadcast_graph(
    lambda: &FiberLambda,
    owners: &OwnerMap,
    fiber_size: usize,
) -> Result<CommGraph> {
    let mut messages = std::collections::BTreeMap::<(usize, usize), Vec<usize>>::new();
    for (id, users, owner) in users_with_owner(lambda, owners)? {
        for &u in users {
            if u != owner {
                messages.entry((owner, u)).or_default().push(id);
            }
        }
    }
    Ok(CommGraph {
        direction: Direction::Broadcast,
        fiber_size,
        messages,
    })
}

/// Reduce-like graph: every non-owner user sends its partial of `id` to the
/// owner. The (sender, receiver, id) set is exactly the transpose of the
/// broadcast graph.
pub fn build_reduce_graph(
    lambda: &FiberLambda,
    owners: &OwnerMap,
    fiber_size: usize,
) -> Result<CommGraph> {
    let mut messages = std::collections::BTreeMap::<(usize, usize), Vec<usize>>::new();
    for (id, users, owner) in users_with_owner(lambda, owners)? {
        for &u in users {
            if u != owner {
                messages.entry((u, owner)).or_default().push(id);
            }
        }
    }
    Ok(CommGraph {
        direction: Direction::Reduce,
        fiber_size,
        messages,
    })
}

/// Store layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutTag {
    SortedIds,
    PeerGrouped,
}

/// A rank's resident dense rows: one contiguous word array holding exactly
/// the owned and needed data units, each `du_len` words, plus the directory
/// from global id to slot.
#[derive(Debug, Clone)]
pub struct DenseRowStore {
    du_len: usize,
    ids: Vec<usize>,
    index: HashMap<usize, usize>,
    data: Vec<f64>,
    layout: LayoutTag,
}

impl DenseRowStore {
    /// `ids` must be sorted and unique.
    pub fn new(du_len: usize, ids: Vec<usize>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let index = ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        let data = vec![0.0; ids.len() * du_len];
        DenseRowStore {
            du_len,
            ids,
            index,
            data,
            layout: LayoutTag::SortedIds,
        }
    }

    pub fn du_len(&self) -> usize {
        self.du_len
    }

    pub fn words(&self) -> usize {
        self.data.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn layout(&self) -> LayoutTag {
        self.layout
    }

    pub fn slot_of(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn offset_of(&self, id: usize) -> Option<usize> {
        self.slot_of(id).map(|s| s * self.du_len)
    }

    pub fn row(&self, id: usize) -> Option<&[f64]> {
        self.offset_of(id).map(|o| &self.data[o..o + self.du_len])
    }

    pub fn row_mut(&mut self, id: usize) -> Option<&mut [f64]> {
        let o = self.offset_of(id)?;
        Some(&mut self.data[o..o + self.du_len])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    /// Permutes the store into the given id order.
    pub fn relayout(&mut self, order: Vec<usize>, tag: LayoutTag) {
        debug_assert_eq!(order.len(), self.ids.len());
        if order == self.ids {
            self.layout = tag;
            return;
        }
        let mut data = vec![0.0; self.data.len()];
        for (new_slot, &id) in order.iter().enumerate() {
            let old = self.index[&id] * self.du_len;
            data[new_slot * self.du_len..(new_slot + 1) * self.du_len]
                .copy_from_slice(&self.data[old..old + self.du_len]);
        }
        self.index = order.iter().enumerate().map(|(s, &id)| (id, s)).collect();
        self.ids = order;
        self.data = data;
        self.layout = tag;
    }

    /// Digest of the directory layout (not the values).
    pub fn layout_checksum(&self) -> u64 {
        let mut acc = 0u64;
        for (slot, &id) in self.ids.iter().enumerate() {
            acc = acc.wrapping_add(splitmix64(mix2(slot as u64, id as u64)));
        }
        acc
    }
}

/// How one peer transfer moves words between the store and the wire.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferExec {
    /// Copy through a staging buffer, one slot per id.
    Staged { slots: Vec<usize> },
    /// One contiguous store region, used directly.
    Direct { offset: usize, len: usize },
    /// Maximally coalesced descriptor list over the store as stored.
    Descriptors { descs: Vec<Descriptor> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeerTransfer {
    pub peer: usize,
    pub ids: Vec<usize>,
    pub words: usize,
    pub exec: TransferExec,
}

/// Executable realization of one graph at one rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommPlan {
    pub strategy: Strategy,
    pub direction: Direction,
    pub du_len: usize,
    pub sends: Vec<PeerTransfer>,
    pub recvs: Vec<PeerTransfer>,
}

impl CommPlan {
    pub fn send_words(&self) -> usize {
        self.sends.iter().map(|t| t.words).sum()
    }

    pub fn recv_words(&self) -> usize {
        self.recvs.iter().map(|t| t.words).sum()
    }

    pub fn checksum(&self) -> u64 {
        let mut acc = splitmix64(self.du_len as u64);
        for t in self.sends.iter().chain(&self.recvs) {
            for &id in &t.ids {
                acc = acc.wrapping_add(splitmix64(mix2(t.peer as u64, id as u64)));
            }
        }
        acc
    }

    /// Debug dump: rank, peers, id lists, descriptor lists, store layout.
    pub fn dump_json(&self, rank: usize, store: &DenseRowStore) -> serde_json::Value {
        serde_json::json!({
            "rank": rank,
            "strategy": self.strategy,
            "direction": self.direction,
            "du_len": self.du_len,
            "store_layout": {
                "order": store.layout(),
                "ids": store.ids(),
            },
            "sends": self.sends,
            "recvs": self.recvs,
        })
    }
}

fn staged(ids: &[usize], peer: usize, store: &DenseRowStore) -> Result<TransferExec> {
    let slots = ids
        .iter()
        .map(|&id| {
            store
                .slot_of(id)
                .ok_or(Error::MissingDirectoryEntry { id, peer })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferExec::Staged { slots })
}

/// Walks ids in message order and merges descriptors that are contiguous in
/// store memory; the result is maximal by construction.
fn coalesced(ids: &[usize], peer: usize, store: &DenseRowStore) -> Result<TransferExec> {
    let du = store.du_len();
    let mut descs: Vec<Descriptor> = Vec::new();
    for &id in ids {
        let offset = store
            .offset_of(id)
            .ok_or(Error::MissingDirectoryEntry { id, peer })?;
        match descs.last_mut() {
            Some(d) if d.offset + d.len == offset => d.len += du,
            _ => descs.push(Descriptor::new(offset, du)),
        }
    }
    Ok(TransferExec::Descriptors { descs })
}

/// Compiles `graph` for `my_rank` against `store` under `strategy`.
///
/// Under `RB` the store is re-laid out first: the unique side's per-peer
/// groups in ascending peer order, owned (remaining) ids after all groups.
pub fn compile_plan(
    graph: &CommGraph,
    my_rank: usize,
    store: &mut DenseRowStore,
    strategy: Strategy,
) -> Result<CommPlan> {
    let du = store.du_len();
    let out = graph.outgoing(my_rank);
    let inc = graph.incoming(my_rank);

    if strategy == Strategy::RB {
        let unique: &[(usize, &[usize])] = match graph.direction {
            Direction::Broadcast => &inc,
            Direction::Reduce => &out,
        };
        let mut order: Vec<usize> = Vec::with_capacity(store.ids().len());
        for (_, ids) in unique {
            order.extend_from_slice(ids);
        }
        let grouped: std::collections::HashSet<usize> = order.iter().copied().collect();
        let mut rest: Vec<usize> = store
            .ids()
            .iter()
            .copied()
            .filter(|id| !grouped.contains(id))
            .collect();
        rest.sort_unstable();
        for (_, ids) in unique {
            for &id in *ids {
                if store.slot_of(id).is_none() {
                    return Err(Error::MissingDirectoryEntry { id, peer: my_rank });
                }
            }
        }
        order.extend(rest);
        store.relayout(order, LayoutTag::PeerGrouped);
    }

    let compile_side = |side: &[(usize, &[usize])], is_unique: bool| -> Result<Vec<PeerTransfer>> {
        side.iter()
            .map(|&(peer, ids)| {
                let words = ids.len() * du;
                let exec = match (strategy, is_unique) {
                    (Strategy::BB, _) => staged(ids, peer, store)?,
                    (Strategy::RB, false) => staged(ids, peer, store)?,
                    (Strategy::RB, true) => {
                        let offset = store
                            .offset_of(ids[0])
                            .ok_or(Error::MissingDirectoryEntry { id: ids[0], peer })?;
                        debug_assert!(ids
                            .iter()
                            .enumerate()
                            .all(|(i, &id)| store.offset_of(id) == Some(offset + i * du)));
                        TransferExec::Direct { offset, len: words }
                    }
                    (Strategy::NB, _) => coalesced(ids, peer, store)?,
                };
                if let TransferExec::Descriptors { descs } = &exec {
                    debug_assert_eq!(descs.iter().map(|d| d.len).sum::<usize>(), words);
                }
                Ok(PeerTransfer {
                    peer,
                    ids: ids.to_vec(),
                    words,
                    exec,
                })
            })
            .collect()
    };

    let (sends_unique, recvs_unique) = match graph.direction {
        Direction::Broadcast => (false, true),
        Direction::Reduce => (true, false),
    };
    Ok(CommPlan {
        strategy,
        direction: graph.direction,
        du_len: du,
        sends: compile_side(&out, sends_unique)?,
        recvs: compile_side(&inc, recvs_unique)?,
    })
}

/// Words copied between the store and plan staging buffers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StagingStats {
    pub words: u64,
}

fn pack(store: &DenseRowStore, slots: &[usize], stats: &mut StagingStats) -> Vec<f64> {
    let du = store.du_len();
    let mut buf = Vec::with_capacity(slots.len() * du);
    for &s in slots {
        buf.extend_from_slice(&store.data()[s * du..(s + 1) * du]);
    }
    stats.words += buf.len() as u64;
    buf
}

/// Executes a broadcast-like plan: owned rows out, needed rows in.
pub fn execute_broadcast(
    plan: &CommPlan,
    store: &mut DenseRowStore,
    comm: &Communicator,
    tag: u64,
    stats: &mut StagingStats,
) -> Result<()> {
    debug_assert_eq!(plan.direction, Direction::Broadcast);
    let du = plan.du_len;
    for t in &plan.sends {
        match &t.exec {
            TransferExec::Staged { slots } => {
                let buf = pack(store, slots, stats);
                comm.send_buffer(t.peer, tag, &buf);
            }
            TransferExec::Direct { offset, len } => {
                comm.send_buffer(t.peer, tag, &store.data()[*offset..offset + len]);
            }
            TransferExec::Descriptors { descs } => {
                comm.send_gathered(t.peer, tag, descs, store.data());
            }
        }
    }
    for t in &plan.recvs {
        match &t.exec {
            TransferExec::Staged { slots } => {
                let mut buf = vec![0.0; t.words];
                comm.recv_buffer(t.peer, tag, &mut buf)?;
                for (i, &s) in slots.iter().enumerate() {
                    store.data_mut()[s * du..(s + 1) * du]
                        .copy_from_slice(&buf[i * du..(i + 1) * du]);
                }
                stats.words += t.words as u64;
            }
            TransferExec::Direct { offset, len } => {
                comm.recv_buffer(t.peer, tag, &mut store.data_mut()[*offset..offset + len])?;
            }
            TransferExec::Descriptors { descs } => {
                comm.recv_scattered(t.peer, tag, descs, store.data_mut())?;
            }
        }
    }
    Ok(())
}

/// Executes a reduce-like plan: partials out, incoming partials folded into
/// the store in ascending sender order.
pub fn execute_reduce(
    plan: &CommPlan,
    store: &mut DenseRowStore,
    comm: &Communicator,
    tag: u64,
    stats: &mut StagingStats,
) -> Result<()> {
    debug_assert_eq!(plan.direction, Direction::Reduce);
    let du = plan.du_len;
    for t in &plan.sends {
        match &t.exec {
            TransferExec::Staged { slots } => {
                let buf = pack(store, slots, stats);
                comm.send_buffer(t.peer, tag, &buf);
            }
            TransferExec::Direct { offset, len } => {
                comm.send_buffer(t.peer, tag, &store.data()[*offset..offset + len]);
            }
            TransferExec::Descriptors { descs } => {
                comm.send_gathered(t.peer, tag, descs, store.data());
            }
        }
    }
    for t in &plan.recvs {
        let words = comm.recv_words(t.peer, tag)?;
        if words.len() != t.words {
            return Err(Error::WordCountMismatch {
                sent: words.len(),
                expected: t.words,
                src: comm.global_rank(t.peer),
                dst: comm.my_global_rank(),
            });
        }
        match &t.exec {
            TransferExec::Staged { slots } => {
                // The plan buffer is the landing zone; folding out of it is
                // the counted unpack.
                for (i, &s) in slots.iter().enumerate() {
                    let dst = &mut store.data_mut()[s * du..(s + 1) * du];
                    for (d, v) in dst.iter_mut().zip(&words[i * du..(i + 1) * du]) {
                        *d += v;
                    }
                }
                stats.words += t.words as u64;
            }
            TransferExec::Direct { offset, len } => {
                let dst = &mut store.data_mut()[*offset..offset + len];
                for (d, v) in dst.iter_mut().zip(&words) {
                    *d += v;
                }
            }
            TransferExec::Descriptors { descs } => {
                let mut at = 0;
                for d in descs {
                    let dst = &mut store.data_mut()[d.offset..d.offset + d.len];
                    for (x, v) in dst.iter_mut().zip(&words[at..at + d.len]) {
                        *x += v;
                    }
                    at += d.len;
                }
            }
        }
    }
    Ok(())
}
