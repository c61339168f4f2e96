//! Deterministic in-process multi-rank transport.
//!
//! One worker thread per rank; the only shared structure is the transport
//! itself: mailbox queues keyed by (context, tag, src, dst) with FIFO,
//! no-loss, no-duplication delivery. Sends complete locally (buffered);
//! receives block until matched or a configurable timeout converts the hang
//! into a deadlock error naming both endpoints. All delivered payloads and
//! collective results are a pure function of the per-rank programs and their
//! inputs, independent of thread scheduling.
//!
//! Collectives are implemented naively (linear exchange, ascending-rank
//! reduction order): correctness and exact volume counting, not network
//! efficiency, is the simulator's job.
//!
//! Instrumentation: per-rank counters of received payload units, split by
//! payload kind (dense words / index ids / sparse entries) plus message
//! counts. Staging copies are *not* counted here; the plan executor counts
//! those separately, which is what makes the zero-copy accounting honest.
//!
//! An optional trace collects one record per delivered message:
//! `(phase, src, dst, context, words)`. [`write_trace`] emits fixed-width
//! 24-byte little-endian records: `u8 phase, u8 pad, u16 src, u16 dst,
//! u16 pad, u64 context, u64 words`, sorted by (context, dst, src, seq).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::sparse::Entry;

/// Execution phase label, used only for trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Setup = 0,
    PreComm = 1,
    Compute = 2,
    PostComm = 3,
    Assembly = 4,
}

/// A contiguous region of a rank's dense store, in word units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Descriptor {
    pub offset: usize,
    pub len: usize,
}

impl Descriptor {
    pub fn new(offset: usize, len: usize) -> Self {
        Descriptor { offset, len }
    }
}

/// Message payload. Units are homogeneous: one f64 word, one index id, or
/// one sparse entry each count as one payload unit toward the respective
/// counter.
#[derive(Debug, Clone)]
pub enum Payload {
    Words(Vec<f64>),
    Ids(Vec<u64>),
    Entries(Vec<Entry>),
}

impl Payload {
    fn units(&self) -> usize {
        match self {
            Payload::Words(v) => v.len(),
            Payload::Ids(v) => v.len(),
            Payload::Entries(v) => v.len(),
        }
    }
}

/// Items that can cross the wire as a homogeneous payload.
pub trait WireItem: Clone + Send + 'static {
    fn wrap(items: Vec<Self>) -> Payload;
    fn unwrap(payload: Payload) -> Option<Vec<Self>>;
}

impl WireItem for f64 {
    fn wrap(items: Vec<Self>) -> Payload {
        Payload::Words(items)
    }
    fn unwrap(payload: Payload) -> Option<Vec<Self>> {
        match payload {
            Payload::Words(v) => Some(v),
            _ => None,
        }
    }
}

impl WireItem for u64 {
    fn wrap(items: Vec<Self>) -> Payload {
        Payload::Ids(items)
    }
    fn unwrap(payload: Payload) -> Option<Vec<Self>> {
        match payload {
            Payload::Ids(v) => Some(v),
            _ => None,
        }
    }
}

impl WireItem for Entry {
    fn wrap(items: Vec<Self>) -> Payload {
        Payload::Entries(items)
    }
    fn unwrap(payload: Payload) -> Option<Vec<Self>> {
        match payload {
            Payload::Entries(v) => Some(v),
            _ => None,
        }
    }
}

/// Trace record of one delivered message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub phase: u8,
    pub src: u16,
    pub dst: u16,
    pub context: u64,
    pub words: u64,
    pub seq: u64,
}

/// Snapshot of a rank's cumulative receive counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub words: u64,
    pub ids: u64,
    pub entries: u64,
    pub msgs: u64,
}

impl Counters {
    pub fn delta(&self, earlier: &Counters) -> Counters {
        Counters {
            words: self.words - earlier.words,
            ids: self.ids - earlier.ids,
            entries: self.entries - earlier.entries,
            msgs: self.msgs - earlier.msgs,
        }
    }
}

type MsgKey = (u64, u64, usize, usize); // (context, tag, src, dst)

struct Shared {
    mailboxes: HashMap<MsgKey, VecDeque<Payload>>,
    seq: HashMap<(usize, usize, u64), u64>,
    trace: Vec<TraceRecord>,
    poison: Option<String>,
}

struct CounterCell {
    words: AtomicU64,
    ids: AtomicU64,
    entries: AtomicU64,
    msgs: AtomicU64,
    phase: AtomicU8,
}

pub struct Transport {
    nranks: usize,
    timeout: Duration,
    trace_enabled: bool,
    shared: Mutex<Shared>,
    available: Condvar,
    counters: Vec<CounterCell>,
    next_context: AtomicU64,
}

impl Transport {
    pub fn new(nranks: usize, timeout: Duration, trace_enabled: bool) -> Arc<Self> {
        let counters = (0..nranks)
            .map(|_| CounterCell {
                words: AtomicU64::new(0),
                ids: AtomicU64::new(0),
                entries: AtomicU64::new(0),
                msgs: AtomicU64::new(0),
                phase: AtomicU8::new(Phase::Setup as u8),
            })
            .collect();
        Arc::new(Transport {
            nranks,
            timeout,
            trace_enabled,
            shared: Mutex::new(Shared {
                mailboxes: HashMap::new(),
                seq: HashMap::new(),
                trace: Vec::new(),
                poison: None,
            }),
            available: Condvar::new(),
            counters,
            next_context: AtomicU64::new(1),
        })
    }

    pub fn nranks(&self) -> usize {
        self.nranks
    }

    fn alloc_context(&self) -> u64 {
        self.next_context.fetch_add(1, Ordering::Relaxed)
    }

    /// World communicator for one rank.
    pub fn world(self: &Arc<Self>, rank: usize) -> Communicator {
        Communicator {
            transport: Arc::clone(self),
            context: 0,
            members: Arc::new((0..self.nranks).collect()),
            my_index: rank,
        }
    }

    pub fn set_phase(&self, rank: usize, phase: Phase) {
        self.counters[rank]
            .phase
            .store(phase as u8, Ordering::Relaxed);
    }

    pub fn counters_of(&self, rank: usize) -> Counters {
        let c = &self.counters[rank];
        Counters {
            words: c.words.load(Ordering::Relaxed),
            ids: c.ids.load(Ordering::Relaxed),
            entries: c.entries.load(Ordering::Relaxed),
            msgs: c.msgs.load(Ordering::Relaxed),
        }
    }

    /// Poisons the transport; every blocked or future receive fails fast.
    pub fn abort(&self, reason: impl Into<String>) {
        let mut shared = self.shared.lock().unwrap();
        if shared.poison.is_none() {
            shared.poison = Some(reason.into());
        }
        self.available.notify_all();
    }

    fn push(&self, key: MsgKey, payload: Payload) {
        let mut shared = self.shared.lock().unwrap();
        shared.mailboxes.entry(key).or_default().push_back(payload);
        self.available.notify_all();
    }

    fn pop(&self, key: MsgKey) -> Result<Payload> {
        let (context, tag, src, dst) = key;
        let deadline = Instant::now() + self.timeout;
        let mut shared = self.shared.lock().unwrap();
        loop {
            if let Some(reason) = &shared.poison {
                return Err(Error::Aborted {
                    rank: dst,
                    reason: reason.clone(),
                });
            }
            if let Some(p) = shared.mailboxes.get_mut(&key).and_then(VecDeque::pop_front) {
                let units = p.units() as u64;
                let cell = &self.counters[dst];
                match &p {
                    Payload::Words(_) => cell.words.fetch_add(units, Ordering::Relaxed),
                    Payload::Ids(_) => cell.ids.fetch_add(units, Ordering::Relaxed),
                    Payload::Entries(_) => cell.entries.fetch_add(units, Ordering::Relaxed),
                };
                cell.msgs.fetch_add(1, Ordering::Relaxed);
                if self.trace_enabled {
                    let seq = shared.seq.entry((src, dst, context)).or_insert(0);
                    let record = TraceRecord {
                        phase: cell.phase.load(Ordering::Relaxed),
                        src: src as u16,
                        dst: dst as u16,
                        context,
                        words: units,
                        seq: *seq,
                    };
                    *seq += 1;
                    shared.trace.push(record);
                }
                return Ok(p);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Deadlock {
                    src,
                    dst,
                    context,
                    tag,
                });
            }
            let (guard, _timed_out) = self.available.wait_timeout(shared, deadline - now).unwrap();
            shared = guard;
        }
    }

    fn take_trace(&self) -> Vec<TraceRecord> {
        let mut shared = self.shared.lock().unwrap();
        let mut trace = std::mem::take(&mut shared.trace);
        trace.sort_by_key(|r| (r.context, r.dst, r.src, r.seq));
        trace
    }
}

/// A communication scope: a subset of ranks with dense indices 0..n-1 and a
/// context id distinct from every other live communicator.
#[derive(Clone)]
pub struct Communicator {
    transport: Arc<Transport>,
    context: u64,
    members: Arc<Vec<usize>>,
    my_index: usize,
}

/// Fixed tags; contexts already separate scopes, tags separate operations
/// within one scope.
pub mod tags {
    pub const SPLIT_GATHER: u64 = 1;
    pub const SPLIT_RESULT: u64 = 2;
    pub const ALLGATHER: u64 = 3;
    pub const REDUCE_SCATTER: u64 = 4;
    pub const BARRIER: u64 = 5;
    pub const OWNER_CANDIDACY: u64 = 16;
    pub const OWNER_MAP: u64 = 17;
    pub const OWNER_CHECKSUM: u64 = 18;
    pub const PLAN_ROWS: u64 = 32;
    pub const PLAN_COLS: u64 = 33;
    pub const PLAN_REDUCE: u64 = 34;
    pub const BASELINE: u64 = 35;
}

impl Communicator {
    /// Rank within this communicator.
    pub fn rank(&self) -> usize {
        self.my_index
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn context(&self) -> u64 {
        self.context
    }

    /// Global (world) rank of a member.
    pub fn global_rank(&self, index: usize) -> usize {
        self.members[index]
    }

    pub fn my_global_rank(&self) -> usize {
        self.members[self.my_index]
    }

    pub fn set_phase(&self, phase: Phase) {
        self.transport.set_phase(self.my_global_rank(), phase);
    }

    pub fn counters(&self) -> Counters {
        self.transport.counters_of(self.my_global_rank())
    }

    fn key_to(&self, dst: usize, tag: u64) -> MsgKey {
        (
            self.context,
            tag,
            self.members[self.my_index],
            self.members[dst],
        )
    }

    fn key_from(&self, src: usize, tag: u64) -> MsgKey {
        (
            self.context,
            tag,
            self.members[src],
            self.members[self.my_index],
        )
    }

    pub fn send<T: WireItem>(&self, dst: usize, tag: u64, items: Vec<T>) {
        self.transport.push(self.key_to(dst, tag), T::wrap(items));
    }

    pub fn recv<T: WireItem>(&self, src: usize, tag: u64) -> Result<Vec<T>> {
        let key = self.key_from(src, tag);
        let payload = self.transport.pop(key)?;
        T::unwrap(payload).ok_or(Error::PayloadKind {
            src: key.2,
            dst: key.3,
            tag,
        })
    }

    /// Sends a contiguous word region.
    pub fn send_buffer(&self, dst: usize, tag: u64, region: &[f64]) {
        self.send(dst, tag, region.to_vec());
    }

    /// Receives into a contiguous word region; the payload length must match
    /// exactly or nothing is written.
    pub fn recv_buffer(&self, src: usize, tag: u64, region: &mut [f64]) -> Result<usize> {
        let words: Vec<f64> = self.recv(src, tag)?;
        if words.len() != region.len() {
            return Err(Error::WordCountMismatch {
                sent: words.len(),
                expected: region.len(),
                src: self.members[src],
                dst: self.members[self.my_index],
            });
        }
        region.copy_from_slice(&words);
        Ok(words.len())
    }

    /// Sends the concatenation of the described store regions, in order,
    /// without staging them into an intermediate buffer.
    pub fn send_gathered(&self, dst: usize, tag: u64, descs: &[Descriptor], store: &[f64]) {
        let total: usize = descs.iter().map(|d| d.len).sum();
        let mut payload = Vec::with_capacity(total);
        for d in descs {
            payload.extend_from_slice(&store[d.offset..d.offset + d.len]);
        }
        self.send(dst, tag, payload);
    }

    /// Receives a payload and scatters it into the described store regions,
    /// in order. Errors (with no partial write) if the payload word count
    /// does not match the descriptor total.
    pub fn recv_scattered(
        &self,
        src: usize,
        tag: u64,
        descs: &[Descriptor],
        store: &mut [f64],
    ) -> Result<usize> {
        let words: Vec<f64> = self.recv(src, tag)?;
        let total: usize = descs.iter().map(|d| d.len).sum();
        if words.len() != total {
            return Err(Error::WordCountMismatch {
                sent: words.len(),
                expected: total,
                src: self.members[src],
                dst: self.members[self.my_index],
            });
        }
        let mut at = 0;
        for d in descs {
            store[d.offset..d.offset + d.len].copy_from_slice(&words[at..at + d.len]);
            at += d.len;
        }
        Ok(total)
    }

    /// Receives a raw word payload (used by reduce-style plan execution to
    /// fold incoming partials straight into the store).
    pub fn recv_words(&self, src: usize, tag: u64) -> Result<Vec<f64>> {
        self.recv(src, tag)
    }

    /// Every member ends up with all members' parts, in rank order.
    pub fn allgather<T: WireItem>(&self, part: &[T]) -> Result<Vec<Vec<T>>> {
        for dst in 0..self.size() {
            if dst != self.my_index {
                self.send(dst, tags::ALLGATHER, part.to_vec());
            }
        }
        let mut parts = Vec::with_capacity(self.size());
        for src in 0..self.size() {
            if src == self.my_index {
                parts.push(part.to_vec());
            } else {
                parts.push(self.recv(src, tags::ALLGATHER)?);
            }
        }
        Ok(parts)
    }

    /// Reduce-scatter: every member supplies a full vector segmented by
    /// `seg_counts` (one segment per member); member m receives the
    /// elementwise sum of segment m over all members, summed in ascending
    /// source-rank order starting from its own contribution.
    pub fn reduce_scatter(&self, full: &[f64], seg_counts: &[usize]) -> Result<Vec<f64>> {
        if seg_counts.len() != self.size() {
            return Err(Error::InvalidConfig(format!(
                "reduce_scatter: {} segment counts for {} members",
                seg_counts.len(),
                self.size()
            )));
        }
        let total: usize = seg_counts.iter().sum();
        if full.len() != total {
            return Err(Error::InvalidConfig(format!(
                "reduce_scatter: vector length {} != segment total {total}",
                full.len()
            )));
        }
        let mut offsets = Vec::with_capacity(self.size() + 1);
        let mut acc = 0;
        for &c in seg_counts {
            offsets.push(acc);
            acc += c;
        }
        offsets.push(acc);

        for dst in 0..self.size() {
            if dst != self.my_index {
                self.send_buffer(
                    dst,
                    tags::REDUCE_SCATTER,
                    &full[offsets[dst]..offsets[dst + 1]],
                );
            }
        }
        let mine = self.my_index;
        let mut out = full[offsets[mine]..offsets[mine + 1]].to_vec();
        for src in 0..self.size() {
            if src == mine {
                continue;
            }
            let seg: Vec<f64> = self.recv(src, tags::REDUCE_SCATTER)?;
            if seg.len() != out.len() {
                return Err(Error::WordCountMismatch {
                    sent: seg.len(),
                    expected: out.len(),
                    src: self.members[src],
                    dst: self.members[mine],
                });
            }
            for (o, v) in out.iter_mut().zip(seg) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Collective split: members with equal color form a new communicator
    /// ordered by (key, parent rank). Member 0 coordinates, assigning context
    /// ids in ascending color order so the result is deterministic.
    pub fn split(&self, color: usize, key: usize) -> Result<Communicator> {
        if self.my_index == 0 {
            let mut pairs: Vec<(usize, usize, usize)> = vec![(color, key, 0)];
            for src in 1..self.size() {
                let msg: Vec<u64> = self.recv(src, tags::SPLIT_GATHER)?;
                pairs.push((msg[0] as usize, msg[1] as usize, src));
            }
            let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for (c, k, m) in pairs {
                groups.entry(c).or_default().push((k, m));
            }
            let mut my_result = None;
            for (_, mut group) in groups {
                group.sort_unstable();
                let ctx = self.transport.alloc_context();
                let members: Arc<Vec<usize>> =
                    Arc::new(group.iter().map(|&(_, m)| self.members[m]).collect());
                for (pos, &(_, m)) in group.iter().enumerate() {
                    if m == 0 {
                        my_result = Some(Communicator {
                            transport: Arc::clone(&self.transport),
                            context: ctx,
                            members: Arc::clone(&members),
                            my_index: pos,
                        });
                    } else {
                        let mut msg: Vec<u64> = vec![ctx, pos as u64];
                        msg.extend(members.iter().map(|&g| g as u64));
                        self.send(m, tags::SPLIT_RESULT, msg);
                    }
                }
            }
            Ok(my_result.expect("splitting member 0 always lands in a group"))
        } else {
            self.send(0, tags::SPLIT_GATHER, vec![color as u64, key as u64]);
            let msg: Vec<u64> = self.recv(0, tags::SPLIT_RESULT)?;
            let context = msg[0];
            let my_index = msg[1] as usize;
            let members = Arc::new(msg[2..].iter().map(|&g| g as usize).collect());
            Ok(Communicator {
                transport: Arc::clone(&self.transport),
                context,
                members,
                my_index,
            })
        }
    }

    pub fn barrier(&self) -> Result<()> {
        let empty: Vec<u64> = Vec::new();
        for dst in 0..self.size() {
            if dst != self.my_index {
                self.send(dst, tags::BARRIER, empty.clone());
            }
        }
        for src in 0..self.size() {
            if src != self.my_index {
                let _: Vec<u64> = self.recv(src, tags::BARRIER)?;
            }
        }
        Ok(())
    }
}

/// Options for a multi-rank run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub timeout: Duration,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            timeout: Duration::from_secs(30),
            trace: false,
        }
    }
}

/// Runs one worker thread per rank; returns the per-rank outputs in rank
/// order plus the trace (when enabled). The first non-abort error wins.
pub fn run_ranks<T, F>(nranks: usize, opts: &RunOptions, f: F) -> Result<(Vec<T>, Vec<TraceRecord>)>
where
    T: Send,
    F: Fn(Communicator) -> Result<T> + Sync,
{
    let transport = Transport::new(nranks, opts.timeout, opts.trace);
    let results: Vec<Result<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..nranks)
            .map(|rank| {
                let comm = transport.world(rank);
                let transport = Arc::clone(&transport);
                let f = &f;
                scope.spawn(move || {
                    let outcome = catch_unwind(AssertUnwindSafe(|| f(comm)));
                    match outcome {
                        Ok(res) => {
                            if res.is_err() {
                                transport.abort(format!("rank {rank} failed"));
                            }
                            res
                        }
                        Err(panic) => {
                            let reason = panic_message(&panic);
                            transport.abort(format!("rank {rank} panicked: {reason}"));
                            Err(Error::Aborted {
                                rank,
                                reason: format!("panic: {reason}"),
                            })
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker join"))
            .collect()
    });

    let mut outputs = Vec::with_capacity(nranks);
    let mut first_abort = None;
    for res in results {
        match res {
            Ok(v) => outputs.push(v),
            Err(e @ Error::Aborted { .. }) => {
                if first_abort.is_none() {
                    first_abort = Some(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = first_abort {
        return Err(e);
    }
    Ok((outputs, transport.take_trace()))
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

/// Writes trace records in the documented fixed-width 24-byte layout.
pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let mut rec = [0u8; 24];
        rec[0] = r.phase;
        rec[2..4].copy_from_slice(&r.src.to_le_bytes());
        rec[4..6].copy_from_slice(&r.dst.to_le_bytes());
        rec[8..16].copy_from_slice(&r.context.to_le_bytes());
        rec[16..24].copy_from_slice(&r.words.to_le_bytes());
        file.write_all(&rec)?;
    }
    file.flush()?;
    Ok(())
}
