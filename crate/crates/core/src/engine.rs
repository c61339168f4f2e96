//! Four-phase distributed execution of SDDMM and SpMM over the 3D grid.
//!
//! Setup (once): split the world into row/column/depth fibers, gather the
//! fiber block over the depth fiber, assign dense-row owners per fiber,
//! build the communication graphs and compile them into plans, and place
//! initial owned values. Then per iteration: PreComm moves needed dense
//! rows, Compute runs the local kernel on the gathered block, PostComm
//! reduces partials (depth-fiber reduce-scatter for SDDMM, the reduce-like
//! point-to-point plan for SpMM). Graphs and plans are never rebuilt across
//! iterations; only values move.
//!
//! The sparsity-agnostic baseline (`Mode::Dense3d`) keeps the identical
//! ownership layout, Compute, and PostComm but replaces PreComm with fiber
//! all-gathers of every owned chunk regardless of need, and stores the full
//! fiber ranges.
//!
//! Result assembly gathers the distributed output into one address space for
//! verification; it runs outside the timed phases and is not part of the
//! algorithm.

use std::sync::Arc;
use std::time::Instant;

use crate::analysis::FiberLambda;
use crate::error::{Error, Result};
use crate::grid::{dist2d, localize_at, split_z, LocalBlock, ProcGrid};
use crate::kernels::{local_sddmm, local_spmm, LocalDense};
use crate::metrics::{MetricsReport, RankMetrics, RunSummary};
use crate::ownership::{assign_owners_distributed, fiber_seed, FiberKind, OwnerMap};
use crate::plan::{
    build_broadcast_graph, build_reduce_graph, compile_plan, execute_broadcast, execute_reduce,
    CommPlan, DenseRowStore, StagingStats, Strategy,
};
use crate::rng::{mix2, splitmix64};
use crate::sparse::{DenseMatrix, Entry, SparseMatrix};
use crate::transport::{run_ranks, tags, Communicator, Phase, RunOptions, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SparseAware,
    Dense3d,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::SparseAware => "sparse",
            Mode::Dense3d => "dense3d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Sddmm,
    Spmm,
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Sddmm => "sddmm",
            Kernel::Spmm => "spmm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub grid: ProcGrid,
    pub k: usize,
    pub strategy: Strategy,
    pub mode: Mode,
    pub iterations: usize,
    pub seed: u64,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be >= 1".into()));
        }
        if self.grid.z == 0 || !self.k.is_multiple_of(self.grid.z) {
            return Err(Error::InvalidConfig(format!(
                "Z={} must divide K={}",
                self.grid.z, self.k
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }

    fn du_len(&self) -> usize {
        self.k / self.grid.z
    }
}

/// Deterministic per-iteration value update applied by owners: scale by 0.5
/// and add a global-id-seeded unit vector. Exercises plan reuse with
/// changing data.
pub const ROW_UPDATE_SALT: u64 = 0xA11CE;
pub const COL_UPDATE_SALT: u64 = 0xB0B;

fn update_position(id: usize, salt: u64, k: usize) -> usize {
    (splitmix64(mix2(salt, id as u64)) % k as u64) as usize
}

/// Reference-side update of a full dense matrix, matching what owners apply
/// to their chunks in [`iterate`].
pub fn apply_reference_update(m: &mut DenseMatrix, salt: u64) {
    let k = m.ncols();
    for i in 0..m.nrows() {
        let pos = update_position(i, salt, k);
        let row = m.row_mut(i);
        for w in row.iter_mut() {
            *w *= 0.5;
        }
        row[pos] += 1.0;
    }
}

/// Distributed run output plus the gathered verification result.
pub struct RunOutput {
    pub sddmm: Option<SparseMatrix>,
    pub spmm: Option<DenseMatrix>,
    pub metrics: MetricsReport,
    pub trace: Vec<TraceRecord>,
}

struct WorkerOut {
    rank: usize,
    z: usize,
    sddmm_entries: Vec<Entry>,
    spmm_rows: Vec<(usize, Vec<f64>)>,
    metrics: RankMetrics,
}

/// Runs `kernel` on the grid described by `config`. `a0` must be M x K and
/// `b0` N x K; both are the initial owner-held values (A is ignored as input
/// by SpMM but still places ownership).
pub fn run(
    s: &SparseMatrix,
    a0: &DenseMatrix,
    b0: &DenseMatrix,
    kernel: Kernel,
    config: &KernelConfig,
    opts: &RunOptions,
) -> Result<RunOutput> {
    config.validate()?;
    if a0.nrows() != s.nrows() || a0.ncols() != config.k {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, expected {}x{}",
            a0.nrows(),
            a0.ncols(),
            s.nrows(),
            config.k
        )));
    }
    if b0.nrows() != s.ncols() || b0.ncols() != config.k {
        return Err(Error::DimensionMismatch(format!(
            "B is {}x{}, expected {}x{}",
            b0.nrows(),
            b0.ncols(),
            s.ncols(),
            config.k
        )));
    }

    let grid = config.grid;
    let blocks = dist2d(s, &grid);
    let parts: Vec<Vec<Vec<SparseMatrix>>> = blocks
        .iter()
        .map(|row| row.iter().map(|b| split_z(b, grid.z)).collect())
        .collect();
    let parts = Arc::new(parts);

    let (mut outs, trace) = run_ranks(grid.size(), opts, |world| {
        worker(world, s, a0, b0, &parts, kernel, config)
    })?;
    outs.sort_by_key(|o| o.rank);

    let du = config.du_len();
    let mut sddmm = None;
    let mut spmm = None;
    match kernel {
        Kernel::Sddmm => {
            let mut entries = Vec::with_capacity(s.nnz());
            for o in &outs {
                entries.extend_from_slice(&o.sddmm_entries);
            }
            sddmm = Some(SparseMatrix::from_entries(s.nrows(), s.ncols(), entries)?);
        }
        Kernel::Spmm => {
            let mut a = DenseMatrix::zeros(s.nrows(), config.k);
            for o in &outs {
                for (id, chunk) in &o.spmm_rows {
                    a.row_mut(*id)[o.z * du..(o.z + 1) * du].copy_from_slice(chunk);
                }
            }
            spmm = Some(a);
        }
    }

    let run = RunSummary {
        kernel: kernel.name().into(),
        mode: config.mode.name().into(),
        strategy: config.strategy.name().into(),
        grid: (grid.x, grid.y, grid.z),
        k: config.k,
        iterations: config.iterations,
        seed: config.seed,
    };
    let per_rank: Vec<RankMetrics> = outs.into_iter().map(|o| o.metrics).collect();
    Ok(RunOutput {
        sddmm,
        spmm,
        metrics: MetricsReport::new(run, per_rank, config.k),
        trace,
    })
}

pub fn run_sddmm(
    s: &SparseMatrix,
    a0: &DenseMatrix,
    b0: &DenseMatrix,
    config: &KernelConfig,
    opts: &RunOptions,
) -> Result<(SparseMatrix, MetricsReport)> {
    let out = run(s, a0, b0, Kernel::Sddmm, config, opts)?;
    Ok((out.sddmm.unwrap(), out.metrics))
}

pub fn run_spmm(
    s: &SparseMatrix,
    a0: &DenseMatrix,
    b0: &DenseMatrix,
    config: &KernelConfig,
    opts: &RunOptions,
) -> Result<(DenseMatrix, MetricsReport)> {
    let out = run(s, a0, b0, Kernel::Spmm, config, opts)?;
    Ok((out.spmm.unwrap(), out.metrics))
}

/// Per-rank engine state after setup.
struct RankState {
    coords: (usize, usize, usize),
    config: KernelConfig,
    kernel: Kernel,
    world: Communicator,
    row_comm: Communicator,
    col_comm: Communicator,
    depth_comm: Communicator,
    gathered: SparseMatrix,
    block: LocalBlock,
    seg_sizes: Vec<usize>,
    owned_row_ids: Vec<usize>,
    owned_col_ids: Vec<usize>,
    a_store: DenseRowStore,
    b_store: DenseRowStore,
    a_pre: Option<CommPlan>,
    b_pre: Option<CommPlan>,
    a_post: Option<CommPlan>,
    a_rows: LocalDense,
    b_cols: LocalDense,
    row_owner: OwnerMap,
    col_owner: OwnerMap,
    staging: StagingStats,
    metrics: RankMetrics,
}

fn worker(
    world: Communicator,
    s: &SparseMatrix,
    a0: &DenseMatrix,
    b0: &DenseMatrix,
    parts: &Arc<Vec<Vec<Vec<SparseMatrix>>>>,
    kernel: Kernel,
    config: &KernelConfig,
) -> Result<WorkerOut> {
    let rank = world.rank();
    let coords = config.grid.coords_of(rank);
    let mut state = RankState::setup(world, s, a0, b0, parts, kernel, config)
        .map_err(|e| e.at_rank(rank, coords, "setup"))?;
    let out = state
        .run_iterations()
        .map_err(|e| e.at_rank(rank, coords, "iterate"))?;
    Ok(out)
}

impl RankState {
    fn setup(
        world: Communicator,
        s: &SparseMatrix,
        a0: &DenseMatrix,
        b0: &DenseMatrix,
        parts: &Arc<Vec<Vec<Vec<SparseMatrix>>>>,
        kernel: Kernel,
        config: &KernelConfig,
    ) -> Result<RankState> {
        let grid = config.grid;
        let rank = world.rank();
        let (x, y, z) = grid.coords_of(rank);
        let du = config.du_len();
        world.set_phase(Phase::Setup);
        let t0 = Instant::now();

        let row_comm = world.split(x * grid.z + z, y)?;
        let col_comm = world.split(y * grid.z + z, x)?;
        let depth_comm = world.split(x * grid.y + y, z)?;

        // Gather the full (x, y) block over the depth fiber. Parts are
        // contiguous chunks of the sorted block, so rank-order concatenation
        // reproduces it sorted.
        let my_part = &parts[x][y][z];
        let gathered_parts = depth_comm.allgather(my_part.entries())?;
        let seg_sizes: Vec<usize> = gathered_parts.iter().map(Vec::len).collect();
        let mut all = Vec::with_capacity(seg_sizes.iter().sum());
        for p in &gathered_parts {
            all.extend_from_slice(p);
        }
        let gathered = SparseMatrix::from_sorted_unchecked(s.nrows(), s.ncols(), all);
        let block = localize_at(&gathered, (x, y, z));

        let used_rows = block.row_global.clone();
        let used_cols = block.col_global.clone();
        let row_domain = grid.row_range(s.nrows(), x);
        let col_domain = grid.col_range(s.ncols(), y);

        let row_owner = assign_owners_distributed(
            &row_comm,
            &used_rows,
            row_domain.clone(),
            fiber_seed(config.seed, FiberKind::Row, x, z),
        )?;
        let col_owner = assign_owners_distributed(
            &col_comm,
            &used_cols,
            col_domain.clone(),
            fiber_seed(config.seed, FiberKind::Col, y, z),
        )?;
        let owned_row_ids = row_owner.owned_by(y);
        let owned_col_ids = col_owner.owned_by(x);

        // Fiber-wide used-id lists give the lambda map each rank needs to
        // build its side of the communication graphs consistently.
        let row_lambda = gather_lambda(&row_comm, &used_rows)?;
        let col_lambda = gather_lambda(&col_comm, &used_cols)?;

        let (a_ids, b_ids) = match config.mode {
            Mode::SparseAware => {
                let mut a: Vec<usize> = used_rows
                    .iter()
                    .chain(owned_row_ids.iter())
                    .copied()
                    .collect();
                a.sort_unstable();
                a.dedup();
                let mut b: Vec<usize> = used_cols
                    .iter()
                    .chain(owned_col_ids.iter())
                    .copied()
                    .collect();
                b.sort_unstable();
                b.dedup();
                (a, b)
            }
            Mode::Dense3d => (row_domain.collect(), col_domain.collect()),
        };
        let mut a_store = DenseRowStore::new(du, a_ids);
        let mut b_store = DenseRowStore::new(du, b_ids);

        let (a_pre, b_pre, a_post) = match config.mode {
            Mode::SparseAware => {
                let a_graph = build_broadcast_graph(&row_lambda, &row_owner, grid.y)?;
                let b_graph = build_broadcast_graph(&col_lambda, &col_owner, grid.x)?;
                let a_red = build_reduce_graph(&row_lambda, &row_owner, grid.y)?;
                let a_pre = compile_plan(&a_graph, y, &mut a_store, config.strategy)?;
                let b_pre = compile_plan(&b_graph, x, &mut b_store, config.strategy)?;
                let a_post = compile_plan(&a_red, y, &mut a_store, config.strategy)?;
                (Some(a_pre), Some(b_pre), Some(a_post))
            }
            Mode::Dense3d => {
                // Baseline PreComm is a bulk all-gather; only SpMM's reduce
                // plan is shared with the sparse path.
                let a_red = build_reduce_graph(&row_lambda, &row_owner, grid.y)?;
                let a_post = compile_plan(&a_red, y, &mut a_store, config.strategy)?;
                (None, None, Some(a_post))
            }
        };

        for &id in &owned_row_ids {
            a_store
                .row_mut(id)
                .expect("owned id resident")
                .copy_from_slice(&a0.row(id)[z * du..(z + 1) * du]);
        }
        for &id in &owned_col_ids {
            b_store
                .row_mut(id)
                .expect("owned id resident")
                .copy_from_slice(&b0.row(id)[z * du..(z + 1) * du]);
        }

        // Layouts are frozen now; resolve the compute views.
        let a_rows = LocalDense::resolve_rows(&block, &a_store)?;
        let b_cols = LocalDense::resolve_cols(&block, &b_store)?;

        let plan_checksum = plan_checksum(&a_pre, &b_pre, &a_post, &a_store, &b_store);
        let counters = world.counters();
        let metrics = RankMetrics {
            rank,
            coords: (x, y, z),
            local_nnz: my_part.nnz(),
            gathered_nnz: gathered.nnz(),
            setup_recv_entries: counters.entries,
            owned_rows: owned_row_ids.len(),
            owned_cols: owned_col_ids.len(),
            need_rows: used_rows
                .iter()
                .filter(|&&id| row_owner.owner(id) != Some(y))
                .count(),
            need_cols: used_cols
                .iter()
                .filter(|&&id| col_owner.owner(id) != Some(x))
                .count(),
            dense_store_words: a_store.words() + b_store.words(),
            precomm_recv_words: 0,
            postcomm_recv_words: 0,
            precomm_msgs: 0,
            postcomm_msgs: 0,
            staging_copy_words: 0,
            per_iter_precomm_recv_words: Vec::new(),
            per_iter_postcomm_recv_words: Vec::new(),
            plan_checksum_setup: plan_checksum,
            plan_checksum_final: 0,
            setup_secs: t0.elapsed().as_secs_f64(),
            precomm_secs: Vec::new(),
            compute_secs: Vec::new(),
            postcomm_secs: Vec::new(),
        };

        Ok(RankState {
            coords: (x, y, z),
            config: config.clone(),
            kernel,
            world,
            row_comm,
            col_comm,
            depth_comm,
            gathered,
            block,
            seg_sizes,
            owned_row_ids,
            owned_col_ids,
            a_store,
            b_store,
            a_pre,
            b_pre,
            a_post,
            a_rows,
            b_cols,
            row_owner,
            col_owner,
            staging: StagingStats::default(),
            metrics,
        })
    }

    fn run_iterations(&mut self) -> Result<WorkerOut> {
        let iterations = self.config.iterations;
        let mut last_seg: Vec<f64> = Vec::new();
        for it in 0..iterations {
            if it > 0 {
                self.iterate_update();
            }
            self.one_iteration(&mut last_seg)?;
        }

        self.metrics.plan_checksum_final = plan_checksum(
            &self.a_pre,
            &self.b_pre,
            &self.a_post,
            &self.a_store,
            &self.b_store,
        );
        self.metrics.staging_copy_words = self.staging.words;

        self.world.set_phase(Phase::Assembly);
        let z = self.coords.2;
        let mut sddmm_entries = Vec::new();
        let mut spmm_rows = Vec::new();
        match self.kernel {
            Kernel::Sddmm => {
                let start: usize = self.seg_sizes[..z].iter().sum();
                let my = &self.gathered.entries()[start..start + self.seg_sizes[z]];
                sddmm_entries = my
                    .iter()
                    .zip(&last_seg)
                    .map(|(e, &v)| Entry::new(e.row, e.col, v))
                    .collect();
            }
            Kernel::Spmm => {
                spmm_rows = self
                    .owned_row_ids
                    .iter()
                    .map(|&id| (id, self.a_store.row(id).unwrap().to_vec()))
                    .collect();
            }
        }
        Ok(WorkerOut {
            rank: self.world.rank(),
            z,
            sddmm_entries,
            spmm_rows,
            metrics: self.metrics.clone(),
        })
    }

    fn one_iteration(&mut self, last_seg: &mut Vec<f64>) -> Result<()> {
        // PreComm
        self.world.set_phase(Phase::PreComm);
        let c0 = self.world.counters();
        let t = Instant::now();
        match self.config.mode {
            Mode::SparseAware => {
                if self.kernel == Kernel::Sddmm {
                    execute_broadcast(
                        self.a_pre.as_ref().unwrap(),
                        &mut self.a_store,
                        &self.row_comm,
                        tags::PLAN_ROWS,
                        &mut self.staging,
                    )?;
                }
                execute_broadcast(
                    self.b_pre.as_ref().unwrap(),
                    &mut self.b_store,
                    &self.col_comm,
                    tags::PLAN_COLS,
                    &mut self.staging,
                )?;
            }
            Mode::Dense3d => {
                if self.kernel == Kernel::Sddmm {
                    baseline_allgather(&mut self.a_store, &self.row_comm, &self.row_owner)?;
                }
                baseline_allgather(&mut self.b_store, &self.col_comm, &self.col_owner)?;
            }
        }
        self.metrics.precomm_secs.push(t.elapsed().as_secs_f64());
        let c1 = self.world.counters();
        let pre = c1.delta(&c0);
        self.metrics.precomm_recv_words += pre.words;
        self.metrics.precomm_msgs += pre.msgs;
        self.metrics.per_iter_precomm_recv_words.push(pre.words);

        // Compute
        self.world.set_phase(Phase::Compute);
        let t = Instant::now();
        let mut partials = Vec::new();
        match self.kernel {
            Kernel::Sddmm => {
                partials = local_sddmm(
                    &self.block,
                    &self.a_rows,
                    self.a_store.data(),
                    &self.b_cols,
                    self.b_store.data(),
                );
            }
            Kernel::Spmm => {
                self.a_store.fill_zero();
                local_spmm(
                    &self.block,
                    &self.b_cols,
                    self.b_store.data(),
                    &self.a_rows,
                    &mut self.a_store,
                );
            }
        }
        self.metrics.compute_secs.push(t.elapsed().as_secs_f64());

        // PostComm
        self.world.set_phase(Phase::PostComm);
        let c0 = self.world.counters();
        let t = Instant::now();
        match self.kernel {
            Kernel::Sddmm => {
                *last_seg = self.depth_comm.reduce_scatter(&partials, &self.seg_sizes)?;
            }
            Kernel::Spmm => {
                execute_reduce(
                    self.a_post.as_ref().unwrap(),
                    &mut self.a_store,
                    &self.row_comm,
                    tags::PLAN_REDUCE,
                    &mut self.staging,
                )?;
            }
        }
        self.metrics.postcomm_secs.push(t.elapsed().as_secs_f64());
        let c1 = self.world.counters();
        let post = c1.delta(&c0);
        self.metrics.postcomm_recv_words += post.words;
        self.metrics.postcomm_msgs += post.msgs;
        self.metrics.per_iter_postcomm_recv_words.push(post.words);
        Ok(())
    }

    /// Owners scale their rows by 0.5 and add the slice-local part of the
    /// row's global-id-seeded unit vector.
    fn iterate_update(&mut self) {
        let k = self.config.k;
        let du = self.config.du_len();
        let z = self.coords.2;
        for &id in &self.owned_row_ids {
            let pos = update_position(id, ROW_UPDATE_SALT, k);
            let row = self.a_store.row_mut(id).unwrap();
            for w in row.iter_mut() {
                *w *= 0.5;
            }
            if (z * du..(z + 1) * du).contains(&pos) {
                row[pos - z * du] += 1.0;
            }
        }
        for &id in &self.owned_col_ids {
            let pos = update_position(id, COL_UPDATE_SALT, k);
            let row = self.b_store.row_mut(id).unwrap();
            for w in row.iter_mut() {
                *w *= 0.5;
            }
            if (z * du..(z + 1) * du).contains(&pos) {
                row[pos - z * du] += 1.0;
            }
        }
    }
}

fn plan_checksum(
    a_pre: &Option<CommPlan>,
    b_pre: &Option<CommPlan>,
    a_post: &Option<CommPlan>,
    a_store: &DenseRowStore,
    b_store: &DenseRowStore,
) -> u64 {
    let mut acc = a_store
        .layout_checksum()
        .wrapping_add(b_store.layout_checksum().rotate_left(1));
    for (i, p) in [a_pre, b_pre, a_post].iter().enumerate() {
        if let Some(p) = p {
            acc = acc.wrapping_add(p.checksum().rotate_left(i as u32 + 2));
        }
    }
    acc
}

fn gather_lambda(comm: &Communicator, my_used: &[usize]) -> Result<FiberLambda> {
    let mine: Vec<u64> = my_used.iter().map(|&id| id as u64).collect();
    let all = comm.allgather(&mine)?;
    let mut lambda = FiberLambda::new();
    for (rank, ids) in all.iter().enumerate() {
        for &id in ids {
            lambda.entry(id as usize).or_default().push(rank);
        }
    }
    Ok(lambda)
}

/// Sparsity-agnostic PreComm: every member broadcasts all of its owned
/// chunks over the fiber, needed or not; receivers place them by the shared
/// owner map.
fn baseline_allgather(
    store: &mut DenseRowStore,
    comm: &Communicator,
    owners: &OwnerMap,
) -> Result<()> {
    let me = comm.rank();
    let du = store.du_len();
    let my_ids = owners.owned_by(me);
    let mut part = Vec::with_capacity(my_ids.len() * du);
    for &id in &my_ids {
        part.extend_from_slice(store.row(id).expect("owned id resident"));
    }
    let parts = comm.allgather(&part)?;
    for (peer, values) in parts.iter().enumerate() {
        if peer == me {
            continue;
        }
        let ids = owners.owned_by(peer);
        if values.len() != ids.len() * du {
            return Err(Error::WordCountMismatch {
                sent: values.len(),
                expected: ids.len() * du,
                src: comm.global_rank(peer),
                dst: comm.my_global_rank(),
            });
        }
        for (i, &id) in ids.iter().enumerate() {
            store
                .row_mut(id)
                .expect("baseline store covers the fiber range")
                .copy_from_slice(&values[i * du..(i + 1) * du]);
        }
    }
    Ok(())
}
