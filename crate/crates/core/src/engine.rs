//! The lookup engine: a shared tree plus the structures each strategy needs.
//!
//! Lookups take the tree read lock for their whole duration. Stage One also
//! pins an epoch around the pool scan; Stage Two runs after the pin is
//! released. Mutations take the tree write lock and run invalidation hooks
//! before the tree changes.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};

use crate::epoch::{PivotManager, ReclaimMode, UpdateOutcome, DEFAULT_READER_SLOTS};
use crate::fullpath::FullPathCache;
use crate::heat::{CandidateSet, HeatTracker};
use crate::metrics::Metrics;
use crate::path::VfsPath;
use crate::pivot::{
    pivot_matches_tree, Component, PivotPool, ProbeStats, DEFAULT_COMPONENTS, DEFAULT_POOL_SIZE,
};
use crate::vfs::{Credential, Kind, LookupError, MetadataChange, Mode, NodeId, Tree, VfsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Original,
    Fullpath,
    Stage,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Original, Strategy::Fullpath, Strategy::Stage];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Original => "original",
            Strategy::Fullpath => "fullpath",
            Strategy::Stage => "stage",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown strategy `{0}` (expected original, fullpath or stage)")]
pub struct UnknownStrategy(String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Strategy::Original),
            "fullpath" => Ok(Strategy::Fullpath),
            "stage" => Ok(Strategy::Stage),
            other => Err(UnknownStrategy(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub strategy: Strategy,
    pub pool_size: usize,
    pub components: usize,
    pub heat_threshold: u64,
    pub heat_capacity: usize,
    pub period: Duration,
    pub reader_slots: usize,
    pub reclaim: ReclaimMode,
    /// Keep the pivot pool up to date on metadata changes.
    pub maintain_stage: bool,
    /// Keep the full-path cache up to date on metadata changes.
    pub maintain_fullpath: bool,
    /// Log every mutation with its sequence number for post-hoc audits.
    pub audit: bool,
}

impl EngineConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            pool_size: DEFAULT_POOL_SIZE,
            components: DEFAULT_COMPONENTS,
            heat_threshold: CandidateSet::DEFAULT_THRESHOLD,
            heat_capacity: CandidateSet::DEFAULT_CAPACITY,
            period: Duration::from_millis(2000),
            reader_slots: DEFAULT_READER_SLOTS,
            reclaim: ReclaimMode::Free,
            maintain_stage: strategy == Strategy::Stage,
            maintain_fullpath: strategy == Strategy::Fullpath,
            audit: false,
        }
    }

    /// Every strategy's structures maintained, so all three can be queried
    /// against one tree.
    pub fn all_strategies() -> Self {
        Self {
            maintain_stage: true,
            maintain_fullpath: true,
            ..Self::new(Strategy::Stage)
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::new(Strategy::Stage)
    }
}

/// Outcome of a two-stage lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageResult {
    pub target: NodeId,
    pub skipped_components: usize,
    pub walked_components: usize,
    pub pivot_used: Option<Arc<VfsPath>>,
    pub rolled_up: bool,
    /// The chosen component's dentry was gone and the walk restarted at the
    /// root.
    pub fell_back: bool,
}

/// What a reader saw when it picked a pivot, for auditing.
#[derive(Debug, Clone)]
pub struct Selection {
    pub pivot: Arc<VfsPath>,
    pub built_seq: u64,
    /// Mutation sequence number current while the selection was used.
    pub observed_seq: u64,
    pub generation: u64,
    /// The pivot's dentries chained to its path in the live tree.
    pub consistent: bool,
    pub pool_poisoned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationRecord {
    pub seq: u64,
    /// Pre-mutation path whose cached state went stale.
    pub path: VfsPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stat {
    pub node: NodeId,
    pub kind: Kind,
    pub mode: Mode,
    pub size: u64,
}

/// An open file: a handle number plus the dentry it refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle {
    pub id: u64,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickReport {
    pub outcome: UpdateOutcome,
    pub candidates: usize,
    pub pool_len: usize,
}

/// A pool built for a pending update, not yet published.
pub struct PendingBuild {
    pending: crate::epoch::PendingUpdate,
    pool: PivotPool,
    candidates: usize,
}

impl PendingBuild {
    pub fn pool(&self) -> &PivotPool {
        &self.pool
    }
}

pub struct Engine {
    config: EngineConfig,
    tree: RwLock<Tree>,
    heat: Mutex<HeatTracker>,
    pivots: PivotManager,
    fullpath: Mutex<FullPathCache>,
    mutation_seq: AtomicU64,
    next_handle: AtomicU64,
    mutation_log: Mutex<Vec<MutationRecord>>,
}

impl Engine {
    pub fn new(tree: Tree, config: EngineConfig) -> Self {
        Self {
            heat: Mutex::new(HeatTracker::new(
                config.heat_capacity,
                config.heat_threshold,
                config.period,
            )),
            pivots: PivotManager::new(config.reader_slots, config.reclaim),
            fullpath: Mutex::new(FullPathCache::new()),
            tree: RwLock::new(tree),
            mutation_seq: AtomicU64::new(0),
            next_handle: AtomicU64::new(1),
            mutation_log: Mutex::new(Vec::new()),
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn pivots(&self) -> &PivotManager {
        &self.pivots
    }

    pub fn heat(&self) -> &Mutex<HeatTracker> {
        &self.heat
    }

    pub fn fullpath_cache(&self) -> &Mutex<FullPathCache> {
        &self.fullpath
    }

    pub fn mutation_seq(&self) -> u64 {
        self.mutation_seq.load(Ordering::SeqCst)
    }

    pub fn mutation_log(&self) -> Vec<MutationRecord> {
        self.mutation_log.lock().clone()
    }

    /// Shared access to the tree for the duration of the returned view.
    pub fn read(&self) -> EngineView<'_> {
        EngineView {
            engine: self,
            tree: self.tree.read(),
        }
    }

    pub fn into_tree(self) -> Tree {
        self.tree.into_inner()
    }

    pub fn lookup(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        self.lookup_with(self.config.strategy, path, cred, metrics)
    }

    pub fn lookup_with(
        &self,
        strategy: Strategy,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        let start = Instant::now();
        let result = self.read().lookup_with(strategy, path, cred, metrics);
        metrics.wall.lookup += start.elapsed();
        result
    }

    pub fn stage_lookup(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<StageResult, LookupError> {
        let view = self.read();
        metrics.lookups += 1;
        let r = view.stage_lookup_inner(path, cred, metrics, None);
        if r.is_err() {
            metrics.lookup_errors += 1;
        }
        r
    }

    pub fn stat(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<Stat, LookupError> {
        let start = Instant::now();
        let view = self.read();
        let r = view
            .lookup_with(self.config.strategy, path, cred, metrics)
            .map(|id| view.stat_of(id));
        metrics.wall.lookup += start.elapsed();
        r
    }

    pub fn open(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<Handle, LookupError> {
        let node = self.lookup(path, cred, metrics)?;
        Ok(Handle {
            id: self.next_handle.fetch_add(1, Ordering::Relaxed),
            node,
        })
    }

    pub fn rename(
        &self,
        from: &VfsPath,
        to: &VfsPath,
        metrics: &mut Metrics,
    ) -> Result<(), VfsError> {
        self.mutate(metrics, |tree, hook| tree.rename_node_with(from, to, hook))
    }

    pub fn chmod(&self, path: &VfsPath, mode: Mode, metrics: &mut Metrics) -> Result<(), VfsError> {
        self.mutate(metrics, |tree, hook| tree.chmod_node_with(path, mode, hook))
    }

    pub fn remove(&self, path: &VfsPath, metrics: &mut Metrics) -> Result<(), VfsError> {
        self.mutate(metrics, |tree, hook| tree.remove_node_with(path, hook))
    }

    /// Creates a file or directory at `path`. New names never invalidate
    /// cached state, so no hook runs.
    pub fn create(
        &self,
        path: &VfsPath,
        kind: Kind,
        mode: Mode,
        metrics: &mut Metrics,
    ) -> Result<NodeId, VfsError> {
        let start = Instant::now();
        let result = match (path.parent(), path.file_name()) {
            (Some(parent), Some(name)) => {
                let mut tree = self.tree.write();
                let r = tree.create_node(&parent, name, kind, mode);
                if r.is_ok() {
                    self.bump_seq(None);
                }
                r
            }
            _ => Err(VfsError::AlreadyExists("/".to_owned())),
        };
        self.count_mutation(&result, metrics, start);
        result
    }

    fn mutate<F>(&self, metrics: &mut Metrics, op: F) -> Result<(), VfsError>
    where
        F: FnOnce(&mut Tree, &mut crate::vfs::Hook<'_>) -> Result<(), VfsError>,
    {
        let start = Instant::now();
        let mut tree = self.tree.write();
        let mut changed: Option<VfsPath> = None;
        let result = {
            let mut hook = |t: &Tree, change: &MetadataChange<'_>| {
                self.before_change(t, change, metrics);
                changed = Some(change.path().clone());
            };
            op(&mut tree, &mut hook)
        };
        if let Some(path) = changed {
            self.bump_seq(Some(path));
        }
        drop(tree);
        self.count_mutation(&result, metrics, start);
        result
    }

    fn count_mutation<T>(&self, result: &Result<T, VfsError>, metrics: &mut Metrics, start: Instant) {
        match result {
            Ok(_) => metrics.mutations += 1,
            Err(_) => metrics.mutation_errors += 1,
        }
        metrics.wall.mutation += start.elapsed();
    }

    /// Caller holds the tree write lock.
    fn bump_seq(&self, path: Option<VfsPath>) {
        let seq = self.mutation_seq.fetch_add(1, Ordering::SeqCst) + 1;
        if let (true, Some(path)) = (self.config.audit, path) {
            self.mutation_log.lock().push(MutationRecord { seq, path });
        }
    }

    fn before_change(&self, tree: &Tree, change: &MetadataChange<'_>, metrics: &mut Metrics) {
        if self.config.maintain_stage {
            let report = self.pivots.invalidate_for_metadata(change.path());
            metrics.entries_touched += report.touched as u64;
            metrics.entries_removed += report.removed as u64;
            if let MetadataChange::Remove { node, .. } = change {
                self.heat.lock().set.remove(tree, *node);
            }
        }
        if self.config.maintain_fullpath {
            self.fullpath
                .lock()
                .invalidate_subtree(tree, change.node(), change.path(), metrics);
        }
    }

    /// Builds a waiting pool from the current candidates without publishing.
    pub fn begin_update(&self) -> PendingBuild {
        let pending = self.pivots.begin_update();
        let tree = self.tree.read();
        let candidates = self.heat.lock().candidates(&*tree);
        let (pool, _) = PivotPool::build(
            &tree,
            &candidates,
            self.config.pool_size,
            self.config.components,
            pending.generation,
            self.mutation_seq(),
        );
        PendingBuild {
            pending,
            pool,
            candidates: candidates.len(),
        }
    }

    /// Publishes (or drops) a pending build and opens the next heat period.
    pub fn finish_update(&self, build: PendingBuild) -> TickReport {
        let pool_len = build.pool.len();
        let outcome = self.pivots.finish_update(build.pending, build.pool);
        let tree = self.tree.read();
        self.heat.lock().next_period(&*tree);
        TickReport {
            outcome,
            candidates: build.candidates,
            pool_len,
        }
    }

    /// One periodic update of the pivot pools.
    pub fn tick(&self, metrics: &mut Metrics) -> Option<TickReport> {
        metrics.ticks += 1;
        if !self.config.maintain_stage {
            return None;
        }
        let start = Instant::now();
        let build = self.begin_update();
        let report = self.finish_update(build);
        metrics.wall.manager += start.elapsed();
        Some(report)
    }
}

/// Lookups under one held tree read lock.
pub struct EngineView<'a> {
    engine: &'a Engine,
    tree: RwLockReadGuard<'a, Tree>,
}

impl EngineView<'_> {
    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    /// Mutation sequence number, stable while the view is held.
    pub fn seq(&self) -> u64 {
        self.engine.mutation_seq()
    }

    pub fn stat_of(&self, id: NodeId) -> Stat {
        let d = self.tree.get(id).expect("resolved node is live");
        Stat {
            node: id,
            kind: d.kind,
            mode: d.mode,
            size: d.size,
        }
    }

    pub fn lookup_with(
        &self,
        strategy: Strategy,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        metrics.lookups += 1;
        let r = match strategy {
            Strategy::Original => self.tree.lookup_original(path, cred, metrics),
            Strategy::Fullpath => self
                .engine
                .fullpath
                .lock()
                .lookup(&self.tree, path, cred, metrics),
            Strategy::Stage => self
                .stage_lookup_inner(path, cred, metrics, None)
                .map(|r| r.target),
        };
        if r.is_err() {
            metrics.lookup_errors += 1;
        }
        r
    }

    /// Two-stage lookup that also reports which pivot was chosen.
    pub fn stage_lookup_audited(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
        selection: &mut Option<Selection>,
    ) -> Result<StageResult, LookupError> {
        metrics.lookups += 1;
        let r = self.stage_lookup_inner(path, cred, metrics, Some(selection));
        if r.is_err() {
            metrics.lookup_errors += 1;
        }
        r
    }

    fn stage_lookup_inner(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
        audit: Option<&mut Option<Selection>>,
    ) -> Result<StageResult, LookupError> {
        let tree = &*self.tree;
        let total = path.depth();

        // Stage One, inside the read-side section.
        let chosen = {
            let pool = self.engine.pivots.read();
            let mut probe = ProbeStats::default();
            let found = pool.find_best_pivot_traced(path, &mut probe);
            metrics.probe_comparisons += probe.char_comparisons;
            metrics.char_comparisons += probe.char_comparisons;
            metrics.pivots_visited += probe.pivots_visited;
            found.map(|m| {
                let pivot = &pool.pivots()[m.index];
                let component = *pivot.component(m.depth).expect("matched depth is in range");
                if let Some(slot) = audit {
                    *slot = Some(Selection {
                        pivot: pivot.shared_path(),
                        built_seq: pivot.built_seq(),
                        observed_seq: self.seq(),
                        generation: pool.generation(),
                        consistent: pivot_matches_tree(pivot, tree),
                        pool_poisoned: pool.is_poisoned(),
                    });
                }
                (component, m.depth, pivot.depth(), pivot.shared_path())
            })
        };

        let result = match chosen {
            Some((component, depth, pivot_depth, pivot_path)) if tree.contains(component.dentry) => {
                check_prefix_permissions(&component, cred)?;
                metrics.pivot_hits += 1;
                metrics.record_skip(depth);
                let target = tree.walk_from(component.dentry, path, depth, cred, metrics)?;
                StageResult {
                    target,
                    skipped_components: depth,
                    walked_components: total - depth,
                    pivot_used: Some(pivot_path),
                    rolled_up: depth < pivot_depth,
                    fell_back: false,
                }
            }
            other => {
                let fell_back = other.is_some();
                if fell_back {
                    metrics.fallbacks += 1;
                }
                metrics.record_skip(0);
                let target = tree.lookup_original(path, cred, metrics)?;
                StageResult {
                    target,
                    skipped_components: 0,
                    walked_components: total,
                    pivot_used: None,
                    rolled_up: false,
                    fell_back,
                }
            }
        };
        self.engine
            .heat
            .lock()
            .on_target_access(tree, result.target);
        Ok(result)
    }
}

/// Traversal check over the skipped prefix using the mask cached in the
/// chosen component. The component's own directory is checked by Stage Two.
pub fn check_prefix_permissions(component: &Component, cred: Credential) -> Result<(), LookupError> {
    if component.ancestors_exec & cred.class_bit() == 0 {
        Err(LookupError::PermissionDenied)
    } else {
        Ok(())
    }
}

/// Selections whose pivot lay under a path mutated after the pivot was
/// built and before (or while) the selection was used.
pub fn audit_selections<'a>(
    selections: impl IntoIterator<Item = &'a Selection>,
    log: &[MutationRecord],
) -> Vec<(Selection, MutationRecord)> {
    let mut bad = Vec::new();
    for s in selections {
        let lo = log.partition_point(|m| m.seq <= s.built_seq);
        let hi = log.partition_point(|m| m.seq <= s.observed_seq);
        if let Some(m) = log[lo..hi].iter().find(|m| m.path.is_prefix_of(&s.pivot)) {
            bad.push((s.clone(), m.clone()));
        }
    }
    bad
}
