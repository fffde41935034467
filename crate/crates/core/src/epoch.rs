//! Pivot Manager lifecycle: read-side sections over the working pool,
//! atomic publication of rebuilt pools, deferred reclamation, and the
//! invalidation protocol run before rename/chmod.
//!
//! Readers announce themselves in a slot stamped with the global epoch they
//! observed, then load the working pool pointer. A retired pool is tagged
//! with the epoch current at retirement and is freed only once every
//! announced reader carries a newer epoch.

use std::collections::VecDeque;
use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicU8, Ordering::SeqCst};

use parking_lot::Mutex;
use thiserror::Error;

use crate::path::VfsPath;
use crate::pivot::PivotPool;

const IDLE: u64 = 0;
pub const DEFAULT_READER_SLOTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EpochError {
    #[error("read token for slot {slot} was already released")]
    StaleToken { slot: usize },
}

/// Proof of an open read-side section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadToken {
    slot: usize,
    epoch: u64,
    stamp: u64,
}

impl ReadToken {
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

struct Slot {
    /// `IDLE`, or the pinned epoch plus one.
    pinned: AtomicU64,
    stamp: AtomicU64,
}

/// Per-reader epoch announcements.
pub struct ReaderRegistry {
    global: AtomicU64,
    slots: Box<[Slot]>,
}

impl ReaderRegistry {
    pub fn new(slots: usize) -> Self {
        Self {
            global: AtomicU64::new(0),
            slots: (0..slots.max(1))
                .map(|_| Slot {
                    pinned: AtomicU64::new(IDLE),
                    stamp: AtomicU64::new(0),
                })
                .collect(),
        }
    }

    pub fn global_epoch(&self) -> u64 {
        self.global.load(SeqCst)
    }

    pub(crate) fn advance(&self) -> u64 {
        self.global.fetch_add(1, SeqCst) + 1
    }

    /// Opens a read-side section. Nested calls take independent slots.
    pub fn enter(&self) -> ReadToken {
        let start = thread_hint() % self.slots.len();
        loop {
            for off in 0..self.slots.len() {
                let slot_idx = (start + off) % self.slots.len();
                let slot = &self.slots[slot_idx];
                let epoch = self.global.load(SeqCst);
                if slot
                    .pinned
                    .compare_exchange(IDLE, epoch + 1, SeqCst, SeqCst)
                    .is_err()
                {
                    continue;
                }
                // Re-check so a concurrent advance cannot miss this slot.
                let mut pinned = epoch;
                loop {
                    let now = self.global.load(SeqCst);
                    if now == pinned {
                        break;
                    }
                    slot.pinned.store(now + 1, SeqCst);
                    pinned = now;
                }
                let stamp = slot.stamp.fetch_add(1, SeqCst) + 1;
                return ReadToken {
                    slot: slot_idx,
                    epoch: pinned,
                    stamp,
                };
            }
            std::thread::yield_now();
        }
    }

    /// Closes a read-side section. Releasing the same token twice is
    /// reported instead of silently unpinning someone else's section.
    pub fn exit(&self, token: ReadToken) -> Result<(), EpochError> {
        let slot = &self.slots[token.slot];
        if slot.stamp.load(SeqCst) != token.stamp || slot.pinned.load(SeqCst) == IDLE {
            return Err(EpochError::StaleToken { slot: token.slot });
        }
        // Bump the stamp before unpinning so a copy of this token can never
        // match the slot's next occupant.
        slot.stamp.fetch_add(1, SeqCst);
        slot.pinned.store(IDLE, SeqCst);
        Ok(())
    }

    /// Oldest epoch any open section is pinned at.
    pub fn oldest_active(&self) -> Option<u64> {
        self.slots
            .iter()
            .filter_map(|s| match s.pinned.load(SeqCst) {
                IDLE => None,
                v => Some(v - 1),
            })
            .min()
    }

    pub fn active_readers(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.pinned.load(SeqCst) != IDLE)
            .count()
    }
}

fn thread_hint() -> usize {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    std::thread::current().id().hash(&mut h);
    h.finish() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReclaimMode {
    /// Drop retired pools once their grace period ends.
    #[default]
    Free,
    /// Poison retired pools instead of dropping them, so a late reader can be
    /// caught without touching freed memory.
    Quarantine,
}

/// Poisoned pools kept alive in quarantine mode; older ones are freed.
const QUARANTINE_LIMIT: usize = 256;

struct Retired {
    pool: *mut PivotPool,
    epoch: u64,
}

// SAFETY: the pointer is an owned `Box<PivotPool>` handed over at
// retirement; `PivotPool` is `Send + Sync`.
unsafe impl Send for Retired {}

/// Pools waiting for their grace period to end.
pub struct ReclaimQueue {
    mode: ReclaimMode,
    pending: Vec<Retired>,
    graveyard: VecDeque<Box<PivotPool>>,
    freed: u64,
}

impl ReclaimQueue {
    pub fn new(mode: ReclaimMode) -> Self {
        Self {
            mode,
            pending: Vec::new(),
            graveyard: VecDeque::new(),
            freed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn freed(&self) -> u64 {
        self.freed
    }

    fn retire(&mut self, pool: *mut PivotPool, epoch: u64) {
        if !pool.is_null() {
            self.pending.push(Retired { pool, epoch });
        }
    }

    /// Releases entries retired before the oldest open section. Returns how
    /// many were released.
    pub fn reclaim(&mut self, registry: &ReaderRegistry) -> usize {
        let horizon = registry.oldest_active().unwrap_or(u64::MAX);
        let mut released = 0;
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].epoch < horizon {
                let entry = self.pending.swap_remove(i);
                // SAFETY: no open section predates the retirement, so no
                // reader can still hold this pointer.
                let pool = unsafe { Box::from_raw(entry.pool) };
                match self.mode {
                    ReclaimMode::Free => drop(pool),
                    ReclaimMode::Quarantine => {
                        pool.poison();
                        if self.graveyard.len() == QUARANTINE_LIMIT {
                            self.graveyard.pop_front();
                        }
                        self.graveyard.push_back(pool);
                    }
                }
                released += 1;
            } else {
                i += 1;
            }
        }
        self.freed += released as u64;
        released
    }
}

impl Drop for ReclaimQueue {
    fn drop(&mut self) {
        for entry in self.pending.drain(..) {
            // SAFETY: the owning manager is being dropped, so no readers remain.
            drop(unsafe { Box::from_raw(entry.pool) });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSlot {
    A,
    B,
}

impl PoolSlot {
    fn other(self) -> Self {
        match self {
            PoolSlot::A => PoolSlot::B,
            PoolSlot::B => PoolSlot::A,
        }
    }

    fn to_u8(self) -> u8 {
        match self {
            PoolSlot::A => 0,
            PoolSlot::B => 1,
        }
    }

    fn from_u8(v: u8) -> Self {
        if v == 0 {
            PoolSlot::A
        } else {
            PoolSlot::B
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Published { working: PoolSlot, generation: u64 },
    Suppressed,
}

/// Handle for a build in progress, returned by [`PivotManager::begin_update`].
#[derive(Debug)]
pub struct PendingUpdate {
    pub generation: u64,
    pub building: PoolSlot,
}

struct ManagerState {
    waiting_invalid: bool,
    swap_suppressed_next_period: bool,
    building: bool,
    next_generation: u64,
    queue: ReclaimQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InvalidationReport {
    pub removed: usize,
    /// Pivots flagged invalid, from the first covered one to the end.
    pub touched: usize,
}

/// The working/waiting pool pair and everything needed to swap them safely.
pub struct PivotManager {
    registry: ReaderRegistry,
    working: AtomicPtr<PivotPool>,
    selector: AtomicU8,
    publishes: AtomicU64,
    state: Mutex<ManagerState>,
}

// SAFETY: `working` always points at a pool owned by this manager (or one in
// its reclaim queue); access is mediated by the epoch protocol.
unsafe impl Send for PivotManager {}
unsafe impl Sync for PivotManager {}

impl PivotManager {
    pub fn new(reader_slots: usize, mode: ReclaimMode) -> Self {
        let initial = Box::into_raw(Box::new(PivotPool::empty(0)));
        Self {
            registry: ReaderRegistry::new(reader_slots),
            working: AtomicPtr::new(initial),
            selector: AtomicU8::new(PoolSlot::A.to_u8()),
            publishes: AtomicU64::new(0),
            state: Mutex::new(ManagerState {
                waiting_invalid: false,
                swap_suppressed_next_period: false,
                building: false,
                next_generation: 1,
                queue: ReclaimQueue::new(mode),
            }),
        }
    }

    pub fn registry(&self) -> &ReaderRegistry {
        &self.registry
    }

    pub fn reader_enter(&self) -> ReadToken {
        self.registry.enter()
    }

    pub fn reader_exit(&self, token: ReadToken) -> Result<(), EpochError> {
        self.registry.exit(token)
    }

    /// Opens a read-side section and returns a guard that dereferences to
    /// the working pool observed at entry.
    pub fn read(&self) -> PoolGuard<'_> {
        let token = self.registry.enter();
        let pool = self.working.load(SeqCst);
        PoolGuard {
            manager: self,
            token,
            pool,
        }
    }

    pub fn working_slot(&self) -> PoolSlot {
        PoolSlot::from_u8(self.selector.load(SeqCst))
    }

    pub fn publishes(&self) -> u64 {
        self.publishes.load(SeqCst)
    }

    /// Starts a periodic rebuild. The caller builds a pool outside any lock
    /// and hands it to [`finish_update`](Self::finish_update).
    pub fn begin_update(&self) -> PendingUpdate {
        let mut st = self.state.lock();
        st.building = true;
        let generation = st.next_generation;
        st.next_generation += 1;
        PendingUpdate {
            generation,
            building: self.working_slot().other(),
        }
    }

    /// Publishes the rebuilt waiting pool unless a metadata change since the
    /// last period invalidated it, then reclaims what it can.
    pub fn finish_update(&self, _pending: PendingUpdate, pool: PivotPool) -> UpdateOutcome {
        let mut st = self.state.lock();
        st.building = false;
        let outcome = if st.waiting_invalid || st.swap_suppressed_next_period {
            st.waiting_invalid = false;
            st.swap_suppressed_next_period = false;
            drop(pool);
            UpdateOutcome::Suppressed
        } else {
            let generation = pool.generation();
            let slot = self.working_slot().other();
            self.swap_in(&mut st, pool);
            self.selector.store(slot.to_u8(), SeqCst);
            UpdateOutcome::Published {
                working: slot,
                generation,
            }
        };
        let registry = &self.registry;
        st.queue.reclaim(registry);
        outcome
    }

    /// Replaces the working pool and retires the old one.
    fn swap_in(&self, st: &mut ManagerState, pool: PivotPool) {
        let fresh = Box::into_raw(Box::new(pool));
        let old = self.working.swap(fresh, SeqCst);
        let retire_epoch = self.registry.global_epoch();
        st.queue.retire(old, retire_epoch);
        self.registry.advance();
        self.publishes.fetch_add(1, SeqCst);
    }

    /// Publishes `pool` directly, bypassing suppression. Used by benches and
    /// tests that install hand-built pools.
    pub fn install(&self, pool: PivotPool) {
        let mut st = self.state.lock();
        self.swap_in(&mut st, pool);
        st.queue.reclaim(&self.registry);
    }

    pub fn next_generation(&self) -> u64 {
        let mut st = self.state.lock();
        let g = st.next_generation;
        st.next_generation += 1;
        g
    }

    /// Runs before a rename/chmod/unlink of `path`: flags the covered suffix
    /// of the working pool, publishes a copy without the pivots under
    /// `path`, and marks the waiting pool invalid.
    pub fn invalidate_for_metadata(&self, path: &VfsPath) -> InvalidationReport {
        let mut st = self.state.lock();
        st.waiting_invalid = true;
        st.swap_suppressed_next_period = true;

        // Only the manager replaces `working`, and it holds `state`.
        // SAFETY: the pointer stays valid while we hold the state lock.
        let current = unsafe { &*self.working.load(SeqCst) };
        let Some(first) = current.first_covered(path) else {
            return InvalidationReport::default();
        };
        let touched = current.invalidate_suffix(first);
        let generation = st.next_generation;
        st.next_generation += 1;
        let (next, removed) = current.without_prefix(path, generation);
        self.swap_in(&mut st, next);
        st.queue.reclaim(&self.registry);
        InvalidationReport { removed, touched }
    }

    pub fn reclaim(&self) -> usize {
        let mut st = self.state.lock();
        st.queue.reclaim(&self.registry)
    }

    pub fn pending_reclaim(&self) -> usize {
        self.state.lock().queue.len()
    }

    pub fn reclaimed(&self) -> u64 {
        self.state.lock().queue.freed()
    }

    pub fn waiting_invalid(&self) -> bool {
        self.state.lock().waiting_invalid
    }

    pub fn swap_suppressed(&self) -> bool {
        self.state.lock().swap_suppressed_next_period
    }

    pub fn is_building(&self) -> bool {
        self.state.lock().building
    }
}

impl Drop for PivotManager {
    fn drop(&mut self) {
        let p = self.working.swap(ptr::null_mut(), SeqCst);
        if !p.is_null() {
            // SAFETY: `&mut self` means no guards are alive.
            drop(unsafe { Box::from_raw(p) });
        }
    }
}

/// A read-side section bound to one pool snapshot.
pub struct PoolGuard<'a> {
    manager: &'a PivotManager,
    token: ReadToken,
    pool: *const PivotPool,
}

impl PoolGuard<'_> {
    pub fn pool(&self) -> &PivotPool {
        // SAFETY: the pool was loaded after our slot was pinned, so it is
        // either current or retired at an epoch >= ours and not yet freed.
        unsafe { &*self.pool }
    }

    pub fn token(&self) -> ReadToken {
        self.token
    }
}

impl std::ops::Deref for PoolGuard<'_> {
    type Target = PivotPool;

    fn deref(&self) -> &PivotPool {
        self.pool()
    }
}

impl Drop for PoolGuard<'_> {
    fn drop(&mut self) {
        let _ = self.manager.registry.exit(self.token);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfs::{Kind, Mode, NodeId, Tree};

    fn pool_with(tree: &mut Tree, paths: &[&str], generation: u64) -> PivotPool {
        let mut cands = Vec::new();
        for s in paths {
            let path = VfsPath::parse(s).unwrap();
            let mut id = tree.root();
            for c in path.components() {
                let mut sink = 0;
                id = match tree.dcache_find(id, c, &mut sink) {
                    Some(x) => x,
                    None => tree
                        .create_child(id, c, Kind::Directory, Mode::DIR_DEFAULT)
                        .unwrap(),
                };
            }
            cands.push((id, 1));
        }
        PivotPool::build(tree, &cands, 16, 8, generation, 0).0
    }

    #[test]
    fn snapshot_survives_concurrent_publish() {
        let mut t = Tree::new();
        let m = PivotManager::new(8, ReclaimMode::Free);
        m.install(pool_with(&mut t, &["/a"], 1));
        let guard = m.read();
        assert_eq!(guard.generation(), 1);
        m.install(pool_with(&mut t, &["/b"], 2));
        // Old snapshot still readable and unchanged.
        assert_eq!(guard.generation(), 1);
        assert_eq!(guard.pivots()[0].path().as_str(), "/a");
        assert_eq!(m.pending_reclaim(), 1);
        drop(guard);
        assert_eq!(m.read().generation(), 2);
        assert_eq!(m.reclaim(), 1);
    }

    #[test]
    fn nested_tokens_are_independent() {
        let r = ReaderRegistry::new(4);
        let a = r.enter();
        let b = r.enter();
        assert_ne!(a.slot(), b.slot());
        r.exit(b).unwrap();
        assert_eq!(r.active_readers(), 1);
        r.exit(a).unwrap();
        assert_eq!(r.active_readers(), 0);
    }

    #[test]
    fn double_exit_is_reported() {
        let r = ReaderRegistry::new(4);
        let t = r.enter();
        r.exit(t).unwrap();
        assert_eq!(r.exit(t), Err(EpochError::StaleToken { slot: t.slot() }));
        // A copy must not release a later occupant of the same slot.
        let again = r.enter();
        if again.slot() == t.slot() {
            assert!(r.exit(t).is_err());
        }
        assert_eq!(r.active_readers(), 1);
        r.exit(again).unwrap();
    }

    #[test]
    fn reclaim_without_readers_frees_everything() {
        let r = ReaderRegistry::new(4);
        let mut q = ReclaimQueue::new(ReclaimMode::Free);
        for g in 0..3 {
            q.retire(Box::into_raw(Box::new(PivotPool::empty(g))), r.global_epoch());
            r.advance();
        }
        assert_eq!(q.reclaim(&r), 3);
        assert!(q.is_empty());
        assert_eq!(q.reclaim(&r), 0);
    }

    #[test]
    fn pinned_reader_blocks_reclaim_of_its_epoch() {
        let r = ReaderRegistry::new(4);
        let mut q = ReclaimQueue::new(ReclaimMode::Free);
        let tok = r.enter();
        let g = tok.epoch();
        q.retire(Box::into_raw(Box::new(PivotPool::empty(0))), g);
        r.advance();
        assert_eq!(q.reclaim(&r), 0);
        r.exit(tok).unwrap();
        assert_eq!(q.reclaim(&r), 1);
    }

    #[test]
    fn quarantine_poisons_instead_of_freeing() {
        let mut t = Tree::new();
        let m = PivotManager::new(8, ReclaimMode::Quarantine);
        m.install(pool_with(&mut t, &["/a"], 1));
        let first = m.read();
        let raw = first.pool() as *const PivotPool;
        drop(first);
        m.install(pool_with(&mut t, &["/b"], 2));
        // SAFETY: quarantined pools are kept alive by the manager.
        assert!(unsafe { (*raw).is_poisoned() });
    }

    #[test]
    fn selector_alternates_by_turns() {
        let m = PivotManager::new(8, ReclaimMode::Free);
        let mut seen = vec![m.working_slot()];
        for _ in 0..3 {
            let pending = m.begin_update();
            let pool = PivotPool::empty(pending.generation);
            assert!(matches!(
                m.finish_update(pending, pool),
                UpdateOutcome::Published { .. }
            ));
            seen.push(m.working_slot());
        }
        assert_eq!(seen, vec![PoolSlot::A, PoolSlot::B, PoolSlot::A, PoolSlot::B]);
    }

    #[test]
    fn metadata_change_mid_build_suppresses_swap() {
        let mut t = Tree::new();
        let m = PivotManager::new(8, ReclaimMode::Free);
        m.install(pool_with(&mut t, &["/a1/b1"], 1));
        let before = m.working_slot();
        let pending = m.begin_update();
        assert!(m.is_building());
        let built = pool_with(&mut t, &["/a1/b1", "/c"], pending.generation);
        m.invalidate_for_metadata(&VfsPath::parse("/zz").unwrap());
        assert!(m.waiting_invalid());
        assert_eq!(m.finish_update(pending, built), UpdateOutcome::Suppressed);
        assert_eq!(m.working_slot(), before);
        assert!(!m.waiting_invalid() && !m.swap_suppressed());
        // The old pool is still the one readers see.
        assert_eq!(m.read().pivots()[0].path().as_str(), "/a1/b1");
    }

    #[test]
    fn invalidation_removes_covered_pivots() {
        let mut t = Tree::new();
        let m = PivotManager::new(8, ReclaimMode::Free);
        m.install(pool_with(
            &mut t,
            &["/a1/b1/c1", "/a1/b1/c2/d2/e2", "/a1/b1/c2/d2/e3/f3/g3", "/a1/b2/c4"],
            1,
        ));
        let report = m.invalidate_for_metadata(&VfsPath::parse("/a1/b1/c2").unwrap());
        assert_eq!(report.removed, 2);
        assert_eq!(report.touched, 3);
        let g = m.read();
        assert_eq!(g.dump(), "0\t/a1/b1/c1\n1\t/a1/b2/c4\n");
        assert!(g.verify().is_clean());
        drop(g);

        let report = m.invalidate_for_metadata(&VfsPath::root());
        assert_eq!(report.removed, 2);
        assert!(m.read().is_empty());
    }

    #[test]
    fn absent_prefix_only_invalidates_waiting_pool() {
        let mut t = Tree::new();
        let m = PivotManager::new(8, ReclaimMode::Free);
        m.install(pool_with(&mut t, &["/a"], 1));
        let publishes = m.publishes();
        let report = m.invalidate_for_metadata(&VfsPath::parse("/zz").unwrap());
        assert_eq!(report, InvalidationReport::default());
        assert_eq!(m.publishes(), publishes);
        assert!(m.waiting_invalid() && m.swap_suppressed());
        let _ = NodeId::ROOT;
    }
}
