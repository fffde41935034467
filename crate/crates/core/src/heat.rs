//! Per-dentry heat values and the Candidate Set.
//!
//! Each dentry carries a [`HeatCell`]: its heat, the version window the heat
//! belongs to, and the two links that thread it into the Candidate Set. The
//! set itself is only a header (head, length, least-popular cursor) over
//! those intrusive links. All mutation happens while the caller holds the
//! tracker's exclusive section, so the atomics only provide interior
//! mutability for dentries shared behind `&Tree`.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::time::Duration;

use crate::vfs::NodeId;

const NO_LINK: u64 = u64::MAX;

#[derive(Debug)]
pub struct HeatCell {
    heat: AtomicU64,
    version: AtomicU64,
    prev: AtomicU64,
    next: AtomicU64,
}

impl HeatCell {
    pub fn new() -> Self {
        Self {
            heat: AtomicU64::new(0),
            version: AtomicU64::new(0),
            prev: AtomicU64::new(NO_LINK),
            next: AtomicU64::new(NO_LINK),
        }
    }

    pub fn heat(&self) -> u64 {
        self.heat.load(Relaxed)
    }

    pub fn version(&self) -> u64 {
        self.version.load(Relaxed)
    }

    /// True while the dentry is threaded into a Candidate Set.
    pub fn is_linked(&self) -> bool {
        self.next.load(Relaxed) != NO_LINK
    }

    fn prev(&self) -> NodeId {
        NodeId(self.prev.load(Relaxed))
    }

    fn next(&self) -> NodeId {
        NodeId(self.next.load(Relaxed))
    }

    fn set_links(&self, prev: NodeId, next: NodeId) {
        self.prev.store(prev.0, Relaxed);
        self.next.store(next.0, Relaxed);
    }

    fn clear_links(&self) {
        self.prev.store(NO_LINK, Relaxed);
        self.next.store(NO_LINK, Relaxed);
    }

    #[cfg(test)]
    pub(crate) fn force(&self, heat: u64, version: u64) {
        self.heat.store(heat, Relaxed);
        self.version.store(version, Relaxed);
    }
}

impl Default for HeatCell {
    fn default() -> Self {
        Self::new()
    }
}

/// Anything that can hand out the heat cell of a live dentry.
pub trait HeatStore {
    fn heat_cell(&self, id: NodeId) -> Option<&HeatCell>;

    fn cell(&self, id: NodeId) -> &HeatCell {
        self.heat_cell(id).expect("candidate dentry is live")
    }
}

impl HeatStore for [HeatCell] {
    fn heat_cell(&self, id: NodeId) -> Option<&HeatCell> {
        self.get(id.0 as usize)
    }
}

impl HeatStore for Vec<HeatCell> {
    fn heat_cell(&self, id: NodeId) -> Option<&HeatCell> {
        self.get(id.0 as usize)
    }
}

/// The global version window. Fresh dentries carry version 0, so the first
/// window is 1.
#[derive(Debug, Clone)]
pub struct HeatEpoch {
    global_version: u64,
    period: Duration,
}

impl HeatEpoch {
    pub fn new(period: Duration) -> Self {
        Self {
            global_version: 1,
            period,
        }
    }

    pub fn version(&self) -> u64 {
        self.global_version
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    pub fn advance(&mut self) -> u64 {
        self.global_version += 1;
        self.global_version
    }
}

/// Bumps the heat of a lookup target, restarting from 1 when the stored heat
/// belongs to an older window.
pub fn record_access(cell: &HeatCell, epoch: &HeatEpoch) -> u64 {
    let v = epoch.version();
    let heat = if cell.version() == v {
        cell.heat().saturating_add(1)
    } else {
        cell.version.store(v, Relaxed);
        1
    };
    cell.heat.store(heat, Relaxed);
    heat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    Replaced(NodeId),
    Rejected,
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    capacity: usize,
    threshold: u64,
    len: usize,
    head: Option<NodeId>,
    least_popular: Option<NodeId>,
}

impl CandidateSet {
    pub const DEFAULT_CAPACITY: usize = 64;
    pub const DEFAULT_THRESHOLD: u64 = 4;

    pub fn new(capacity: usize, threshold: u64) -> Self {
        Self {
            capacity,
            threshold,
            len: 0,
            head: None,
            least_popular: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.capacity
    }

    pub fn least_popular(&self) -> Option<NodeId> {
        self.least_popular
    }

    pub fn contains<S: HeatStore + ?Sized>(&self, store: &S, id: NodeId) -> bool {
        store.heat_cell(id).is_some_and(HeatCell::is_linked)
    }

    /// Members in list order starting at the head.
    pub fn members<S: HeatStore + ?Sized>(&self, store: &S) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.len);
        if let Some(head) = self.head {
            let mut cur = head;
            loop {
                out.push(cur);
                cur = store.cell(cur).next();
                if cur == head {
                    break;
                }
            }
        }
        out
    }

    /// Admission test for a dentry that is not yet a member. Call after
    /// [`record_access`] on the same dentry.
    pub fn maybe_admit<S: HeatStore + ?Sized>(&mut self, store: &S, id: NodeId) -> Admission {
        debug_assert!(!self.contains(store, id));
        if self.capacity == 0 {
            return Admission::Rejected;
        }
        if !self.is_full() {
            self.link_before_head(store, id);
            self.reconcile_least_popular(store, id);
            return Admission::Admitted;
        }
        let victim = match self.least_popular.or(self.head) {
            Some(v) => v,
            None => return Admission::Rejected,
        };
        let newcomer_heat = store.cell(id).heat();
        let bar = store.cell(victim).heat().saturating_add(self.threshold);
        if newcomer_heat > bar {
            self.replace(store, victim, id);
            self.least_popular = Some(id);
            Admission::Replaced(victim)
        } else {
            Admission::Rejected
        }
    }

    /// After a member's heat changed: the smaller of the member and the
    /// cursor becomes the cursor; ties keep the current cursor.
    pub fn reconcile_least_popular<S: HeatStore + ?Sized>(&mut self, store: &S, member: NodeId) {
        debug_assert!(self.contains(store, member));
        match self.least_popular {
            None => self.least_popular = Some(member),
            Some(lpc) if lpc == member => {}
            Some(lpc) => {
                if store.cell(member).heat() < store.cell(lpc).heat() {
                    self.least_popular = Some(member);
                }
            }
        }
    }

    /// Evicts every member whose heat is from an older window.
    pub fn drain_overdue<S: HeatStore + ?Sized>(
        &mut self,
        store: &S,
        epoch: &HeatEpoch,
    ) -> Vec<NodeId> {
        let stale: Vec<NodeId> = self
            .members(store)
            .into_iter()
            .filter(|id| store.cell(*id).version() < epoch.version())
            .collect();
        for id in &stale {
            self.unlink(store, *id);
        }
        stale
    }

    /// Drops a member outright, e.g. when its dentry is being unlinked.
    pub fn remove<S: HeatStore + ?Sized>(&mut self, store: &S, id: NodeId) -> bool {
        if self.contains(store, id) {
            self.unlink(store, id);
            true
        } else {
            false
        }
    }

    fn link_before_head<S: HeatStore + ?Sized>(&mut self, store: &S, id: NodeId) {
        let cell = store.cell(id);
        match self.head {
            None => {
                cell.set_links(id, id);
                self.head = Some(id);
            }
            Some(head) => {
                let tail = store.cell(head).prev();
                cell.set_links(tail, head);
                store.cell(tail).next.store(id.0, Relaxed);
                store.cell(head).prev.store(id.0, Relaxed);
            }
        }
        self.len += 1;
    }

    /// Puts `newcomer` at `victim`'s position in the list.
    fn replace<S: HeatStore + ?Sized>(&mut self, store: &S, victim: NodeId, newcomer: NodeId) {
        let v = store.cell(victim);
        let n = store.cell(newcomer);
        if v.next() == victim {
            n.set_links(newcomer, newcomer);
        } else {
            let (prev, next) = (v.prev(), v.next());
            n.set_links(prev, next);
            store.cell(prev).next.store(newcomer.0, Relaxed);
            store.cell(next).prev.store(newcomer.0, Relaxed);
        }
        v.clear_links();
        if self.head == Some(victim) {
            self.head = Some(newcomer);
        }
    }

    fn unlink<S: HeatStore + ?Sized>(&mut self, store: &S, id: NodeId) {
        let cell = store.cell(id);
        let (prev, next) = (cell.prev(), cell.next());
        if next == id {
            self.head = None;
        } else {
            store.cell(prev).next.store(next.0, Relaxed);
            store.cell(next).prev.store(prev.0, Relaxed);
            if self.head == Some(id) {
                self.head = Some(next);
            }
        }
        cell.clear_links();
        self.len -= 1;
        if self.least_popular == Some(id) {
            self.least_popular = None;
        }
    }

    /// Structural check of the intrusive list, for tests and audits.
    pub fn check_links<S: HeatStore + ?Sized>(&self, store: &S) -> Result<(), String> {
        let members = self.members(store);
        if members.len() != self.len {
            return Err(format!("walked {} members, len says {}", members.len(), self.len));
        }
        if self.len > self.capacity {
            return Err(format!("len {} exceeds capacity {}", self.len, self.capacity));
        }
        for &m in &members {
            let c = store.cell(m);
            if store.cell(c.next()).prev() != m || store.cell(c.prev()).next() != m {
                return Err(format!("broken links around {m}"));
            }
        }
        if let Some(lpc) = self.least_popular {
            if !members.contains(&lpc) {
                return Err(format!("cursor {lpc} is not a member"));
            }
        }
        Ok(())
    }
}

/// The global window plus the set, guarded together by the engine.
#[derive(Debug, Clone)]
pub struct HeatTracker {
    pub epoch: HeatEpoch,
    pub set: CandidateSet,
}

impl HeatTracker {
    pub fn new(capacity: usize, threshold: u64, period: Duration) -> Self {
        Self {
            epoch: HeatEpoch::new(period),
            set: CandidateSet::new(capacity, threshold),
        }
    }

    /// Heat bookkeeping for one lookup target.
    pub fn on_target_access<S: HeatStore + ?Sized>(&mut self, store: &S, id: NodeId) -> u64 {
        let cell = store.cell(id);
        let heat = record_access(cell, &self.epoch);
        if cell.is_linked() {
            self.set.reconcile_least_popular(store, id);
        } else {
            self.set.maybe_admit(store, id);
        }
        heat
    }

    /// Members with their current heat, for pivot generation.
    pub fn candidates<S: HeatStore + ?Sized>(&self, store: &S) -> Vec<(NodeId, u64)> {
        self.set
            .members(store)
            .into_iter()
            .map(|id| (id, store.cell(id).heat()))
            .collect()
    }

    /// Opens a new window and drops members from the old one.
    pub fn next_period<S: HeatStore + ?Sized>(&mut self, store: &S) -> Vec<NodeId> {
        self.epoch.advance();
        self.set.drain_overdue(store, &self.epoch)
    }
}
