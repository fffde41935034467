//! Pivots and the ordered Pivot Pool.
//!
//! A pool is a list of popular paths sorted in ascending byte order. Each
//! pivot records how much it shares with its predecessor, both in whole
//! components (`overlap`) and in bytes (`byte_overlap`). The byte form drives
//! the search: the cursor into the requested path only moves forward, each
//! visited pivot either extends the match from the cursor, inherits the
//! previous match, or ends the scan.

use std::fmt;
use std::mem::size_of;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::path::{shared_components, VfsPath};
use crate::vfs::{Kind, Mode, NodeId, Tree};

pub const DEFAULT_COMPONENTS: usize = 8;
pub const DEFAULT_POOL_SIZE: usize = 16;

/// One resolved component of a pivot's path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub dentry: NodeId,
    /// 1-based depth below the root.
    pub depth: u32,
    /// End offset of this component inside the pivot path.
    pub offset: u32,
    pub kind: Kind,
    pub mode: Mode,
    /// Traversal classes granted by the root and every directory above this
    /// component (see [`Mode::exec_classes`]).
    pub ancestors_exec: u8,
}

struct Extension {
    block: Box<[Component]>,
    next: Option<Box<Extension>>,
}

/// Fixed-size head array with a chain of equally sized extension blocks for
/// deeper paths.
pub struct ComponentChain {
    capacity: usize,
    len: usize,
    head: Box<[Component]>,
    ext: Option<Box<Extension>>,
}

impl ComponentChain {
    fn new(capacity: usize, items: Vec<Component>) -> Self {
        let capacity = capacity.max(1);
        let len = items.len();
        let mut blocks: Vec<Box<[Component]>> = items
            .chunks(capacity)
            .map(|c| c.to_vec().into_boxed_slice())
            .collect();
        let head = if blocks.is_empty() {
            Box::default()
        } else {
            blocks.remove(0)
        };
        let mut ext = None;
        for block in blocks.into_iter().rev() {
            ext = Some(Box::new(Extension { block, next: ext }));
        }
        Self {
            capacity,
            len,
            head,
            ext,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Component at 1-based `depth`.
    pub fn get(&self, depth: usize) -> Option<&Component> {
        if depth == 0 || depth > self.len {
            return None;
        }
        let idx = depth - 1;
        let mut hops = idx / self.capacity;
        if hops == 0 {
            return self.head.get(idx);
        }
        let mut node = self.ext.as_deref()?;
        while hops > 1 {
            node = node.next.as_deref()?;
            hops -= 1;
        }
        node.block.get(idx % self.capacity)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Component> {
        (1..=self.len).filter_map(move |d| self.get(d))
    }

    fn blocks(&self) -> usize {
        self.len.div_ceil(self.capacity).max(1)
    }
}

impl fmt::Debug for ComponentChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

#[derive(Debug)]
pub struct Pivot {
    path: Arc<VfsPath>,
    overlap: usize,
    byte_overlap: usize,
    components: ComponentChain,
    valid: AtomicBool,
    built_seq: u64,
}

impl Pivot {
    pub fn path(&self) -> &VfsPath {
        &self.path
    }

    pub fn shared_path(&self) -> Arc<VfsPath> {
        Arc::clone(&self.path)
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn byte_overlap(&self) -> usize {
        self.byte_overlap
    }

    pub fn components(&self) -> &ComponentChain {
        &self.components
    }

    pub fn component(&self, depth: usize) -> Option<&Component> {
        self.components.get(depth)
    }

    pub fn is_valid(&self) -> bool {
        self.valid.load(Ordering::Acquire)
    }

    pub(crate) fn set_valid(&self, valid: bool) {
        self.valid.store(valid, Ordering::Release);
    }

    /// Tree mutation sequence number the pivot was built against.
    pub fn built_seq(&self) -> u64 {
        self.built_seq
    }

    fn rebuilt(&self, overlap: usize, byte_overlap: usize, capacity: usize) -> Pivot {
        Pivot {
            path: Arc::clone(&self.path),
            overlap,
            byte_overlap,
            components: ComponentChain::new(capacity, self.components.iter().copied().collect()),
            valid: AtomicBool::new(true),
            built_seq: self.built_seq,
        }
    }

    #[cfg(test)]
    pub(crate) fn corrupt_overlap(&mut self, overlap: usize) {
        self.overlap = overlap;
    }
}

/// Number of leading whole components two pivots share.
pub fn compute_overlap(prev: &Pivot, cur: &Pivot) -> usize {
    shared_components(prev.path(), cur.path())
}

fn byte_lcp(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[derive(Debug)]
pub struct PivotPool {
    pivots: Vec<Pivot>,
    generation: u64,
    component_capacity: usize,
    poisoned: AtomicBool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PivotMatch {
    pub index: usize,
    /// Whole components of the requested path covered by the pivot.
    pub depth: usize,
}

/// Instrumentation for one Stage One scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeStats {
    pub char_comparisons: u64,
    pub pivots_visited: u64,
    pub pivots_compared: u64,
    /// Every position the path cursor took, in order.
    pub cursor_trace: Vec<usize>,
}

impl ProbeStats {
    pub fn cursor_is_monotone(&self) -> bool {
        self.cursor_trace.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Default)]
pub struct BuildReport {
    pub skipped_dead: Vec<NodeId>,
    pub duplicates: usize,
    pub truncated: usize,
}

impl PivotPool {
    pub fn empty(generation: u64) -> Self {
        Self::from_sorted(Vec::new(), generation, DEFAULT_COMPONENTS)
    }

    fn from_sorted(pivots: Vec<Pivot>, generation: u64, component_capacity: usize) -> Self {
        Self {
            pivots,
            generation,
            component_capacity,
            poisoned: AtomicBool::new(false),
        }
    }

    /// Builds a pool from `(dentry, heat)` candidates. Keeps at most `bound`
    /// pivots, hottest first (ties by path), then orders them by path.
    pub fn build(
        tree: &Tree,
        candidates: &[(NodeId, u64)],
        bound: usize,
        component_capacity: usize,
        generation: u64,
        built_seq: u64,
    ) -> (Self, BuildReport) {
        let mut report = BuildReport::default();
        let mut entries: Vec<(VfsPath, u64, Vec<Component>)> = Vec::new();
        for &(id, heat) in candidates {
            let Some(chain) = tree.ancestry(id) else {
                report.skipped_dead.push(id);
                continue;
            };
            if chain.is_empty() {
                // The root never makes a useful starting point.
                continue;
            }
            let root_mode = tree.get(tree.root()).expect("root").mode;
            let mut allowed = root_mode.exec_classes();
            let mut comps = Vec::with_capacity(chain.len());
            let mut names = Vec::with_capacity(chain.len());
            let mut offset = 0u32;
            for (i, node) in chain.iter().enumerate() {
                let d = tree.get(*node).expect("ancestry is live");
                offset += 1 + d.name.len() as u32;
                comps.push(Component {
                    dentry: *node,
                    depth: i as u32 + 1,
                    offset,
                    kind: d.kind,
                    mode: d.mode,
                    ancestors_exec: allowed,
                });
                allowed &= d.mode.exec_classes();
                names.push(d.name.as_str());
            }
            let path = VfsPath::from_components(names).expect("stored names are valid");
            entries.push((path, heat, comps));
        }

        entries.sort_by(|a, b| a.0.as_str().cmp(b.0.as_str()).then(b.1.cmp(&a.1)));
        let before = entries.len();
        entries.dedup_by(|later, earlier| later.0 == earlier.0);
        report.duplicates = before - entries.len();

        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.as_str().cmp(b.0.as_str())));
        if entries.len() > bound {
            report.truncated = entries.len() - bound;
            entries.truncate(bound);
        }
        entries.sort_by(|a, b| a.0.as_str().cmp(b.0.as_str()));

        let mut pivots: Vec<Pivot> = Vec::with_capacity(entries.len());
        for (path, _heat, comps) in entries {
            let (overlap, byte_overlap) = match pivots.last() {
                Some(prev) => (
                    shared_components(prev.path(), &path),
                    byte_lcp(prev.path().as_str().as_bytes(), path.as_str().as_bytes()),
                ),
                None => (0, 0),
            };
            pivots.push(Pivot {
                path: Arc::new(path),
                overlap,
                byte_overlap,
                components: ComponentChain::new(component_capacity, comps),
                valid: AtomicBool::new(true),
                built_seq,
            });
        }
        (
            Self::from_sorted(pivots, generation, component_capacity),
            report,
        )
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn component_capacity(&self) -> usize {
        self.component_capacity
    }

    pub fn pivots(&self) -> &[Pivot] {
        &self.pivots
    }

    pub fn get(&self, index: usize) -> Option<&Pivot> {
        self.pivots.get(index)
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.load(Ordering::Acquire)
    }

    pub(crate) fn poison(&self) {
        self.poisoned.store(true, Ordering::Release);
    }

    pub fn find_best_pivot(&self, path: &VfsPath) -> Option<PivotMatch> {
        self.find_best_pivot_traced(path, &mut ProbeStats::default())
    }

    /// Single forward scan for the pivot sharing the most whole components
    /// with `path`. Invalid pivots are treated as absent; on equal depth the
    /// first pivot wins.
    pub fn find_best_pivot_traced(
        &self,
        path: &VfsPath,
        stats: &mut ProbeStats,
    ) -> Option<PivotMatch> {
        let p = path.as_str().as_bytes();
        // Bytes of `path` known to match the reference pivot.
        let mut cursor = 0usize;
        let mut have_reference = false;
        // Byte LCP between the reference pivot and the current one.
        let mut carry = usize::MAX;
        let mut best: Option<PivotMatch> = None;
        stats.cursor_trace.push(cursor);

        for (index, pivot) in self.pivots.iter().enumerate() {
            carry = carry.min(pivot.byte_overlap);
            if !pivot.is_valid() {
                continue;
            }
            stats.pivots_visited += 1;
            if have_reference {
                if carry < cursor {
                    break;
                }
                if carry > cursor {
                    // Agrees with the reference past the cursor, so it
                    // diverges from `path` exactly where the reference did.
                    continue;
                }
            }
            stats.pivots_compared += 1;
            let q = pivot.path.as_str().as_bytes();
            while cursor < p.len() && cursor < q.len() {
                stats.char_comparisons += 1;
                if p[cursor] != q[cursor] {
                    break;
                }
                cursor += 1;
            }
            stats.cursor_trace.push(cursor);
            have_reference = true;
            carry = usize::MAX;

            let depth = matched_components(path, q, cursor);
            if depth > best.map_or(0, |b| b.depth) {
                best = Some(PivotMatch { index, depth });
            }
        }
        best
    }

    /// Reference answer: compare every valid pivot independently.
    pub fn brute_force_best(&self, path: &VfsPath) -> Option<PivotMatch> {
        let mut best: Option<PivotMatch> = None;
        for (index, pivot) in self.pivots.iter().enumerate() {
            if !pivot.is_valid() {
                continue;
            }
            let depth = shared_components(pivot.path(), path);
            if depth > best.map_or(0, |b| b.depth) {
                best = Some(PivotMatch { index, depth });
            }
        }
        best
    }

    /// Index of the first pivot at or below `prefix`.
    pub fn first_covered(&self, prefix: &VfsPath) -> Option<usize> {
        self.pivots
            .iter()
            .position(|p| prefix.is_prefix_of(p.path()))
    }

    /// Clears the valid flag on `from` and every later pivot.
    pub fn invalidate_suffix(&self, from: usize) -> usize {
        for p in &self.pivots[from..] {
            p.set_valid(false);
        }
        self.pivots.len() - from
    }

    /// A fresh pool without the pivots under `prefix`. Survivors whose
    /// predecessor changed get their overlaps recomputed.
    pub fn without_prefix(&self, prefix: &VfsPath, generation: u64) -> (PivotPool, usize) {
        let mut kept: Vec<Pivot> = Vec::with_capacity(self.pivots.len());
        let mut removed = 0;
        let mut gap = false;
        for p in &self.pivots {
            if prefix.is_prefix_of(p.path()) {
                removed += 1;
                gap = true;
                continue;
            }
            let (overlap, byte_overlap) = if gap || kept.is_empty() {
                match kept.last() {
                    Some(prev) => (
                        compute_overlap(prev, p),
                        byte_lcp(prev.path().as_str().as_bytes(), p.path().as_str().as_bytes()),
                    ),
                    None => (0, 0),
                }
            } else {
                (p.overlap, p.byte_overlap)
            };
            gap = false;
            kept.push(p.rebuilt(overlap, byte_overlap, self.component_capacity));
        }
        (
            Self::from_sorted(kept, generation, self.component_capacity),
            removed,
        )
    }

    /// `<overlap>\t<path>` per pivot.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for p in &self.pivots {
            out.push_str(&format!("{}\t{}\n", p.overlap, p.path));
        }
        out
    }

    /// Approximate memory held by the pool on this target.
    pub fn footprint_bytes(&self) -> usize {
        size_of::<PivotPool>()
            + self
                .pivots
                .iter()
                .map(|p| {
                    size_of::<Pivot>()
                        + size_of::<VfsPath>()
                        + p.path.as_str().len()
                        + p.path.depth() * size_of::<u32>()
                        + p.components.blocks() * self.component_capacity * size_of::<Component>()
                        + p.components.blocks().saturating_sub(1) * size_of::<Extension>()
                })
                .sum::<usize>()
    }

    /// Recomputes order, overlaps and component layout by brute force.
    pub fn verify(&self) -> PoolReport {
        let mut report = PoolReport::default();
        for (i, p) in self.pivots.iter().enumerate() {
            let (want_ov, want_bytes) = if i == 0 {
                (0, 0)
            } else {
                let prev = &self.pivots[i - 1];
                if prev.path.as_str() >= p.path.as_str() {
                    report.push(i, ViolationKind::Order);
                }
                (
                    shared_components(prev.path(), p.path()),
                    byte_lcp(prev.path.as_str().as_bytes(), p.path.as_str().as_bytes()),
                )
            };
            if p.overlap != want_ov {
                report.push(
                    i,
                    ViolationKind::Overlap {
                        stored: p.overlap,
                        expected: want_ov,
                    },
                );
            }
            if p.byte_overlap != want_bytes {
                report.push(i, ViolationKind::ByteOverlap);
            }
            if p.components.len() != p.path.depth() {
                report.push(i, ViolationKind::Components);
                continue;
            }
            for (k, c) in p.components.iter().enumerate() {
                if c.depth as usize != k + 1 || c.offset as usize != p.path.component_end(k) {
                    report.push(i, ViolationKind::Components);
                    break;
                }
            }
        }
        report
    }

    /// Checks each pivot's dentries still spell its path in `tree`.
    pub fn verify_against_tree(&self, tree: &Tree) -> PoolReport {
        let mut report = PoolReport::default();
        for (i, p) in self.pivots.iter().enumerate() {
            if !pivot_matches_tree(p, tree) {
                report.push(i, ViolationKind::StaleDentry);
            }
        }
        report
    }
}

/// True when the pivot's component dentries are live and chain to its path.
pub fn pivot_matches_tree(pivot: &Pivot, tree: &Tree) -> bool {
    let mut parent = tree.root();
    for (k, c) in pivot.components.iter().enumerate() {
        match tree.get(c.dentry) {
            Some(d) if d.parent == Some(parent) && d.name == pivot.path.component(k) => {
                parent = c.dentry;
            }
            _ => return false,
        }
    }
    true
}

/// Whole components of `path` covered by a byte match of `matched` against
/// the pivot bytes `q`.
fn matched_components(path: &VfsPath, q: &[u8], matched: usize) -> usize {
    let depth = path.depth();
    let strictly_inside = (0..depth)
        .map(|i| path.component_end(i))
        .take_while(|e| *e < matched)
        .count();
    let boundary_here = strictly_inside < depth
        && path.component_end(strictly_inside) == matched
        && (q.len() == matched || q[matched] == b'/');
    strictly_inside + usize::from(boundary_here)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Order,
    Overlap { stored: usize, expected: usize },
    ByteOverlap,
    Components,
    StaleDentry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolReport {
    pub violations: Vec<Violation>,
}

impl PoolReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, index: usize, kind: ViolationKind) {
        self.violations.push(Violation { index, kind });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfs::Mode;

    fn p(s: &str) -> VfsPath {
        VfsPath::parse(s).unwrap()
    }

    fn mkpath(tree: &mut Tree, path: &str, leaf: Kind) -> NodeId {
        let path = p(path);
        let mut id = tree.root();
        let depth = path.depth();
        for (i, c) in path.components().enumerate() {
            let mut sink = 0;
            id = match tree.dcache_find(id, c, &mut sink) {
                Some(x) => x,
                None => {
                    let kind = if i + 1 == depth { leaf } else { Kind::Directory };
                    let mode = if kind == Kind::File {
                        Mode::FILE_DEFAULT
                    } else {
                        Mode::DIR_DEFAULT
                    };
                    tree.create_child(id, c, kind, mode).unwrap()
                }
            };
        }
        id
    }

    const SAMPLE_PIVOTS: [&str; 4] = [
        "/a1/b1/c1",
        "/a1/b1/c2/d2/e2",
        "/a1/b1/c2/d2/e3/f3/g3",
        "/a1/b2/c4",
    ];

    fn sample_pool() -> (Tree, PivotPool) {
        let mut t = Tree::new();
        let cands: Vec<(NodeId, u64)> = SAMPLE_PIVOTS
            .iter()
            .map(|s| (mkpath(&mut t, s, Kind::Directory), 1))
            .collect();
        let (pool, _) = PivotPool::build(&t, &cands, 16, 8, 1, 0);
        (t, pool)
    }

    #[test]
    fn sample_pool_overlaps() {
        let (_, pool) = sample_pool();
        let ov: Vec<usize> = pool.pivots().iter().map(Pivot::overlap).collect();
        assert_eq!(ov, vec![0, 2, 4, 1]);
        assert_eq!(
            pool.dump(),
            "0\t/a1/b1/c1\n2\t/a1/b1/c2/d2/e2\n4\t/a1/b1/c2/d2/e3/f3/g3\n1\t/a1/b2/c4\n"
        );
    }

    #[test]
    fn sample_pool_best_pivot() {
        let (_, pool) = sample_pool();
        let path = p("/a1/b1/c2/d2/e3/f3/foo");
        let m = pool.find_best_pivot(&path).unwrap();
        assert_eq!(m, PivotMatch { index: 2, depth: 6 });
        assert_eq!(pool.brute_force_best(&path), Some(m));
        assert_eq!(pool.find_best_pivot(&p("/zz/yy")), None);
    }

    #[test]
    fn empty_pool_finds_nothing() {
        assert_eq!(PivotPool::empty(0).find_best_pivot(&p("/a")), None);
    }

    #[test]
    fn single_and_duplicate_candidates() {
        let mut t = Tree::new();
        let a = mkpath(&mut t, "/a/b", Kind::Directory);
        let (pool, report) = PivotPool::build(&t, &[(a, 3), (a, 5)], 16, 8, 1, 0);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.pivots()[0].overlap(), 0);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn truncation_keeps_hottest_then_sorts() {
        let mut t = Tree::new();
        let x = mkpath(&mut t, "/x", Kind::Directory);
        let y = mkpath(&mut t, "/y", Kind::Directory);
        let z = mkpath(&mut t, "/z", Kind::Directory);
        let (pool, report) = PivotPool::build(&t, &[(x, 1), (z, 9), (y, 9)], 2, 8, 1, 0);
        let paths: Vec<&str> = pool.pivots().iter().map(|p| p.path().as_str()).collect();
        assert_eq!(paths, vec!["/y", "/z"]);
        assert_eq!(report.truncated, 1);
        let (zero, _) = PivotPool::build(&t, &[(x, 1)], 0, 8, 1, 0);
        assert!(zero.is_empty());
    }

    #[test]
    fn dead_and_root_candidates_are_dropped() {
        let mut t = Tree::new();
        let a = mkpath(&mut t, "/a", Kind::Directory);
        let (pool, report) =
            PivotPool::build(&t, &[(a, 1), (NodeId(999), 1), (t.root(), 1)], 16, 8, 1, 0);
        assert_eq!(pool.len(), 1);
        assert_eq!(report.skipped_dead, vec![NodeId(999)]);
    }

    #[test]
    fn component_chain_extends_past_capacity() {
        let mut t = Tree::new();
        let deep = mkpath(&mut t, "/a/b/c/d/e/f/g/h/i/j/k", Kind::File);
        let (pool, _) = PivotPool::build(&t, &[(deep, 1)], 16, 4, 1, 0);
        let pv = &pool.pivots()[0];
        assert_eq!(pv.depth(), 11);
        for d in 1..=11 {
            let c = pv.component(d).unwrap();
            assert_eq!(c.depth as usize, d);
            assert_eq!(c.offset as usize, pv.path().component_end(d - 1));
        }
        assert_eq!(pv.component(11).unwrap().dentry, deep);
        assert!(pv.component(12).is_none());
        assert!(pool.verify().is_clean());
        assert!(pool.verify_against_tree(&t).is_clean());
    }

    #[test]
    fn raw_byte_order_neighbour_does_not_hide_deeper_match() {
        let mut t = Tree::new();
        let ids: Vec<(NodeId, u64)> = ["/a", "/a-", "/a/x"]
            .iter()
            .map(|s| (mkpath(&mut t, s, Kind::Directory), 1))
            .collect();
        let (pool, _) = PivotPool::build(&t, &ids, 16, 8, 1, 0);
        let order: Vec<&str> = pool.pivots().iter().map(|p| p.path().as_str()).collect();
        assert_eq!(order, vec!["/a", "/a-", "/a/x"]);
        let path = p("/a/x/y");
        assert_eq!(
            pool.find_best_pivot(&path),
            Some(PivotMatch { index: 2, depth: 2 })
        );
    }

    #[test]
    fn partial_name_match_is_not_a_component() {
        let mut t = Tree::new();
        let a = mkpath(&mut t, "/ab/cd", Kind::Directory);
        let (pool, _) = PivotPool::build(&t, &[(a, 1)], 16, 8, 1, 0);
        assert_eq!(pool.find_best_pivot(&p("/ab/c")), Some(PivotMatch { index: 0, depth: 1 }));
        assert_eq!(pool.find_best_pivot(&p("/a")), None);
        assert_eq!(
            pool.find_best_pivot(&p("/ab/cd/e")),
            Some(PivotMatch { index: 0, depth: 2 })
        );
    }

    #[test]
    fn invalid_pivots_are_skipped() {
        let (_, pool) = sample_pool();
        pool.pivots()[2].set_valid(false);
        let path = p("/a1/b1/c2/d2/e3/f3/foo");
        let m = pool.find_best_pivot(&path).unwrap();
        assert_eq!(m, PivotMatch { index: 1, depth: 4 });
        assert_eq!(pool.brute_force_best(&path), Some(m));
    }

    #[test]
    fn corrupted_overlap_is_reported() {
        let (_, mut pool) = sample_pool();
        assert!(pool.verify().is_clean());
        pool.pivots[1].corrupt_overlap(3);
        let report = pool.verify();
        assert_eq!(
            report.violations,
            vec![Violation {
                index: 1,
                kind: ViolationKind::Overlap {
                    stored: 3,
                    expected: 2
                }
            }]
        );
    }

    #[test]
    fn removal_recomputes_boundary_overlap() {
        let (_, pool) = sample_pool();
        let (next, removed) = pool.without_prefix(&p("/a1/b1/c2"), 2);
        assert_eq!(removed, 2);
        assert_eq!(next.dump(), "0\t/a1/b1/c1\n1\t/a1/b2/c4\n");
        assert!(next.verify().is_clean());
        assert!(next.pivots().iter().all(Pivot::is_valid));
    }

    #[test]
    fn suffix_invalidation_counts() {
        let (_, pool) = sample_pool();
        assert_eq!(pool.first_covered(&p("/a1/b1/c2")), Some(1));
        assert_eq!(pool.invalidate_suffix(1), 3);
        assert!(pool.pivots()[0].is_valid());
        assert!(!pool.pivots()[3].is_valid());
        assert_eq!(pool.first_covered(&p("/zz")), None);
    }

    #[test]
    fn cached_ancestor_masks() {
        let mut t = Tree::new();
        let c = mkpath(&mut t, "/a/b/c", Kind::Directory);
        t.chmod_node(&p("/a"), Mode::new(0o750)).unwrap();
        let (pool, _) = PivotPool::build(&t, &[(c, 1)], 16, 8, 1, 0);
        let pv = &pool.pivots()[0];
        assert_eq!(pv.component(1).unwrap().ancestors_exec, 0b111);
        assert_eq!(pv.component(2).unwrap().ancestors_exec, 0b110);
        assert_eq!(pv.component(3).unwrap().ancestors_exec, 0b110);
    }

    #[test]
    fn footprint_near_seven_kilobytes() {
        let mut t = Tree::new();
        let cands: Vec<(NodeId, u64)> = (0..16)
            .map(|i| {
                let s = format!("/a1/b1/c1/d1/e1/f1/g{i}/h1");
                (mkpath(&mut t, &s, Kind::File), 1)
            })
            .collect();
        let (pool, _) = PivotPool::build(&t, &cands, 16, 8, 1, 0);
        let bytes = pool.footprint_bytes();
        assert!((3_500..=14_000).contains(&bytes), "footprint {bytes}");
    }
}
