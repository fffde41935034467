//! In-memory directory tree with a dentry hash table, and the component-wise
//! lookup that every other strategy is checked against.

use std::fmt;

use thiserror::Error;

use crate::heat::{HeatCell, HeatStore};
use crate::metrics::Metrics;
use crate::path::{validate_name, PathError, VfsPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Directory,
    File,
}

/// Nine-bit Unix-style permission mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mode(u16);

impl Mode {
    pub const DIR_DEFAULT: Mode = Mode(0o755);
    pub const FILE_DEFAULT: Mode = Mode(0o644);

    pub fn new(bits: u16) -> Self {
        Mode(bits & 0o777)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn can_traverse(self, cred: Credential) -> bool {
        self.0 & cred.exec_bit() != 0
    }

    /// Per-class traversal bits packed as owner=0b100, group=0b010, other=0b001.
    pub fn exec_classes(self) -> u8 {
        let b = self.0;
        (((b >> 6) & 1) << 2 | ((b >> 3) & 1) << 1 | (b & 1)) as u8
    }

    pub fn parse_octal(s: &str) -> Option<Mode> {
        let s = s.strip_prefix("0o").unwrap_or(s);
        u16::from_str_radix(s, 8)
            .ok()
            .filter(|b| *b <= 0o777)
            .map(Mode)
    }
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mode({:#o})", self.0)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04o}", self.0)
    }
}

/// Which permission class the caller falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Credential {
    Owner,
    Group,
    #[default]
    Other,
}

impl Credential {
    pub const ALL: [Credential; 3] = [Credential::Owner, Credential::Group, Credential::Other];

    fn exec_bit(self) -> u16 {
        match self {
            Credential::Owner => 0o100,
            Credential::Group => 0o010,
            Credential::Other => 0o001,
        }
    }

    /// The matching bit in [`Mode::exec_classes`].
    pub fn class_bit(self) -> u8 {
        match self {
            Credential::Owner => 0b100,
            Credential::Group => 0b010,
            Credential::Other => 0b001,
        }
    }
}

/// Errors a lookup can surface. Two strategies agree when they return the
/// same node or the same variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum LookupError {
    #[error("no such file or directory")]
    NotFound,
    #[error("not a directory")]
    NotADirectory,
    #[error("permission denied")]
    PermissionDenied,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VfsError {
    #[error("no such file or directory: {0}")]
    NotFound(String),
    #[error("not a directory: {0}")]
    NotADirectory(String),
    #[error("already exists: {0}")]
    AlreadyExists(String),
    #[error("directory not empty: {0}")]
    NotEmpty(String),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error("cannot move {0} below itself")]
    InvalidMove(String),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug)]
pub struct Dentry {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub name: String,
    pub kind: Kind,
    pub mode: Mode,
    pub size: u64,
    children: Vec<NodeId>,
    pub heat: HeatCell,
}

impl Dentry {
    pub fn is_dir(&self) -> bool {
        self.kind == Kind::Directory
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcacheConfig {
    pub bucket_bits: u32,
    pub seed: u64,
}

impl Default for DcacheConfig {
    fn default() -> Self {
        Self {
            bucket_bits: 16,
            seed: 0,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Hash buckets keyed by `(parent, name)`.
#[derive(Debug, Clone)]
pub struct DcacheTable {
    buckets: Vec<Vec<NodeId>>,
    mask: u64,
    seed: u64,
}

impl DcacheTable {
    pub fn new(config: DcacheConfig) -> Self {
        let n = 1usize << config.bucket_bits.min(30);
        Self {
            buckets: vec![Vec::new(); n],
            mask: (n - 1) as u64,
            seed: config.seed,
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// FNV-1a over the parent id and the name bytes, folded to a bucket.
    pub fn hash_component(&self, parent: NodeId, name: &str) -> usize {
        let mut h = FNV_OFFSET ^ self.seed;
        for b in parent.0.to_le_bytes().iter().chain(name.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= h >> 29;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 32;
        (h & self.mask) as usize
    }

    pub fn bucket(&self, index: usize) -> &[NodeId] {
        &self.buckets[index]
    }

    fn insert(&mut self, index: usize, id: NodeId) {
        self.buckets[index].push(id);
    }

    fn remove(&mut self, index: usize, id: NodeId) {
        let bucket = &mut self.buckets[index];
        if let Some(pos) = bucket.iter().position(|x| *x == id) {
            bucket.swap_remove(pos);
        }
    }
}

/// A metadata change about to be applied, passed to hooks while the tree
/// still has its pre-mutation shape.
#[derive(Debug, Clone, Copy)]
pub enum MetadataChange<'a> {
    Rename {
        node: NodeId,
        from: &'a VfsPath,
        to: &'a VfsPath,
    },
    Chmod {
        node: NodeId,
        path: &'a VfsPath,
        mode: Mode,
    },
    Remove {
        node: NodeId,
        path: &'a VfsPath,
    },
}

impl MetadataChange<'_> {
    pub fn node(&self) -> NodeId {
        match *self {
            MetadataChange::Rename { node, .. }
            | MetadataChange::Chmod { node, .. }
            | MetadataChange::Remove { node, .. } => node,
        }
    }

    /// The pre-mutation path whose cached state becomes stale.
    pub fn path(&self) -> &VfsPath {
        match self {
            MetadataChange::Rename { from, .. } => from,
            MetadataChange::Chmod { path, .. } | MetadataChange::Remove { path, .. } => path,
        }
    }
}

pub type Hook<'h> = dyn FnMut(&Tree, &MetadataChange<'_>) + 'h;

/// The directory tree. All dentries stay pinned; ids are never reused.
#[derive(Debug)]
pub struct Tree {
    nodes: Vec<Option<Dentry>>,
    table: DcacheTable,
    live: usize,
}

impl Tree {
    pub fn new() -> Self {
        Self::with_config(DcacheConfig::default())
    }

    pub fn with_config(config: DcacheConfig) -> Self {
        let root = Dentry {
            id: NodeId::ROOT,
            parent: None,
            name: "/".to_owned(),
            kind: Kind::Directory,
            mode: Mode::DIR_DEFAULT,
            size: 0,
            children: Vec::new(),
            heat: HeatCell::new(),
        };
        Self {
            nodes: vec![Some(root)],
            table: DcacheTable::new(config),
            live: 1,
        }
    }

    /// Copy of the shape, names, modes and sizes with fresh heat state.
    /// Node ids are preserved.
    pub fn duplicate(&self) -> Tree {
        let nodes = self
            .nodes
            .iter()
            .map(|slot| {
                slot.as_ref().map(|d| Dentry {
                    id: d.id,
                    parent: d.parent,
                    name: d.name.clone(),
                    kind: d.kind,
                    mode: d.mode,
                    size: d.size,
                    children: d.children.clone(),
                    heat: HeatCell::new(),
                })
            })
            .collect();
        Tree {
            nodes,
            table: self.table.clone(),
            live: self.live,
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn table(&self) -> &DcacheTable {
        &self.table
    }

    pub fn get(&self, id: NodeId) -> Option<&Dentry> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }

    fn node(&self, id: NodeId) -> &Dentry {
        self.get(id).expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Dentry {
        self.nodes[id.index()].as_mut().expect("dangling node id")
    }

    /// Live dentries in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Dentry> {
        self.nodes.iter().flatten()
    }

    pub fn hash_component(&self, parent: NodeId, name: &str) -> usize {
        self.table.hash_component(parent, name)
    }

    /// Resolves `name` under `parent` by scanning its bucket. Adds the
    /// characters compared (one pass to hash, one to verify) to `chars`.
    pub fn dcache_find(&self, parent: NodeId, name: &str, chars: &mut u64) -> Option<NodeId> {
        *chars += name.len() as u64;
        let bucket = self.table.hash_component(parent, name);
        for &id in self.table.bucket(bucket) {
            let d = self.node(id);
            if d.parent != Some(parent) {
                continue;
            }
            let (equal, compared) = compare_names(&d.name, name);
            *chars += compared;
            if equal {
                return Some(id);
            }
        }
        None
    }

    /// Component-wise lookup from the root with a traversal check on every
    /// directory walked through.
    pub fn lookup_original(
        &self,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        self.walk_from(NodeId::ROOT, path, 0, cred, metrics)
    }

    /// Resolves components `first..` of `path` starting at `start`, which
    /// must be the dentry reached after `first` components.
    pub fn walk_from(
        &self,
        start: NodeId,
        path: &VfsPath,
        first: usize,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        let mut cur = start;
        for i in first..path.depth() {
            let d = self.get(cur).ok_or(LookupError::NotFound)?;
            if !d.is_dir() {
                return Err(LookupError::NotADirectory);
            }
            if !d.mode.can_traverse(cred) {
                return Err(LookupError::PermissionDenied);
            }
            let mut chars = 0;
            let found = self.dcache_find(cur, path.component(i), &mut chars);
            metrics.char_comparisons += chars;
            cur = found.ok_or(LookupError::NotFound)?;
            metrics.visit(cur);
        }
        Ok(cur)
    }

    /// Resolution for administrative operations: no permission checks and no
    /// counters.
    pub fn resolve(&self, path: &VfsPath) -> Result<NodeId, VfsError> {
        let mut cur = NodeId::ROOT;
        let mut sink = 0;
        for (i, name) in path.components().enumerate() {
            let d = self.node(cur);
            if !d.is_dir() {
                return Err(VfsError::NotADirectory(prefix_str(path, i)));
            }
            cur = self
                .dcache_find(cur, name, &mut sink)
                .ok_or_else(|| VfsError::NotFound(prefix_str(path, i + 1)))?;
        }
        Ok(cur)
    }

    pub fn create_node(
        &mut self,
        parent_path: &VfsPath,
        name: &str,
        kind: Kind,
        mode: Mode,
    ) -> Result<NodeId, VfsError> {
        let parent = self.resolve(parent_path)?;
        self.create_child(parent, name, kind, mode)
    }

    pub fn create_child(
        &mut self,
        parent: NodeId,
        name: &str,
        kind: Kind,
        mode: Mode,
    ) -> Result<NodeId, VfsError> {
        validate_name(name)?;
        let p = self
            .get(parent)
            .ok_or_else(|| VfsError::NotFound(parent.to_string()))?;
        if !p.is_dir() {
            return Err(VfsError::NotADirectory(p.name.clone()));
        }
        let mut sink = 0;
        if self.dcache_find(parent, name, &mut sink).is_some() {
            return Err(VfsError::AlreadyExists(name.to_owned()));
        }
        let id = NodeId(self.nodes.len() as u64);
        self.nodes.push(Some(Dentry {
            id,
            parent: Some(parent),
            name: name.to_owned(),
            kind,
            mode,
            size: 0,
            children: Vec::new(),
            heat: HeatCell::new(),
        }));
        self.node_mut(parent).children.push(id);
        let bucket = self.table.hash_component(parent, name);
        self.table.insert(bucket, id);
        self.live += 1;
        Ok(id)
    }

    pub fn set_size(&mut self, id: NodeId, size: u64) {
        self.node_mut(id).size = size;
    }

    pub fn rename_node(&mut self, old: &VfsPath, new: &VfsPath) -> Result<(), VfsError> {
        self.rename_node_with(old, new, &mut |_, _| {})
    }

    /// Moves `old` to `new`. `hook` runs after validation and before the
    /// dentry is rehashed.
    pub fn rename_node_with(
        &mut self,
        old: &VfsPath,
        new: &VfsPath,
        hook: &mut Hook<'_>,
    ) -> Result<(), VfsError> {
        if old.is_root() || new.is_root() {
            return Err(VfsError::Unsupported("rename of the root"));
        }
        let node = self.resolve(old)?;
        let new_parent_path = new.parent().expect("non-root path has a parent");
        let new_parent = self.resolve(&new_parent_path)?;
        if !self.node(new_parent).is_dir() {
            return Err(VfsError::NotADirectory(new_parent_path.to_string()));
        }
        let new_name = new.file_name().expect("non-root path has a name");
        let mut sink = 0;
        if self.dcache_find(new_parent, new_name, &mut sink).is_some() {
            return Err(VfsError::AlreadyExists(new.to_string()));
        }
        if self.is_ancestor_or_self(node, new_parent) {
            return Err(VfsError::InvalidMove(old.to_string()));
        }

        hook(
            self,
            &MetadataChange::Rename {
                node,
                from: old,
                to: new,
            },
        );

        let (old_parent, old_name) = {
            let d = self.node(node);
            (d.parent.expect("non-root"), d.name.clone())
        };
        let old_bucket = self.table.hash_component(old_parent, &old_name);
        self.table.remove(old_bucket, node);
        self.node_mut(old_parent).children.retain(|c| *c != node);

        {
            let d = self.node_mut(node);
            d.parent = Some(new_parent);
            d.name = new_name.to_owned();
        }
        self.node_mut(new_parent).children.push(node);
        let new_bucket = self.table.hash_component(new_parent, new_name);
        self.table.insert(new_bucket, node);
        Ok(())
    }

    pub fn chmod_node(&mut self, path: &VfsPath, mode: Mode) -> Result<(), VfsError> {
        self.chmod_node_with(path, mode, &mut |_, _| {})
    }

    pub fn chmod_node_with(
        &mut self,
        path: &VfsPath,
        mode: Mode,
        hook: &mut Hook<'_>,
    ) -> Result<(), VfsError> {
        let node = self.resolve(path)?;
        hook(self, &MetadataChange::Chmod { node, path, mode });
        self.node_mut(node).mode = mode;
        Ok(())
    }

    pub fn remove_node(&mut self, path: &VfsPath) -> Result<(), VfsError> {
        self.remove_node_with(path, &mut |_, _| {})
    }

    /// Unlinks a file or an empty directory.
    pub fn remove_node_with(&mut self, path: &VfsPath, hook: &mut Hook<'_>) -> Result<(), VfsError> {
        if path.is_root() {
            return Err(VfsError::Unsupported("removal of the root"));
        }
        let node = self.resolve(path)?;
        if !self.node(node).children.is_empty() {
            return Err(VfsError::NotEmpty(path.to_string()));
        }
        hook(self, &MetadataChange::Remove { node, path });
        let d = self.nodes[node.index()].take().expect("resolved node is live");
        let parent = d.parent.expect("non-root");
        let bucket = self.table.hash_component(parent, &d.name);
        self.table.remove(bucket, node);
        self.node_mut(parent).children.retain(|c| *c != node);
        self.live -= 1;
        Ok(())
    }

    fn is_ancestor_or_self(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.get(node).and_then(|d| d.parent) {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// Dentries from the root's child down to `id`, in depth order.
    pub fn ancestry(&self, id: NodeId) -> Option<Vec<NodeId>> {
        let mut chain = Vec::new();
        let mut cur = id;
        loop {
            let d = self.get(cur)?;
            match d.parent {
                Some(p) => {
                    chain.push(cur);
                    cur = p;
                }
                None => break,
            }
        }
        chain.reverse();
        Some(chain)
    }

    pub fn path_of(&self, id: NodeId) -> Option<VfsPath> {
        let chain = self.ancestry(id)?;
        let names = chain.iter().map(|c| self.node(*c).name.as_str());
        Some(VfsPath::from_components(names).expect("stored names are valid"))
    }

    /// `id` and all its descendants, preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if let Some(d) = self.get(cur) {
                out.push(cur);
                stack.extend(d.children.iter().rev().copied());
            }
        }
        out
    }

    /// Canonical text form: one `<kind> <mode> <size> <path>` line per
    /// non-root dentry, sorted by path.
    pub fn dump(&self) -> String {
        let mut lines: Vec<(String, String)> = self
            .iter()
            .filter(|d| d.parent.is_some())
            .map(|d| {
                let path = self.path_of(d.id).expect("live").to_string();
                let kind = if d.is_dir() { 'd' } else { 'f' };
                let line = format!("{kind} {} {} {path}", d.mode, d.size);
                (path, line)
            })
            .collect();
        lines.sort();
        let mut out = String::new();
        for (_, line) in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

impl Default for Tree {
    fn default() -> Self {
        Self::new()
    }
}

impl HeatStore for Tree {
    fn heat_cell(&self, id: NodeId) -> Option<&HeatCell> {
        self.get(id).map(|d| &d.heat)
    }
}

/// Returns whether the names are equal and how many bytes were compared.
fn compare_names(a: &str, b: &str) -> (bool, u64) {
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    if common == a.len() && common == b.len() {
        (true, common as u64)
    } else {
        let compared = if common < a.len().min(b.len()) {
            common + 1
        } else {
            common
        };
        (false, compared.max(1) as u64)
    }
}

fn prefix_str(path: &VfsPath, comps: usize) -> String {
    if comps == 0 {
        "/".to_owned()
    } else {
        path.as_str()[..path.component_end(comps - 1)].to_owned()
    }
}
