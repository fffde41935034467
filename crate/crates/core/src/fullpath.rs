//! Full-path-indexed directory cache, kept as a comparison baseline.
//!
//! Entries map a canonical path (per credential class) straight to a dentry
//! and are served only while the dentry's version is unchanged. Any rename
//! or chmod bumps the version of every dentry in the affected subtree and
//! drops the cached paths below it.

use std::collections::HashMap;

use crate::metrics::Metrics;
use crate::path::VfsPath;
use crate::vfs::{Credential, LookupError, NodeId, Tree};

#[derive(Debug, Clone, Copy)]
struct Entry {
    node: NodeId,
    version: u64,
}

#[derive(Debug, Default)]
pub struct FullPathCache {
    entries: HashMap<(Credential, String), Entry>,
    versions: HashMap<NodeId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubtreeInvalidation {
    /// Dentries whose version was bumped.
    pub touched: u64,
    pub removed: u64,
}

impl FullPathCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn version(&self, node: NodeId) -> u64 {
        self.versions.get(&node).copied().unwrap_or(0)
    }

    /// Hash-then-compare on the whole path; on a miss or stale entry, walks
    /// component by component and caches the result.
    pub fn lookup(
        &mut self,
        tree: &Tree,
        path: &VfsPath,
        cred: Credential,
        metrics: &mut Metrics,
    ) -> Result<NodeId, LookupError> {
        let len = path.as_str().len() as u64;
        // One scan to hash the path, one to verify the stored key.
        metrics.full_path_scans += 2;
        metrics.char_comparisons += 2 * len;
        let key = (cred, path.as_str().to_owned());
        if let Some(e) = self.entries.get(&key) {
            if tree.contains(e.node) && e.version == self.version(e.node) {
                metrics.fullpath_hits += 1;
                return Ok(e.node);
            }
        }
        let node = tree.lookup_original(path, cred, metrics)?;
        let version = self.version(node);
        self.entries.insert(key, Entry { node, version });
        Ok(node)
    }

    /// Bumps the version of every dentry under `node` and drops cached paths
    /// at or below `path`.
    pub fn invalidate_subtree(
        &mut self,
        tree: &Tree,
        node: NodeId,
        path: &VfsPath,
        metrics: &mut Metrics,
    ) -> SubtreeInvalidation {
        let mut touched = 0;
        for id in tree.subtree(node) {
            *self.versions.entry(id).or_insert(0) += 1;
            touched += 1;
        }
        let before = self.entries.len();
        self.entries.retain(|(_, key), _| {
            let under = key.len() >= path.as_str().len()
                && key.starts_with(path.as_str())
                && (path.is_root()
                    || key.len() == path.as_str().len()
                    || key.as_bytes()[path.as_str().len()] == b'/');
            !under
        });
        let removed = (before - self.entries.len()) as u64;
        metrics.entries_touched += touched;
        metrics.entries_removed += removed;
        SubtreeInvalidation { touched, removed }
    }
}
