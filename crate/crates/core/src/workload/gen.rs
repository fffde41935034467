use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::vfs::{Kind, Mode, NodeId, Tree};

const MAX_NODES: u64 = 20_000_000;

/// Shape of a generated tree. `levels[i]` is the number of subdirectories
/// each directory at depth `i` gets; the deepest directories hold
/// `files_per_dir` files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub levels: Vec<usize>,
    #[serde(default = "one")]
    pub files_per_dir: usize,
    /// Inclusive byte range for file sizes.
    #[serde(default = "page")]
    pub file_size_range: (u64, u64),
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn page() -> (u64, u64) {
    (4096, 4096)
}

impl TreeSpec {
    /// One top-level directory, four levels of ten subdirectories below it,
    /// and a single 4 KiB file in each deepest directory: six levels and
    /// 21,111 dentries besides the root.
    pub fn preset() -> Self {
        Self {
            levels: vec![1, 10, 10, 10, 10],
            files_per_dir: 1,
            file_size_range: (4096, 4096),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::SpecInvalid(m.to_owned()));
        if self.levels.is_empty() {
            return bad("levels must not be empty");
        }
        if self.levels.len() > 25 {
            return bad("at most 25 directory levels are supported");
        }
        if self.levels.contains(&0) {
            return bad("every level needs a fanout of at least 1");
        }
        if self.file_size_range.0 > self.file_size_range.1 {
            return bad("file_size_range is reversed");
        }
        if self.node_count() > MAX_NODES {
            return bad("tree too large");
        }
        Ok(())
    }

    /// Dentries the spec produces, not counting the root.
    pub fn node_count(&self) -> u64 {
        let mut total = 0u64;
        let mut width = 1u64;
        for &f in &self.levels {
            width = width.saturating_mul(f as u64);
            total = total.saturating_add(width);
        }
        total.saturating_add(width.saturating_mul(self.files_per_dir as u64))
    }
}

/// Name of the `index`th entry at 1-based `depth`: a level letter and a
/// number, e.g. `c4`. Files get a `.dat` suffix.
pub(crate) fn entry_name(depth: usize, index: usize, file: bool) -> String {
    let letter = (b'a' + (depth - 1) as u8) as char;
    if file {
        format!("{letter}{index}.dat")
    } else {
        format!("{letter}{index}")
    }
}

pub fn gen_tree(spec: &TreeSpec) -> Result<Tree, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tree = Tree::new();
    let mut frontier = vec![tree.root()];
    for (level, &fanout) in spec.levels.iter().enumerate() {
        let mut next = Vec::with_capacity(frontier.len() * fanout);
        for &parent in &frontier {
            for i in 0..fanout {
                let id = tree
                    .create_child(parent, &entry_name(level + 1, i, false), Kind::Directory, Mode::DIR_DEFAULT)
                    .expect("generated names are unique");
                next.push(id);
            }
        }
        frontier = next;
    }
    let depth = spec.levels.len() + 1;
    let (lo, hi) = spec.file_size_range;
    for &parent in &frontier {
        for i in 0..spec.files_per_dir {
            let id: NodeId = tree
                .create_child(parent, &entry_name(depth, i, true), Kind::File, Mode::FILE_DEFAULT)
                .expect("generated names are unique");
            tree.set_size(id, rng.random_range(lo..=hi));
        }
    }
    Ok(tree)
}
