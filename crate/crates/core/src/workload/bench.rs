//! Stage Two length sweep: depth-`d` lookups where the best pivot leaves
//! exactly `k` components to walk, for several pool sizes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::engine::{Engine, EngineConfig, Strategy};
use crate::metrics::Metrics;
use crate::path::VfsPath;
use crate::pivot::PivotPool;
use crate::vfs::{Credential, Kind, Mode, NodeId, Tree};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub depth: usize,
    pub pool_sizes: Vec<usize>,
    pub components: usize,
    /// Timed repetitions per cell; counters come from a single lookup.
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            pool_sizes: vec![1, 2, 4, 8, 16],
            components: crate::pivot::DEFAULT_COMPONENTS,
            reps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub pool_size: usize,
    pub target: NodeId,
    /// Components left for Stage Two by the covering pivot.
    pub stage_two: usize,
    pub skipped: usize,
    pub walked: usize,
    pub dentries_visited: u64,
    pub char_comparisons: u64,
    pub probe_comparisons: u64,
    pub pivots_visited: u64,
    pub wall_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub depth: usize,
    pub cells: Vec<BenchCell>,
    /// The component-wise walk of the same path.
    pub original: BenchCell,
}

const CSV_HEADER: &str = "strategy,pool_size,stage_two,skipped,walked,dentries_visited,char_comparisons,probe_comparisons,pivots_visited";

impl BenchGrid {
    pub fn cell(&self, pool_size: usize, stage_two: usize) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.pool_size == pool_size && c.stage_two == stage_two)
    }

    /// Counters only, so identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        let row = |out: &mut String, name: &str, c: &BenchCell| {
            writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{}",
                c.pool_size,
                c.stage_two,
                c.skipped,
                c.walked,
                c.dentries_visited,
                c.char_comparisons,
                c.probe_comparisons,
                c.pivots_visited
            )
            .expect("write to String");
        };
        for c in &self.cells {
            row(&mut out, "stage", c);
        }
        row(&mut out, "original", &self.original);
        out
    }

    /// Walked components per (Stage Two length, pool size), with the
    /// original walk and mean wall time per lookup.
    pub fn render_table(&self) -> String {
        let mut sizes: Vec<usize> = self.cells.iter().map(|c| c.pool_size).collect();
        sizes.dedup();
        let mut out = String::from("stage_two");
        for s in &sizes {
            write!(out, "  {:>14}", format!("pool={s}")).expect("write to String");
        }
        writeln!(out, "  {:>14}", "original").expect("write to String");
        for k in 0..=self.depth {
            write!(out, "{k:>9}").expect("write to String");
            for s in &sizes {
                let c = self.cell(*s, k).expect("full grid");
                write!(out, "  {:>14}", format!("{}w {:.0}ns", c.walked, c.wall_ns))
                    .expect("write to String");
            }
            writeln!(
                out,
                "  {:>14}",
                format!("{}w {:.0}ns", self.original.walked, self.original.wall_ns)
            )
            .expect("write to String");
        }
        out
    }
}

/// The sweep tree: the target chain `/p1/.../pD` (the last entry a file)
/// plus sixteen decoy directories `/a0/bI` that sort ahead of it.
fn bench_tree(depth: usize) -> (Tree, VfsPath, Vec<NodeId>, Vec<NodeId>) {
    let mut tree = Tree::new();
    let mut chain = Vec::new();
    let mut cur = tree.root();
    for i in 1..=depth {
        let kind = if i == depth { Kind::File } else { Kind::Directory };
        let mode = if i == depth { Mode::FILE_DEFAULT } else { Mode::DIR_DEFAULT };
        cur = tree
            .create_child(cur, &format!("p{i}"), kind, mode)
            .expect("fresh tree");
        chain.push(cur);
    }
    let a0 = tree
        .create_child(tree.root(), "a0", Kind::Directory, Mode::DIR_DEFAULT)
        .expect("fresh tree");
    let decoys = (0..16)
        .map(|i| {
            tree.create_child(a0, &format!("b{i}"), Kind::Directory, Mode::DIR_DEFAULT)
                .expect("fresh tree")
        })
        .collect();
    let target = tree.path_of(cur).expect("live");
    (tree, target, chain, decoys)
}

fn time_lookups<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    if reps == 0 {
        return 0.0;
    }
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_nanos() as f64 / reps as f64
}

pub fn bench_depth(config: &BenchConfig) -> BenchGrid {
    let depth = config.depth.max(1);
    let (tree, target, chain, decoys) = bench_tree(depth);
    let mut engine_config = EngineConfig::new(Strategy::Stage);
    engine_config.components = config.components;
    let engine = Engine::new(tree, engine_config);
    let cred = Credential::Other;

    let mut cells = Vec::new();
    for &size in &config.pool_sizes {
        for k in 0..=depth {
            let covering = (k < depth && size > 0).then(|| chain[depth - k - 1]);
            let decoy_count = size.saturating_sub(usize::from(covering.is_some())).min(decoys.len());
            let mut candidates: Vec<(NodeId, u64)> =
                decoys[..decoy_count].iter().map(|id| (*id, 1)).collect();
            candidates.extend(covering.map(|id| (id, 1)));
            let pool = {
                let view = engine.read();
                let generation = engine.pivots().next_generation();
                PivotPool::build(view.tree(), &candidates, size, config.components, generation, 0).0
            };
            engine.pivots().install(pool);

            let mut m = Metrics::new();
            let r = engine
                .stage_lookup(&target, cred, &mut m)
                .expect("bench target resolves");
            let mut sink = Metrics::new();
            let wall_ns = time_lookups(config.reps, || {
                let _ = engine.stage_lookup(&target, cred, &mut sink);
            });
            cells.push(BenchCell {
                pool_size: size,
                target: r.target,
                stage_two: k,
                skipped: r.skipped_components,
                walked: r.walked_components,
                dentries_visited: m.dentries_visited,
                char_comparisons: m.char_comparisons,
                probe_comparisons: m.probe_comparisons,
                pivots_visited: m.pivots_visited,
                wall_ns,
            });
        }
    }

    let mut m = Metrics::new();
    let target_id = engine
        .lookup_with(Strategy::Original, &target, cred, &mut m)
        .expect("bench target resolves");
    let mut sink = Metrics::new();
    let wall_ns = time_lookups(config.reps, || {
        let _ = engine.lookup_with(Strategy::Original, &target, cred, &mut sink);
    });
    let original = BenchCell {
        pool_size: 0,
        target: target_id,
        stage_two: depth,
        skipped: 0,
        walked: depth,
        dentries_visited: m.dentries_visited,
        char_comparisons: m.char_comparisons,
        probe_comparisons: 0,
        pivots_visited: 0,
        wall_ns,
    };
    BenchGrid {
        depth,
        cells,
        original,
    }
}
