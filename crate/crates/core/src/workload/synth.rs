use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::trace::{Event, Op};
use crate::path::VfsPath;
use crate::vfs::{Kind, Mode, NodeId, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// Lookup targets drawn uniformly from all files.
    Uniform,
    /// Targets concentrated under a few hot directories, ranked by Zipf.
    HotdirZipf,
    /// Hot-directory opens in bursts separated by fixed idle gaps.
    ReplayLike,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Uniform => "uniform",
            Model::HotdirZipf => "hotdir-zipf",
            Model::ReplayLike => "replay-like",
        })
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Model::Uniform),
            "hotdir-zipf" => Ok(Model::HotdirZipf),
            "replay-like" => Ok(Model::ReplayLike),
            other => Err(format!(
                "unknown model `{other}` (expected uniform, hotdir-zipf or replay-like)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub model: Model,
    pub events: usize,
    pub rename_fraction: f64,
    pub chmod_fraction: f64,
    pub hot_dirs: usize,
    pub zipf_exponent: f64,
    /// Share of lookups issued as `open` rather than `stat`.
    pub open_fraction: f64,
    pub step_ms: u64,
    pub burst_len: usize,
    pub gap_ms: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            model: Model::HotdirZipf,
            events: 10_000,
            rename_fraction: 0.0,
            chmod_fraction: 0.0,
            hot_dirs: 8,
            zipf_exponent: 1.0,
            open_fraction: 0.5,
            step_ms: 1,
            burst_len: 256,
            gap_ms: 4000,
        }
    }
}

const CHMOD_MODES: [u16; 5] = [0o755, 0o711, 0o700, 0o750, 0o755];

/// Generates a trace against a private copy of `tree`, so every path is
/// valid at the moment its event runs (permissions aside).
pub fn synth_trace(tree: &Tree, params: &SynthParams, seed: u64) -> Vec<Event> {
    let mut shadow = tree.duplicate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let files: Vec<NodeId> = shadow
        .iter()
        .filter(|d| d.kind == Kind::File)
        .map(|d| d.id)
        .collect();
    let dirs: Vec<NodeId> = shadow
        .iter()
        .filter(|d| d.is_dir() && d.id != shadow.root())
        .map(|d| d.id)
        .collect();
    let targets: Vec<NodeId> = if files.is_empty() {
        dirs.clone()
    } else {
        files.clone()
    };

    let mut parents: Vec<NodeId> = targets
        .iter()
        .filter_map(|id| shadow.get(*id).and_then(|d| d.parent))
        .collect();
    parents.sort();
    parents.dedup();
    let k = params.hot_dirs.clamp(1, parents.len().max(1));
    let (hot, _) = parents.partial_shuffle(&mut rng, k);
    let hot: Vec<(NodeId, Vec<NodeId>)> = hot
        .iter()
        .map(|&dir| {
            let kids = shadow.get(dir).map(|d| d.children().to_vec()).unwrap_or_default();
            (dir, kids)
        })
        .collect();
    let zipf = Zipf::new(hot.len().max(1) as f64, params.zipf_exponent).ok();

    let mut events = Vec::with_capacity(params.events);
    let mut at = 0u64;
    let mut renamed = 0u64;
    for i in 0..params.events {
        if i > 0 {
            let gap = params.model == Model::ReplayLike && i % params.burst_len.max(1) == 0;
            at += if gap { params.gap_ms } else { params.step_ms };
        }
        let r: f64 = rng.random();
        if r < params.rename_fraction && !dirs.is_empty() {
            let d = dirs[rng.random_range(0..dirs.len())];
            let from = shadow.path_of(d).expect("shadow dirs stay live");
            let base = from.file_name().unwrap_or("d").split('_').next().unwrap_or("d");
            renamed += 1;
            let to = from
                .parent()
                .expect("non-root")
                .join(&format!("{base}_{renamed}"))
                .expect("generated name is valid");
            shadow.rename_node(&from, &to).expect("fresh name");
            events.push(Event {
                op: Op::Rename,
                path: from,
                new_path: Some(to),
                mode: None,
                at_ms: at,
            });
            continue;
        }
        if r < params.rename_fraction + params.chmod_fraction && !dirs.is_empty() {
            let d = dirs[rng.random_range(0..dirs.len())];
            let path = shadow.path_of(d).expect("shadow dirs stay live");
            let mode = Mode::new(CHMOD_MODES[rng.random_range(0..CHMOD_MODES.len())]);
            shadow.chmod_node(&path, mode).expect("live path");
            events.push(Event {
                op: Op::Chmod,
                path,
                new_path: None,
                mode: Some(mode),
                at_ms: at,
            });
            continue;
        }

        let target = match (params.model, &zipf) {
            (Model::HotdirZipf | Model::ReplayLike, Some(z)) if !hot.is_empty() => {
                let rank = (z.sample(&mut rng) as usize).clamp(1, hot.len()) - 1;
                let (dir, kids) = &hot[rank];
                if kids.is_empty() {
                    *dir
                } else {
                    kids[rng.random_range(0..kids.len())]
                }
            }
            _ if targets.is_empty() => shadow.root(),
            _ => targets[rng.random_range(0..targets.len())],
        };
        let op = if params.model == Model::ReplayLike || rng.random_bool(params.open_fraction.clamp(0.0, 1.0)) {
            Op::Open
        } else {
            Op::Stat
        };
        events.push(Event {
            op,
            path: shadow.path_of(target).unwrap_or_else(VfsPath::root),
            new_path: None,
            mode: None,
            at_ms: at,
        });
    }
    events
}
