//! Multi-reader soak: lookup workers, a periodic pool manager and a renaming
//! mutator share one engine, and every pivot selection is checked both on
//! the spot and afterwards against the mutation log.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{audit_selections, Engine, EngineConfig, Selection, Strategy};
use crate::epoch::UpdateOutcome;
use crate::epoch::ReclaimMode;
use crate::metrics::Metrics;
use crate::path::VfsPath;
use crate::vfs::{Credential, Tree};

#[derive(Debug, Clone)]
pub struct StressConfig {
    pub readers: usize,
    pub ticks: usize,
    /// Pool update cadence.
    pub tick_interval: Duration,
    pub mutate: bool,
    /// Pause between the two halves of a rename round trip.
    pub mutation_interval: Duration,
    /// Every this many lookups a reader re-verifies the whole working pool.
    pub verify_every: u64,
    pub seed: u64,
    pub engine: EngineConfig,
}

impl Default for StressConfig {
    fn default() -> Self {
        let mut engine = EngineConfig::new(Strategy::Stage);
        engine.reclaim = ReclaimMode::Quarantine;
        engine.audit = true;
        Self {
            readers: 8,
            ticks: 1000,
            tick_interval: Duration::from_millis(1),
            mutate: true,
            mutation_interval: Duration::from_micros(200),
            verify_every: 256,
            seed: 0,
            engine,
        }
    }
}

#[derive(Debug, Default)]
pub struct StressReport {
    pub ticks: u64,
    pub published: u64,
    pub suppressed: u64,
    pub lookups: u64,
    pub pivot_hits: u64,
    pub selections_audited: usize,
    pub pool_verifications: u64,
    pub mutations: u64,
    pub reclaimed: u64,
    pub violations: Vec<String>,
    pub elapsed: Duration,
}

impl StressReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct ReaderLog {
    metrics: Metrics,
    selections: Vec<Selection>,
    verifications: u64,
    violations: Vec<String>,
}

const MAX_REPORTED: usize = 50;

/// Runs the soak. `targets` are the paths readers resolve; `rename_dirs`
/// are the directories the mutator renames away and back.
pub fn run_stress(
    tree: Tree,
    targets: &[VfsPath],
    rename_dirs: &[VfsPath],
    config: &StressConfig,
) -> StressReport {
    let mut engine_config = config.engine.clone();
    engine_config.audit = true;
    engine_config.maintain_stage = true;
    let engine = Engine::new(tree, engine_config);
    let stop = AtomicBool::new(false);
    let started = Instant::now();
    let mut report = StressReport::default();

    let (logs, mutations) = thread::scope(|s| {
        let readers: Vec<_> = (0..config.readers)
            .map(|i| {
                let engine = &engine;
                let stop = &stop;
                s.spawn(move || reader(engine, targets, config, i as u64, stop))
            })
            .collect();
        let mutator = config.mutate.then(|| {
            let engine = &engine;
            let stop = &stop;
            s.spawn(move || mutator(engine, rename_dirs, config, stop))
        });

        let mut manager_metrics = Metrics::new();
        let schedule = Instant::now();
        for i in 0..config.ticks {
            if let Some(t) = engine.tick(&mut manager_metrics) {
                match t.outcome {
                    UpdateOutcome::Published { .. } => report.published += 1,
                    UpdateOutcome::Suppressed => report.suppressed += 1,
                }
            }
            report.ticks += 1;
            // Fixed cadence: sleep to the next slot, not a fixed pause.
            let due = schedule + config.tick_interval * (i as u32 + 1);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        stop.store(true, Ordering::SeqCst);
        let logs: Vec<ReaderLog> = readers
            .into_iter()
            .map(|h| h.join().expect("reader panicked"))
            .collect();
        let mutations = mutator.map_or(0, |h| h.join().expect("mutator panicked"));
        (logs, mutations)
    });

    report.mutations = mutations;
    let log = engine.mutation_log();
    for r in &logs {
        report.lookups += r.metrics.lookups;
        report.pivot_hits += r.metrics.pivot_hits;
        report.pool_verifications += r.verifications;
        report.selections_audited += r.selections.len();
        report.violations.extend(r.violations.iter().cloned());
        for (sel, m) in audit_selections(&r.selections, &log).into_iter().take(MAX_REPORTED) {
            report.violations.push(format!(
                "pivot {} (built at seq {}) used at seq {} after mutation {} of {}",
                sel.pivot, sel.built_seq, sel.observed_seq, m.seq, m.path
            ));
        }
    }
    engine.pivots().reclaim();
    if engine.pivots().registry().active_readers() != 0 {
        report.violations.push("read-side sections left open".into());
    }
    report.reclaimed = engine.pivots().reclaimed();
    report.elapsed = started.elapsed();
    report
}

fn reader(
    engine: &Engine,
    targets: &[VfsPath],
    config: &StressConfig,
    index: u64,
    stop: &AtomicBool,
) -> ReaderLog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (index + 1).wrapping_mul(0x9e37_79b9));
    let mut log = ReaderLog {
        metrics: Metrics::new(),
        selections: Vec::new(),
        verifications: 0,
        violations: Vec::new(),
    };
    let mut seen: HashSet<(usize, u64, u64)> = HashSet::new();
    let mut scratch = Metrics::new();
    let mut n = 0u64;
    let fail = |log: &mut ReaderLog, msg: String| {
        if log.violations.len() < MAX_REPORTED {
            log.violations.push(msg);
        }
    };
    while !stop.load(Ordering::Relaxed) && !targets.is_empty() {
        let path = &targets[rng.random_range(0..targets.len())];
        let cred = Credential::ALL[rng.random_range(0..3)];
        let view = engine.read();
        let mut sel = None;
        let staged = view
            .stage_lookup_audited(path, cred, &mut log.metrics, &mut sel)
            .map(|r| r.target);
        let original = view.tree().lookup_original(path, cred, &mut scratch);
        if staged != original {
            fail(&mut log, format!("{path}: stage {staged:?} vs original {original:?}"));
        }
        if let Some(sel) = sel {
            if !sel.consistent {
                fail(&mut log, format!("pivot {} no longer matches the tree", sel.pivot));
            }
            if sel.pool_poisoned {
                fail(&mut log, format!("read from reclaimed pool {}", sel.generation));
            }
            let key = (std::sync::Arc::as_ptr(&sel.pivot) as usize, sel.built_seq, sel.observed_seq);
            if seen.insert(key) {
                log.selections.push(sel);
            }
        }
        n += 1;
        if config.verify_every > 0 && n.is_multiple_of(config.verify_every) {
            let pool = engine.pivots().read();
            if pool.is_poisoned() {
                fail(&mut log, format!("working pool {} is poisoned", pool.generation()));
            }
            let check = pool.verify_against_tree(view.tree());
            if !check.is_clean() {
                fail(&mut log, format!("pool {}: {:?}", pool.generation(), check.violations));
            }
            log.verifications += 1;
        }
    }
    log
}

fn mutator(engine: &Engine, dirs: &[VfsPath], config: &StressConfig, stop: &AtomicBool) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut metrics = Metrics::new();
    let mut done = 0;
    while !stop.load(Ordering::Relaxed) && !dirs.is_empty() {
        let from = &dirs[rng.random_range(0..dirs.len())];
        let Some(name) = from.file_name() else { continue };
        let to = from
            .parent()
            .expect("non-root")
            .join(&format!("{name}_moved"))
            .expect("valid name");
        if engine.rename(from, &to, &mut metrics).is_ok() {
            done += 1;
            thread::sleep(config.mutation_interval);
            engine
                .rename(&to, from, &mut metrics)
                .expect("moving back to a just-vacated name");
            done += 1;
        }
        thread::sleep(config.mutation_interval);
    }
    done
}
