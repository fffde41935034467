use crate::engine::{Engine, EngineConfig};
use crate::metrics::Metrics;
use crate::vfs::{Credential, Kind, LookupError, Mode, NodeId, Tree};

use super::trace::{Event, Op};

/// When the pivot pools are rebuilt during a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickMode {
    /// At the first event on or after each period boundary of `at_ms`.
    Timestamps,
    /// After every `n` events; deterministic regardless of timestamps.
    Every(usize),
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub engine: EngineConfig,
    pub cred: Credential,
    pub ticks: TickMode,
}

impl ReplayConfig {
    pub fn new(engine: EngineConfig) -> Self {
        Self {
            engine,
            cred: Credential::Other,
            ticks: TickMode::Timestamps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventResult {
    Resolved(NodeId),
    LookupFailed(LookupError),
    Created(NodeId),
    Applied,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventOutcome {
    pub result: EventResult,
    pub dentries_visited: u64,
    pub pivot_hit: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub metrics: Metrics,
    pub events: Vec<EventOutcome>,
}

/// Drives one engine through a sequence of events.
pub struct Replayer {
    engine: Engine,
    cred: Credential,
    ticks: TickMode,
    period_ms: u64,
    next_tick_ms: u64,
    since_tick: usize,
    metrics: Metrics,
    events: Vec<EventOutcome>,
}

impl Replayer {
    pub fn new(tree: Tree, config: ReplayConfig) -> Self {
        let period_ms = config.engine.period.as_millis().max(1) as u64;
        Self {
            engine: Engine::new(tree, config.engine),
            cred: config.cred,
            ticks: config.ticks,
            period_ms,
            next_tick_ms: period_ms,
            since_tick: 0,
            metrics: Metrics::new(),
            events: Vec::new(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Resolves every live path once and runs a pool update, outside the
    /// recorded metrics.
    pub fn warm(&mut self) {
        let paths: Vec<_> = {
            let view = self.engine.read();
            let tree = view.tree();
            tree.iter().filter_map(|d| tree.path_of(d.id)).collect()
        };
        let mut scratch = Metrics::new();
        for p in &paths {
            let _ = self.engine.lookup(p, self.cred, &mut scratch);
        }
        self.engine.tick(&mut scratch);
    }

    pub fn tick(&mut self) {
        self.engine.tick(&mut self.metrics);
        self.since_tick = 0;
    }

    pub fn step(&mut self, event: &Event) -> &EventOutcome {
        if self.ticks == TickMode::Timestamps && event.at_ms >= self.next_tick_ms {
            self.tick();
            self.next_tick_ms = (event.at_ms / self.period_ms + 1) * self.period_ms;
        }
        let visited = self.metrics.dentries_visited;
        let hits = self.metrics.pivot_hits;
        let m = &mut self.metrics;
        let result = match event.op {
            Op::Stat => match self.engine.stat(&event.path, self.cred, m) {
                Ok(s) => EventResult::Resolved(s.node),
                Err(e) => EventResult::LookupFailed(e),
            },
            Op::Open => match self.engine.open(&event.path, self.cred, m) {
                Ok(h) => EventResult::Resolved(h.node),
                Err(e) => EventResult::LookupFailed(e),
            },
            Op::Mkdir | Op::Create => {
                let (kind, default) = if event.op == Op::Mkdir {
                    (Kind::Directory, Mode::DIR_DEFAULT)
                } else {
                    (Kind::File, Mode::FILE_DEFAULT)
                };
                match self
                    .engine
                    .create(&event.path, kind, event.mode.unwrap_or(default), m)
                {
                    Ok(id) => EventResult::Created(id),
                    Err(e) => EventResult::Rejected(e.to_string()),
                }
            }
            Op::Rename => {
                let to = event.new_path.as_ref().expect("checked events carry new_path");
                applied(self.engine.rename(&event.path, to, m))
            }
            Op::Chmod => {
                let mode = event.mode.expect("checked chmod events carry a mode");
                applied(self.engine.chmod(&event.path, mode, m))
            }
        };
        self.events.push(EventOutcome {
            result,
            dentries_visited: self.metrics.dentries_visited - visited,
            pivot_hit: self.metrics.pivot_hits > hits,
        });
        if let TickMode::Every(n) = self.ticks {
            self.since_tick += 1;
            if n > 0 && self.since_tick >= n {
                self.tick();
            }
        }
        self.events.last().expect("just pushed")
    }

    pub fn run(&mut self, events: &[Event]) {
        for e in events {
            self.step(e);
        }
    }

    pub fn finish(self) -> ReplayOutcome {
        ReplayOutcome {
            metrics: self.metrics,
            events: self.events,
        }
    }
}

fn applied(r: Result<(), crate::vfs::VfsError>) -> EventResult {
    match r {
        Ok(()) => EventResult::Applied,
        Err(e) => EventResult::Rejected(e.to_string()),
    }
}

/// Replays `events` on `tree` with the configured strategy.
pub fn replay(tree: Tree, events: &[Event], config: ReplayConfig) -> ReplayOutcome {
    let mut r = Replayer::new(tree, config);
    r.run(events);
    r.finish()
}
