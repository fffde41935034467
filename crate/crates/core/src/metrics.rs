//! Operation counters. These stand in for latency: every lookup strategy
//! reports how many dentries it searched and how many path characters it
//! compared, and metadata changes report how many cache entries they touched.

use std::collections::HashSet;
use std::time::Duration;

use crate::vfs::NodeId;

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub lookups: u64,
    pub lookup_errors: u64,
    /// Dentry hash-table searches, one per component resolved.
    pub dentries_visited: u64,
    /// Path characters compared, across hashing, name checks and pivot scans.
    pub char_comparisons: u64,
    /// The Stage One share of `char_comparisons`.
    pub probe_comparisons: u64,
    pub pivots_visited: u64,
    pub pivot_hits: u64,
    pub fallbacks: u64,
    /// Whole-path scans done by the full-path cache.
    pub full_path_scans: u64,
    pub fullpath_hits: u64,
    /// Entries touched while invalidating on rename/chmod.
    pub entries_touched: u64,
    pub entries_removed: u64,
    pub mutations: u64,
    pub mutation_errors: u64,
    pub ticks: u64,
    /// Index k counts lookups whose Stage One skipped k components.
    pub skipped_prefix_histogram: Vec<u64>,
    pub wall: PhaseTimes,
    distinct: HashSet<NodeId>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub lookup: Duration,
    pub mutation: Duration,
    pub manager: Duration,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn visit(&mut self, node: NodeId) {
        self.dentries_visited += 1;
        self.distinct.insert(node);
    }

    pub(crate) fn record_skip(&mut self, skipped: usize) {
        if self.skipped_prefix_histogram.len() <= skipped {
            self.skipped_prefix_histogram.resize(skipped + 1, 0);
        }
        self.skipped_prefix_histogram[skipped] += 1;
    }

    pub fn distinct_dentries(&self) -> u64 {
        self.distinct.len() as u64
    }

    /// Distinct dentries resolved divided by total dentry searches.
    pub fn effective_search_ratio(&self) -> f64 {
        if self.dentries_visited == 0 {
            0.0
        } else {
            self.distinct.len() as f64 / self.dentries_visited as f64
        }
    }

    pub fn pivot_hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.pivot_hits as f64 / self.lookups as f64
        }
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.lookups += other.lookups;
        self.lookup_errors += other.lookup_errors;
        self.dentries_visited += other.dentries_visited;
        self.char_comparisons += other.char_comparisons;
        self.probe_comparisons += other.probe_comparisons;
        self.pivots_visited += other.pivots_visited;
        self.pivot_hits += other.pivot_hits;
        self.fallbacks += other.fallbacks;
        self.full_path_scans += other.full_path_scans;
        self.fullpath_hits += other.fullpath_hits;
        self.entries_touched += other.entries_touched;
        self.entries_removed += other.entries_removed;
        self.mutations += other.mutations;
        self.mutation_errors += other.mutation_errors;
        self.ticks += other.ticks;
        if self.skipped_prefix_histogram.len() < other.skipped_prefix_histogram.len() {
            self.skipped_prefix_histogram
                .resize(other.skipped_prefix_histogram.len(), 0);
        }
        for (dst, src) in self
            .skipped_prefix_histogram
            .iter_mut()
            .zip(&other.skipped_prefix_histogram)
        {
            *dst += src;
        }
        self.wall.lookup += other.wall.lookup;
        self.wall.mutation += other.wall.mutation;
        self.wall.manager += other.wall.manager;
        self.distinct.extend(other.distinct.iter().copied());
    }

    /// The deterministic part of the metrics: counters only, no wall time.
    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            lookups: self.lookups,
            lookup_errors: self.lookup_errors,
            dentries_visited: self.dentries_visited,
            distinct_dentries: self.distinct_dentries(),
            char_comparisons: self.char_comparisons,
            probe_comparisons: self.probe_comparisons,
            pivots_visited: self.pivots_visited,
            pivot_hits: self.pivot_hits,
            fallbacks: self.fallbacks,
            full_path_scans: self.full_path_scans,
            fullpath_hits: self.fullpath_hits,
            entries_touched: self.entries_touched,
            entries_removed: self.entries_removed,
            mutations: self.mutations,
            mutation_errors: self.mutation_errors,
            ticks: self.ticks,
            skipped_prefix_histogram: self.skipped_prefix_histogram.clone(),
        }
    }
}

/// Counter values of a [`Metrics`], comparable and serializable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsSnapshot {
    pub lookups: u64,
    pub lookup_errors: u64,
    pub dentries_visited: u64,
    pub distinct_dentries: u64,
    pub char_comparisons: u64,
    pub probe_comparisons: u64,
    pub pivots_visited: u64,
    pub pivot_hits: u64,
    pub fallbacks: u64,
    pub full_path_scans: u64,
    pub fullpath_hits: u64,
    pub entries_touched: u64,
    pub entries_removed: u64,
    pub mutations: u64,
    pub mutation_errors: u64,
    pub ticks: u64,
    pub skipped_prefix_histogram: Vec<u64>,
}

impl MetricsSnapshot {
    pub fn effective_search_ratio(&self) -> f64 {
        if self.dentries_visited == 0 {
            0.0
        } else {
            self.distinct_dentries as f64 / self.dentries_visited as f64
        }
    }

    /// Scalar counters in a fixed order, used by the report writers.
    pub fn scalar_fields(&self) -> [(&'static str, u64); 16] {
        [
            ("lookups", self.lookups),
            ("lookup_errors", self.lookup_errors),
            ("dentries_visited", self.dentries_visited),
            ("distinct_dentries", self.distinct_dentries),
            ("char_comparisons", self.char_comparisons),
            ("probe_comparisons", self.probe_comparisons),
            ("pivots_visited", self.pivots_visited),
            ("pivot_hits", self.pivot_hits),
            ("fallbacks", self.fallbacks),
            ("full_path_scans", self.full_path_scans),
            ("fullpath_hits", self.fullpath_hits),
            ("entries_touched", self.entries_touched),
            ("entries_removed", self.entries_removed),
            ("mutations", self.mutations),
            ("mutation_errors", self.mutation_errors),
            ("ticks", self.ticks),
        ]
    }

    pub(crate) fn set_scalar(&mut self, name: &str, value: u64) -> bool {
        let slot = match name {
            "lookups" => &mut self.lookups,
            "lookup_errors" => &mut self.lookup_errors,
            "dentries_visited" => &mut self.dentries_visited,
            "distinct_dentries" => &mut self.distinct_dentries,
            "char_comparisons" => &mut self.char_comparisons,
            "probe_comparisons" => &mut self.probe_comparisons,
            "pivots_visited" => &mut self.pivots_visited,
            "pivot_hits" => &mut self.pivot_hits,
            "fallbacks" => &mut self.fallbacks,
            "full_path_scans" => &mut self.full_path_scans,
            "fullpath_hits" => &mut self.fullpath_hits,
            "entries_touched" => &mut self.entries_touched,
            "entries_removed" => &mut self.entries_removed,
            "mutations" => &mut self.mutations,
            "mutation_errors" => &mut self.mutation_errors,
            "ticks" => &mut self.ticks,
            _ => return false,
        };
        *slot = value;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_counts_distinct_over_searches() {
        let mut m = Metrics::new();
        for id in [1, 2, 1, 1] {
            m.visit(NodeId(id));
        }
        assert_eq!(m.dentries_visited, 4);
        assert_eq!(m.distinct_dentries(), 2);
        assert!((m.effective_search_ratio() - 0.5).abs() < 1e-12);
        assert_eq!(Metrics::new().effective_search_ratio(), 0.0);
    }

    #[test]
    fn merge_adds_counters_and_unions_distinct() {
        let mut a = Metrics::new();
        a.visit(NodeId(1));
        a.record_skip(2);
        let mut b = Metrics::new();
        b.visit(NodeId(1));
        b.visit(NodeId(3));
        b.record_skip(4);
        a.merge(&b);
        assert_eq!(a.dentries_visited, 3);
        assert_eq!(a.distinct_dentries(), 2);
        assert_eq!(a.skipped_prefix_histogram, vec![0, 0, 1, 0, 1]);
    }
}
