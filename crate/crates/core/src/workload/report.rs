use crate::metrics::MetricsSnapshot;

use super::WorkloadError;

const HISTOGRAM: &str = "skipped_prefix_histogram";
const RATIO: &str = "ratio:";

/// A labelled set of counters, one column of a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub label: String,
    pub metrics: MetricsSnapshot,
}

impl Run {
    pub fn new(label: impl Into<String>, metrics: MetricsSnapshot) -> Self {
        Self {
            label: label.into(),
            metrics,
        }
    }
}

fn ratio(num: f64, den: f64) -> String {
    if den == 0.0 {
        String::new()
    } else {
        format!("{:.4}", num / den)
    }
}

/// Header plus one row per metric. Each later run gets a ratio column
/// against the first.
fn grid(runs: &[Run]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["metric".to_owned()];
    header.extend(runs.iter().map(|r| r.label.clone()));
    if let Some(first) = runs.first() {
        header.extend(
            runs[1..]
                .iter()
                .map(|r| format!("{RATIO}{}/{}", r.label, first.label)),
        );
    }

    let mut rows = Vec::new();
    let mut push = |name: String, values: Vec<Option<f64>>, text: Vec<String>| {
        let mut row = vec![name];
        row.extend(text);
        if let Some(Some(base)) = values.first() {
            row.extend(values[1..].iter().map(|v| v.map_or(String::new(), |v| ratio(v, *base))));
        } else {
            row.extend(values.iter().skip(1).map(|_| String::new()));
        }
        rows.push(row);
    };

    for i in 0..16 {
        let name = MetricsSnapshot::default().scalar_fields()[i].0;
        let values: Vec<u64> = runs.iter().map(|r| r.metrics.scalar_fields()[i].1).collect();
        push(
            name.to_owned(),
            values.iter().map(|v| Some(*v as f64)).collect(),
            values.iter().map(u64::to_string).collect(),
        );
    }
    let ratios: Vec<f64> = runs.iter().map(|r| r.metrics.effective_search_ratio()).collect();
    push(
        "effective_search_ratio".to_owned(),
        ratios.iter().map(|v| Some(*v)).collect(),
        ratios.iter().map(|v| format!("{v:.6}")).collect(),
    );
    let depth = runs
        .iter()
        .map(|r| r.metrics.skipped_prefix_histogram.len())
        .max()
        .unwrap_or(0);
    for k in 0..depth {
        let values: Vec<Option<u64>> = runs
            .iter()
            .map(|r| r.metrics.skipped_prefix_histogram.get(k).copied())
            .collect();
        push(
            format!("{HISTOGRAM}[{k}]"),
            values.iter().map(|v| v.map(|v| v as f64)).collect(),
            values.iter().map(|v| v.map_or(String::new(), |v| v.to_string())).collect(),
        );
    }
    (header, rows)
}

/// Aligned plain-text table. Missing values print as `-`.
pub fn render_table(runs: &[Run]) -> String {
    let (header, mut rows) = grid(runs);
    for cell in rows.iter_mut().flatten() {
        if cell.is_empty() {
            cell.push('-');
        }
    }
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header);
    for row in &rows {
        line(row);
    }
    out
}

pub fn to_csv(runs: &[Run]) -> String {
    let (header, rows) = grid(runs);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in &rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
}

/// Reads back the run columns of a CSV written by [`to_csv`]. Derived rows
/// and ratio columns are ignored.
pub fn parse_csv(text: &str) -> Result<Vec<Run>, WorkloadError> {
    let bad = |m: String| WorkloadError::CsvMalformed(m);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("metric") {
        return Err(bad("first column must be `metric`".into()));
    }
    let columns: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, h)| !h.starts_with(RATIO))
        .map(|(i, h)| (i, h.to_owned()))
        .collect();
    let mut runs: Vec<Run> = columns
        .iter()
        .map(|(_, l)| Run::new(l.clone(), MetricsSnapshot::default()))
        .collect();
    for record in r.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let name = record.get(0).unwrap_or_default();
        if name == "effective_search_ratio" {
            continue;
        }
        for (run, (col, _)) in runs.iter_mut().zip(&columns) {
            let cell = record.get(*col).unwrap_or_default();
            if let Some(k) = name
                .strip_prefix(HISTOGRAM)
                .and_then(|s| s.strip_prefix('['))
                .and_then(|s| s.strip_suffix(']'))
            {
                let k: usize = k.parse().map_err(|_| bad(format!("bad row `{name}`")))?;
                if cell.is_empty() {
                    continue;
                }
                let v: u64 = cell.parse().map_err(|_| bad(format!("bad value `{cell}`")))?;
                let h = &mut run.metrics.skipped_prefix_histogram;
                if h.len() <= k {
                    h.resize(k + 1, 0);
                }
                h[k] = v;
            } else {
                let v: u64 = cell.parse().map_err(|_| bad(format!("bad value `{cell}`")))?;
                if !run.metrics.set_scalar(name, v) {
                    return Err(bad(format!("unknown metric `{name}`")));
                }
            }
        }
    }
    Ok(runs)
}
