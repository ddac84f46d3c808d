//! Report documents: rows per tested configuration, rendered as a text
//! table, CSV, or JSON. The JSON form is the machine-readable source of
//! truth and round-trips losslessly.

use serde::{Deserialize, Serialize};

use super::{RunReport, WorkloadKind};

/// Which result table shape to render: response times (fixed request
/// count) or finished requests (fixed duration).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    ResponseTime,
    Throughput,
}

impl TableKind {
    pub fn for_workload(workload: WorkloadKind) -> TableKind {
        match workload {
            WorkloadKind::Ab => TableKind::ResponseTime,
            WorkloadKind::Duration => TableKind::Throughput,
        }
    }
}

/// One tested configuration. `scenario` distinguishes single-level rows
/// (one balancer) from two-level rows (selector over several balancers);
/// `algorithm` joins the balancer algorithms with " + " in two-level rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub app_id: String,
    pub bandwidth_groups: String,
    pub algorithm: String,
    pub report: RunReport,
}

/// A full report artifact. Contains nothing run-dependent beyond the rows,
/// so identical runs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub kind: TableKind,
    pub scenario_name: String,
    pub seed: u64,
    pub self_checks: String,
    pub rows: Vec<TableRow>,
}

impl ReportDoc {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<ReportDoc, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Group label shown in the first column.
fn scenario_heading(scenario: &str) -> String {
    match scenario {
        "single-level" => "(1) one balancer".to_string(),
        "two-level" => "(2) selector over two balancers".to_string(),
        other => other.to_string(),
    }
}

/// Human-readable table, rows grouped single-level first.
pub fn render_text(doc: &ReportDoc) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "report: {} (seed {}, self-checks {})\n",
        doc.scenario_name, doc.seed, doc.self_checks
    ));
    let header: Vec<&str> = match doc.kind {
        TableKind::ResponseTime => vec![
            "scenario",
            "app",
            "bandwidth (B/s)",
            "algorithm",
            "total time (s)",
            "resp time (s/req)",
            "avg resp time (s/req)",
            "failures",
        ],
        TableKind::Throughput => vec![
            "scenario",
            "app",
            "bandwidth (B/s)",
            "algorithm",
            "total requests",
            "throughput (pages/min)",
            "failures",
        ],
    };
    let mut grid: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for row in ordered_rows(doc) {
        let r = &row.report;
        let mut cells = vec![
            scenario_heading(&row.scenario),
            row.app_id.clone(),
            row.bandwidth_groups.clone(),
            row.algorithm.clone(),
        ];
        match doc.kind {
            TableKind::ResponseTime => {
                cells.push(format!("{:.3}", r.total_time_s));
                cells.push(format!("{:.3}", r.resp_time_s));
                cells.push(format!("{:.3}", r.avg_resp_time_s));
            }
            TableKind::Throughput => {
                cells.push(format!("{:.0}", r.total_requests));
                cells.push(format!("{}", r.throughput_pages_per_min));
            }
        }
        cells.push(format!("{}", r.failures));
        grid.push(cells);
    }

    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    for (i, row) in grid.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
            out.push('\n');
        }
    }
    out
}

/// CSV with one row per configuration.
pub fn render_csv(doc: &ReportDoc) -> String {
    let mut out = String::new();
    match doc.kind {
        TableKind::ResponseTime => out.push_str(
            "scenario,app_id,bandwidth_groups,algorithm,total_time_s,resp_time_s,avg_resp_time_s,repeats,failures\n",
        ),
        TableKind::Throughput => out.push_str(
            "scenario,app_id,bandwidth_groups,algorithm,total_requests,throughput_pages_per_min,failures\n",
        ),
    }
    for row in ordered_rows(doc) {
        let r = &row.report;
        let lead = format!(
            "{},{},{},{}",
            csv_escape(&row.scenario),
            csv_escape(&row.app_id),
            csv_escape(&row.bandwidth_groups),
            csv_escape(&row.algorithm),
        );
        match doc.kind {
            TableKind::ResponseTime => out.push_str(&format!(
                "{lead},{},{},{},{},{}\n",
                r.total_time_s, r.resp_time_s, r.avg_resp_time_s, r.repeats, r.failures
            )),
            TableKind::Throughput => out.push_str(&format!(
                "{lead},{},{},{}\n",
                r.total_requests, r.throughput_pages_per_min, r.failures
            )),
        }
    }
    out
}

/// Rows grouped by scenario label: single-level first, then two-level,
/// keeping the document order inside each group.
fn ordered_rows(doc: &ReportDoc) -> Vec<&TableRow> {
    let mut rows: Vec<&TableRow> = doc.rows.iter().filter(|r| r.scenario == "single-level").collect();
    rows.extend(doc.rows.iter().filter(|r| r.scenario == "two-level"));
    rows.extend(
        doc.rows
            .iter()
            .filter(|r| r.scenario != "single-level" && r.scenario != "two-level"),
    );
    rows
}

fn csv_escape(value: &str) -> String {
    if value.contains(',') || value.contains('"') || value.contains('\n') {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn row(app: &str, scenario: &str, algorithm: &str) -> TableRow {
        TableRow {
            scenario: scenario.to_string(),
            app_id: app.to_string(),
            bandwidth_groups: "100/100/1000".to_string(),
            algorithm: algorithm.to_string(),
            report: RunReport {
                workload: WorkloadKind::Ab,
                repeats: 1,
                n_requests: 200,
                concurrency: 100,
                duration_s: 0.0,
                total_time_s: 90.889,
                resp_time_s: 90.889 / 200.0,
                avg_resp_time_s: 90.889 / 200.0,
                total_requests: 0.0,
                throughput_pages_per_min: 0,
                issued: 200,
                failures: 0,
                discarded_in_flight: 0,
                mean_latency_s: 0.1,
                p50_latency_s: 0.1,
                p95_latency_s: 0.2,
                p99_latency_s: 0.3,
                backend_hits: BTreeMap::from([(1, 40)]),
            },
        }
    }

    fn doc() -> ReportDoc {
        ReportDoc {
            kind: TableKind::ResponseTime,
            scenario_name: "demo".to_string(),
            seed: 42,
            self_checks: "passed".to_string(),
            rows: vec![
                row("RR", "single-level", "Round Robin"),
                row("WLC+RR", "two-level", "Weighted Least Connection + Round Robin"),
                row("WLC", "single-level", "Weighted Least Connection"),
            ],
        }
    }

    #[test]
    fn json_round_trips_to_equal_rows() {
        let d = doc();
        let text = d.to_json();
        let back = ReportDoc::from_json(&text).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn text_groups_single_level_first() {
        let text = render_text(&doc());
        let rr = text.find("RR").unwrap();
        let wlc = text.find("  WLC ").unwrap();
        let two = text.find("WLC+RR").unwrap();
        assert!(rr < two && wlc < two, "single-level rows must precede two-level:\n{text}");
    }

    #[test]
    fn empty_doc_renders_header_only() {
        let mut d = doc();
        d.rows.clear();
        let text = render_text(&d);
        assert!(text.contains("algorithm"));
        assert_eq!(text.lines().count(), 3); // title + header + rule
        let csv = render_csv(&d);
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn csv_has_one_line_per_row_plus_header() {
        let csv = render_csv(&doc());
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("single-level,RR,"));
    }
}
