// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

use std::io;

use dagbft::metrics::{anchor_rule_mix, Aggregate, RuleMix};
use dagbft::{OracleReport, RunTrace, Scenario};

/// Outcome of one configuration across its seeds.
pub struct RunReport {
    pub label: String,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub aggregate: Aggregate,
    pub uncommitted: usize,
    pub anchor_mix: RuleMix,
    /// Smallest seed whose runs violate an oracle, with its report.
    pub failure: Option<(u64, OracleReport)>,
}

impl RunReport {
    pub fn anchor_mix_of(traces: &[RunTrace]) -> RuleMix {
        let mixes: Vec<RuleMix> = traces.iter().map(anchor_rule_mix).collect();
        let n = mixes.len().max(1) as f64;
        RuleMix {
            fast_direct: mixes.iter().map(|m| m.fast_direct).sum::<f64>() / n,
            direct: mixes.iter().map(|m| m.direct).sum::<f64>() / n,
            indirect: mixes.iter().map(|m| m.indirect).sum::<f64>() / n,
        }
    }
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "config",
    "protocol",
    "runs",
    "txns",
    "uncommitted",
    "queuing",
    "anchoring",
    "anchor_commit",
    "total",
    "total_p50",
    "fast_direct",
    "direct",
    "indirect",
];

fn cells(r: &RunReport) -> Vec<String> {
    let f = |x: f64| format!("{x:.3}");
    let mut row = vec![r.label.clone(), r.scenario.protocol.to_string(), r.seeds.len().to_string()];
    match r.aggregate.summary() {
        Some(s) => row.extend([
            s.count.to_string(),
            r.uncommitted.to_string(),
            f(s.queuing.mean),
            f(s.anchoring.mean),
            f(s.anchor_commit.mean),
            f(s.total.mean),
            f(s.total.p50),
        ]),
        None => {
            row.extend(["0".into(), r.uncommitted.to_string()]);
            row.extend(std::iter::repeat_n("-".to_string(), 5));
        }
    }
    row.extend([f(r.anchor_mix.fast_direct), f(r.anchor_mix.direct), f(r.anchor_mix.indirect)]);
    row
}

pub fn write_summary_csv<W: io::Write>(w: W, reports: &[RunReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        w.write_record(cells(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table: stage means side by side, then oracle status.
pub fn table(reports: &[RunReport]) -> String {
    let header: Vec<String> =
        SUMMARY_HEADER.iter().map(|s| s.to_string()).chain(["oracles".into()]).collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut c = cells(r);
            c.push(match &r.failure {
                None => "pass".into(),
                Some((seed, _)) => format!("FAIL (seed {seed})"),
            });
            c
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        row.iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_renders() {
        let r = RunReport {
            label: "x".into(),
            scenario: Scenario::default(),
            seeds: vec![1],
            aggregate: Aggregate::Empty,
            uncommitted: 3,
            anchor_mix: RuleMix::default(),
            failure: None,
        };
        let t = table(std::slice::from_ref(&r));
        assert!(t.lines().nth(1).unwrap().starts_with("x "));
        assert!(t.contains("pass"));
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER.join(","));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), SUMMARY_HEADER.len());
    }
}
