//! Per-LF diagnostics over a vote matrix.
//!
//! "Precision" and "empirical accuracy" are reported as the same quantity:
//! the fraction of an LF's firings on gold-bearing rows that match gold.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{LabelId, VoteMatrix, ABSTAIN};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LfSummary {
    pub name: String,
    /// Declared target; absent for bare vote tables.
    pub target: Option<LabelId>,
    /// Distinct labels the LF actually emitted.
    pub polarity: Vec<LabelId>,
    pub coverage: f64,
    pub overlap: f64,
    pub conflict: f64,
    /// `None` when gold is absent or the LF never fires on a gold-bearing row.
    pub empirical_accuracy: Option<f64>,
}

/// Coverage, overlap, conflict, polarity and (with gold) empirical accuracy
/// for every LF.
pub fn lf_summary(vm: &VoteMatrix, gold: Option<&[Option<LabelId>]>) -> Result<Vec<LfSummary>> {
    let mut out = summarize_votes(vm.n(), vm.m(), vm.votes(), gold)?;
    for (s, (name, &t)) in out.iter_mut().zip(vm.lf_names().iter().zip(vm.lf_targets())) {
        s.name = name.clone();
        s.target = Some(t);
    }
    Ok(out)
}

/// Same metrics over a bare row-major `n × m` vote table. Votes are not
/// required to be single-polarity here; LFs are named `lf1..lfm`.
pub fn summarize_votes(
    n: usize,
    m: usize,
    votes: &[LabelId],
    gold: Option<&[Option<LabelId>]>,
) -> Result<Vec<LfSummary>> {
    if votes.len() != n * m {
        return Err(Error::data(format!(
            "vote table has {} entries, expected {n}x{m}",
            votes.len()
        )));
    }
    if let Some(g) = gold {
        if g.len() != n {
            return Err(Error::data(format!(
                "gold has {} entries for {n} instances",
                g.len()
            )));
        }
    }
    let mut fired = vec![0usize; m];
    let mut overlapped = vec![0usize; m];
    let mut conflicted = vec![0usize; m];
    let mut correct = vec![0usize; m];
    let mut judged = vec![0usize; m];
    let mut emitted: Vec<Vec<LabelId>> = vec![Vec::new(); m];

    for i in 0..n {
        let row = &votes[i * m..(i + 1) * m];
        let fires = row.iter().filter(|&&v| v != ABSTAIN).count();
        for (j, &v) in row.iter().enumerate() {
            if v == ABSTAIN {
                continue;
            }
            fired[j] += 1;
            if !emitted[j].contains(&v) {
                emitted[j].push(v);
            }
            if fires > 1 {
                overlapped[j] += 1;
            }
            if row.iter().any(|&o| o != ABSTAIN && o != v) {
                conflicted[j] += 1;
            }
            if let Some(Some(g)) = gold.map(|g| g[i]) {
                judged[j] += 1;
                if g == v {
                    correct[j] += 1;
                }
            }
        }
    }

    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok((0..m)
        .map(|j| {
            let mut polarity = std::mem::take(&mut emitted[j]);
            polarity.sort_unstable();
            LfSummary {
                name: format!("lf{}", j + 1),
                target: None,
                polarity,
                coverage: frac(fired[j]),
                overlap: frac(overlapped[j]),
                conflict: frac(conflicted[j]),
                empirical_accuracy: (judged[j] > 0)
                    .then(|| correct[j] as f64 / judged[j] as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub table: String,
    pub record: serde_json::Value,
}

const COLUMNS: [&str; 8] = [
    "lf", "target", "polarity", "coverage", "overlap", "conflict", "precision", "emp_acc",
];

/// Render summaries as a fixed-column text table and a JSON record.
pub fn render_report(summaries: &[LfSummary]) -> Report {
    let rows: Vec<[String; 8]> = summaries
        .iter()
        .map(|s| {
            let acc = s
                .empirical_accuracy
                .map_or_else(|| "—".to_string(), |a| format!("{a:.4}"));
            let polarity = s
                .polarity
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(",");
            [
                s.name.clone(),
                s.target.map_or_else(|| "—".to_string(), |t| t.to_string()),
                format!("{{{polarity}}}"),
                format!("{:.4}", s.coverage),
                format!("{:.4}", s.overlap),
                format!("{:.4}", s.conflict),
                acc.clone(),
                acc,
            ]
        })
        .collect();
    let mut widths: [usize; 8] = COLUMNS.map(|c| c.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut table = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(table, "{}", padded.join("  ").trim_end());
    };
    line(&COLUMNS.map(String::from));
    for row in &rows {
        line(row);
    }
    let record = serde_json::json!({ "lfs": summaries });
    Report { table, record }
}

#[cfg(test)]
mod tests {
    use super::*;

    // LF2 emits both classes here, so this goes through the bare-table path.
    const VOTES: [LabelId; 8] = [1, 0, 1, 2, 0, 0, 1, 1];
    const GOLD: [Option<LabelId>; 4] = [Some(1), Some(1), Some(2), Some(1)];

    #[test]
    fn hand_worked_metrics() {
        let s = summarize_votes(4, 2, &VOTES, Some(&GOLD)).unwrap();
        assert_eq!(s[0].coverage, 0.75);
        assert_eq!(s[1].coverage, 0.5);
        assert_eq!((s[0].overlap, s[1].overlap), (0.5, 0.5));
        assert_eq!((s[0].conflict, s[1].conflict), (0.25, 0.25));
        assert_eq!(s[0].empirical_accuracy, Some(1.0));
        assert_eq!(s[1].empirical_accuracy, Some(0.5));
    }

    #[test]
    fn gold_length_mismatch() {
        assert!(summarize_votes(4, 2, &VOTES, Some(&[Some(1)])).is_err());
        assert!(summarize_votes(4, 2, &VOTES[..7], None).is_err());
    }

    #[test]
    fn unfired_lf_has_no_accuracy() {
        let vm = VoteMatrix::new(
            2,
            vec![0, 2, 0, 0],
            vec!["a".into(), "b".into()],
            vec![1, 2],
            vec![false, false],
        )
        .unwrap();
        let s = lf_summary(&vm, Some(&[Some(1), Some(2)])).unwrap();
        assert_eq!(s[0].coverage, 0.0);
        assert_eq!(s[0].empirical_accuracy, None);
        assert!(s[0].polarity.is_empty());
        assert_eq!(s[1].polarity, vec![2]);
        assert_eq!(s[1].target, Some(2));
        assert_eq!(s[1].name, "b");
        let multi = summarize_votes(4, 2, &VOTES, None).unwrap();
        assert_eq!(multi[1].polarity, vec![1, 2]);
    }

    #[test]
    fn report_shapes() {
        let empty = render_report(&[]);
        assert_eq!(empty.table.lines().count(), 1);
        assert!(empty.table.starts_with("lf"));

        let r = render_report(&summarize_votes(4, 2, &VOTES, Some(&GOLD)).unwrap());
        let lines: Vec<&str> = r.table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("0.7500") && lines[1].contains("1.0000"));
        assert!(lines[2].contains("0.5000") && lines[2].contains("0.2500"));

        let r = render_report(&summarize_votes(4, 2, &VOTES, None).unwrap());
        assert!(r.table.lines().nth(1).unwrap().contains('—'));
        assert_eq!(r.record["lfs"][0]["empirical_accuracy"], serde_json::Value::Null);
    }
}
