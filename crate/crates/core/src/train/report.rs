//! Report rendering: a human-readable table, line-delimited metric
//! records, and a CSV of per-epoch losses.

use super::eval::MetricsReport;

/// Fixed-width accuracy table with one row per question type.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>7} {:>10} {:>10}\n",
        "bucket", "count", "hard-acc", "soft-acc"
    ));
    out.push_str(&format!(
        "{:<12} {:>7} {:>10.4} {:>10.4}\n",
        "all", report.total_samples, report.overall_hard, report.overall_soft
    ));
    for (qtype, m) in &report.per_type {
        out.push_str(&format!(
            "{:<12} {:>7} {:>10.4} {:>10.4}\n",
            qtype, m.count, m.hard_accuracy, m.soft_accuracy
        ));
    }
    out.push_str(&format!(
        "config_hash={} seed={} wall_secs={:.2}\n",
        report.config_hash, report.seed, report.wall_secs
    ));
    out
}

/// `metric<TAB>value` lines for machine consumption.
pub fn metric_lines(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("overall.hard\t{}\n", report.overall_hard));
    out.push_str(&format!("overall.soft\t{}\n", report.overall_soft));
    out.push_str(&format!("overall.count\t{}\n", report.total_samples));
    for (qtype, m) in &report.per_type {
        let key = qtype.replace(['/', ' '], "_");
        out.push_str(&format!("type.{key}.hard\t{}\n", m.hard_accuracy));
        out.push_str(&format!("type.{key}.soft\t{}\n", m.soft_accuracy));
        out.push_str(&format!("type.{key}.count\t{}\n", m.count));
    }
    out.push_str(&format!("config_hash\t{}\n", report.config_hash));
    out.push_str(&format!("seed\t{}\n", report.seed));
    out
}

/// Loss curves as CSV for plotting.
pub fn loss_csv(report: &MetricsReport) -> String {
    let mut out = String::from("epoch,l_vqa,l_cl,total\n");
    for e in &report.loss_curves {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.l_vqa, e.l_cl, e.total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::eval::{score_predictions, EpochLoss, PredictionRecord};

    fn sample_report() -> MetricsReport {
        let rec = |qt: &str, s: f64| PredictionRecord {
            id: "x".into(),
            question_type: qt.into(),
            predicted_index: 0,
            predicted_target_score: s,
        };
        let mut r =
            score_predictions(&[rec("number", 1.0), rec("yes/no", 0.0), rec("number", 1.0)])
                .unwrap();
        r.loss_curves = vec![
            EpochLoss {
                epoch: 0,
                l_vqa: 0.7,
                l_cl: 0.6,
                total: 1.3,
            },
            EpochLoss {
                epoch: 1,
                l_vqa: 0.5,
                l_cl: 0.55,
                total: 1.05,
            },
        ];
        r.config_hash = "deadbeef".into();
        r
    }

    #[test]
    fn table_lists_every_bucket() {
        let text = render_table(&sample_report());
        assert!(text.contains("all"));
        assert!(text.contains("number"));
        assert!(text.contains("yes/no"));
        assert!(text.contains("deadbeef"));
    }

    #[test]
    fn metric_lines_are_tab_separated_pairs() {
        let lines = metric_lines(&sample_report());
        for line in lines.lines() {
            assert_eq!(line.split('\t').count(), 2, "{line}");
        }
        assert!(lines.contains("type.yes_no.hard\t0\n"));
    }

    #[test]
    fn csv_has_header_plus_epochs() {
        let csv = loss_csv(&sample_report());
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,"));
    }
}
