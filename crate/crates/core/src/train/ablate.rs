//! Component ablation: train the four toggle combinations on one fixture
//! and seed, and tabulate held-out accuracy.

use super::config::TrainConfig;
use super::eval::MetricsReport;
use super::runner::{train, TrainOutcome};
use crate::error::Result;

pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("+CKDM", false, true),
    ("+AFM", true, false),
    ("+AFM+CKDM", true, true),
];

pub struct AblationRow {
    pub label: &'static str,
    pub afm: bool,
    pub ckdm: bool,
    pub config_hash: String,
    pub report: MetricsReport,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table, one row per toggle combination.
    pub fn render(&self) -> String {
        let mut types: Vec<String> = Vec::new();
        for r in &self.rows {
            for t in r.report.per_type.keys() {
                if !types.contains(t) {
                    types.push(t.clone());
                }
            }
        }
        types.sort();

        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>8}", "model", "overall"));
        for t in &types {
            out.push_str(&format!(" {:>8}", t));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>8.2}",
                r.label,
                100.0 * r.report.overall_hard
            ));
            for t in &types {
                match r.report.per_type.get(t) {
                    Some(m) => out.push_str(&format!(" {:>8.2}", 100.0 * m.hard_accuracy)),
                    None => out.push_str(&format!(" {:>8}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable lines: `ablation.<label>.<metric>\t<value>`.
    pub fn metric_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let key = r.label.replace(['+', ' '], "_").to_lowercase();
            out.push_str(&format!(
                "ablation.{key}.overall_hard\t{}\n",
                r.report.overall_hard
            ));
            out.push_str(&format!("ablation.{key}.config_hash\t{}\n", r.config_hash));
        }
        out
    }
}

/// Derive one row's config from the base: only the component toggles (and
/// the contrastive-loss toggle tied to the distillation module) change.
pub fn row_config(base: &TrainConfig, afm: bool, ckdm: bool) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.afm_enabled = afm;
    cfg.ckdm_enabled = ckdm;
    cfg.ckdm_loss_enabled = ckdm;
    cfg
}

/// Train all four rows on the same data and seed.
pub fn run_ablation_suite(base: &TrainConfig) -> Result<AblationTable> {
    base.validate()?;
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (label, afm, ckdm) in ABLATION_ROWS {
        let cfg = row_config(base, afm, ckdm);
        let TrainOutcome { report, .. } = train(&cfg)?;
        rows.push(AblationRow {
            label,
            afm,
            ckdm,
            config_hash: cfg.hash(),
            report,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_configs_differ_only_in_toggles() {
        let mut base = TrainConfig::desk_default();
        base.train_manifest = "fx/train.manifest".into();
        for (_, afm, ckdm) in ABLATION_ROWS {
            let cfg = row_config(&base, afm, ckdm);
            let mut normalized = cfg.clone();
            normalized.afm_enabled = base.afm_enabled;
            normalized.ckdm_enabled = base.ckdm_enabled;
            normalized.ckdm_loss_enabled = base.ckdm_loss_enabled;
            assert_eq!(normalized, base);
        }
        // Hashes pairwise distinct.
        let hashes: Vec<String> = ABLATION_ROWS
            .iter()
            .map(|(_, a, c)| row_config(&base, *a, *c).hash())
            .collect();
        for i in 0..hashes.len() {
            for j in (i + 1)..hashes.len() {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
    }

    #[test]
    fn render_has_four_rows_and_header() {
        use super::super::eval::{score_predictions, PredictionRecord};
        let rec = |qt: &str, s: f64| PredictionRecord {
            id: "x".into(),
            question_type: qt.into(),
            predicted_index: 0,
            predicted_target_score: s,
        };
        let report = score_predictions(&[rec("number", 1.0), rec("other", 0.0)]).unwrap();
        let table = AblationTable {
            rows: ABLATION_ROWS
                .iter()
                .map(|(label, afm, ckdm)| AblationRow {
                    label,
                    afm: *afm,
                    ckdm: *ckdm,
                    config_hash: format!("{afm}{ckdm}"),
                    report: report.clone(),
                })
                .collect(),
        };
        let text = table.render();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("+AFM+CKDM"));
        assert!(text.contains("overall"));
        assert!(table.metric_lines().contains("ablation._afm.overall_hard"));
    }
}
