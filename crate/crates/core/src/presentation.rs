//! Tabular explanations and their display rounding.
//!
//! Every numeric cell carries its full-precision value next to a display
//! string. Display strings never feed back into computation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::FeatureMeta;
use crate::explain::{LinearFactorModel, PartitionRule, Subspace, TypicalSide, XaiType};

/// Version tag of the [`ExplanationTable`] JSON layout.
pub const TABLE_SCHEMA_VERSION: u32 = 1;

/// Key used in factor overrides for the intercept row.
pub const ADJUSTMENT_KEY: &str = "adjustment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayRole {
    Value,
    Factor,
    Delta,
    Contribution,
    Adjustment,
    Estimate,
    Prediction,
    Threshold,
}

impl DisplayRole {
    pub fn significant_figures(self) -> u32 {
        match self {
            DisplayRole::Adjustment | DisplayRole::Threshold => 3,
            _ => 2,
        }
    }
}

/// Round to the role's significant figures, half away from zero, and render
/// as a plain decimal with an ASCII minus sign.
pub fn round_display(value: f64, role: DisplayRole) -> String {
    round_significant(value, role.significant_figures())
}

/// Significant-figure rounding applied to the shortest decimal string that
/// round-trips `value`, so 2.45 rounds to "2.5" even though its binary value
/// is slightly below 2.45.
pub fn round_significant(value: f64, sig: u32) -> String {
    assert!(sig >= 1, "need at least one significant figure");
    if !value.is_finite() {
        return value.to_string();
    }
    if value == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:e}", value.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let mut exp: i64 = exp.parse().expect("integer exponent");
    let mut digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();

    let sig = sig as usize;
    if digits.len() > sig {
        let round_up = digits[sig] >= 5;
        digits.truncate(sig);
        if round_up {
            let mut i = sig;
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    digits.truncate(sig);
                    exp += 1;
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
    }
    while digits.len() > 1 && digits.last() == Some(&0) {
        digits.pop();
    }

    let text: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let k = digits.len() as i64;
    let body = if exp >= k - 1 {
        format!("{text}{}", "0".repeat((exp - (k - 1)) as usize))
    } else if exp >= 0 {
        let split = (exp + 1) as usize;
        format!("{}.{}", &text[..split], &text[split..])
    } else {
        format!("0.{}{text}", "0".repeat((-exp - 1) as usize))
    };
    if value < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

/// A full-precision number with its display string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub full: f64,
    pub display: String,
}

impl Cell {
    pub fn new(full: f64, role: DisplayRole) -> Self {
        Cell {
            full,
            display: round_display(full, role),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub unit: String,
    pub value: Cell,
    /// Value scaled against the feature's observed [min, max], clamped to [0, 1].
    pub value_meter: f64,
    /// Factor used for the contribution (effective factor for outliers,
    /// override in what-if mode).
    pub factor: Cell,
    /// Base factor, present on Incremental outlier rows.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_factor: Option<Cell>,
    /// Incremental delta, present on Incremental outlier rows.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<Cell>,
    pub contribution: Cell,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentRow {
    pub value: Cell,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base: Option<Cell>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<Cell>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTable {
    pub schema_version: u32,
    pub xai_type: XaiType,
    pub target_unit: String,
    pub rows: Vec<TableRow>,
    pub adjustment: AdjustmentRow,
    /// `adjustment + sum of contributions`, accumulated in row order.
    pub explainer_estimate: Cell,
    pub predictor_prediction: Cell,
    /// `100 * (estimate - prediction) / prediction`; null when the prediction is 0.
    pub percent_difference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subspace_label: Option<Subspace>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule_text: Option<String>,
    pub what_if: bool,
}

/// The model pieces that explain one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub xai_type: XaiType,
    /// Factors applied to the instance (base + delta for Incremental outliers).
    pub effective: LinearFactorModel,
    /// Base and delta, set for Incremental outlier instances only.
    pub incremental_parts: Option<(LinearFactorModel, LinearFactorModel)>,
    pub rule: Option<PartitionRule>,
}

/// Human-readable outlier condition, e.g. "Living Area ≥ 2.5 ksqft".
pub fn rule_text(rule: &PartitionRule, features: &[FeatureMeta]) -> String {
    let f = &features[rule.feature_index];
    let op = match rule.typical_side {
        TypicalSide::Below => "≥",
        TypicalSide::AtOrAbove => "<",
    };
    let threshold = round_display(rule.threshold, DisplayRole::Threshold);
    if f.unit.is_empty() {
        format!("{} {op} {threshold}", f.name)
    } else {
        format!("{} {op} {threshold} {}", f.name, f.unit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverrideError {
    #[error("unknown attribute `{0}` in factor overrides")]
    UnknownAttribute(String),
    #[error("override for `{0}` is not finite")]
    NonFinite(String),
}

/// Build the explanation table for `x`.
///
/// `overrides` maps attribute names (or `"adjustment"`) to replacement
/// factors; any override switches the table to what-if mode. The predictor
/// prediction is always the real one.
pub fn build_table(
    resolved: &ResolvedModel,
    features: &[FeatureMeta],
    target_unit: &str,
    x: &[f64],
    prediction: f64,
    overrides: &BTreeMap<String, f64>,
) -> Result<ExplanationTable, OverrideError> {
    for (key, v) in overrides {
        if key != ADJUSTMENT_KEY && !features.iter().any(|f| &f.name == key) {
            return Err(OverrideError::UnknownAttribute(key.clone()));
        }
        if !v.is_finite() {
            return Err(OverrideError::NonFinite(key.clone()));
        }
    }

    let model = &resolved.effective;
    let parts = resolved.incremental_parts.as_ref();
    let adjustment_override = overrides.get(ADJUSTMENT_KEY).copied();
    let intercept = adjustment_override.unwrap_or(model.intercept);
    let mut estimate = intercept;
    let mut rows = Vec::with_capacity(features.len());
    for (r, meta) in features.iter().enumerate() {
        let value = x[r];
        let over = overrides.get(&meta.name).copied();
        let factor = over.unwrap_or(model.factors[r]);
        let contribution = factor * value;
        estimate += contribution;
        rows.push(TableRow {
            name: meta.name.clone(),
            unit: meta.unit.clone(),
            value: Cell::new(value, DisplayRole::Value),
            value_meter: meta.meter(value),
            factor: Cell::new(factor, DisplayRole::Factor),
            base_factor: parts.map(|(b, _)| Cell::new(b.factors[r], DisplayRole::Factor)),
            delta: parts.map(|(_, d)| Cell::new(d.factors[r], DisplayRole::Delta)),
            contribution: Cell::new(contribution, DisplayRole::Contribution),
            overridden: over.is_some(),
        });
    }

    let subspace_label = resolved.rule.as_ref().map(|rule| rule.subspace_of(x));
    let percent_difference = if prediction == 0.0 {
        None
    } else {
        Some(100.0 * (estimate - prediction) / prediction)
    };
    Ok(ExplanationTable {
        schema_version: TABLE_SCHEMA_VERSION,
        xai_type: resolved.xai_type,
        target_unit: target_unit.to_string(),
        rows,
        adjustment: AdjustmentRow {
            value: Cell::new(intercept, DisplayRole::Adjustment),
            base: parts.map(|(b, _)| Cell::new(b.intercept, DisplayRole::Adjustment)),
            delta: parts.map(|(_, d)| Cell::new(d.intercept, DisplayRole::Adjustment)),
            overridden: adjustment_override.is_some(),
        },
        explainer_estimate: Cell::new(estimate, DisplayRole::Estimate),
        predictor_prediction: Cell::new(prediction, DisplayRole::Prediction),
        percent_difference,
        subspace_label,
        rule_text: resolved.rule.as_ref().map(|r| rule_text(r, features)),
        what_if: !overrides.is_empty(),
    })
}

impl ExplanationTable {
    /// Recompute `adjustment + sum of contributions` from the full-precision cells.
    pub fn recomputed_estimate(&self) -> f64 {
        let mut acc = self.adjustment.value.full;
        for row in &self.rows {
            acc += row.contribution.full;
        }
        acc
    }

    /// Aligned plain-text rendering for terminals.
    pub fn to_text(&self) -> String {
        let has_delta = self.rows.iter().any(|r| r.delta.is_some());
        let mut lines = Vec::new();
        let mut header = vec![
            "attribute".to_string(),
            "value".to_string(),
            "factor".to_string(),
        ];
        if has_delta {
            header.push("base".to_string());
            header.push("delta".to_string());
        }
        header.push("contribution".to_string());
        let mut grid = vec![header];
        for row in &self.rows {
            let name = if row.unit.is_empty() {
                row.name.clone()
            } else {
                format!("{} ({})", row.name, row.unit)
            };
            let mut line = vec![name, row.value.display.clone(), row.factor.display.clone()];
            if has_delta {
                line.push(row.base_factor.as_ref().map_or(String::new(), |c| c.display.clone()));
                line.push(row.delta.as_ref().map_or(String::new(), |c| c.display.clone()));
            }
            line.push(row.contribution.display.clone());
            grid.push(line);
        }
        let mut adj = vec![ADJUSTMENT_KEY.to_string(), String::new(), String::new()];
        if has_delta {
            adj.push(self.adjustment.base.as_ref().map_or(String::new(), |c| c.display.clone()));
            adj.push(self.adjustment.delta.as_ref().map_or(String::new(), |c| c.display.clone()));
        }
        adj.push(self.adjustment.value.display.clone());
        grid.push(adj);

        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        for line in &grid {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            lines.push(cells.join("  ").trim_end().to_string());
        }
        lines.push(format!(
            "estimate: {} (full {})",
            self.explainer_estimate.display, self.explainer_estimate.full
        ));
        lines.push(format!(
            "prediction: {} (full {})",
            self.predictor_prediction.display, self.predictor_prediction.full
        ));
        if let Some(pd) = self.percent_difference {
            lines.push(format!("difference: {}%", round_significant(pd, 2)));
        }
        if let Some(label) = self.subspace_label {
            let rule = self.rule_text.as_deref().unwrap_or("");
            lines.push(format!("subspace: {} (outlier when {rule})", label.as_str()));
        }
        if self.what_if {
            lines.push("what-if: factors overridden".to_string());
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(name: &str, unit: &str, min: f64, max: f64) -> FeatureMeta {
        FeatureMeta {
            name: name.into(),
            unit: unit.into(),
            min,
            max,
            mean: 0.5 * (min + max),
            std: 1.0,
            median: 0.5 * (min + max),
        }
    }

    fn house_features() -> Vec<FeatureMeta> {
        vec![
            meta("Bathrooms", "count", 0.0, 8.0),
            meta("Living Area", "ksqft", 0.3, 13.5),
            meta("Grade", "grade", 1.0, 13.0),
            meta("Age", "years", 0.0, 115.0),
        ]
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_display(29.75, DisplayRole::Contribution), "30");
        assert_eq!(round_display(-1043.7, DisplayRole::Adjustment), "-1040");
        assert_eq!(round_display(0.0, DisplayRole::Factor), "0");
        assert_eq!(round_display(-0.0, DisplayRole::Factor), "0");
        assert_eq!(round_display(2.45, DisplayRole::Factor), "2.5");
        assert_eq!(round_display(-2.45, DisplayRole::Factor), "-2.5");
        assert_eq!(round_display(0.0012345, DisplayRole::Value), "0.0012");
        assert_eq!(round_display(999.6, DisplayRole::Value), "1000");
        assert_eq!(round_display(9.96, DisplayRole::Value), "10");
        assert_eq!(round_display(1.75, DisplayRole::Value), "1.8");
        assert_eq!(round_display(215.0, DisplayRole::Factor), "220");
        assert_eq!(round_display(2.5, DisplayRole::Threshold), "2.5");
        assert_eq!(round_display(7.0, DisplayRole::Factor), "7");
        assert_eq!(round_display(1.0e20, DisplayRole::Factor), "100000000000000000000");
    }

    proptest! {
        #[test]
        fn rounding_error_bounded(v in -1e9f64..1e9, sig in 1u32..6) {
            prop_assume!(v != 0.0);
            let s = round_significant(v, sig);
            let parsed: f64 = s.parse().unwrap();
            let unit = 10f64.powi(v.abs().log10().floor() as i32 - sig as i32 + 1);
            prop_assert!((parsed - v).abs() <= 0.5 * unit * (1.0 + 1e-9) + 1e-300, "{} -> {}", v, s);
            prop_assert!(!s.contains('e'));
        }
    }

    fn resolved(model: LinearFactorModel) -> ResolvedModel {
        ResolvedModel {
            xai_type: XaiType::Global,
            effective: model,
            incremental_parts: None,
            rule: None,
        }
    }

    #[test]
    fn bathroom_contribution() {
        let r = resolved(LinearFactorModel::new(0.0, vec![17.0, 0.0, 0.0, 0.0]));
        let t = build_table(&r, &house_features(), "$k", &[1.75, 2.0, 7.0, 30.0], 30.0, &BTreeMap::new()).unwrap();
        assert_eq!(t.rows[0].contribution.full, 29.75);
        assert_eq!(t.rows[0].contribution.display, "30");
        assert!(t.rule_text.is_none());
        assert!(!t.what_if);
    }

    #[test]
    fn zero_instance_estimate_is_adjustment() {
        let r = resolved(LinearFactorModel::new(-12.5, vec![17.0, 95.0, 20.0, 1.0]));
        let t = build_table(&r, &house_features(), "$k", &[0.0; 4], 10.0, &BTreeMap::new()).unwrap();
        assert!(t.rows.iter().all(|row| row.contribution.full == 0.0));
        assert_eq!(t.explainer_estimate.full, -12.5);
    }

    #[test]
    fn estimate_matches_model_eval_exactly() {
        let m = LinearFactorModel::new(-1043.7, vec![17.3, 95.1, 101.7, 3.3]);
        let x = [2.25, 3.1, 9.0, 41.0];
        let t = build_table(&resolved(m.clone()), &house_features(), "$k", &x, 900.0, &BTreeMap::new()).unwrap();
        assert_eq!(t.explainer_estimate.full, m.eval(&x));
        assert_eq!(t.explainer_estimate.full, t.recomputed_estimate());
        let pd = t.percent_difference.unwrap();
        assert_eq!(pd, 100.0 * (m.eval(&x) - 900.0) / 900.0);
    }

    #[test]
    fn incremental_outlier_shows_effective_factor() {
        let rule = PartitionRule::new(1, 2.5, TypicalSide::Below);
        let base = LinearFactorModel::new(10.0, vec![0.0, 95.0, 0.0, 0.0]);
        let delta = LinearFactorModel::new(0.0, vec![0.0, 120.0, 0.0, 0.0]);
        let r = ResolvedModel {
            xai_type: XaiType::Incremental,
            effective: base.plus(&delta),
            incremental_parts: Some((base, delta)),
            rule: Some(rule),
        };
        let t = build_table(&r, &house_features(), "$k", &[2.0, 3.0, 8.0, 10.0], 600.0, &BTreeMap::new()).unwrap();
        assert_eq!(t.rows[1].factor.full, 215.0);
        assert_eq!(t.rows[1].delta.as_ref().unwrap().full, 120.0);
        assert_eq!(t.subspace_label, Some(Subspace::Outlier));
        assert_eq!(t.rule_text.as_deref(), Some("Living Area ≥ 2.5 ksqft"));
    }

    #[test]
    fn overrides_switch_to_what_if() {
        let r = resolved(LinearFactorModel::new(5.0, vec![17.0, 95.0, 20.0, -1.0]));
        let x = [1.75, 2.0, 7.0, 30.0];
        let plain = build_table(&r, &house_features(), "$k", &x, 300.0, &BTreeMap::new()).unwrap();
        let mut ov = BTreeMap::new();
        ov.insert("Bathrooms".to_string(), 0.0);
        let t = build_table(&r, &house_features(), "$k", &x, 300.0, &ov).unwrap();
        assert!(t.what_if);
        assert_eq!(t.rows[0].contribution.full, 0.0);
        assert!((plain.explainer_estimate.full - t.explainer_estimate.full - 17.0 * 1.75).abs() < 1e-12);
        assert_eq!(t.predictor_prediction, plain.predictor_prediction);

        ov.insert(ADJUSTMENT_KEY.to_string(), 100.0);
        let t = build_table(&r, &house_features(), "$k", &x, 300.0, &ov).unwrap();
        assert!(t.adjustment.overridden);
        assert_eq!(t.explainer_estimate.full, t.recomputed_estimate());

        ov.insert("Nope".to_string(), 1.0);
        assert_eq!(
            build_table(&r, &house_features(), "$k", &x, 300.0, &ov),
            Err(OverrideError::UnknownAttribute("Nope".into()))
        );
    }

    #[test]
    fn zero_prediction_has_no_percent() {
        let r = resolved(LinearFactorModel::zeros(4));
        let t = build_table(&r, &house_features(), "$k", &[1.0; 4], 0.0, &BTreeMap::new()).unwrap();
        assert_eq!(t.percent_difference, None);
    }

    #[test]
    fn json_round_trip() {
        let r = resolved(LinearFactorModel::new(5.0, vec![17.0, 95.0, 20.0, -1.0]));
        let t = build_table(&r, &house_features(), "$k", &[1.75, 2.0, 7.0, 30.0], 300.0, &BTreeMap::new()).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: ExplanationTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.explainer_estimate.full, back.recomputed_estimate());
    }
}
