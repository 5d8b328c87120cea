use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{f1_report, round_half_up, F1Report, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalTask {
    ClaimDetection,
    Stance,
}

impl EvalTask {
    pub fn title(self) -> &'static str {
        match self {
            EvalTask::ClaimDetection => "Claim Detection (F1-Score)",
            EvalTask::Stance => "Stance Detection (F1-Score)",
        }
    }

    /// Report columns, in display order.
    pub fn classes(self) -> [&'static str; 2] {
        match self {
            EvalTask::ClaimDetection => ["False", "True"],
            EvalTask::Stance => ["Refutes", "Supports"],
        }
    }

    fn class_of(self, label: &Value) -> Option<&'static str> {
        match (self, label) {
            (EvalTask::ClaimDetection, Value::Bool(b)) => Some(if *b { "True" } else { "False" }),
            (EvalTask::ClaimDetection, Value::String(s)) => match s.to_ascii_lowercase().as_str() {
                "true" | "check_worthy" => Some("True"),
                "false" | "not_check_worthy" => Some("False"),
                _ => None,
            },
            (EvalTask::Stance, Value::String(s)) => match s.to_ascii_uppercase().as_str() {
                "SUPPORTS" => Some("Supports"),
                "REFUTES" => Some("Refutes"),
                _ => None,
            },
            _ => None,
        }
    }
}

impl FromStr for EvalTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "claims" | "claim" | "claim-detection" => Ok(EvalTask::ClaimDetection),
            "stance" => Ok(EvalTask::Stance),
            other => Err(format!("unknown task {other:?}; expected claims or stance")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: EvalTask,
    pub model: String,
    pub items: usize,
    pub report: F1Report,
}

impl EvaluationReport {
    /// Per-class and weighted F1 rounded to two decimals, one row per model.
    pub fn render(&self) -> String {
        let [a, b] = self.task.classes();
        let f1 = |class: &str| self.report.per_class.get(class).map_or(0.0, |s| s.f1);
        let cells = [
            self.model.clone(),
            format!("{:.2}", round_half_up(f1(a), 2)),
            format!("{:.2}", round_half_up(f1(b), 2)),
            format!("{:.2}", round_half_up(self.report.weighted_f1, 2)),
        ];
        let header = ["Model", a, b, "Weighted"];
        let widths: Vec<usize> = header
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.task.title());
        let row = |items: &[&str]| {
            let cols: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            format!("| {} |", cols.join(" | "))
        };
        let _ = writeln!(out, "{}", row(&header));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
        let cell_refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        let _ = writeln!(out, "{}", row(&cell_refs));
        out
    }
}

#[derive(Deserialize)]
struct Line {
    id: Value,
    label: Value,
}

fn read_labels(text: &str, task: EvalTask) -> Result<BTreeMap<String, &'static str>, MetricError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = n + 1;
        let parsed: Line = serde_json::from_str(raw).map_err(|e| MetricError::Format {
            line,
            message: e.to_string(),
        })?;
        let id = match parsed.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => {
                return Err(MetricError::Format {
                    line,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        let class = task.class_of(&parsed.label).ok_or_else(|| MetricError::Format {
            line,
            message: format!("label {} is not valid for {task:?}", parsed.label),
        })?;
        if out.insert(id.clone(), class).is_some() {
            return Err(MetricError::Format {
                line,
                message: format!("duplicate id {id:?}"),
            });
        }
    }
    Ok(out)
}

/// Scores a JSONL prediction file against a JSONL gold file keyed by `id`.
pub fn evaluate_predictions(
    gold_jsonl: &str,
    pred_jsonl: &str,
    task: EvalTask,
    model: &str,
) -> Result<EvaluationReport, MetricError> {
    let golds = read_labels(gold_jsonl, task)?;
    let preds = read_labels(pred_jsonl, task)?;
    let missing: Vec<String> = golds.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    let unknown: Vec<String> = preds.keys().filter(|k| !golds.contains_key(*k)).cloned().collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(MetricError::Alignment {
            missing_predictions: missing,
            unknown_ids: unknown,
        });
    }
    let (g, p): (Vec<&str>, Vec<&str>) = golds.iter().map(|(id, g)| (*g, preds[id])).unzip();
    let report = f1_report(&g, &p)?;
    Ok(EvaluationReport {
        task,
        model: model.to_owned(),
        items: g.len(),
        report,
    })
}
