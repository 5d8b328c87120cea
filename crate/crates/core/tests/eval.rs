use podfact_core::metrics::{
    align, char_error_rate, error_rates, evaluate_predictions, f1_report, match_error_rate, round_half_up,
    weighted_f1, word_error_rate, AlignmentCounts, EvalTask, MetricError,
};

const GOLD: &str = include_str!("../fixtures/claims_test_gold.jsonl");
const FINETUNED: &str = include_str!("../fixtures/claims_pred_finetuned.jsonl");
const FEWSHOT: &str = include_str!("../fixtures/claims_pred_fewshot.jsonl");

fn counts(s: usize, d: usize, i: usize, c: usize) -> AlignmentCounts {
    AlignmentCounts {
        substitutions: s,
        deletions: d,
        insertions: i,
        correct: c,
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

#[test]
fn alignment_examples() {
    assert_eq!(align(&words("a b c"), &words("a b c")), counts(0, 0, 0, 3));
    assert_eq!(align(&words("a b c"), &words("a x c")), counts(1, 0, 0, 2));
    assert_eq!(align(&words("a b c d"), &[]), counts(0, 4, 0, 0));
}

#[test]
fn rate_examples() {
    assert_eq!(word_error_rate("the cat sat", "the cat sat").unwrap(), 0.0);
    assert_eq!(word_error_rate("the cat sat", "the cat sat down").unwrap(), 1.0 / 3.0);
    assert_eq!(word_error_rate("the cat sat", "").unwrap(), 1.0);
    assert_eq!(word_error_rate("  .. ", "x"), Err(MetricError::UndefinedMetric));
    assert_eq!(match_error_rate("a b c", "a x c"), 1.0 / 3.0);
    assert_eq!(match_error_rate("a", "b c"), 1.0);
    assert_eq!(match_error_rate("", ""), 0.0);
    assert_eq!(char_error_rate("abc", "abd").unwrap(), 1.0 / 3.0);
    assert_eq!(char_error_rate("ab", "ab c").unwrap(), 1.0);
    // Normalization: case, edge punctuation and inner apostrophes.
    let r = error_rates("Well, it's \"fine\".", "well it's fine").unwrap();
    assert_eq!((r.wer, r.mer, r.cer), (0.0, 0.0, 0.0));
}

#[test]
fn f1_examples() {
    let r = f1_report(&["T", "T", "F", "F"], &["T", "F", "F", "F"]).unwrap();
    assert!((r.per_class["T"].f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.per_class["F"].f1 - 4.0 / 5.0).abs() < 1e-12);
    assert!((r.weighted_f1 - 11.0 / 15.0).abs() < 1e-12);
    assert_eq!(f1_report(&["T"], &["T", "F"]).unwrap_err(), MetricError::Length { golds: 1, preds: 2 });
    assert_eq!(round_half_up(weighted_f1([(0.91, 152), (0.45, 24)]), 2), 0.85);
    assert_eq!(round_half_up(weighted_f1([(0.91, 152), (0.57, 24)]), 2), 0.86);
}

#[test]
fn prediction_fixtures_render_expected_rows() {
    let fine = evaluate_predictions(GOLD, FINETUNED, EvalTask::ClaimDetection, "finetuned").unwrap();
    let few = evaluate_predictions(GOLD, FEWSHOT, EvalTask::ClaimDetection, "fewshot").unwrap();
    assert_eq!(fine.items, 176);
    assert_eq!(fine.report.per_class["False"].support, 152);
    assert_eq!(fine.report.per_class["True"].support, 24);
    let row = |r: &podfact_core::metrics::EvaluationReport| r.render().lines().nth(3).unwrap().to_owned();
    assert_eq!(row(&fine), "| finetuned | 0.91  | 0.45 | 0.85     |");
    assert_eq!(row(&few), "| fewshot | 0.91  | 0.57 | 0.86     |");
    assert!(fine.render().starts_with("Claim Detection (F1-Score)\n| Model"));

    let short: String = FINETUNED.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        evaluate_predictions(GOLD, &short, EvalTask::ClaimDetection, "x"),
        Err(MetricError::Alignment { ref missing_predictions, .. }) if missing_predictions.len() == 1
    ));
}
