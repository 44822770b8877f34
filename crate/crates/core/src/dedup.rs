//! Repetition checks over task texts.

use alloc::collections::BTreeSet;
use alloc::string::String;

use crate::record::{RecordKind, RunRecord};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Lowercases, drops everything except letters, digits and whitespace, and
/// collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(String::from).collect()
}

/// Jaccard similarity of the normalized token sets. Two texts with no
/// tokens at all are identical (1.0).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Most recent run record whose task is at least `threshold` similar to
/// `task`. Feedback records are not tasks and never match.
pub fn dedup_check<'a>(task: &str, records: &'a [RunRecord], threshold: f64) -> Option<&'a RunRecord> {
    records
        .iter()
        .rev()
        .filter(|r| r.kind == RecordKind::Run)
        .find(|r| jaccard(task, &r.task) >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(id: &str, task: &str) -> RunRecord {
        RunRecord {
            run_id: id.into(),
            kind: RecordKind::Run,
            task: task.into(),
            action_summary: String::new(),
            outcome: String::new(),
            artifacts: vec![],
            ts: String::new(),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Build   a\tCalculator!! "), "build a calculator");
        assert_eq!(normalize("ÉTÉ — été"), "été été");
        assert_eq!(normalize("?!"), "");
    }

    #[test]
    fn examples() {
        let rs = vec![rec("r1", "build a calculator!")];
        assert_eq!(dedup_check("Build a calculator", &rs, 1.0).unwrap().run_id, "r1");
        let rs = vec![rec("r2", "Build a simple calculator")];
        assert_eq!(jaccard("Build a calculator", "Build a simple calculator"), 0.75);
        assert!(dedup_check("Build a calculator", &rs, 0.6).is_some());
        let rs = vec![rec("r3", "convert Celsius to Fahrenheit")];
        assert!(dedup_check("implement a palindrome checker", &rs, 0.6).is_none());
        assert!(dedup_check("anything", &[], 0.6).is_none());
    }

    #[test]
    fn most_recent_match_wins_and_feedback_ignored() {
        let mut fb = rec("f", "build a calculator");
        fb.kind = RecordKind::Feedback;
        let rs = vec![rec("r1", "build a calculator"), rec("r2", "build a calculator"), fb];
        assert_eq!(dedup_check("Build a calculator", &rs, 0.6).unwrap().run_id, "r2");
    }
}
