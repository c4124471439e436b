use crate::script::PlanScript;

/// Length of the longest common subsequence. Runs in O(|a|·|b|) time with a
/// single row of memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Rouge-L F1 between a candidate and a reference token sequence.
///
/// Two empty sequences score 1; an empty sequence against a nonempty one
/// scores 0.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Printed tokens of a script: `[VERB]`, `<name>`, `(id)`.
pub fn script_tokens(plan: &PlanScript) -> Vec<String> {
    plan.tokens()
}

/// Whitespace tokens of free text.
pub fn text_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn rouge_l_scripts(candidate: &PlanScript, reference: &PlanScript) -> f64 {
    rouge_l(&script_tokens(candidate), &script_tokens(reference))
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> f64 {
    rouge_l(&text_tokens(candidate), &text_tokens(reference))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_script;

    #[test]
    fn known_values() {
        assert!((rouge_l_text("a b c", "a c") - 0.8).abs() < 1e-15);
        assert_eq!(rouge_l_text("a b", "a b"), 1.0);
        assert_eq!(rouge_l_text("a b", "c d"), 0.0);
        assert_eq!(rouge_l_text("", ""), 1.0);
        assert_eq!(rouge_l_text("", "a"), 0.0);
        assert_eq!(rouge_l_text("a", ""), 0.0);
    }

    #[test]
    fn scripts_tokenize_per_printed_token() {
        let a = parse_script("[GRAB] <cup> (3)").unwrap();
        let b = parse_script("[GRAB] <cup> (4)").unwrap();
        // 2 of 3 tokens shared
        assert!((rouge_l_scripts(&a, &b) - 2.0 / 3.0).abs() < 1e-15);
    }
}
