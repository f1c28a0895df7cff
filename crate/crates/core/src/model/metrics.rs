use serde::{Deserialize, Serialize};

use super::lexer::{classify, CharClass};
use super::ProofScript;

/// Unit in which proof length is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMetric {
    /// Lines that are neither blank nor comment-only.
    #[default]
    Lines,
    /// Non-whitespace characters outside comments.
    Chars,
}

impl LengthMetric {
    pub fn label(self) -> &'static str {
        match self {
            LengthMetric::Lines => "non-blank non-comment lines",
            LengthMetric::Chars => "non-whitespace non-comment characters",
        }
    }
}

/// Length of a proof under the given metric. Blank lines and comments never
/// contribute.
pub fn proof_length(proof: &ProofScript, metric: LengthMetric) -> usize {
    let classified = classify(proof.text());
    match metric {
        LengthMetric::Chars => classified
            .iter()
            .filter(|(c, class)| *class != CharClass::Comment && !c.is_whitespace())
            .count(),
        LengthMetric::Lines => {
            let mut count = 0;
            let mut line_has_code = false;
            for (c, class) in classified {
                if c == '\n' {
                    count += usize::from(line_has_code);
                    line_has_code = false;
                } else if class != CharClass::Comment && !c.is_whitespace() {
                    line_has_code = true;
                }
            }
            count + usize::from(line_has_code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lines(s: &str) -> usize {
        proof_length(&ProofScript::new(s).unwrap(), LengthMetric::Lines)
    }

    #[test]
    fn counts_code_lines() {
        assert_eq!(lines("by\n  intro x\n  exact h"), 3);
        assert_eq!(lines("by\n  -- comment\n\n  trivial"), 2);
        assert_eq!(lines("by\n  /- a\n  block -/\n  rfl"), 2);
        assert_eq!(lines("by simp -- trailing comment"), 1);
        assert_eq!(lines("rfl"), 1);
    }

    #[test]
    fn counts_chars() {
        let p = ProofScript::new("by\n  -- c\n  rfl").unwrap();
        assert_eq!(proof_length(&p, LengthMetric::Chars), 5);
    }

    proptest! {
        #[test]
        fn invariant_under_blank_and_comment_lines(
            extra in prop::collection::vec(prop_oneof![
                Just("\n".to_string()),
                Just("\n   ".to_string()),
                "\n  -- [a-z ]{0,12}",
                "\n/- [a-z ]{0,12} -/",
            ], 0..8)
        ) {
            let base = "by\n  intro x\n  exact h";
            let p = ProofScript::new(base).unwrap();
            let q = ProofScript::new(format!("{base}{}", extra.concat())).unwrap();
            prop_assert_eq!(proof_length(&p, LengthMetric::Lines), proof_length(&q, LengthMetric::Lines));
            prop_assert_eq!(proof_length(&p, LengthMetric::Chars), proof_length(&q, LengthMetric::Chars));
        }
    }
}
