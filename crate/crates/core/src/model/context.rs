use super::{Library, ModelError, TheoremStatement};

/// Prompt context: the seed, verified entries in sequence order, then extra
/// statements with `sorry` bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedContext {
    text: String,
    seed_end: usize,
    extras_start: usize,
    /// Sequence indices of the entries that made it into the context.
    pub included: Vec<usize>,
    /// Number of oldest entries dropped to fit the budget.
    pub dropped: usize,
    pub warning: Option<String>,
}

impl RenderedContext {
    /// Everything: seed, entries and extras.
    pub fn full(&self) -> &str {
        &self.text
    }

    /// Seed and entries, without extras.
    pub fn library_part(&self) -> &str {
        &self.text[..self.extras_start]
    }

    /// Entries and extras, without the seed. The verifier's base environment
    /// already holds the seed, so this is what each check submits.
    pub fn dynamic_part(&self) -> &str {
        &self.text[self.seed_end..]
    }

    /// Entries only.
    pub fn dynamic_library_part(&self) -> &str {
        &self.text[self.seed_end..self.extras_start]
    }
}

fn block(text: &str) -> String {
    format!("\n{}\n", text.trim_end())
}

/// Render `library` plus `extras` as prompt context within `budget`
/// characters, dropping the oldest entries first when it does not fit.
pub fn render_context(
    library: &Library,
    extras: &[TheoremStatement],
    budget: usize,
) -> Result<RenderedContext, ModelError> {
    let mut seed = library.seed_source().to_string();
    if !seed.ends_with('\n') {
        seed.push('\n');
    }
    let entry_blocks: Vec<String> = library
        .entries()
        .iter()
        .map(|e| block(&e.declaration()))
        .collect();
    let extras_text: String = extras.iter().map(|s| block(s.source_text())).collect();

    let chars = |s: &str| s.chars().count();
    let required = chars(&seed) + chars(&extras_text);
    if required > budget {
        return Err(ModelError::ContextUnconstructible { budget, required });
    }

    let entry_lens: Vec<usize> = entry_blocks.iter().map(|b| chars(b)).collect();
    let mut total = required + entry_lens.iter().sum::<usize>();
    let mut dropped = 0;
    while total > budget {
        total -= entry_lens[dropped];
        dropped += 1;
    }

    let mut text = seed;
    let seed_end = text.len();
    for b in &entry_blocks[dropped..] {
        text.push_str(b);
    }
    let extras_start = text.len();
    text.push_str(&extras_text);

    let warning = (dropped > 0).then(|| {
        format!(
            "context truncated: dropped {dropped} oldest of {} library entries to fit {budget} characters",
            entry_blocks.len()
        )
    });
    if let Some(w) = &warning {
        tracing::warn!("{w}");
    }

    Ok(RenderedContext {
        text,
        seed_end,
        extras_start,
        included: library.entries()[dropped..]
            .iter()
            .map(|e| e.sequence_index)
            .collect(),
        dropped,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProofScript, Provenance};
    use proptest::prelude::*;

    const SEED: &str = "import Mathlib\n";

    fn lib_with(n: usize) -> Library {
        let mut lib = Library::new(SEED);
        for i in 0..n {
            let s = TheoremStatement::from_signature(&format!("t{i}"), &format!(": {i} = {i}"))
                .unwrap();
            lib.append(
                s,
                ProofScript::new("rfl").unwrap(),
                Provenance::Fixture,
                "2025-01-01T00:00:00Z".parse().unwrap(),
            );
        }
        lib
    }

    #[test]
    fn empty_library_is_seed() {
        let r = render_context(&Library::new(SEED), &[], 1000).unwrap();
        assert_eq!(r.full(), SEED);
        assert_eq!(r.dynamic_part(), "");
        assert!(r.warning.is_none());
    }

    #[test]
    fn entries_then_extras_in_order() {
        let lib = lib_with(2);
        let extra = TheoremStatement::from_signature("c", ": 5 = 5").unwrap();
        let r = render_context(&lib, &[extra], 1000).unwrap();
        assert_eq!(
            r.full(),
            "import Mathlib\n\ntheorem t0 : 0 = 0 := rfl\n\ntheorem t1 : 1 = 1 := rfl\n\ntheorem c : 5 = 5 := sorry\n"
        );
        assert_eq!(
            r.library_part(),
            "import Mathlib\n\ntheorem t0 : 0 = 0 := rfl\n\ntheorem t1 : 1 = 1 := rfl\n"
        );
        assert_eq!(r.included, vec![0, 1]);
    }

    #[test]
    fn budget_too_small_is_an_error() {
        let extra = TheoremStatement::from_signature("c", ": 5 = 5").unwrap();
        let err = render_context(&Library::new(SEED), &[extra], 20).unwrap_err();
        assert!(matches!(err, ModelError::ContextUnconstructible { .. }));
    }

    #[test]
    fn truncation_drops_oldest_first() {
        // seed: 15 chars; each entry block "\ntheorem tN : N = N := rfl\n": 27 chars.
        let lib = lib_with(3);
        let r = render_context(&lib, &[], 15 + 27 * 2).unwrap();
        assert_eq!(r.dropped, 1);
        assert_eq!(r.included, vec![1, 2]);
        assert!(r.full().starts_with(SEED));
        assert!(!r.full().contains("t0"));
        assert!(r.warning.is_some());
        let r = render_context(&lib, &[], 15 + 27 * 2 - 1).unwrap();
        assert_eq!(r.included, vec![2]);
    }

    proptest! {
        #[test]
        fn always_starts_with_seed_and_keeps_order(n in 0usize..8, budget in 15usize..400) {
            let lib = lib_with(n);
            let r = render_context(&lib, &[], budget).unwrap();
            prop_assert!(r.full().starts_with(SEED));
            prop_assert!(r.full().chars().count() <= budget);
            prop_assert!(r.included.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(r.included.len() + r.dropped, n);
        }
    }
}
