//! Minimal Lean 4 lexical scanning: comments, string literals and bracket depth.
//!
//! This is not a parser. It only knows enough to tell code apart from
//! comments and strings, which is what proof metrics, the `sorry` ban and
//! declaration splitting need.

/// Classification of a single source character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CharClass {
    Code,
    Comment,
    Str,
}

/// Classify every character of `text` as code, comment or string literal.
///
/// Handles `--` line comments, nested `/- ... -/` block comments (including
/// doc comments) and `"..."` strings with backslash escapes.
pub(crate) fn classify(text: &str) -> Vec<(char, CharClass)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::with_capacity(chars.len());
    let mut i = 0;
    let mut block_depth = 0usize;
    let mut in_line_comment = false;
    let mut in_string = false;

    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();

        if in_line_comment {
            if c == '\n' {
                in_line_comment = false;
                out.push((c, CharClass::Code));
            } else {
                out.push((c, CharClass::Comment));
            }
            i += 1;
            continue;
        }

        if block_depth > 0 {
            if c == '/' && next == Some('-') {
                block_depth += 1;
                out.push((c, CharClass::Comment));
                out.push(('-', CharClass::Comment));
                i += 2;
            } else if c == '-' && next == Some('/') {
                block_depth -= 1;
                out.push((c, CharClass::Comment));
                out.push(('/', CharClass::Comment));
                i += 2;
            } else {
                out.push((c, CharClass::Comment));
                i += 1;
            }
            continue;
        }

        if in_string {
            out.push((c, CharClass::Str));
            if c == '\\' {
                if let Some(n) = next {
                    out.push((n, CharClass::Str));
                    i += 2;
                    continue;
                }
            } else if c == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }

        match (c, next) {
            ('-', Some('-')) => {
                in_line_comment = true;
                out.push((c, CharClass::Comment));
                out.push(('-', CharClass::Comment));
                i += 2;
            }
            ('/', Some('-')) => {
                block_depth = 1;
                out.push((c, CharClass::Comment));
                out.push(('-', CharClass::Comment));
                i += 2;
            }
            ('"', _) => {
                in_string = true;
                out.push((c, CharClass::Str));
                i += 1;
            }
            _ => {
                out.push((c, CharClass::Code));
                i += 1;
            }
        }
    }
    out
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric()
        || c == '_'
        || c == '\''
        || c == '.'
        || c == '!'
        || c == '?'
        || ('\u{2080}'..='\u{209c}').contains(&c)
}

/// True if `word` occurs as a standalone identifier in the code portion of `text`.
pub(crate) fn contains_code_token(text: &str, word: &str) -> bool {
    let classified = classify(text);
    let word: Vec<char> = word.chars().collect();
    let n = classified.len();
    let m = word.len();
    if m == 0 || n < m {
        return false;
    }
    for start in 0..=(n - m) {
        let matches = (0..m).all(|k| {
            let (c, class) = classified[start + k];
            class == CharClass::Code && c == word[k]
        });
        if !matches {
            continue;
        }
        let before_ok = start == 0 || !is_ident_char(classified[start - 1].0);
        let after_ok = start + m == n || {
            let c = classified[start + m].0;
            !(c.is_alphanumeric() || c == '_' || c == '\'')
        };
        if before_ok && after_ok {
            return true;
        }
    }
    false
}

/// Byte offset of the first `:=` in code at bracket depth zero.
pub(crate) fn find_top_level_assign(text: &str) -> Option<usize> {
    let classified = classify(text);
    let mut depth: i64 = 0;
    let mut byte = 0usize;
    for (idx, &(c, class)) in classified.iter().enumerate() {
        if class == CharClass::Code {
            match c {
                '(' | '[' | '{' | '⦃' | '⟨' => depth += 1,
                ')' | ']' | '}' | '⦄' | '⟩' => depth -= 1,
                ':' if depth <= 0 => {
                    if let Some(&('=', CharClass::Code)) = classified.get(idx + 1) {
                        return Some(byte);
                    }
                }
                _ => {}
            }
        }
        byte += c.len_utf8();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_block_comments() {
        let text = "a /- b /- c -/ d -/ e";
        let code: String = classify(text)
            .into_iter()
            .filter(|(_, k)| *k == CharClass::Code)
            .map(|(c, _)| c)
            .collect();
        assert_eq!(code, "a  e");
    }

    #[test]
    fn token_detection_respects_comments_and_strings() {
        assert!(contains_code_token("by sorry", "sorry"));
        assert!(contains_code_token("by\n  exact (sorry)", "sorry"));
        assert!(!contains_code_token("by\n  -- sorry\n  rfl", "sorry"));
        assert!(!contains_code_token("by /- sorry -/ rfl", "sorry"));
        assert!(!contains_code_token("by exact \"sorry\"", "sorry"));
        assert!(!contains_code_token("by exact sorryAx _", "sorry"));
        assert!(!contains_code_token("by exact Foo.sorry", "sorry"));
        assert!(!contains_code_token("by exact h_sorry", "sorry"));
    }

    #[test]
    fn top_level_assign_skips_brackets() {
        let s = "theorem a (h : let y := 1; y = 1) : True := sorry";
        let at = find_top_level_assign(s).unwrap();
        assert_eq!(&s[at..], ":= sorry");
        assert_eq!(find_top_level_assign("theorem a : True"), None);
    }
}
