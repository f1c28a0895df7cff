use std::collections::HashSet;

use super::lexer::find_top_level_assign;
use super::{ModelError, TheoremStatement};

/// Text with Markdown code-fence delimiters removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FenceStripped {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Statements extracted from free-form model output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedDeclarations {
    pub statements: Vec<TheoremStatement>,
    /// One warning per skipped declaration, plus fence warnings.
    pub warnings: Vec<String>,
    /// Number of `theorem` declarations that were found but skipped.
    pub skipped: usize,
}

fn fence_info(line: &str) -> Option<&str> {
    let t = line.trim_start();
    t.strip_prefix("```")
        .or_else(|| t.strip_prefix("~~~"))
        .map(|rest| rest.trim_start_matches(['`', '~']).trim())
}

/// Remove Markdown fence delimiter lines, keeping everything else verbatim.
pub fn strip_code_fences(text: &str) -> FenceStripped {
    let mut out = String::with_capacity(text.len());
    let mut warnings = Vec::new();
    let mut open_at: Option<usize> = None;

    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        match fence_info(line) {
            None => out.push_str(line),
            Some(info) => match open_at {
                None => open_at = Some(lineno + 1),
                Some(_) if info.is_empty() => open_at = None,
                Some(opened) => warnings.push(format!(
                    "fence opened at line {} while fence from line {opened} is still open",
                    lineno + 1
                )),
            },
        }
    }
    if let Some(opened) = open_at {
        warnings.push(format!("unterminated code fence opened at line {opened}"));
    }
    FenceStripped {
        text: out,
        warnings,
    }
}

/// Canonical key of a statement: its body with whitespace runs collapsed.
/// The theorem name does not participate.
pub fn normalize_statement(stmt: &TheoremStatement) -> String {
    stmt.body().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn starts_declaration(line: &str, keyword: &str) -> bool {
    line.trim_start()
        .strip_prefix(keyword)
        .is_some_and(|rest| rest.starts_with(char::is_whitespace))
}

/// Split `theorem <name> <rest>` into name and rest.
fn split_name<'a>(decl: &'a str, keyword: &str) -> Option<(&'a str, &'a str)> {
    let after = decl.trim_start().strip_prefix(keyword)?.trim_start();
    let end = after
        .find(|c: char| c.is_whitespace() || matches!(c, ':' | '(' | '{' | '[' | '⦃'))
        .unwrap_or(after.len());
    let name = &after[..end];
    (!name.is_empty()).then_some((name, &after[end..]))
}

/// Byte ranges of `theorem` declarations: each runs from its first line to
/// the start of the next declaration (or end of text).
fn declaration_segments(text: &str) -> Vec<&str> {
    let mut starts = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if starts_declaration(line, "theorem") {
            starts.push(offset + (line.len() - line.trim_start().len()));
        }
        offset += line.len();
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(text.len());
            &text[s..end]
        })
        .collect()
}

fn has_blank_line(s: &str) -> bool {
    s.trim_end().lines().any(|l| l.trim().is_empty())
}

/// Extract every `theorem ... := sorry` declaration from model output.
///
/// Code fences are stripped first. Prose is ignored. Declarations without a
/// `:= sorry` ending are skipped with a warning rather than failing the
/// whole response.
pub fn parse_theorem_declarations(text: &str) -> ParsedDeclarations {
    let stripped = strip_code_fences(text);
    let mut parsed = ParsedDeclarations {
        warnings: stripped.warnings,
        ..Default::default()
    };

    for segment in declaration_segments(&stripped.text) {
        let first_line = segment.lines().next().unwrap_or("").trim();
        let skip = |parsed: &mut ParsedDeclarations, why: &str| {
            parsed.skipped += 1;
            parsed
                .warnings
                .push(format!("skipped declaration `{first_line}`: {why}"));
        };

        let Some(assign) = find_top_level_assign(segment) else {
            skip(&mut parsed, "no `:=` found");
            continue;
        };
        let head = &segment[..assign];
        if has_blank_line(head) {
            skip(&mut parsed, "declaration interrupted by a blank line");
            continue;
        }
        let after = segment[assign + 2..].trim_start();
        let ends_in_sorry = after.strip_prefix("sorry").is_some_and(|rest| {
            !rest.starts_with(|c: char| c.is_alphanumeric() || c == '_' || c == '\'')
        });
        if !ends_in_sorry {
            skip(&mut parsed, "does not end with `:= sorry`");
            continue;
        }
        let Some((name, signature)) = split_name(head, "theorem") else {
            skip(&mut parsed, "missing theorem name");
            continue;
        };
        match build_statement(name, signature, head) {
            Ok(stmt) => parsed.statements.push(stmt),
            Err(e) => skip(&mut parsed, &e.to_string()),
        }
    }
    parsed
}

/// Keeps the original layout of the declaration head in `source_text`.
fn build_statement(
    name: &str,
    signature: &str,
    head: &str,
) -> Result<TheoremStatement, ModelError> {
    let canonical = TheoremStatement::from_signature(name, signature)?;
    let verbatim = format!("{} := sorry", head.trim());
    Ok(TheoremStatement {
        source_text: verbatim,
        ..canonical
    })
}

/// Parse a complete `theorem <name> <signature> := <proof>` declaration,
/// as produced by a single-call generator. Returns the statement and the
/// raw proof text.
pub fn parse_full_declaration(text: &str) -> Result<(TheoremStatement, String), ModelError> {
    let stripped = strip_code_fences(text).text;
    let segment = declaration_segments(&stripped)
        .into_iter()
        .next()
        .ok_or_else(|| ModelError::MalformedDeclaration("no `theorem` declaration found".into()))?;
    let assign = find_top_level_assign(segment)
        .ok_or_else(|| ModelError::MalformedDeclaration("no `:=` found".into()))?;
    let head = &segment[..assign];
    let (name, signature) = split_name(head, "theorem")
        .ok_or_else(|| ModelError::MalformedDeclaration("missing theorem name".into()))?;
    let stmt = build_statement(name, signature, head)?;
    let proof = segment[assign + 2..].trim_end();
    let proof = proof.strip_prefix(' ').unwrap_or(proof);
    Ok((stmt, proof.to_string()))
}

/// Every `theorem` declaration in `text`, whatever its proof, as a
/// statement. Used to find what a Lean context already declares.
pub fn scan_theorem_statements(text: &str) -> Vec<TheoremStatement> {
    declaration_segments(text)
        .into_iter()
        .filter_map(|segment| {
            let assign = find_top_level_assign(segment)?;
            let head = &segment[..assign];
            let (name, signature) = split_name(head, "theorem")?;
            build_statement(name, signature, head).ok()
        })
        .collect()
}

/// Names introduced by top-level declarations in a Lean source file.
pub fn declared_names(text: &str) -> HashSet<String> {
    const KEYWORDS: [&str; 7] = [
        "theorem",
        "lemma",
        "def",
        "abbrev",
        "instance",
        "structure",
        "inductive",
    ];
    let mut names = HashSet::new();
    for line in text.lines() {
        for kw in KEYWORDS {
            if starts_declaration(line, kw) {
                if let Some((name, _)) = split_name(line, kw) {
                    names.insert(name.to_string());
                }
            }
        }
    }
    names
}
