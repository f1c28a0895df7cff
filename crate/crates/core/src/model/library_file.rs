//! On-disk library format: a single Lean file holding the seed verbatim,
//! then one block per entry preceded by a machine-readable marker comment.
//!
//! ```text
//! <seed>
//!
//! -- [cpl:entry 0 cpl 2025-01-01T00:00:00Z]
//! theorem foo ... := by
//!   ...
//! ```

use chrono::{DateTime, SecondsFormat, Utc};

use super::{parse_full_declaration, Library, LibraryEntry, ModelError, ProofScript, Provenance};

pub const ENTRY_MARKER_PREFIX: &str = "-- [cpl:entry ";

fn marker(entry: &LibraryEntry) -> String {
    format!(
        "{ENTRY_MARKER_PREFIX}{} {} {}]",
        entry.sequence_index,
        entry.provenance.as_str(),
        entry
            .created_at
            .to_rfc3339_opts(SecondsFormat::AutoSi, true)
    )
}

pub fn render_library_file(library: &Library) -> String {
    let mut out = library.seed_source().to_string();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    for entry in library.entries() {
        out.push('\n');
        out.push_str(&marker(entry));
        out.push('\n');
        out.push_str(entry.declaration().trim_end());
        out.push('\n');
    }
    out
}

fn parse_marker(line: &str) -> Result<(usize, Provenance, DateTime<Utc>), ModelError> {
    let bad = || ModelError::MalformedLibraryFile(format!("bad entry marker `{line}`"));
    let inner = line
        .trim_end()
        .strip_prefix(ENTRY_MARKER_PREFIX)
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(bad)?;
    let mut parts = inner.split(' ');
    let index = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let provenance = parts.next().and_then(Provenance::parse).ok_or_else(bad)?;
    let created_at = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((index, provenance, created_at))
}

/// Parse a file produced by [`render_library_file`].
pub fn parse_library_file(text: &str) -> Result<Library, ModelError> {
    let mut offsets = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.starts_with(ENTRY_MARKER_PREFIX) {
            offsets.push(offset);
        }
        offset += line.len();
    }

    let seed_end = offsets.first().copied().unwrap_or(text.len());
    let seed = if offsets.is_empty() {
        text
    } else {
        text[..seed_end]
            .strip_suffix('\n')
            .unwrap_or(&text[..seed_end])
    };
    let mut library = Library::new(seed);

    for (i, &start) in offsets.iter().enumerate() {
        let end = offsets.get(i + 1).copied().unwrap_or(text.len());
        let block = &text[start..end];
        let (marker_line, decl) = block.split_once('\n').unwrap_or((block, ""));
        let (index, provenance, created_at) = parse_marker(marker_line)?;
        let (statement, proof) = parse_full_declaration(decl)
            .map_err(|e| ModelError::MalformedLibraryFile(format!("entry {index}: {e}")))?;
        let proof = ProofScript::new(proof)
            .map_err(|e| ModelError::MalformedLibraryFile(format!("entry {index}: {e}")))?;
        library.push_entry(LibraryEntry {
            statement,
            proof,
            sequence_index: index,
            provenance,
            created_at,
        })?;
    }
    Ok(library)
}
