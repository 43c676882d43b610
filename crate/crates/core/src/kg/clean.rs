//! String cleaning for dataset identifiers.

use crate::error::{Error, Result};

/// Collapses runs of whitespace to a single space and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn pos_word(pos: &str) -> Option<&'static str> {
    Some(match pos {
        "n" => "noun",
        "v" => "verb",
        "a" => "adjective",
        "s" => "adjective satellite",
        "r" => "adverb",
        _ => return None,
    })
}

/// Renders a WordNet synset name such as `hot_dog.n.02` as `hot dog noun 2`.
///
/// The name part may itself contain dots (`st._john.n.01`), so the synset is
/// split from the right.
pub fn clean_synset(raw: &str) -> Result<String> {
    let malformed = || Error::MalformedSynset(raw.to_string());
    let mut parts = raw.trim().rsplitn(3, '.');
    let number = parts.next().ok_or_else(malformed)?;
    let pos = parts.next().ok_or_else(malformed)?;
    let name = parts.next().ok_or_else(malformed)?;

    if number.is_empty() || !number.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let number: u64 = number.parse().map_err(|_| malformed())?;
    let pos = pos_word(pos).ok_or_else(malformed)?;
    let name = normalize_whitespace(&name.replace('_', " "));
    if name.is_empty() {
        return Err(malformed());
    }
    Ok(format!("{name} {pos} {number}"))
}

/// Cleans a relation identifier into plain words.
///
/// Underscores become spaces. Path-style identifiers (anything containing a
/// `/`) additionally have `/` and `.` separators replaced by spaces.
pub fn clean_relation(raw: &str) -> Result<String> {
    let mut s = raw.replace('_', " ");
    if s.contains('/') {
        s = s.replace(['/', '.'], " ");
    }
    let s = normalize_whitespace(&s);
    if s.is_empty() {
        return Err(Error::EmptyRelation(raw.to_string()));
    }
    Ok(s)
}
