use super::concept::MAX_CONCEPT_CHARS;
use crate::error::{Error, Result};

/// `{class}` is replaced by the trimmed class name.
pub const PROMPT_TEMPLATE: &str =
    "What are useful features for distinguishing a {class} in an image? Please give me a list of short phrases.";

pub fn build_prompt(class_name: &str) -> Result<String> {
    let class_name = class_name.trim();
    if class_name.is_empty() {
        return Err(Error::EmptyClassName);
    }
    Ok(PROMPT_TEMPLATE.replace("{class}", class_name))
}

/// Strips a leading list marker (`-`, `*`, `•`, `N.`, `N)`), returning the
/// remainder when one was present.
fn strip_marker(line: &str) -> Option<&str> {
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return Some(rest.trim());
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            return Some(rest.trim());
        }
    }
    None
}

fn clean(item: &str) -> String {
    let mut s = item.trim();
    for wrap in ["**", "\"", "'", "`"] {
        if s.len() >= 2 * wrap.len() && s.starts_with(wrap) && s.ends_with(wrap) {
            s = s[wrap.len()..s.len() - wrap.len()].trim();
        }
    }
    if s.chars().count() > MAX_CONCEPT_CHARS {
        let cut: String = s.chars().take(MAX_CONCEPT_CHARS).collect();
        return cut.trim_end().to_string();
    }
    s.to_string()
}

/// Splits an LLM reply into list items.
///
/// When any line carries a list marker only marked lines count, which drops
/// preambles like "Here are some features:". Otherwise every non-empty
/// line is an item, except a lone line longer than a concept may be, which
/// is prose rather than a list.
pub fn parse_reply(raw: &str) -> Vec<String> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let marked: Vec<&str> = lines.iter().filter_map(|l| strip_marker(l)).collect();
    let items: Vec<&str> = if !marked.is_empty() {
        marked
    } else if lines.len() == 1 && lines[0].chars().count() > MAX_CONCEPT_CHARS {
        Vec::new()
    } else {
        lines.into_iter().filter(|l| !l.ends_with(':')).collect()
    };
    items.into_iter().map(clean).filter(|s| !s.is_empty()).collect()
}
