//! Brace-matching scanner for C-family and similar languages.

use super::{is_blank, BlockKind, LineRange, Structural};

const CLASS_WORDS: &[&str] =
    &["class", "struct", "interface", "enum", "trait", "impl", "union", "namespace", "object", "record", "mod"];
const FUNCTION_WORDS: &[&str] = &["fn", "func", "function", "def", "fun"];
const CONTROL_WORDS: &[&str] =
    &["if", "else", "for", "foreach", "while", "do", "switch", "try", "catch", "finally", "return", "with", "match"];

/// R uses `#` for comments; everything else here treats it as a preprocessor
/// or attribute marker.
pub(super) fn hash_comments(rel_path: &str) -> bool {
    rel_path.rsplit('.').next().is_some_and(|e| e.eq_ignore_ascii_case("r"))
}

/// Per line: brace depth at line start, code text with comments and string
/// contents removed, and whether the line opens a brace at depth 0.
struct Scanned {
    depth_before: Vec<usize>,
    depth_after: Vec<usize>,
    code: Vec<String>,
}

fn strip_and_count(lines: &[&str], hash_comments: bool) -> Scanned {
    let mut depth_before = Vec::with_capacity(lines.len());
    let mut depth_after = Vec::with_capacity(lines.len());
    let mut code = Vec::with_capacity(lines.len());
    let mut depth = 0usize;
    let mut in_block_comment = false;
    let mut in_template = false;
    for line in lines {
        depth_before.push(depth);
        let chars: Vec<char> = line.chars().collect();
        let mut kept = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let next = chars.get(i + 1).copied();
            if in_block_comment {
                if c == '*' && next == Some('/') {
                    in_block_comment = false;
                    i += 2;
                } else {
                    i += 1;
                }
                continue;
            }
            if in_template {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                if c == '`' {
                    in_template = false;
                    kept.push('`');
                }
                i += 1;
                continue;
            }
            match c {
                '/' if next == Some('/') => break,
                '/' if next == Some('*') => {
                    in_block_comment = true;
                    i += 2;
                    continue;
                }
                '#' if hash_comments => break,
                '"' => {
                    kept.push('"');
                    i += 1;
                    while i < chars.len() && chars[i] != '"' {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    kept.push('"');
                }
                '`' => {
                    kept.push('`');
                    in_template = true;
                }
                '\'' => {
                    // char literal only when it closes within a few chars; otherwise
                    // it is a lifetime, apostrophe or similar
                    let close = if next == Some('\\') { 3 } else { 2 };
                    if chars.get(i + close) == Some(&'\'') {
                        kept.push_str("' '");
                        i += close;
                    } else {
                        kept.push('\'');
                    }
                }
                '{' => {
                    depth += 1;
                    kept.push(c);
                }
                '}' => {
                    depth = depth.saturating_sub(1);
                    kept.push(c);
                }
                _ => kept.push(c),
            }
            i += 1;
        }
        depth_after.push(depth);
        code.push(kept);
    }
    Scanned { depth_before, depth_after, code }
}

fn words(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|w| !w.is_empty()).collect()
}

/// Classifies the text before a depth-0 `{`.
fn classify(header: &str) -> Option<BlockKind> {
    let header = header.trim();
    let ws = words(header);
    let first = *ws.first()?;
    if CONTROL_WORDS.contains(&first) {
        return None;
    }
    if ws.iter().any(|w| FUNCTION_WORDS.contains(w)) || header.contains("=>") {
        return Some(BlockKind::Function);
    }
    if ws.iter().any(|w| CLASS_WORDS.contains(w)) {
        return Some(BlockKind::Class);
    }
    // `type name(args) qualifiers {` with no assignment in front of the call
    let paren = header.find('(')?;
    let before = &header[..paren];
    if !before.contains('=') && words(before).last().is_some_and(|w| !CONTROL_WORDS.contains(w)) && header.contains(')')
    {
        return Some(BlockKind::Function);
    }
    None
}

fn is_comment_or_directive(trimmed: &str, hash_comments: bool) -> bool {
    trimmed.starts_with("//")
        || trimmed.starts_with("/*")
        || trimmed.starts_with('*')
        || (trimmed.starts_with('#') && (hash_comments || !trimmed.starts_with("#[")))
}

/// Top-level brace-delimited definitions. A span starts at the first line of
/// the definition's signature (including attribute/decorator lines directly
/// above it) and ends on the line where the depth returns to zero.
pub(super) fn scan(lines: &[&str], hash_comments: bool) -> Vec<Structural> {
    let s = strip_and_count(lines, hash_comments);
    let mut out = Vec::new();
    let mut floor = 0; // first line not claimed by an earlier span
    let mut i = 0;
    while i < lines.len() {
        let opens = s.depth_before[i] == 0 && s.code[i].contains('{');
        if !opens {
            i += 1;
            continue;
        }
        // where the depth returns to zero
        let end = if s.depth_after[i] == 0 { Some(i) } else { (i + 1..lines.len()).find(|&k| s.depth_after[k] == 0) };
        let Some(end) = end else { break };

        let mut start = i;
        while start > floor {
            let prev = start - 1;
            let trimmed = lines[prev].trim();
            if is_blank(lines[prev]) || s.depth_before[prev] != 0 {
                break;
            }
            let is_attr = trimmed.starts_with('@') || trimmed.starts_with("#[");
            let code = s.code[prev].trim_end();
            if !is_attr
                && (is_comment_or_directive(trimmed, hash_comments)
                    || code.ends_with(';')
                    || code.ends_with('}')
                    || code.ends_with('{'))
            {
                break;
            }
            start = prev;
        }
        // a comment directly above documents the definition
        while start > floor {
            let prev = start - 1;
            if is_blank(lines[prev]) || s.depth_before[prev] != 0 || !s.code[prev].trim().is_empty() {
                break;
            }
            start = prev;
        }
        let header: String = (start..=i)
            .map(|k| {
                let t = s.code[k].trim();
                if t.starts_with('@') || t.starts_with("#[") {
                    ""
                } else {
                    t
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        let header = header.split('{').next().unwrap_or("");
        match classify(header) {
            Some(kind) => {
                out.push(Structural { kind, range: LineRange { start: start + 1, end: end + 1 } });
                floor = end + 1;
                i = end + 1;
            }
            None => i = end + 1,
        }
    }
    out
}
