//! Indentation-based scanner for top-level `def`/`class` definitions.

use super::{is_blank, BlockKind, LineRange, Structural};

/// For each line, whether it begins inside an unfinished construct
/// (triple-quoted string, open bracket, backslash continuation).
fn continuation_flags(lines: &[&str]) -> Vec<bool> {
    let mut flags = Vec::with_capacity(lines.len());
    let mut triple: Option<char> = None;
    let mut depth: i64 = 0;
    let mut backslash = false;
    for line in lines {
        flags.push(triple.is_some() || depth > 0 || backslash);
        backslash = false;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if let Some(q) = triple {
                if c == '\\' {
                    i += 2;
                    continue;
                }
                if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                    triple = None;
                    i += 3;
                    continue;
                }
                i += 1;
                continue;
            }
            match c {
                '#' => break,
                '"' | '\'' => {
                    if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                        triple = Some(c);
                        i += 3;
                        continue;
                    }
                    // single-line string; an unterminated one ends at the line end
                    i += 1;
                    while i < chars.len() && chars[i] != c {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                }
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth = (depth - 1).max(0),
                '\\' if i + 1 == chars.len() => backslash = true,
                _ => {}
            }
            i += 1;
        }
    }
    flags
}

fn definition_kind(line: &str) -> Option<BlockKind> {
    let rest = line.strip_prefix("async").filter(|r| r.starts_with(char::is_whitespace)).map_or(line, str::trim_start);
    if rest.strip_prefix("def").is_some_and(|r| r.starts_with(char::is_whitespace)) {
        Some(BlockKind::Function)
    } else if line.strip_prefix("class").is_some_and(|r| r.starts_with([' ', '\t', ':', '('])) {
        Some(BlockKind::Class)
    } else {
        None
    }
}

/// Top-level class and function spans. A span runs from the first decorator
/// through the last non-blank line of the indented body.
pub(super) fn scan(lines: &[&str]) -> Vec<Structural> {
    let cont = continuation_flags(lines);
    let top = |i: usize| !cont[i] && !is_blank(lines[i]) && !lines[i].starts_with([' ', '\t']);
    let col0_comment = |i: usize| top(i) && lines[i].starts_with('#');

    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !top(i) {
            i += 1;
            continue;
        }
        let start = i;
        let mut j = i;
        // decorators, possibly with multi-line arguments
        while j < lines.len() && top(j) && lines[j].starts_with('@') {
            j += 1;
            while j < lines.len() && (cont[j] || is_blank(lines[j])) {
                j += 1;
            }
        }
        let Some(kind) = (j < lines.len() && top(j)).then(|| definition_kind(lines[j])).flatten() else {
            i = j.max(i + 1);
            continue;
        };
        let mut k = j + 1;
        let mut last = j;
        while k < lines.len() {
            if is_blank(lines[k]) {
                k += 1;
                continue;
            }
            if col0_comment(k) {
                // a column-0 comment stays in the body only if the body resumes after it
                let resumes =
                    (k + 1..lines.len()).find(|&n| !is_blank(lines[n]) && !col0_comment(n)).is_some_and(|n| !top(n));
                if !resumes {
                    break;
                }
            } else if top(k) {
                break;
            }
            last = k;
            k += 1;
        }
        out.push(Structural { kind, range: LineRange { start: start + 1, end: last + 1 } });
        i = last + 1;
    }
    out
}
