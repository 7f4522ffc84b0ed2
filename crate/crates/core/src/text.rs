//! Small text utilities shared across stages.

use std::collections::BTreeSet;

/// Token estimate used for every budget decision: `ceil(chars / 4)`.
///
/// Vendor tokenizers differ, so budgets elsewhere keep a safety margin.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Lowercased alphanumeric tokens, in order of appearance (with repeats).
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

/// Jaccard overlap of two token sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Collapses whitespace runs into one space, trims, and lowercases.
///
/// Also returns, for every char of the normalized string, the char offset in
/// `text` it came from; a trailing sentinel holds the end offset of the last
/// consumed char so that spans can be mapped back.
pub fn normalize_with_map(text: &str) -> (String, Vec<usize>) {
    let mut out = String::new();
    let mut map = Vec::new();
    let mut pending_space: Option<usize> = None;
    let mut last_end = 0;
    for (idx, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            if !out.is_empty() && pending_space.is_none() {
                pending_space = Some(idx);
            }
            continue;
        }
        if let Some(at) = pending_space.take() {
            out.push(' ');
            map.push(at);
        }
        for lower in ch.to_lowercase() {
            out.push(lower);
            map.push(idx);
        }
        last_end = idx + 1;
    }
    map.push(last_end);
    (out, map)
}

pub fn normalize(text: &str) -> String {
    normalize_with_map(text).0
}

/// Cuts `text` to at most `max_chars` characters, marking the cut with `…`.
pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    if max_chars == 0 {
        return String::new();
    }
    let mut out: String = text.chars().take(max_chars - 1).collect();
    out.push('…');
    out
}

/// Substring by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// First sentence of `text`: up to and including the first `.`, `!` or `?`
/// that is followed by whitespace or the end, with whitespace collapsed.
pub fn first_sentence(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let chars: Vec<char> = flat.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            return chars[..=i].iter().collect();
        }
    }
    flat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcdefghij"), 3);
        assert_eq!(estimate_tokens("é"), 1);
    }

    #[test]
    fn hyphenated_names_share_tokens() {
        assert_eq!(token_set("trace link map"), token_set("Trace-link map"));
    }

    #[test]
    fn jaccard_of_empty_sets_is_zero() {
        assert_eq!(jaccard(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn normalization_maps_back() {
        let text = "  Mean\n\tFiring   RATE ";
        let (norm, map) = normalize_with_map(text);
        assert_eq!(norm, "mean firing rate");
        assert_eq!(map.len(), norm.chars().count() + 1);
        // "firing" starts at char 8 of the original
        assert_eq!(map[5], 8);
        assert_eq!(*map.last().unwrap(), 21);
    }

    #[test]
    fn first_sentence_stops_at_terminator() {
        assert_eq!(first_sentence("We bin spikes.\nThen we  count."), "We bin spikes.");
        assert_eq!(first_sentence("v1.2 is used"), "v1.2 is used");
    }

    #[test]
    fn truncation_marks_cut() {
        assert_eq!(truncate_chars("abcdef", 4), "abc…");
        assert_eq!(truncate_chars("abc", 4), "abc");
    }

    proptest::proptest! {
        #[test]
        fn estimate_is_subadditive(a in ".{0,40}", b in ".{0,40}") {
            let joined = format!("{a}{b}");
            proptest::prop_assert!(estimate_tokens(&a) + estimate_tokens(&b) + 1 >= estimate_tokens(&joined));
        }
    }
}
