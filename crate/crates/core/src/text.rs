use alloc::string::String;

/// Number of Unicode scalar values in `s`.
pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Prefix of `s` holding at most `max` chars.
pub(crate) fn take_chars(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// Truncates to `max` chars, marking the cut with a trailing `…` that is
/// counted inside the limit.
pub(crate) fn truncate_marked(s: &str, max: usize) -> String {
    if char_len(s) <= max {
        return String::from(s);
    }
    if max == 0 {
        return String::new();
    }
    let mut out = String::from(take_chars(s, max - 1));
    out.push('…');
    out
}
