//! Case-insensitive matching helpers shared by redaction and leak scans.

use std::ops::Range;

/// Lowercases `s` char by char and records, for every byte of the lowered
/// string, the byte offset of the source char it came from.
fn lowered_with_map(s: &str) -> (String, Vec<usize>) {
    let mut lowered = String::with_capacity(s.len());
    let mut map = Vec::with_capacity(s.len() + 1);
    for (i, c) in s.char_indices() {
        for lc in c.to_lowercase() {
            let before = lowered.len();
            lowered.push(lc);
            map.extend(std::iter::repeat_n(i, lowered.len() - before));
        }
    }
    map.push(s.len());
    (lowered, map)
}

/// Non-overlapping, left-to-right, case-insensitive matches of `needle` in
/// `haystack`, as byte ranges of `haystack`.
///
/// A match is only reported when both of its ends fall on source char
/// boundaries (a lowercase expansion is never split).
pub fn find_ci(haystack: &str, needle: &str) -> Vec<Range<usize>> {
    let needle = needle.to_lowercase();
    if needle.is_empty() {
        return Vec::new();
    }
    let (lowered, map) = lowered_with_map(haystack);
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = lowered[from..].find(&needle) {
        let start = from + i;
        let end = start + needle.len();
        let aligned_start = start == 0 || map[start] != map[start - 1];
        let aligned_end = end == lowered.len() || map[end] != map[end - 1];
        if aligned_start && aligned_end {
            out.push(map[start]..map[end]);
            from = end;
        } else {
            from = start + lowered[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    out
}

pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    !find_ci(haystack, needle).is_empty()
}
