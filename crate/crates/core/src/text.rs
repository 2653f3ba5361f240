//! Small text helpers used by the pseudo-audio generator, the encoder
//! front-end, and the metrics.

/// Character trigrams of a string, as 3-char windows.
///
/// Strings shorter than three characters yield the whole string as a single
/// unit so that every non-empty input produces at least one trigram.
pub fn char_trigrams(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return vec![chars.iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Lowercases and collapses runs of whitespace to single spaces, trimming
/// the ends.
pub fn normalize_for_match(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character-level Levenshtein distance (unit costs).
pub fn levenshtein_chars(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigrams_of_short_and_long_strings() {
        assert!(char_trigrams("").is_empty());
        assert_eq!(char_trigrams("ab"), vec!["ab".to_string()]);
        assert_eq!(char_trigrams("abcd"), vec!["abc".to_string(), "bcd".to_string()]);
        // 5 chars -> 3 trigrams
        assert_eq!(char_trigrams("hello").len(), 3);
    }

    #[test]
    fn normalization_collapses_whitespace() {
        assert_eq!(normalize_for_match("  Acorn   HOUSE "), "acorn house");
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein_chars("", ""), 0);
        assert_eq!(levenshtein_chars("abc", ""), 3);
        assert_eq!(levenshtein_chars("kitten", "sitting"), 3);
        assert_eq!(levenshtein_chars("bermondsay", "bermondsey"), 1);
    }
}
