use thiserror::Error;

use crate::domain::Rating;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no rating found in reply: {0:?}")]
pub struct NoRatingFound(pub String);

/// Extracts a rating from a model reply.
///
/// Digit runs are candidate tokens. A token is dropped when it belongs to a
/// decimal number (`6.5`), is the denominator of a fraction (`7/10`), or is
/// outside `1..=10`. The last surviving candidate wins.
pub fn parse_rating(raw_text: &str) -> Result<Rating, NoRatingFound> {
    let bytes = raw_text.as_bytes();
    let mut last = None;
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let end = i;
        let decimal_before = start >= 2 && bytes[start - 1] == b'.' && bytes[start - 2].is_ascii_digit();
        let decimal_after = end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit();
        let denominator = start >= 1 && bytes[start - 1] == b'/';
        if decimal_before || decimal_after || denominator {
            continue;
        }
        let token = raw_text[start..end].trim_start_matches('0');
        if token.is_empty() || token.len() > 2 {
            continue;
        }
        let value: i64 = token.parse().expect("one or two ascii digits");
        if let Ok(r) = Rating::new(value) {
            last = Some(r);
        }
    }
    last.ok_or_else(|| NoRatingFound(raw_text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Option<u8> {
        parse_rating(s).ok().map(Rating::value)
    }

    #[test]
    fn documented_examples() {
        assert_eq!(p("7"), Some(7));
        assert_eq!(p("Based on the criteria, the rating is 6."), Some(6));
        assert_eq!(p("cracking > 20% suggests level 5"), Some(5));
        assert_eq!(
            parse_rating("I cannot assess this image."),
            Err(NoRatingFound("I cannot assess this image.".into()))
        );
    }

    #[test]
    fn decimals_fractions_and_bounds() {
        assert_eq!(p("6.5"), None);
        assert_eq!(p("about 6.5, so 7"), Some(7));
        assert_eq!(p("7/10"), Some(7));
        assert_eq!(p("10"), Some(10));
        assert_eq!(p("0"), None);
        assert_eq!(p("07"), Some(7));
        assert_eq!(p("123456789012345678901234567890"), None);
        assert_eq!(p("level 3 or 4"), Some(4));
        assert_eq!(p("-3"), Some(3));
        assert_eq!(p(""), None);
    }

    proptest! {
        #[test]
        fn total_over_arbitrary_strings(s in ".*") {
            match parse_rating(&s) {
                Ok(r) => prop_assert!((1..=10).contains(&r.value())),
                Err(NoRatingFound(raw)) => prop_assert_eq!(raw, s),
            }
        }

        #[test]
        fn bare_integers_round_trip(v in 1u8..=10) {
            prop_assert_eq!(p(&v.to_string()), Some(v));
        }
    }
}
