//! Extraction of the boxed score pair from a critique.
//!
//! A critique concludes with a boxed group carrying exactly two numbers:
//!
//! ```text
//! \boxed{7.5, 6.0}     or equivalently     ⟦boxed⟧{7.5, 6.0}
//! ```
//!
//! Grammar (the same one the simulator emits and the remote wire contract
//! requires): a `\boxed` or `⟦boxed⟧` marker, optional whitespace, then `{`,
//! two comma-separated numeric fields with optional surrounding whitespace,
//! and `}`. Numbers are signed integers or plain decimals; no exponents, no
//! nested braces. When several boxed groups appear, the last one wins: the
//! conclusion is terminal. Values are NOT range-checked here; the [0, 10]
//! boundary is the format reward's job.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::types::ExtractedScores;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseScoreError {
    /// No boxed group anywhere in the text.
    #[error("critique contains no boxed score pair")]
    NoBoxedPair,
    /// A boxed group was found but it does not hold exactly two fields.
    #[error("boxed group does not contain exactly two fields")]
    MalformedPair,
    /// A field is not a plain signed integer or decimal.
    #[error("boxed field is not numeric: {0:?}")]
    NonNumeric(String),
}

static BOXED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:\\boxed|⟦boxed⟧)\s*\{([^{}]*)\}").expect("static pattern compiles")
});

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?[0-9]+(?:\.[0-9]+)?$").expect("static pattern compiles"));

/// Parse the LAST boxed pair in `critique`. Total over arbitrary input: every
/// byte string maps to scores or a typed error.
pub fn extract_scores(critique: &str) -> Result<ExtractedScores, ParseScoreError> {
    let captures = BOXED
        .captures_iter(critique)
        .last()
        .ok_or(ParseScoreError::NoBoxedPair)?;
    let body = captures.get(1).expect("group 1 always present").as_str();
    let fields: Vec<&str> = body.split(',').map(str::trim).collect();
    if fields.len() != 2 {
        return Err(ParseScoreError::MalformedPair);
    }
    let mut values = [0.0f64; 2];
    for (slot, field) in values.iter_mut().zip(&fields) {
        if !NUMBER.is_match(field) {
            return Err(ParseScoreError::NonNumeric((*field).to_string()));
        }
        *slot = field
            .parse::<f64>()
            .map_err(|_| ParseScoreError::NonNumeric((*field).to_string()))?;
    }
    Ok(ExtractedScores::new(values[0], values[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_terminal_pair() {
        let got = extract_scores("the quality differs. ⟦boxed⟧{7.5, 6.0}").unwrap();
        assert_eq!(got, ExtractedScores::new(7.5, 6.0));
    }

    #[test]
    fn parses_backslash_form() {
        let got = extract_scores(r"principled critique. \boxed{3, 4}").unwrap();
        assert_eq!(got, ExtractedScores::new(3.0, 4.0));
    }

    #[test]
    fn out_of_range_values_still_parse() {
        // Range violations are the format reward's territory, not the parser's.
        let got = extract_scores("⟦boxed⟧{11, 5}").unwrap();
        assert_eq!(got, ExtractedScores::new(11.0, 5.0));
    }

    #[test]
    fn missing_pair_is_typed() {
        assert_eq!(
            extract_scores("no scores here"),
            Err(ParseScoreError::NoBoxedPair)
        );
    }

    #[test]
    fn last_pair_wins() {
        let got = extract_scores(r"interim \boxed{1, 2} ... final \boxed{8.5, 3.0}").unwrap();
        assert_eq!(got, ExtractedScores::new(8.5, 3.0));
    }

    #[test]
    fn field_count_must_be_two() {
        assert_eq!(extract_scores(r"\boxed{1}"), Err(ParseScoreError::MalformedPair));
        assert_eq!(
            extract_scores(r"\boxed{1, 2, 3}"),
            Err(ParseScoreError::MalformedPair)
        );
        assert_eq!(extract_scores(r"\boxed{}"), Err(ParseScoreError::MalformedPair));
    }

    #[test]
    fn non_numeric_fields_are_typed() {
        assert!(matches!(
            extract_scores(r"\boxed{seven, 2}"),
            Err(ParseScoreError::NonNumeric(_))
        ));
        assert!(matches!(
            extract_scores(r"\boxed{1e3, 2}"),
            Err(ParseScoreError::NonNumeric(_))
        ));
        assert!(matches!(
            extract_scores(r"\boxed{4., 2}"),
            Err(ParseScoreError::NonNumeric(_))
        ));
    }

    #[test]
    fn whitespace_around_comma_is_fine() {
        let got = extract_scores("⟦boxed⟧{ 9.1 ,  0 }").unwrap();
        assert_eq!(got, ExtractedScores::new(9.1, 0.0));
    }

    #[test]
    fn signed_values_parse() {
        let got = extract_scores(r"\boxed{-1.5, +4}").unwrap();
        assert_eq!(got, ExtractedScores::new(-1.5, 4.0));
    }

    #[test]
    fn unterminated_group_is_no_pair() {
        assert_eq!(
            extract_scores(r"\boxed{1, 2"),
            Err(ParseScoreError::NoBoxedPair)
        );
    }
}
