//! Extraction of structured values from completion text.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `Action:` marker in completion")]
    MissingAction,
    #[error("no `{0}` phrase followed by an integer")]
    MissingScore(&'static str),
    #[error("no true/false token in completion")]
    MissingVerdict,
}

const SCORE_PHRASE: &str = "correctness score is";
const CONFIDENCE_PHRASE: &str = "confidence in this score is";

/// ASCII case-insensitive search; byte offsets stay valid for `haystack`.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .to_ascii_lowercase()
        .find(&needle.to_ascii_lowercase())
}

/// Splits a completion into `(thought, action)`.
///
/// The action is everything after the first `Action:` marker. The thought is
/// the text between a preceding `Thought:` marker and the action marker, or
/// empty when there is none.
pub fn parse_thought_action(text: &str) -> Result<(String, String), ParseError> {
    let action_at = find_ci(text, "action:").ok_or(ParseError::MissingAction)?;
    let action = text[action_at + "action:".len()..].trim().to_string();
    let thought = match find_ci(text, "thought:") {
        Some(t) if t < action_at => text[t + "thought:".len()..action_at].trim().to_string(),
        _ => String::new(),
    };
    Ok((thought, action))
}

/// First unsigned integer after `phrase`, clamped to 10.
fn integer_after(text: &str, phrase: &'static str) -> Result<u8, ParseError> {
    let start = find_ci(text, phrase).ok_or(ParseError::MissingScore(phrase))? + phrase.len();
    let rest = &text[start..];
    let digits_at = rest
        .find(|c: char| c.is_ascii_digit())
        .ok_or(ParseError::MissingScore(phrase))?;
    let digits: String = rest[digits_at..]
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    // Anything too long for u32 is far above the clamp anyway.
    let value = digits.parse::<u32>().unwrap_or(u32::MAX);
    Ok(value.min(10) as u8)
}

/// Extracts `(score, confidence)`, each in `0..=10`.
pub fn parse_assessment(text: &str) -> Result<(u8, u8), ParseError> {
    Ok((
        integer_after(text, SCORE_PHRASE)?,
        integer_after(text, CONFIDENCE_PHRASE)?,
    ))
}

/// The sentence an assessment is expected to end with.
pub fn render_assessment(score: u8, confidence: u8) -> String {
    format!("Thus the correctness score is {score}. The confidence in this score is {confidence}.")
}

/// Reads a pass/fail verdict.
///
/// Picks the standalone `true`/`false` token closest to an `evaluation`
/// marker; without a marker, the first such token.
pub fn parse_evaluation(text: &str) -> Result<bool, ParseError> {
    let lower = text.to_ascii_lowercase();
    let mut tokens: Vec<(usize, usize, bool)> = Vec::new();
    let mut start = None;
    for (i, c) in lower.char_indices().chain(std::iter::once((lower.len(), ' '))) {
        if c.is_alphanumeric() || c == '_' {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            match &lower[s..i] {
                "true" => tokens.push((s, i, true)),
                "false" => tokens.push((s, i, false)),
                _ => {}
            }
        }
    }
    if tokens.is_empty() {
        return Err(ParseError::MissingVerdict);
    }
    let markers: Vec<(usize, usize)> = lower
        .match_indices("evaluation")
        .map(|(i, m)| (i, i + m.len()))
        .collect();
    if markers.is_empty() {
        return Ok(tokens[0].2);
    }
    let distance = |(ts, te, _): &(usize, usize, bool)| {
        markers
            .iter()
            .map(|&(ms, me)| if *ts >= me { ts - me } else { ms.saturating_sub(*te) })
            .min()
            .unwrap_or(usize::MAX)
    };
    // min_by_key keeps the earliest token on ties.
    let best = tokens.iter().min_by_key(|t| distance(t)).expect("non-empty");
    Ok(best.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thought_and_action() {
        let text = "Thought: Whoopi Goldberg, Catherine Tate, Kathy Burke, Julie Walters, Victoria Wood and Joan Rivers were included in Dawn French's Girls Who Do Comedy. To answer the question, I need to search everyone of them for more information.\nAction: Search[Whoopi Goldberg]";
        let (thought, action) = parse_thought_action(text).unwrap();
        assert!(thought.ends_with("I need to search everyone of them for more information."));
        assert!(thought.starts_with("Whoopi Goldberg, Catherine Tate"));
        assert_eq!(action, "Search[Whoopi Goldberg]");
    }

    #[test]
    fn action_without_thought() {
        assert_eq!(
            parse_thought_action("Action: Finish[Joan Rivers]").unwrap(),
            (String::new(), "Finish[Joan Rivers]".to_string())
        );
        assert_eq!(
            parse_thought_action("thought: x\nACTION:   click[buy now]  ").unwrap(),
            ("x".to_string(), "click[buy now]".to_string())
        );
    }

    #[test]
    fn missing_action_marker() {
        assert_eq!(parse_thought_action("no markers at all"), Err(ParseError::MissingAction));
        assert_eq!(parse_thought_action("Thought: only thinking"), Err(ParseError::MissingAction));
    }

    #[test]
    fn multiline_code_action_is_kept_whole() {
        let text = "Thought: use a dict\nAction:\ndef f(x):\n    return x\n";
        let (_, action) = parse_thought_action(text).unwrap();
        assert_eq!(action, "def f(x):\n    return x");
    }

    #[test]
    fn assessment_transcripts() {
        let hotpot = "The trajectory has successfully found out comediennes included in Dawn French's Girls Who Do Comedy. However, the trajectory has not identify the American comedienn and television host. Thus the correctness score is 3. The confidence in this score is 9.";
        assert_eq!(parse_assessment(hotpot).unwrap(), (3, 9));
        let mbpp = "The code is correct and passes all the test cases. Thus the correctness score is 10. The confidence in this score is 10.";
        assert_eq!(parse_assessment(mbpp).unwrap(), (10, 10));
        let webshop = "Thus the correctness score is 10, The confidence in this score is 10.";
        assert_eq!(parse_assessment(webshop).unwrap(), (10, 10));
    }

    #[test]
    fn assessment_tolerates_punctuation_and_clamps() {
        assert_eq!(
            parse_assessment("Correctness score is: **7**; confidence in this score is (8)").unwrap(),
            (7, 8)
        );
        assert_eq!(
            parse_assessment("correctness score is 42. confidence in this score is 99999999999").unwrap(),
            (10, 10)
        );
    }

    #[test]
    fn assessment_missing_parts() {
        assert!(matches!(parse_assessment("I cannot decide."), Err(ParseError::MissingScore(_))));
        assert_eq!(
            parse_assessment("the correctness score is 4."),
            Err(ParseError::MissingScore(CONFIDENCE_PHRASE))
        );
    }

    #[test]
    fn evaluation_verdicts() {
        assert!(parse_evaluation("Evaluation: True").unwrap());
        assert!(!parse_evaluation("Evaluation: False").unwrap());
        assert_eq!(parse_evaluation("unsure"), Err(ParseError::MissingVerdict));
        assert!(parse_evaluation("it is TRUE that this works").unwrap());
        assert!(!parse_evaluation("True, the search ran. Final evaluation: false").unwrap());
        // `untrue` is not a standalone token.
        assert_eq!(parse_evaluation("untrue"), Err(ParseError::MissingVerdict));
    }

    proptest! {
        #[test]
        fn assessment_round_trip(score in 0u8..=10, confidence in 0u8..=10) {
            prop_assert_eq!(parse_assessment(&render_assessment(score, confidence)).unwrap(), (score, confidence));
        }
    }
}
