//! Reply phrasing and parsing shared by the proxy user and the agents.
//!
//! Object names and property tags are matched as whole words against the
//! task vocabulary. A sentence that names objects is a confirmation unless
//! it carries a negation marker, in which case it is a denial.

use std::collections::BTreeSet;

use crate::tasks::TaskSpec;

const NEGATIVE: &[&str] = &[
    "no", "not", "wrong", "incorrect", "isn't", "aren't", "don't", "nope", "neither", "nor",
];
const POSITIVE: &[&str] = &["yes", "correct", "right", "exactly", "great", "good", "want", "love"];

/// Lower-cased words; apostrophes stay inside words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.trim_matches('\'').to_ascii_lowercase())
}

/// Vocabulary entries that appear as whole words in `text`, in
/// vocabulary order.
pub fn mentioned<'a, I>(text: &str, vocabulary: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a String>,
{
    let present: BTreeSet<String> = words(text).collect();
    vocabulary
        .into_iter()
        .filter(|v| present.contains(&v.to_ascii_lowercase()))
        .cloned()
        .collect()
}

/// Potential goals named in an agent message.
pub fn guessed_goals(text: &str, spec: &TaskSpec) -> BTreeSet<String> {
    mentioned(text, &spec.potential_goals).into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedReply {
    pub confirmed: BTreeSet<String>,
    pub denied: BTreeSet<String>,
    /// Property tags in order of first mention.
    pub hints: Vec<String>,
    /// The reply says every goal is already known.
    pub done: bool,
    /// An affirmative sentence naming no object ("Correct!").
    pub bare_yes: bool,
    /// A negative sentence naming no object.
    pub bare_no: bool,
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';', '\n']).map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_reply(text: &str, spec: &TaskSpec) -> ParsedReply {
    let tags: Vec<String> = spec.property_vocabulary().into_iter().collect();
    let mut out = ParsedReply::default();
    for sentence in sentences(text) {
        let ws: Vec<String> = words(sentence).collect();
        let names = mentioned(sentence, &spec.potential_goals);
        let negative = ws.iter().any(|w| NEGATIVE.contains(&w.as_str()));
        let positive = ws.iter().any(|w| POSITIVE.contains(&w.as_str()));
        let has_tag = !mentioned(sentence, &tags).is_empty();
        if !names.is_empty() {
            if negative {
                out.denied.extend(names);
            } else if positive {
                out.confirmed.extend(names);
            }
        } else if !has_tag && ws.len() <= 3 {
            out.bare_yes |= positive && !negative;
            out.bare_no |= negative;
        }
        if ws.iter().any(|w| w == "everything") && !negative {
            out.done = true;
        }
        for tag in mentioned(sentence, &tags) {
            if !out.hints.contains(&tag) {
                out.hints.push(tag);
            }
        }
    }
    out
}

fn join(names: &[&str], last_sep: &str) -> String {
    match names {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} {last_sep} {last}", init.join(", ")),
    }
}

pub fn join_and(names: &[&str]) -> String {
    join(names, "and")
}

pub fn join_or(names: &[&str]) -> String {
    join(names, "or")
}

fn verb(names: &[&str]) -> &'static str {
    if names.len() == 1 {
        "is"
    } else {
        "are"
    }
}

/// `Is cupcake what you want?`, `Is cupcake, milk or juice what you want?`
pub fn question(names: &[&str]) -> String {
    format!("Is {} what you want?", join_or(names))
}

pub fn exact_confirmation(names: &[&str]) -> String {
    format!("Yes, {} {} exactly what I want.", join_and(names), verb(names))
}

pub fn confirmation(names: &[&str]) -> String {
    format!("Yes, {} {} right.", join_and(names), verb(names))
}

pub fn denial(names: &[&str]) -> String {
    format!("No, {} {} not what I want.", join_and(names), verb(names))
}

pub const TOO_MANY: &str = "That's too many things at once.";
pub const ALL_CONFIRMED: &str = "That's everything I need.";

pub fn hint(tags: &[&str], also: bool) -> String {
    if also {
        format!("I'd also like something {}.", join_or(tags))
    } else {
        format!("I'd like something {}.", join_or(tags))
    }
}

pub fn terse_hint(tag: &str) -> String {
    format!("Something {tag}.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::builtin_task;

    fn snack() -> TaskSpec {
        builtin_task("snack-l").unwrap()
    }

    #[test]
    fn rendered_phrases_parse_back() {
        let spec = snack();
        let text = format!(
            "{} {} {}",
            confirmation(&["juice"]),
            denial(&["chips", "wine"]),
            hint(&["crunchy", "sweet"], true)
        );
        let parsed = parse_reply(&text, &spec);
        assert_eq!(parsed.confirmed, BTreeSet::from(["juice".to_string()]));
        assert_eq!(parsed.denied, BTreeSet::from(["chips".to_string(), "wine".to_string()]));
        assert_eq!(parsed.hints, vec!["crunchy".to_string(), "sweet".to_string()]);
        assert!(!parsed.done);
    }

    #[test]
    fn free_text_confirmation() {
        let parsed = parse_reply("Correct! Try to look for something crunchy", &snack());
        assert!(parsed.confirmed.is_empty());
        assert!(parsed.bare_yes && !parsed.bare_no);
        assert_eq!(parsed.hints, vec!["crunchy".to_string()]);
        let parsed = parse_reply("Correct, juice! Try to look for something crunchy.", &snack());
        assert_eq!(parsed.confirmed, BTreeSet::from(["juice".to_string()]));
    }

    #[test]
    fn whole_word_matching() {
        let spec = snack();
        assert!(guessed_goals("Is applesauce what you want?", &spec).is_empty());
        assert_eq!(guessed_goals("Is Apple, milk or juice what you want?", &spec).len(), 3);
    }

    #[test]
    fn question_shapes() {
        assert_eq!(question(&["cupcake"]), "Is cupcake what you want?");
        assert_eq!(question(&["cupcake", "milk", "juice"]), "Is cupcake, milk or juice what you want?");
        assert_eq!(exact_confirmation(&["apple", "wine"]), "Yes, apple and wine are exactly what I want.");
    }

    #[test]
    fn everything_marks_done() {
        assert!(parse_reply(ALL_CONFIRMED, &snack()).done);
    }
}
