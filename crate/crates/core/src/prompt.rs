//! `$VARIABLE$` prompt templates shipped as text assets.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` has no value for ${var}$")]
    MissingVariable { template: &'static str, var: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub text: &'static str,
}

pub const USER_GOAL: PromptTemplate = PromptTemplate {
    name: "user_goal",
    text: include_str!("../assets/prompts/user_goal.txt"),
};

pub const USER_COMMUNICATION: PromptTemplate = PromptTemplate {
    name: "user_communication",
    text: include_str!("../assets/prompts/user_communication.txt"),
};

pub const COELA_PLANNING: PromptTemplate = PromptTemplate {
    name: "coela_planning",
    text: include_str!("../assets/prompts/coela_planning.txt"),
};

pub const COELA_COMMUNICATION: PromptTemplate = PromptTemplate {
    name: "coela_communication",
    text: include_str!("../assets/prompts/coela_communication.txt"),
};

pub const PROAGENT: PromptTemplate = PromptTemplate {
    name: "proagent",
    text: include_str!("../assets/prompts/proagent.txt"),
};

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$([A-Za-z_]+)\$").unwrap())
}

impl PromptTemplate {
    /// Variable names in order of first appearance.
    pub fn variables(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for c in placeholder().captures_iter(self.text) {
            let name = c.get(1).unwrap().as_str();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    /// Substitutes every placeholder in one pass; substituted values are
    /// never rescanned.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        if let Some(var) = self.variables().into_iter().find(|v| !vars.contains_key(v)) {
            return Err(PromptError::MissingVariable {
                template: self.name,
                var: var.to_string(),
            });
        }
        Ok(placeholder()
            .replace_all(self.text, |c: &Captures| vars[&c[1]].clone())
            .into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_prompt_variables() {
        assert_eq!(USER_GOAL.variables(), vec!["GOAL_CNT", "Value", "Task", "GOAL"]);
    }

    #[test]
    fn render_substitutes_once() {
        let vars = BTreeMap::from([
            ("GOAL_CNT", "2".to_string()),
            ("Value", "$Task$".to_string()),
            ("Task", "snack".to_string()),
            ("GOAL", "a, b".to_string()),
        ]);
        let text = USER_GOAL.render(&vars).unwrap();
        assert!(text.contains("Select 2 objects as the goal set"));
        assert!(text.contains("Value Attribute: $Task$"));
        assert!(text.contains("Potential Goals: a, b"));
    }

    #[test]
    fn missing_variable_is_reported() {
        let err = PROAGENT.render(&BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            PromptError::MissingVariable {
                template: "proagent",
                var: "AGENT_NAME".into()
            }
        );
    }

    #[test]
    fn planning_prompt_mentions_goal_count_slot() {
        assert!(COELA_PLANNING
            .text
            .contains("$GOAL_CNT$ object(s) determined by human user"));
    }
}
