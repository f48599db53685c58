//! Deterministic scripted backend: ordered match rules over the prompt with
//! a fixed synthetic token heuristic, so token-ordering assertions are
//! meaningful offline.

use std::io::{BufRead, BufReader, Read};

use serde::Deserialize;

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

/// Synthetic token count: `ceil(byte_length / 4)`.
pub fn mock_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// One scripted rule. `anchored` requires the prompt to start with the
/// pattern; the default is substring matching.
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub anchored: bool,
    pub response: String,
}

impl MockRule {
    pub fn substring(pattern: &str, response: &str) -> Self {
        Self {
            pattern: pattern.to_string(),
            anchored: false,
            response: response.to_string(),
        }
    }

    pub fn anchored(pattern: &str, response: &str) -> Self {
        Self {
            pattern: pattern.to_string(),
            anchored: true,
            response: response.to_string(),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        if self.anchored {
            prompt.starts_with(&self.pattern)
        } else {
            prompt.contains(&self.pattern)
        }
    }
}

/// Scripted test double; the first matching rule wins, in rule order.
pub struct MockBackend {
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        Self { rules }
    }

    /// Load a JSON Lines script with fields `match`, `anchored` (optional)
    /// and `response`.
    pub fn from_script<R: Read>(source: R) -> Result<Self, LlmError> {
        let reader = BufReader::new(source);
        let mut rules = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(&line).map_err(|e| {
                LlmError::MalformedBackendReply(format!("mock script line {}: {e}", i + 1))
            })?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(&request.prompt))
            .ok_or_else(|| {
                let head: String = request.prompt.chars().take(120).collect();
                LlmError::NoMatchingRule(head)
            })?;
        Ok(CompletionResponse {
            text: rule.response.clone(),
            prompt_tokens: mock_tokens(&request.prompt),
            completion_tokens: mock_tokens(&rule.response),
            cached: false,
        })
    }

    fn endpoint_style(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_heuristic() {
        assert_eq!(mock_tokens(""), 0);
        assert_eq!(mock_tokens("abcd"), 1);
        assert_eq!(mock_tokens("abcdefghi"), 3);
    }

    #[test]
    fn anchored_rule_only_matches_prefix() {
        let rule = MockRule::anchored("The task is", "ok");
        assert!(rule.matches("The task is data imputation"));
        assert!(!rule.matches("preamble. The task is data imputation"));
    }

    #[test]
    fn script_parses_jsonl() {
        let script = r#"{"match": "timezone", "response": "CET"}
{"match": "The task", "anchored": true, "response": "yes"}
"#;
        let backend = MockBackend::from_script(script.as_bytes()).unwrap();
        assert_eq!(backend.rules.len(), 2);
        assert!(backend.rules[1].anchored);
    }
}
