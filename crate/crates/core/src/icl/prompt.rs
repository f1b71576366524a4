use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset-specific wording slotted into the instruction block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptProfile {
    pub task_name: String,
    pub input_format: String,
    pub response_format: String,
    pub label_explanation: String,
}

impl PromptProfile {
    /// Profiles for the four shared-task datasets, by dataset name.
    pub fn builtin(name: &str) -> Option<PromptProfile> {
        let p = |t: &str, i: &str, r: &str, l: &str| PromptProfile {
            task_name: t.into(),
            input_format: i.into(),
            response_format: r.into(),
            label_explanation: l.into(),
        };
        match name.to_ascii_lowercase().as_str() {
            "csc" => Some(p(
                "sarcasm detection",
                "a pair of context and response",
                "an integer from 1 to 6",
                "where 1 means not sarcastic at all and 6 means completely sarcastic",
            )),
            "mp" => Some(p(
                "irony detection",
                "a pair of post and reply",
                "either 0 or 1",
                "where 0 means the reply is not ironic and 1 means the reply is ironic",
            )),
            "par" => Some(p(
                "paraphrase detection",
                "a pair of questions",
                "an integer from -5 to 5",
                "where -5 means the questions are completely unrelated and 5 means they are perfect paraphrases",
            )),
            "varierrnli" => Some(p(
                "natural language inference",
                "a pair of context and statement",
                "one or more of entailment, neutral and contradiction",
                "where entailment means the statement must be true given the context, neutral means it may or may not be true, and contradiction means it must be false",
            )),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        let fields = [
            ("task_name", &self.task_name),
            ("input_format", &self.input_format),
            ("response_format", &self.response_format),
            ("label_explanation", &self.label_explanation),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(Error::MissingPromptField(name));
            }
        }
        Ok(())
    }
}

/// One in-context example from the target annotator's history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub segments: IndexMap<String, String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub profile: PromptProfile,
    pub include_explanations: bool,
    pub examples: Vec<Demonstration>,
    pub query: IndexMap<String, String>,
}

/// `context` → `Context`.
fn segment_title(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn push_segments(out: &mut String, segments: &IndexMap<String, String>) {
    for (name, text) in segments {
        out.push('[');
        out.push_str(&segment_title(name));
        out.push_str("]: ");
        out.push_str(text);
        out.push('\n');
    }
}

/// Renders the instruction block, the numbered examples and the fenced query.
pub fn render_prompt(spec: &PromptSpec) -> Result<String> {
    spec.profile.check()?;
    if spec.query.is_empty() {
        return Err(Error::MissingPromptField("query"));
    }
    let profile = &spec.profile;

    let blocks: Vec<String> = spec
        .examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut block = format!("Example {i}:\n");
            push_segments(&mut block, &ex.segments);
            block.push_str("[Label]: ");
            block.push_str(&ex.label);
            if spec.include_explanations {
                if let Some(expl) = &ex.explanation {
                    block.push_str("\n[Explanation]: ");
                    block.push_str(expl);
                }
            }
            block
        })
        .collect();

    let mut query = String::new();
    push_segments(&mut query, &spec.query);
    query.push_str("[Label]:");

    Ok(format!(
        "[INST] You are an expert in guessing my response against a {task} task.\n\n\
         Your task is to analyze and predict my response to {input} between <<< and >>>, \
         and label it with {response} {explanation}.\n\n\
         Below are some of my previous responses. You should learn my response behavior \
         from them and then make the prediction.\n\n\
         {examples}\n[/INST]\n\n>>>\n{query}\n>>>",
        task = profile.task_name,
        input = profile.input_format,
        response = profile.response_format,
        explanation = profile.label_explanation,
        examples = blocks.join("\n\n"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn zero_examples_keeps_fences() {
        let spec = PromptSpec {
            profile: PromptProfile::builtin("csc").unwrap(),
            include_explanations: false,
            examples: vec![],
            query: seg(&[("context", "c"), ("response", "r")]),
        };
        let out = render_prompt(&spec).unwrap();
        assert!(out.contains("make the prediction.\n\n\n[/INST]\n\n>>>\n[Context]: c\n[Response]: r\n[Label]:\n>>>"));
        assert!(out.ends_with(">>>"));
    }

    #[test]
    fn missing_fields_rejected() {
        let mut profile = PromptProfile::builtin("par").unwrap();
        profile.task_name.clear();
        let spec = PromptSpec {
            profile,
            include_explanations: false,
            examples: vec![],
            query: seg(&[("q", "x")]),
        };
        assert!(matches!(render_prompt(&spec), Err(Error::MissingPromptField("task_name"))));
    }

    #[test]
    fn explanations_add_one_line_per_example() {
        let ex = Demonstration {
            segments: seg(&[("question1", "a?"), ("question2", "b?")]),
            label: "3".into(),
            explanation: Some("close enough".into()),
        };
        let mut spec = PromptSpec {
            profile: PromptProfile::builtin("par").unwrap(),
            include_explanations: false,
            examples: vec![ex.clone(), ex],
            query: seg(&[("question1", "c?"), ("question2", "d?")]),
        };
        let plain = render_prompt(&spec).unwrap();
        spec.include_explanations = true;
        let with = render_prompt(&spec).unwrap();
        let added: Vec<&str> = with.lines().filter(|l| !plain.lines().any(|p| p == *l)).collect();
        assert_eq!(added, vec!["[Explanation]: close enough"; 2]);
        assert_eq!(with.lines().count(), plain.lines().count() + 2);
    }
}
