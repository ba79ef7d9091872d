//! Prompt templates for the five model interactions.
//!
//! The domain word (e.g. `medical`) is substituted into every system prompt.

use serde_json::json;

use crate::question::Question;
use crate::store::Triple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Entity,
    Score,
    Reason,
    Generate,
    /// Plain question-in, answer-out baseline without retrieval.
    Direct,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Entity,
        PromptKind::Score,
        PromptKind::Reason,
        PromptKind::Generate,
        PromptKind::Direct,
    ];

    /// Recognizes which template produced a system prompt.
    pub fn classify(system_prompt: &str) -> Option<PromptKind> {
        if system_prompt.contains("Name Entity Recognition") {
            Some(PromptKind::Entity)
        } else if system_prompt.contains("to score the triples") {
            Some(PromptKind::Score)
        } else if system_prompt.contains("give confidence") {
            Some(PromptKind::Reason)
        } else if system_prompt.contains("knowledge graph triples") {
            Some(PromptKind::Generate)
        } else if system_prompt.contains("answer questions to output JSON") {
            Some(PromptKind::Direct)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    domain: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::new("medical")
    }
}

impl PromptSet {
    pub fn new(domain: impl Into<String>) -> Self {
        Self { domain: domain.into().trim().to_owned() }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    fn capitalized_domain(&self) -> String {
        let mut chars = self.domain.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    }

    pub fn entity(&self, question: &str, max_entities: usize) -> Prompt {
        Prompt {
            system: format!(
                "You are a {} assistant to carry out {} Name Entity Recognition from a question \
                 and output JSON with only one key entity, like {{entities: [entity1, entity2,...]}}",
                self.domain,
                self.capitalized_domain()
            ),
            user: format!(
                "Get at most {max_entities} meaningful entities in the question: {{ {question} }}."
            ),
        }
    }

    pub fn score(&self, question: &str, triples: &[Triple]) -> Prompt {
        Prompt {
            system: format!(
                "You are a {} expert to score the triples based on the relevance of the question \
                 and output JSON with only one key triple like {{ triples: [{{ triple: {{ head: xxx, \
                 relation: xxx, tail: xxx }}, score: xxx }},...] }}. The score is between 0 and 1, \
                 and the order is from high to low.",
                self.domain
            ),
            user: format!(
                "Based on the question: {{ {question} }}, score the triples: {{ {} }}.",
                render_triples(triples)
            ),
        }
    }

    pub fn reason(&self, question: &Question, triples: &[Triple]) -> Prompt {
        let system = format!(
            "You are a {} expert to answer patients' questions based on your own knowledge and \
             the given information and give confidence [Yes/No]. The output should be a JSON with \
             three keys confidence, answer, and support_info like {{confidence: xxx, answer: xxx, \
             support_info: xxx}}",
            self.domain
        );
        let user = match &question.options {
            Some(options) => format!(
                "Based on your own knowledge and the <knowledge triple>, choose one of the <Option> \
                 to answer the question. knowledge triple: {{ {} }},  Q: {{ {} }}, Option: {{ {} }}, A: ?",
                render_triples(triples),
                question.text,
                render_options(options)
            ),
            None => format!(
                "Based on your own knowledge and the <knowledge triple>, answer the question. \
                 knowledge triple: {{ {} }},  Q: {{ {} }}, A: ?",
                render_triples(triples),
                question.text
            ),
        };
        Prompt { system, user }
    }

    pub fn generate(&self, question: &str, answer: &str, entities: &[String]) -> Prompt {
        Prompt {
            system: format!(
                "You are a {d} expert to extract general {d} knowledge from question and answer to \
                 create {d} knowledge graph triples. The output should be a JSON with only one key: \
                 triples like this: {{ triples: [<triple1>, <triple2>, ...] }}, and each triple \
                 should be like: {{ head: xxx, relation: xxx, tail: xxx }}.",
                d = self.domain
            ),
            user: format!(
                "Based on the question: {{ {question} }},  answer: {{ {answer} }} and entity: \
                 {{ {} }}, extract and output triples.",
                serde_json::to_string(entities).unwrap_or_default()
            ),
        }
    }

    pub fn direct(&self, question: &Question) -> Prompt {
        let options = question.options.as_deref().unwrap_or_default();
        let choices = (0..options.len().max(1))
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("/");
        Prompt {
            system: "You are an assistant to answer questions to output JSON.".to_owned(),
            user: format!(
                "Here is a question, choose one of the <Option> to answer the question. Your answer \
                 must be [{choices}] which is the order of your choice and your output has only one \
                 key answer. \n\nQ: {{ {} }}, Option:{{ {} }}, A: ?\n\nExample:\n\nQ: Which time \
                 zone is sesto ed uniti located in? \n\nOption: [Central European Time Zone, \
                 Greenwich Mean Time, Coordinated Universal Time, Central Standard Time] \n\nA: \
                 {{ answer: 0 }}",
                question.text,
                render_options(options)
            ),
        }
    }
}

pub fn render_triples(triples: &[Triple]) -> String {
    let list: Vec<_> = triples
        .iter()
        .map(|t| json!({"head": t.head(), "relation": t.relation(), "tail": t.tail()}))
        .collect();
    serde_json::Value::Array(list).to_string()
}

fn render_options(options: &[String]) -> String {
    format!("[{}]", options.join(", "))
}
