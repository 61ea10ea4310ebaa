//! Instruction prompts and context rendering.
//!
//! Instruction strings are shipped verbatim. Two of them are assigned by what
//! they ask the model to do rather than by the heading they were published
//! under: the "write a long version of the answer" text drives response
//! expansion and the "one-sentence response to the new question" text drives
//! the pseudo response.

use serde::{Deserialize, Serialize};

use crate::corpus::ConversationTurn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptKind {
    Qd,
    Re,
    Pr,
    Ts,
    Hs,
    Cqr,
    Supervision,
}

pub const QD_INSTRUCTION: &str = "You are given a set of question-answers pairs and a new question that is ambiguous. Your goal is to rewrite the question so it becomes clear. Write the new question without any introduction.";

pub const RE_INSTRUCTION: &str = "You are given a question-and-answer pair, where the answer is not clear. Your goal is to write a long version of the answer based on its given context. The generated answer should be one sentence only and less than 20 words.";

pub const PR_INSTRUCTION: &str = "Given a series of question-and-answer pairs, along with a new question, your task is to give a one-sentence response to the new question.";

pub const TS_INSTRUCTION: &str = "Given a series of question-and-answer pairs, along with a new question, your task is to determine whether the new question continues the discussion on an existing topic or introduces a new topic. Please respond with either \"new_topic\" or \"old_topic\" as appropriate.";

pub const HS_INSTRUCTION: &str = "You are given a context in the form of question-answer pairs. Your goal is to write a paragraph that summarizes the information in the context. The summary should be short with one sentence for each question answer pair.";

pub const CQR_INSTRUCTION: &str = "Given a series of question-and-answer pairs as context, along with a new question, your task is to convert the new question into a search engine query that can be used to retrieve relevant documents. The output should be placed in a JSON dictionary as follows: {\"query\": \"\"}";

pub const SUPERVISION_INSTRUCTION: &str = "You are given a relevant passage, a series of question-and-answer pairs as context along with a new question, your task is to generate a set of search queries based on the relevancy between the new question and the relevant passage and also rely on the given context. The output format should be in a list with indexes e.g., 1. 2. 3.";

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::Qd,
        PromptKind::Re,
        PromptKind::Pr,
        PromptKind::Ts,
        PromptKind::Hs,
        PromptKind::Cqr,
        PromptKind::Supervision,
    ];

    pub fn instruction(self) -> &'static str {
        match self {
            PromptKind::Qd => QD_INSTRUCTION,
            PromptKind::Re => RE_INSTRUCTION,
            PromptKind::Pr => PR_INSTRUCTION,
            PromptKind::Ts => TS_INSTRUCTION,
            PromptKind::Hs => HS_INSTRUCTION,
            PromptKind::Cqr => CQR_INSTRUCTION,
            PromptKind::Supervision => SUPERVISION_INSTRUCTION,
        }
    }

    /// Recovers the kind from a system instruction, e.g. when reading call logs.
    pub fn from_instruction(instruction: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.instruction() == instruction)
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptKind::Qd => "QD",
            PromptKind::Re => "RE",
            PromptKind::Pr => "PR",
            PromptKind::Ts => "TS",
            PromptKind::Hs => "HS",
            PromptKind::Cqr => "CQR",
            PromptKind::Supervision => "SUPERVISION",
        }
    }
}

/// `Q: ..\nA: ..` pairs separated by blank lines.
pub fn render_pairs(turns: &[ConversationTurn]) -> String {
    turns
        .iter()
        .map(|t| format!("Q: {}\nA: {}", t.question, t.response))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Appends the `New question:` line to an already rendered context.
pub fn with_new_question(context: &str, question: &str) -> String {
    if context.is_empty() {
        format!("New question: {question}")
    } else {
        format!("{context}\nNew question: {question}")
    }
}

pub fn render_context(turns: &[ConversationTurn], question: &str) -> String {
    with_new_question(&render_pairs(turns), question)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instructions_round_trip_to_kind() {
        for k in PromptKind::ALL {
            assert_eq!(PromptKind::from_instruction(k.instruction()), Some(k));
        }
        assert_eq!(PromptKind::from_instruction("something else"), None);
    }

    #[test]
    fn context_layout() {
        let turns = vec![ConversationTurn::new("a?", "b."), ConversationTurn::new("c?", "d.")];
        assert_eq!(
            render_context(&turns, "e?"),
            "Q: a?\nA: b.\n\nQ: c?\nA: d.\nNew question: e?"
        );
        assert_eq!(render_context(&[], "q"), "New question: q");
    }
}
