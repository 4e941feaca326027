use serde::{Deserialize, Serialize};

use crate::bench::BenchSample;
use crate::error::{invalid, Result};
use crate::vocab;

pub const SYSTEM_TEXT: &str = "Carefully watch the video and pay attention to the cause and sequence of events, \
the detail and movement of objects, and the action and pose of persons.";

pub const SUFFIX_TEXT: &str = "Only give the best option.";

pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPrompt {
    pub system_text: String,
    pub question_text: String,
    pub option_texts: Vec<String>,
    pub suffix_text: String,
}

impl QAPrompt {
    /// The prompt as one string, one element per line.
    pub fn render(&self) -> String {
        let mut s = format!("{}\nQuestion: {}\nOptions:\n", self.system_text, self.question_text);
        for (letter, opt) in OPTION_LETTERS.iter().zip(&self.option_texts) {
            s.push_str(&format!("({letter}) {opt}\n"));
        }
        s.push_str(&self.suffix_text);
        s.push('\n');
        s
    }

    /// Symbolic token form consumed by the toy model. Ends with the answer
    /// marker, so the next token is the predicted option letter.
    pub fn tokens(&self) -> Vec<u32> {
        let mut t = vec![
            vocab::BOS,
            vocab::SYSTEM,
            vocab::QUESTION,
            vocab::text_token(&self.question_text),
            vocab::OPTIONS,
        ];
        for (i, opt) in self.option_texts.iter().enumerate() {
            t.push(vocab::option_token(i));
            t.push(vocab::text_token(opt));
        }
        t.push(vocab::BEST_OPTION);
        t.push(vocab::ANSWER);
        t
    }
}

pub fn build_prompt(sample: &BenchSample) -> Result<QAPrompt> {
    if sample.options.len() != OPTION_LETTERS.len() {
        return Err(invalid(format!(
            "{}: expected 4 options, got {}",
            sample.name,
            sample.options.len()
        )));
    }
    if sample.question.trim().is_empty() {
        return Err(invalid(format!("{}: empty question", sample.name)));
    }
    Ok(QAPrompt {
        system_text: SYSTEM_TEXT.to_string(),
        question_text: sample.question.clone(),
        option_texts: sample.options.clone(),
        suffix_text: SUFFIX_TEXT.to_string(),
    })
}

/// Which rule produced a match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Letter,
    Prefix,
}

fn words(s: &str) -> Vec<String> {
    super::rouge::tokenize(s)
}

/// Maps free-form model output to an option index.
///
/// A leading `(X)`, or a bare `X` (A to D) standing alone or followed by
/// punctuation, wins outright. Otherwise each option
/// is scored by the longest run of its leading words that appears in the
/// output starting at some word boundary; a unique best positive score wins.
pub fn match_answer(generated: &str, options: &[String]) -> Option<(usize, MatchRule)> {
    let t = generated.trim();
    let mut chars = t.chars();
    let letter = match (chars.next(), chars.next(), chars.next()) {
        (Some('('), Some(c), Some(')')) => Some(c),
        // a bare letter must end the text or be followed by punctuation, so the
        // article in "A person ..." is not read as option A
        (Some(c), next, _) if next.is_none_or(|n| !n.is_alphanumeric() && !n.is_whitespace()) => Some(c),
        _ => None,
    };
    if let Some(i) = letter.and_then(|c| OPTION_LETTERS.iter().position(|&l| l == c)) {
        if i < options.len() {
            return Some((i, MatchRule::Letter));
        }
    }

    let out = words(t);
    let score = |opt: &String| {
        let o = words(opt);
        (0..out.len())
            .map(|start| out[start..].iter().zip(&o).take_while(|(a, b)| a == b).count())
            .max()
            .unwrap_or(0)
    };
    let scores: Vec<usize> = options.iter().map(score).collect();
    let best = *scores.iter().max()?;
    if best == 0 || scores.iter().filter(|&&s| s == best).count() > 1 {
        return None;
    }
    scores.iter().position(|&s| s == best).map(|i| (i, MatchRule::Prefix))
}
