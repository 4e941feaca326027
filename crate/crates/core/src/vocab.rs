//! Fixed symbolic vocabulary shared by prompts, training targets and decoding.
//!
//! There is no natural-language tokenizer: prompt components that the toy
//! model understands map to dedicated control tokens, option letters map to
//! `(A)`..`(D)`, and needle classes map to `class k`.

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// The multiple-choice system prompt.
pub const SYSTEM: u32 = 3;
pub const QUESTION: u32 = 4;
pub const OPTIONS: u32 = 5;
/// "Only give the best option."
pub const BEST_OPTION: u32 = 6;
/// Start of the assistant's answer.
pub const ANSWER: u32 = 7;
pub const UNK: u32 = 8;
/// `(A)`; letters B..D follow consecutively.
pub const OPTION_A: u32 = 9;
pub const OPTION_COUNT: u32 = 4;
/// "Which class of clip appears in the video?"
pub const QUESTION_NEEDLE: u32 = 13;
/// First needle-class token; class `k` is `CLASS_BASE + k`.
pub const CLASS_BASE: u32 = 16;

/// Text of the needle-retrieval question.
pub const NEEDLE_QUESTION: &str = "Which class of clip appears in the video?";

pub fn option_token(index: usize) -> u32 {
    OPTION_A + index as u32
}

pub fn class_token(class: u32) -> u32 {
    CLASS_BASE + class
}

pub fn class_name(class: u32) -> String {
    format!("class {class}")
}

/// Number of needle classes representable in a vocabulary of `vocab` tokens.
pub fn class_capacity(vocab: usize) -> usize {
    vocab.saturating_sub(CLASS_BASE as usize)
}

/// Surface text of one token; control tokens render empty.
pub fn token_text(id: u32) -> String {
    match id {
        OPTION_A..=12 => format!("({})", (b'A' + (id - OPTION_A) as u8) as char),
        id if id >= CLASS_BASE => class_name(id - CLASS_BASE),
        _ => String::new(),
    }
}

/// Joins the surface text of `ids`, stopping at the first `EOS`.
pub fn detokenize(ids: &[u32]) -> String {
    ids.iter()
        .take_while(|&&t| t != EOS)
        .map(|&t| token_text(t))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps an option or question text back to its token, if it has one.
pub fn text_token(text: &str) -> u32 {
    let t = text.trim().trim_end_matches('.').to_ascii_lowercase();
    if let Some(rest) = t.strip_prefix("class ") {
        if let Ok(k) = rest.trim().parse::<u32>() {
            return class_token(k);
        }
    }
    if text.trim() == NEEDLE_QUESTION {
        return QUESTION_NEEDLE;
    }
    UNK
}
