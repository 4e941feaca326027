//! Multiple-choice prompting, answer matching, accuracy reports, ROUGE and
//! the encoding-strategy sweeps.

pub mod prompt;
pub mod report;
pub mod rouge;
pub mod sweep;

pub use prompt::{build_prompt, match_answer, MatchRule, QAPrompt, SUFFIX_TEXT, SYSTEM_TEXT};
pub use report::{accuracy, EvalReport, SampleRecord, SubsetAccuracy, CHANCE_PERCENT};
pub use rouge::{mean_scores, rouge_scores, Prf, RougeScore};
pub use sweep::{
    answer, encode_sample, evaluate, qa_example, select_frames, sweep_clips, sweep_lengths_ife, ClipPoint, ClipSweep,
    IfePoint, IfeSweep, QaModel, Strategy,
};
