//! The evaluation metric suite: temporal phase mIoU, the caption metrics
//! (BLEU, ROUGE-L, METEOR, CIDEr) with their composite score, and VQA
//! accuracy / valid-choice rate, plus run-level aggregation.

mod caption;
mod evaluate;
mod temporal;
mod text;
mod vqa;

pub use caption::{bleu, caption_score, cider, meteor, rouge_l, CiderCorpus, MetricError};
pub use evaluate::{evaluate_run, render_text_table, EvalError, EventPredictions};
pub use temporal::{interval_iou, phase_miou};
pub use text::{ngram_counts, tokenize, TokenSequence};
pub use vqa::vqa_scores;
