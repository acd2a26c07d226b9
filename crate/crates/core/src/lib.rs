//! Hybrid clinical-text de-identification engine.
//!
//! Rule-based and model-backed PHI detection, IOB2/CoNLL processing,
//! synthetic augmentation, LLM markup parsing, masking and obfuscation, and
//! strict chunk-level / token-level evaluation.

pub mod align;
pub mod annotation;
pub mod augment;
pub mod backend;
pub mod conll;
pub mod dates;
pub mod eval;
pub mod labels;
pub mod markup;
pub mod pipeline;
pub mod rules;
pub mod tokenizer;

pub use annotation::{
    bio_to_spans, spans_to_bio, validate_spans, AnnotationError, Document, EntitySpan, Repair,
    Sentence, Source, Tag, TagSequence, Token, Violation,
};
pub use labels::LabelSet;
pub use tokenizer::{split_sentences, word_punct_tokenize, RuleSplitter, SentenceSplitter};
