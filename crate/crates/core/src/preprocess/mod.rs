//! Normalisation of C++ sources and LaTeX statements, and subword
//! tokenisation.

mod cpp;
mod latex;
mod wordpiece;

pub use cpp::{expand_macros, preprocess_source, strip_comments, strip_includes, DEFAULT_MACRO_DEPTH};
pub use latex::latex_to_text;
pub use wordpiece::{
    basic_tokenize, build_subword_vocab, detokenize, word_tokens, wordpiece_tokenize,
    SubwordVocabulary, CLS, MAX_WORD_CHARS, PAD, SPECIAL_TOKENS, UNK,
};
