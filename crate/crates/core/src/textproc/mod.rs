//! Text preprocessing: tokenization, truecasing, byte-pair encoding, and
//! their inverses so that evaluation can run on detokenized text.
//!
//! Tokenization splits on whitespace and punctuation. The English mode
//! additionally splits clitics before an apostrophe (`don't` becomes
//! `don 't`); the Cherokee mode treats apostrophes as ordinary
//! punctuation. Digit-internal periods and commas (`3.14`, `1,000`) stay
//! inside their token in both modes.

mod bpe;
mod truecase;

pub use bpe::{bpe_apply, bpe_learn, bpe_undo, MergeTable};
pub use truecase::{detruecase, truecase_apply, truecase_train, TruecaseModel};

use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextprocError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed merge table at line {line}: {reason}")]
    MalformedMergeTable { line: usize, reason: String },
    #[error("malformed truecase model at line {line}: {reason}")]
    MalformedTruecaseModel { line: usize, reason: String },
}

/// Language-specific tokenization behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerMode {
    /// Whitespace and punctuation only.
    Cherokee,
    /// Whitespace and punctuation plus apostrophe clitic splitting.
    English,
}

impl TokenizerMode {
    pub fn parse(s: &str) -> Option<TokenizerMode> {
        match s.to_ascii_lowercase().as_str() {
            "cherokee" | "chr" => Some(TokenizerMode::Cherokee),
            "english" | "en" => Some(TokenizerMode::English),
            _ => None,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() || c.is_numeric()
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Split `text` into tokens. Punctuation characters become standalone
/// tokens; no token is ever empty; concatenating the tokens preserves all
/// non-whitespace characters of the input.
pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, mode, &mut tokens);
    }
    tokens
}

fn tokenize_chunk(chunk: &str, mode: TokenizerMode, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_word_char(c) {
            current.push(c);
            i += 1;
            continue;
        }
        // Digit-internal period/comma stays inside the token.
        if (c == '.' || c == ',')
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_numeric()
            && chars[i + 1].is_numeric()
        {
            current.push(c);
            i += 1;
            continue;
        }
        // English clitics: split before the apostrophe and keep it attached
        // to the suffix ("don't" -> "don" "'t").
        if mode == TokenizerMode::English
            && is_apostrophe(c)
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_alphabetic()
            && chars[i + 1].is_alphabetic()
        {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.push(c);
            i += 1;
            continue;
        }
        // Standalone punctuation token.
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        out.push(c.to_string());
        i += 1;
    }
    if !current.is_empty() {
        out.push(current);
    }
}

const NO_SPACE_BEFORE: &[&str] = &[
    ",", ".", ";", ":", "!", "?", ")", "]", "}", "%", "\u{2026}", "\u{201D}", "\u{2019}", "\u{BB}",
];
const NO_SPACE_AFTER: &[&str] = &[
    "(", "[", "{", "$", "\u{A3}", "\u{20AC}", "\u{201C}", "\u{2018}", "\u{AB}",
];

/// Join tokens back into running text, attaching punctuation to the
/// neighboring word. The inverse of [`tokenize`] on tokenizer output.
pub fn detokenize(tokens: &[String], mode: TokenizerMode) -> String {
    let mut text = String::new();
    // ASCII straight quotes alternate between opening and closing.
    let mut quote_open = false;
    let mut glue_next = false;
    for (i, tok) in tokens.iter().enumerate() {
        let mut space = i > 0;
        let mut glue_after = false;
        if tok == "\"" {
            if quote_open {
                space = false; // closing: attach left
            } else {
                glue_after = true; // opening: attach right
            }
            quote_open = !quote_open;
        } else if NO_SPACE_BEFORE.contains(&tok.as_str()) {
            space = false;
        } else if NO_SPACE_AFTER.contains(&tok.as_str()) {
            glue_after = true;
        } else if mode == TokenizerMode::English {
            // Clitic suffixes produced by the tokenizer attach left.
            let mut cs = tok.chars();
            if let Some(first) = cs.next() {
                if is_apostrophe(first) && cs.next().map(|c| c.is_alphabetic()).unwrap_or(false) {
                    space = false;
                }
            }
        }
        if glue_next {
            space = false;
        }
        if space {
            text.push(' ');
        }
        text.push_str(tok);
        glue_next = glue_after;
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cherokee_whitespace_and_punct() {
        assert_eq!(
            tokenize("ᎤᏬᏂ, ᎦᏙ.", TokenizerMode::Cherokee),
            toks(&["ᎤᏬᏂ", ",", "ᎦᏙ", "."])
        );
    }

    #[test]
    fn english_clitic_split() {
        // Matches the reference tokenizer's clitic handling.
        assert_eq!(
            tokenize("don't stop", TokenizerMode::English),
            toks(&["don", "'t", "stop"])
        );
        assert_eq!(
            tokenize("it's the cat's", TokenizerMode::English),
            toks(&["it", "'s", "the", "cat", "'s"])
        );
    }

    #[test]
    fn empty_input() {
        assert_eq!(tokenize("", TokenizerMode::English), Vec::<String>::new());
        assert_eq!(detokenize(&[], TokenizerMode::English), "");
    }

    #[test]
    fn digit_internal_punct_kept() {
        assert_eq!(
            tokenize("pi is 3.14, not 3,000", TokenizerMode::English),
            toks(&["pi", "is", "3.14", ",", "not", "3,000"])
        );
    }

    #[test]
    fn apostrophe_is_punct_in_cherokee_mode() {
        assert_eq!(
            tokenize("don't", TokenizerMode::Cherokee),
            toks(&["don", "'", "t"])
        );
    }

    #[test]
    fn detokenize_attaches_punct() {
        assert_eq!(
            detokenize(&toks(&["a", ",", "b", "."]), TokenizerMode::English),
            "a, b."
        );
        assert_eq!(
            detokenize(&toks(&["(", "a", ")", "!"]), TokenizerMode::English),
            "(a)!"
        );
        assert_eq!(
            detokenize(&toks(&["don", "'t", "stop"]), TokenizerMode::English),
            "don't stop"
        );
    }

    #[test]
    fn quote_pairing() {
        assert_eq!(
            detokenize(
                &toks(&["he", "said", "\"", "go", "\"", "."]),
                TokenizerMode::English
            ),
            "he said \"go\"."
        );
    }

    #[test]
    fn round_trip_on_plain_sentences() {
        let lines = [
            "ᎤᏬᏂ ᎦᏙ ᎤᏍᏗ.",
            "the cat sat, and the dog didn't.",
            "numbers like 3.14 and 1,000 survive!",
            "a (quiet) word: yes?",
        ];
        for line in lines {
            for mode in [TokenizerMode::Cherokee, TokenizerMode::English] {
                if mode == TokenizerMode::Cherokee && line.contains('\'') {
                    continue;
                }
                let t = tokenize(line, mode);
                assert!(t.iter().all(|tok| !tok.is_empty()));
                let back = detokenize(&t, mode);
                assert_eq!(back, *line, "mode {mode:?}");
                // Fixpoint on tokenizer output.
                assert_eq!(tokenize(&back, mode), t);
            }
        }
    }

    #[test]
    fn tokens_preserve_non_whitespace_chars() {
        let line = "ab-cd; e_f 3.1.4 --";
        let t = tokenize(line, TokenizerMode::English);
        let joined: String = t.concat();
        let stripped: String = line.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined, stripped);
    }
}
