use std::fmt;
use std::str::FromStr;

use super::entities::is_entity_symbol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenMode {
    /// One token per character; ASCII alphanumeric runs stay whole.
    Char,
    /// Whitespace-separated words with punctuation split off.
    Word,
}

impl FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            other => Err(format!("unknown token mode {other:?}")),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        })
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

pub fn tokenize(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Char => char_tokens(text),
        TokenMode::Word => word_tokens(text),
    }
}

fn char_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            out.push(std::mem::take(&mut run));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Byte length of an entity symbol at the start of `s`, if any.
fn entity_prefix(s: &str) -> Option<usize> {
    let at = s.find('@')?;
    let digits = s[at + 1..].bytes().take_while(u8::is_ascii_digit).count();
    let len = at + 1 + digits;
    (digits > 0 && is_entity_symbol(&s[..len])).then_some(len)
}

fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if word.is_empty() {
                if let Some(len) = entity_prefix(rest) {
                    out.push(rest[..len].to_string());
                    rest = &rest[len..];
                    continue;
                }
            }
            if is_punct(c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
            rest = &rest[c.len_utf8()..];
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Joins tokens back into a line. Character mode only inserts a space between
/// adjacent ASCII alphanumeric tokens so they re-tokenize the same way.
pub fn detokenize<S: AsRef<str>>(tokens: &[S], mode: TokenMode) -> String {
    match mode {
        TokenMode::Word => tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "),
        TokenMode::Char => {
            let mut out = String::new();
            let mut prev_ascii = false;
            for t in tokens {
                let t = t.as_ref();
                let ascii = !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric());
                if ascii && prev_ascii {
                    out.push(' ');
                }
                out.push_str(t);
                prev_ascii = ascii;
            }
            out
        }
    }
}
