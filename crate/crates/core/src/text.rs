//! Token counting for mixed CJK/Latin text.
//!
//! Each CJK character (ideographs, kana, hangul) is one token. A maximal
//! run of other alphanumeric characters (plus `_` and `'`) is one token.
//! Whitespace, punctuation and symbols are separators.

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2A6DF) // CJK ext B
}

fn is_word_char(c: char) -> bool {
    (c.is_alphanumeric() && !is_cjk(c)) || c == '_' || c == '\''
}

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            run_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = run_start.take() {
            tokens.push(&text[s..i]);
        }
        if is_cjk(c) {
            tokens.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = run_start {
        tokens.push(&text[s..]);
    }
    tokens
}

pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}
