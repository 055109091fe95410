//! Text normalization and grapheme tokenization.
//!
//! Normalization rule table, applied left to right:
//!
//! | input                                   | output                          |
//! |-----------------------------------------|---------------------------------|
//! | `A`–`Z`                                 | lowercase                       |
//! | `a`–`z`, `'`, `.`, `,`, `?`             | kept                            |
//! | `’` `‘` `` ` ``                         | `'`                             |
//! | digit run `0`–`9999`                    | cardinal words                  |
//! | digit run + `st`/`nd`/`rd`/`th`         | ordinal words                   |
//! | digit run > 9999                        | error                           |
//! | whitespace, `-/_;:!"()[]{}&*+=<>\|~@#$%^` | space                         |
//! | anything else                           | dropped                         |
//!
//! Whitespace runs then collapse to one space and the result is trimmed. A
//! result without any letter is an error.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ONES: [&str; 20] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

fn cardinal(n: u32) -> String {
    debug_assert!(n <= 9999);
    if n < 20 {
        return ONES[n as usize].to_string();
    }
    let mut parts: Vec<String> = Vec::new();
    let thousands = n / 1000;
    let hundreds = (n / 100) % 10;
    let rest = n % 100;
    if thousands > 0 {
        parts.push(format!("{} thousand", ONES[thousands as usize]));
    }
    if hundreds > 0 {
        parts.push(format!("{} hundred", ONES[hundreds as usize]));
    }
    if rest > 0 {
        if rest < 20 {
            parts.push(ONES[rest as usize].to_string());
        } else if rest.is_multiple_of(10) {
            parts.push(TENS[(rest / 10) as usize].to_string());
        } else {
            parts.push(format!(
                "{} {}",
                TENS[(rest / 10) as usize],
                ONES[(rest % 10) as usize]
            ));
        }
    }
    parts.join(" ")
}

fn ordinal(n: u32) -> String {
    let card = cardinal(n);
    let (head, last) = match card.rfind(' ') {
        Some(i) => (&card[..=i], &card[i + 1..]),
        None => ("", card.as_str()),
    };
    let last = match last {
        "one" => "first".to_string(),
        "two" => "second".to_string(),
        "three" => "third".to_string(),
        "five" => "fifth".to_string(),
        "eight" => "eighth".to_string(),
        "nine" => "ninth".to_string(),
        "twelve" => "twelfth".to_string(),
        w if w.ends_with('y') => format!("{}ieth", &w[..w.len() - 1]),
        w => format!("{w}th"),
    };
    format!("{head}{last}")
}

fn is_space_like(c: char) -> bool {
    c.is_whitespace() || "-/_;:!\"()[]{}&*+=<>|~@#$%^".contains(c)
}

/// Normalize raw transcript text into the grapheme alphabet.
pub fn normalize_text(raw: &str) -> Result<String> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            let value: u32 = match digits.parse() {
                Ok(v) if v <= 9999 => v,
                _ => return Err(Error::Text(format!("number {digits} outside 0-9999"))),
            };
            let suffix: String = chars[i..chars.len().min(i + 2)]
                .iter()
                .map(|c| c.to_ascii_lowercase())
                .collect();
            let suffix_ends = chars.get(i + 2).is_none_or(|c| !c.is_ascii_alphabetic());
            let words = if matches!(suffix.as_str(), "st" | "nd" | "rd" | "th") && suffix_ends {
                i += 2;
                ordinal(value)
            } else {
                cardinal(value)
            };
            out.push(' ');
            out.push_str(&words);
            out.push(' ');
            continue;
        }
        match c {
            'a'..='z' | '\'' | '.' | ',' | '?' => out.push(c),
            'A'..='Z' => out.push(c.to_ascii_lowercase()),
            '\u{2019}' | '\u{2018}' | '`' => out.push('\''),
            c if is_space_like(c) => out.push(' '),
            _ => {}
        }
        i += 1;
    }
    let collapsed = out.split_whitespace().collect::<Vec<_>>().join(" ");
    if !collapsed.chars().any(|c| c.is_ascii_lowercase()) {
        return Err(Error::Text(format!("{raw:?} is empty after normalization")));
    }
    Ok(collapsed)
}

pub const GRAPHEME_TOKENSET: &str = "grapheme";

/// Symbol table. Ids are positions in `symbols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenset {
    pub id: String,
    symbols: Vec<char>,
}

impl Tokenset {
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            GRAPHEME_TOKENSET => {
                let mut symbols = vec![' ', '\'', ',', '.', '?'];
                symbols.extend('a'..='z');
                Ok(Self {
                    id: id.to_string(),
                    symbols,
                })
            }
            other => Err(Error::UnknownTokenset(other.to_string())),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.symbols.iter().position(|&s| s == c).map(|p| p as u32)
    }

    pub fn symbol(&self, id: u32) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub tokenset_id: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

pub fn tokenize(text: &str, tokenset_id: &str) -> Result<TokenSequence> {
    let set = Tokenset::by_id(tokenset_id)?;
    if text.is_empty() {
        return Err(Error::Text("cannot tokenize empty text".into()));
    }
    let token_ids = text
        .chars()
        .map(|c| {
            set.id_of(c).ok_or_else(|| {
                Error::Text(format!("character {c:?} not in tokenset {tokenset_id}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenSequence {
        token_ids,
        tokenset_id: tokenset_id.to_string(),
    })
}

pub fn detokenize(tokens: &TokenSequence) -> Result<String> {
    let set = Tokenset::by_id(&tokens.tokenset_id)?;
    tokens
        .token_ids
        .iter()
        .map(|&id| {
            set.symbol(id)
                .ok_or_else(|| Error::Text(format!("token id {id} out of range")))
        })
        .collect()
}
