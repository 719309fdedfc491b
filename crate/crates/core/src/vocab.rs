//! The fixed 40-symbol character vocabulary and token sequences over it.
//!
//! Layout: `PAD=0`, `BOS=1`, `EOS=2`, space `=3`, then `a..z` (4..=29)
//! and `0..9` (30..=39).

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of output classes.
pub const VOCAB_SIZE: usize = 40;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SPACE: u32 = 3;
pub const FIRST_LETTER: u32 = 4;
pub const FIRST_DIGIT: u32 = 30;

/// Printable rendering of each index. Control symbols use angle-bracket names.
pub fn symbol(token: u32) -> Option<&'static str> {
    const TABLE: [&str; VOCAB_SIZE] = [
        "<pad>", "<bos>", "<eos>", " ", "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l",
        "m", "n", "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z", "0", "1", "2", "3",
        "4", "5", "6", "7", "8", "9",
    ];
    TABLE.get(token as usize).copied()
}

/// Token index for a printable character, if it is part of the vocabulary.
pub fn char_to_token(c: char) -> Option<u32> {
    match c {
        ' ' => Some(SPACE),
        'a'..='z' => Some(FIRST_LETTER + (c as u32 - 'a' as u32)),
        '0'..='9' => Some(FIRST_DIGIT + (c as u32 - '0' as u32)),
        _ => None,
    }
}

/// True for the 37 printable symbols (space, letters, digits).
pub fn is_character(token: u32) -> bool {
    (SPACE..VOCAB_SIZE as u32).contains(&token)
}

/// Hex digest identifying the symbol table. Stored in dataset headers.
pub fn vocab_hash() -> String {
    let mut hasher = Sha256::new();
    for t in 0..VOCAB_SIZE as u32 {
        hasher.update(t.to_le_bytes());
        hasher.update(symbol(t).unwrap_or_default().as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Printable content of a raw decoder output: everything before the first
/// `EOS`, minus `BOS` and `PAD`.
pub fn characters(tokens: &[u32]) -> Vec<u32> {
    tokens
        .iter()
        .copied()
        .take_while(|&t| t != EOS)
        .filter(|&t| t != BOS && t != PAD)
        .collect()
}

/// A logical sequence of vocabulary indices.
///
/// Holds at most one `EOS`, and only as the last element. `PAD` never
/// appears inside a logical sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        Self::with_vocab(tokens, VOCAB_SIZE)
    }

    /// Validates against a vocabulary of `vocab_size` classes. Used by
    /// reduced-vocabulary models.
    pub fn with_vocab(tokens: Vec<u32>, vocab_size: usize) -> Result<Self> {
        for (i, &t) in tokens.iter().enumerate() {
            if t as usize >= vocab_size {
                return Err(Error::InvalidToken { token: t, vocab_size });
            }
            if t == PAD {
                return Err(Error::InvalidSequence(format!("PAD at position {i}")));
            }
            if t == EOS && i + 1 != tokens.len() {
                return Err(Error::InvalidSequence(format!(
                    "EOS at position {i} is followed by more tokens"
                )));
            }
        }
        Ok(Self(tokens))
    }

    /// Parses printable text. Unknown characters are an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let tokens = text
            .chars()
            .map(|c| char_to_token(c).ok_or(Error::UnknownChar(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Character tokens only: truncates at the first `EOS` and drops `BOS`/`PAD`.
    pub fn characters(&self) -> Vec<u32> {
        characters(&self.0)
    }

    pub fn reversed(&self) -> Self {
        let mut chars = self.characters();
        chars.reverse();
        Self(chars)
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &t in &self.0 {
            f.write_str(symbol(t).unwrap_or("<?>"))?;
        }
        Ok(())
    }
}
