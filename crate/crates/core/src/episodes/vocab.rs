//! Closed word vocabulary shared by prompts and instructions, followed by
//! the ten action tokens and the special tokens.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::world::{Action, PALETTE, ROOM_COLORS};

/// Plain words. Room colors are appended from the palette.
const WORDS: &[&str] = &[
    ".", ",", ":",
    // prompt wording
    "imagine", "you", "are", "a", "robot", "programmed", "designed", "for", "navigation",
    "tasks", "task", "have", "been", "given", "provided", "with", "video", "of", "historical",
    "observations", "observation", "and", "current", "your", "assigned", "is", "analyze",
    "this", "these", "series", "images", "image", "sequence", "sequences", "captured", "to",
    "decide", "next", "move", "which", "could", "involve", "turning", "by", "specific",
    "degree", "moving", "certain", "distance", "if", "completed", "based", "on", "please",
    "describe", "trajectory", "predict", "panoramic", "depth", "or",
    // instructions
    "turn", "left", "right", "around", "go", "forward", "through", "the", "room", "stop", "in",
    // general navigation words
    "walk", "enter", "exit", "leave", "door", "doorway", "hallway", "corridor", "wall",
    "continue", "past", "until", "reach", "wait", "then", "into", "out", "toward", "towards",
    "straight", "ahead", "back", "behind", "slightly", "sharp", "near", "far", "at", "end",
    "first", "second", "third", "last", "after", "before", "again", "along", "across",
    "meters", "meter", "centimeters", "degrees", "step", "steps", "side", "corner", "front",
    // numerals
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "fifteen", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "ninety", "hundred",
];

pub const IMAGE_TOKEN: &str = "<image>";
pub const EOS_TOKEN: &str = "<eos>";
pub const DREAM_SLOTS: usize = 4;

#[derive(Debug)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    action_base: usize,
    special_base: usize,
}

impl Vocab {
    fn build() -> Vocab {
        let mut words: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        words.extend(PALETTE[..ROOM_COLORS].iter().map(|(name, _)| name.to_string()));
        let action_base = words.len();
        words.extend(Action::ALL.iter().map(|a| format!("<{}>", a.name())));
        let special_base = words.len();
        words.push(IMAGE_TOKEN.into());
        words.push(EOS_TOKEN.into());
        words.extend((0..DREAM_SLOTS).map(|i| format!("<dream{i}>")));
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab {
            words,
            index,
            action_base,
            special_base,
        }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    /// Number of plain words (ids below the action tokens).
    pub fn word_count(&self) -> usize {
        self.action_base
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn action_token(&self, a: Action) -> usize {
        self.action_base + a.index()
    }

    pub fn token_action(&self, id: usize) -> Option<Action> {
        id.checked_sub(self.action_base).and_then(Action::from_index)
    }

    pub fn image(&self) -> usize {
        self.special_base
    }

    pub fn eos(&self) -> usize {
        self.special_base + 1
    }

    pub fn dream(&self, slot: usize) -> usize {
        assert!(slot < DREAM_SLOTS);
        self.special_base + 2 + slot
    }

    /// Splits on whitespace and detaches trailing punctuation.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            let mut word = raw;
            let mut tail = Vec::new();
            while let Some(stripped) = word.strip_suffix(['.', ',', ':']) {
                if stripped.is_empty() {
                    break;
                }
                tail.push(&word[stripped.len()..]);
                word = stripped;
            }
            for w in std::iter::once(word).chain(tail.into_iter().rev()) {
                out.push(
                    self.id(w)
                        .ok_or_else(|| Error::Parse(format!("word {w:?} is not in the vocabulary")))?,
                );
            }
        }
        Ok(out)
    }

    /// Inverse of [`tokenize`](Self::tokenize) for canonically spaced text.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let w = self
                .word(id)
                .ok_or_else(|| Error::Parse(format!("token id {id} out of range")))?;
            if !text.is_empty() && !matches!(w, "." | "," | ":") {
                text.push(' ');
            }
            text.push_str(w);
        }
        Ok(text)
    }
}

pub fn vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(Vocab::build)
}
