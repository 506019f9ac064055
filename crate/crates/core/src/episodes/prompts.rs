//! Task prompts. Each sample kind has its own template; the model switches
//! tasks by reading a different prompt.

use super::vocab::vocab;
use super::SampleKind;
use crate::error::{Error, Result};
use crate::hashing::short_hash;

const ROBOT: &str = "imagine you are a robot programmed for navigation tasks . \
    you have been given a video of historical observations : {history} and current observation : <image> .";
const TASK: &str = "your assigned task is : {instruction} .";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Piece {
    Word(usize),
    /// Expands to the history image placeholders.
    History,
    /// Expands to the instruction tokens.
    Instruction,
}

pub fn template_text(kind: SampleKind) -> String {
    match kind {
        SampleKind::Action => format!(
            "{ROBOT} {TASK} analyze this series of images to decide your next move , which could \
             involve turning left or right by a specific degree , moving forward a certain distance \
             , or stop if the task is completed ."
        ),
        SampleKind::InstructionReasoning => "imagine you are a robot designed for navigation . you are \
             provided with captured image sequences : {history} . based on this image sequence , please \
             describe the navigation trajectory of the robot ."
            .to_string(),
        SampleKind::Pi => format!(
            "{ROBOT} analyze the series of images to predict the panoramic image of current observation ."
        ),
        SampleKind::Pd => format!(
            "{ROBOT} analyze the series of images to predict the panoramic depth of current observation ."
        ),
        SampleKind::Fpi => format!(
            "{ROBOT} {TASK} analyze the series of images to predict the panoramic image of current observation ."
        ),
        SampleKind::Fpd => format!(
            "{ROBOT} {TASK} analyze the series of images to predict the panoramic depth of current observation ."
        ),
    }
}

/// Token template for `kind`.
pub fn prompt_for(kind: SampleKind) -> Vec<Piece> {
    let v = vocab();
    template_text(kind)
        .split_whitespace()
        .map(|w| match w {
            "{history}" => Piece::History,
            "{instruction}" => Piece::Instruction,
            w => Piece::Word(v.id(w).unwrap_or_else(|| panic!("template word {w:?} missing from vocabulary"))),
        })
        .collect()
}

/// Stable identifier of a kind's template.
pub fn prompt_id(kind: SampleKind) -> String {
    short_hash(template_text(kind).as_bytes())
}

/// Expands a template: `history` image placeholders, then the instruction.
pub fn fill_prompt(kind: SampleKind, history: usize, instruction: &[usize]) -> Vec<usize> {
    let image = vocab().image();
    let mut out = Vec::new();
    for piece in prompt_for(kind) {
        match piece {
            Piece::Word(id) => out.push(id),
            Piece::History => out.extend(std::iter::repeat_n(image, history)),
            Piece::Instruction => out.extend_from_slice(instruction),
        }
    }
    out
}

pub fn count_placeholders(tokens: &[usize]) -> usize {
    let image = vocab().image();
    tokens.iter().filter(|&&t| t == image).count()
}

/// Number of image placeholders a filled prompt of `kind` must carry.
pub fn expected_placeholders(kind: SampleKind, n: usize) -> usize {
    match kind {
        SampleKind::InstructionReasoning => n,
        _ => n + 1,
    }
}

pub fn check_placeholders(kind: SampleKind, tokens: &[usize], n: usize) -> Result<()> {
    let found = count_placeholders(tokens);
    let expected = expected_placeholders(kind, n);
    if found != expected {
        return Err(Error::PlaceholderCountMismatch { found, expected });
    }
    Ok(())
}
