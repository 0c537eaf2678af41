//! Rendering of the generation and revision prompts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{GatewayError, UserInput};
use crate::composition::RatioVector;
use crate::palette::Palette;

const GENERATION_TEMPLATE: &str = include_str!("../../assets/generation_system.txt");
const REVISION_TEMPLATE: &str = include_str!("../../assets/revision_system.txt");
const PALETTE_SLOT: &str = "{{ scents_json }}";

pub const ORIGINAL_REQUEST: &str = "ORIGINAL REQUEST:";
pub const CURRENT_RATIOS: &str = "CURRENT RATIOS:";
pub const PRIOR_HISTORY: &str = "PRIOR FEEDBACK HISTORY:";
pub const LATEST_FEEDBACK: &str = ">>> LATEST FEEDBACK <<<:";
pub const EMPTY_HISTORY: &str = "(empty)";

pub const TEXT_LABEL: &str = "TEXT DESCRIPTION:";
pub const IMAGE_LABEL: &str = "IMAGE-DERIVED DESCRIPTION:";
pub const SPEECH_LABEL: &str = "SPEECH TRANSCRIPT:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
}

/// One earlier round of the refinement loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub feedback: String,
    pub changes: Option<String>,
}

/// Zero-shot system prompt with the palette substituted.
pub fn generation_system_prompt(palette: &Palette) -> String {
    GENERATION_TEMPLATE.replace(PALETTE_SLOT, &palette.prompt_fragment())
}

/// Revision system prompt with the palette substituted.
pub fn revision_system_prompt(palette: &Palette) -> String {
    REVISION_TEMPLATE.replace(PALETTE_SLOT, &palette.prompt_fragment())
}

/// Labelled sections for each present input field, in the order
/// text, image description, transcript.
pub fn render_user_input(input: &UserInput) -> String {
    let sections = [
        (TEXT_LABEL, &input.text),
        (IMAGE_LABEL, &input.image_description),
        (SPEECH_LABEL, &input.transcript),
    ];
    sections
        .iter()
        .filter_map(|(label, value)| {
            value
                .as_deref()
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| format!("{label} {v}"))
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_generation_prompt(
    palette: &Palette,
    input: &UserInput,
) -> Result<PromptBundle, GatewayError> {
    input.validate()?;
    Ok(PromptBundle {
        system: generation_system_prompt(palette),
        user: render_user_input(input),
    })
}

/// Current ratios as a JSON-style block with two decimals for every name.
pub fn render_ratios(ratios: &RatioVector) -> String {
    let mut out = String::from("{\n");
    let last = ratios.entries().len().saturating_sub(1);
    for (i, e) in ratios.entries().iter().enumerate() {
        let comma = if i == last { "" } else { "," };
        let _ = writeln!(out, "  \"{}\": {}{comma}", e.name, e.ratio);
    }
    out.push('}');
    out
}

fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return EMPTY_HISTORY.to_owned();
    }
    let mut out = String::new();
    for (i, h) in history.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let changes = h.changes.as_deref().unwrap_or("(not reported)");
        let _ = write!(
            out,
            "Round {}\n  feedback: {}\n  changes: {}",
            i + 1,
            h.feedback.trim(),
            changes.trim()
        );
    }
    out
}

pub fn build_revision_prompt(
    palette: &Palette,
    original: &UserInput,
    current: &RatioVector,
    history: &[HistoryEntry],
    latest_feedback: &str,
) -> Result<PromptBundle, GatewayError> {
    let feedback = latest_feedback.trim();
    if feedback.is_empty() {
        return Err(GatewayError::InvalidInput(
            "feedback must not be empty".into(),
        ));
    }
    let user = format!(
        "{ORIGINAL_REQUEST}\n{}\n\n{CURRENT_RATIOS}\n{}\n\n{PRIOR_HISTORY}\n{}\n\n{LATEST_FEEDBACK} {feedback}",
        render_user_input(original),
        render_ratios(current),
        render_history(history),
    );
    Ok(PromptBundle {
        system: revision_system_prompt(palette),
        user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn salad() -> UserInput {
        UserInput::text("fresh garden salad")
    }

    #[test]
    fn generation_prompt_carries_constraints_and_text() {
        let p = Palette::bundled();
        let b = build_generation_prompt(&p, &salad()).unwrap();
        assert!(b
            .system
            .starts_with("You are AromaAI, a food smell recreator."));
        assert!(b
            .system
            .contains("use 3-6 active odorants, set the rest to 0.00"));
        assert!(b.system.contains(&p.prompt_fragment()));
        assert!(!b.system.contains(PALETTE_SLOT));
        assert_eq!(b.user, "TEXT DESCRIPTION: fresh garden salad");
        assert_eq!(b, build_generation_prompt(&p, &salad()).unwrap());
    }

    #[test]
    fn image_only_input_is_labelled() {
        let input = UserInput {
            image_description: Some("a bowl of ramen".into()),
            ..UserInput::default()
        };
        let b = build_generation_prompt(&Palette::bundled(), &input).unwrap();
        assert_eq!(b.user, "IMAGE-DERIVED DESCRIPTION: a bowl of ramen");
    }

    #[test]
    fn sections_follow_field_order() {
        let input = UserInput {
            text: Some("pizza".into()),
            image_description: Some("cheesy slice".into()),
            transcript: Some("smells like a pizzeria".into()),
        };
        let user = render_user_input(&input);
        let t = user.find(TEXT_LABEL).unwrap();
        let i = user.find(IMAGE_LABEL).unwrap();
        let s = user.find(SPEECH_LABEL).unwrap();
        assert!(t < i && i < s);
    }

    #[test]
    fn empty_input_rejected() {
        let err = build_generation_prompt(&Palette::bundled(), &UserInput::text("  ")).unwrap_err();
        assert!(matches!(err, GatewayError::InvalidInput(_)));
    }

    fn current(p: &Palette) -> RatioVector {
        RatioVector::from_hundredths(p, [("Strawberry", 40), ("Red Clover", 35), ("Thyme", 25)])
            .unwrap()
    }

    #[test]
    fn first_revision_marks_history_empty() {
        let p = Palette::bundled();
        let b = build_revision_prompt(&p, &salad(), &current(&p), &[], "less sweet").unwrap();
        assert!(b.system.starts_with("You are AromaAI in REVISION mode."));
        assert!(b.user.contains("PRIOR FEEDBACK HISTORY:\n(empty)\n"));
        assert!(b.user.ends_with(">>> LATEST FEEDBACK <<<: less sweet"));
    }

    #[test]
    fn sections_in_order_with_history() {
        let p = Palette::bundled();
        let history = vec![
            HistoryEntry {
                feedback: "too sweet".into(),
                changes: Some("Strawberry decreased".into()),
            },
            HistoryEntry {
                feedback: "more grass".into(),
                changes: None,
            },
        ];
        let b = build_revision_prompt(&p, &salad(), &current(&p), &history, "a bit sour").unwrap();
        let positions: Vec<usize> = [
            ORIGINAL_REQUEST,
            CURRENT_RATIOS,
            PRIOR_HISTORY,
            LATEST_FEEDBACK,
        ]
        .iter()
        .map(|h| b.user.find(h).unwrap())
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let first = b.user.find("too sweet").unwrap();
        let second = b.user.find("more grass").unwrap();
        assert!(first < second);
        assert!(b
            .user
            .contains("Round 2\n  feedback: more grass\n  changes: (not reported)"));
    }

    #[test]
    fn ratios_rendered_with_two_decimals_for_all_names() {
        let p = Palette::bundled();
        let block = render_ratios(&current(&p));
        assert_eq!(block.lines().count(), 14);
        assert!(block.contains("\"Cumin\": 0.00,"));
        assert!(block.contains("\"Strawberry\": 0.40,"));
        assert!(block.contains("\"Isovaleric Acid\": 0.00\n}"));
    }

    #[test]
    fn empty_feedback_rejected() {
        let p = Palette::bundled();
        assert!(build_revision_prompt(&p, &salad(), &current(&p), &[], " \n").is_err());
    }
}
