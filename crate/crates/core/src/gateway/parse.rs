//! Parsing and validation of model replies.

use serde_json::{Map, Value};
use thiserror::Error;

use super::CompositionResult;
use crate::composition::{repair_ratios_traced, CompositionError};
use crate::palette::Palette;
use crate::scalar::{self, Exact};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is not a JSON object: {0}")]
    Unparseable(String),
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("field {0} has the wrong type")]
    WrongType(&'static str),
    #[error("missing odorant: {0}")]
    MissingOdorant(String),
    #[error("unknown odorant: {0}")]
    UnknownOdorant(String),
    #[error("ratio for {0} is not a number")]
    InvalidRatio(String),
    #[error("composition cannot be repaired: {0}")]
    Repair(CompositionError),
}

impl ParseError {
    /// Stable code used in retry hints and API errors.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Unparseable(_) => "unparseable_json",
            ParseError::MissingField(_) => "missing_field",
            ParseError::WrongType(_) => "wrong_type",
            ParseError::MissingOdorant(_) => "missing_odorant",
            ParseError::UnknownOdorant(_) => "unknown_odorant",
            ParseError::InvalidRatio(_) => "invalid_ratio",
            ParseError::Repair(_) => "degenerate_composition",
        }
    }

    /// Whether [`parse_response_lenient`] can still produce a result.
    pub fn is_repairable(&self) -> bool {
        matches!(self, ParseError::MissingOdorant(_))
    }
}

/// Removes surrounding whitespace and one enclosing Markdown code fence.
pub fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = rest.trim_end().strip_suffix("```") else {
        return trimmed;
    };
    // Drop the info string (e.g. `json`) on the opening line.
    match body.split_once('\n') {
        Some((info, inner)) if !info.contains('{') => inner.trim(),
        _ => body.trim(),
    }
}

/// Parses a reply, requiring every palette odorant to be listed.
pub fn parse_response(raw: &str, palette: &Palette) -> Result<CompositionResult, ParseError> {
    parse(raw, palette, true)
}

/// Like [`parse_response`] but fills unlisted odorants with zero.
pub fn parse_response_lenient(
    raw: &str,
    palette: &Palette,
) -> Result<CompositionResult, ParseError> {
    parse(raw, palette, false)
}

fn parse(raw: &str, palette: &Palette, require_all: bool) -> Result<CompositionResult, ParseError> {
    let body = strip_fence(raw);
    let value: Value =
        serde_json::from_str(body).map_err(|e| ParseError::Unparseable(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(ParseError::Unparseable("top level is not an object".into()));
    };
    let ratios = match obj.get("scent_ratios") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ParseError::WrongType("scent_ratios")),
        None => return Err(ParseError::MissingField("scent_ratios")),
    };
    let justification = match obj.get("justification") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ParseError::WrongType("justification")),
        None => return Err(ParseError::MissingField("justification")),
    };
    let changes_made = match obj.get("changes_made") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(ParseError::WrongType("changes_made")),
    };

    let raw_ratios = exact_ratios(ratios, palette)?;
    let missing = palette.names().find(|n| !ratios.contains_key(*n));
    if let Some(name) = missing {
        if require_all {
            return Err(ParseError::MissingOdorant(name.to_owned()));
        }
    }
    let repair = repair_ratios_traced(raw_ratios, palette).map_err(ParseError::Repair)?;
    let warnings = repair.ratios.active_band_warning().into_iter().collect();
    Ok(CompositionResult {
        ratios: repair.ratios,
        justification,
        changes_made,
        repaired: repair.modified || missing.is_some(),
        warnings,
    })
}

fn exact_ratios(
    ratios: &Map<String, Value>,
    palette: &Palette,
) -> Result<Vec<(String, Exact)>, ParseError> {
    ratios
        .iter()
        .map(|(name, v)| {
            if palette.index_of(name).is_none() {
                return Err(ParseError::UnknownOdorant(name.clone()));
            }
            let exact = match v {
                Value::Number(n) => scalar::exact_from_json(n),
                Value::String(s) => scalar::parse_decimal(s),
                _ => None,
            }
            .ok_or_else(|| ParseError::InvalidRatio(name.clone()))?;
            Ok((name.clone(), exact))
        })
        .collect()
}
