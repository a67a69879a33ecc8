use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::MASK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    NameCondition,
    ConditionOnly,
    LastNameMasked,
    FirstNameMasked,
    Freeform,
}

/// Text with one masked span of `span_piece_count` pieces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTemplate {
    pub prefix: String,
    pub span_piece_count: usize,
    pub suffix: String,
    pub kind: TemplateKind,
}

impl MaskedTemplate {
    pub fn new(prefix: impl Into<String>, suffix: impl Into<String>, span_piece_count: usize, kind: TemplateKind) -> Result<Self> {
        if span_piece_count == 0 {
            return Err(Error::InvalidInput("span must cover at least one piece".into()));
        }
        Ok(Self {
            prefix: prefix.into(),
            span_piece_count,
            suffix: suffix.into(),
            kind,
        })
    }
}

impl fmt::Display for MaskedTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let masks = vec![MASK; self.span_piece_count].join(" ");
        let parts: Vec<&str> = [self.prefix.as_str(), masks.as_str(), self.suffix.as_str()]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect();
        f.write_str(&parts.join(" "))
    }
}
