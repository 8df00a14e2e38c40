//! Begin/Inside/Outside tags and span alignment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::B => "B",
            Tag::I => "I",
            Tag::O => "O",
        })
    }
}

/// Inclusive token-index range `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start {
            return Err(Error::Invalid(format!("span end {end} before start {start}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A well-formed tag sequence: never starts with `I`, never has `I` after `O`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Tag>", into = "Vec<Tag>")]
pub struct TagSequence(Vec<Tag>);

impl TagSequence {
    pub fn new(tags: Vec<Tag>) -> Result<Self> {
        if tags.first() == Some(&Tag::I) {
            return Err(Error::Invalid("tag sequence starts with I".into()));
        }
        if let Some(i) = tags.windows(2).position(|w| w[0] == Tag::O && w[1] == Tag::I) {
            return Err(Error::Invalid(format!("tag I follows O at position {}", i + 1)));
        }
        Ok(Self(tags))
    }

    pub fn all_outside(len: usize) -> Self {
        Self(vec![Tag::O; len])
    }

    /// Tags for `len` tokens with `span` marked.
    pub fn from_span(len: usize, span: Option<TokenSpan>) -> Result<Self> {
        let mut tags = vec![Tag::O; len];
        if let Some(span) = span {
            if span.end >= len {
                return Err(Error::Invalid(format!("span {}..={} exceeds {len} tokens", span.start, span.end)));
            }
            tags[span.start] = Tag::B;
            for t in &mut tags[span.start + 1..=span.end] {
                *t = Tag::I;
            }
        }
        Ok(Self(tags))
    }

    pub fn tags(&self) -> &[Tag] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let tags = s
            .split_whitespace()
            .map(|t| match t {
                "B" => Ok(Tag::B),
                "I" => Ok(Tag::I),
                "O" => Ok(Tag::O),
                other => Err(Error::Invalid(format!("unknown tag `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tags)
    }
}

impl TryFrom<Vec<Tag>> for TagSequence {
    type Error = Error;
    fn try_from(v: Vec<Tag>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TagSequence> for Vec<Tag> {
    fn from(t: TagSequence) -> Self {
        t.0
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Earliest contiguous occurrence of `needle` in `haystack`, compared
/// case-insensitively. Empty needles never align.
pub fn align_span(haystack: &[String], needle: &[String]) -> Option<TokenSpan> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    let hay: Vec<String> = haystack.iter().map(|t| t.to_lowercase()).collect();
    let nee: Vec<String> = needle.iter().map(|t| t.to_lowercase()).collect();
    hay.windows(nee.len())
        .position(|w| w == nee.as_slice())
        .map(|start| TokenSpan {
            start,
            end: start + nee.len() - 1,
        })
}
