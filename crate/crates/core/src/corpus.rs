//! Raw tweet ingestion, deterministic cleaning and the canonical record format.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::io;
use crate::taxonomy::Taxonomy;

/// A tweet as scraped, before filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTweet {
    pub id: String,
    pub text: String,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    /// Carried through, never used by the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotag: Option<String>,
    #[serde(default)]
    pub is_retweet: bool,
    #[serde(default)]
    pub is_quote: bool,
    #[serde(default)]
    pub has_media: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceType {
    Anecdotal,
    Expert,
    Study,
    Fact,
    Normative,
    None,
}

/// One cleaned corpus item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweetRecord {
    pub id: String,
    pub topic: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_claim_or_argument: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_type: Option<EvidenceType>,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, topic: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            topic: topic.into(),
            text: text.into(),
            narrative_label: None,
            is_claim_or_argument: None,
            evidence_type: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.narrative_label = Some(label);
        self
    }

    pub fn from_raw(raw: &RawTweet) -> Self {
        Self::new(raw.id.clone(), raw.topic.clone(), clean_text(&raw.text))
    }
}

fn is_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_mention(token: &str) -> bool {
    token.len() > 1 && token.starts_with('@')
}

const MEDIA_PLACEHOLDERS: &[&str] = &[
    "<media>", "[media]", "{media}", "<image>", "[image]", "<video>", "[video]", "<gif>", "[gif]",
];

fn is_media_placeholder(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.starts_with("pic.twitter.com/") || MEDIA_PLACEHOLDERS.contains(&lower.as_str())
}

/// Replace literal `\uXXXX` escapes (including surrogate pairs) with the
/// character they denote. Invalid escapes are left as they are.
fn decode_hex_escapes(s: &str) -> String {
    fn hex4(b: &[u8]) -> Option<u32> {
        if b.len() < 4 {
            return None;
        }
        let s = std::str::from_utf8(&b[..4]).ok()?;
        u32::from_str_radix(s, 16).ok()
    }
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' && bytes.get(i + 1) == Some(&b'u') {
            if let Some(hi) = hex4(&bytes[i + 2..]) {
                if (0xD800..0xDC00).contains(&hi)
                    && bytes.get(i + 6) == Some(&b'\\')
                    && bytes.get(i + 7) == Some(&b'u')
                {
                    if let Some(lo) = hex4(&bytes[i + 8..]).filter(|lo| (0xDC00..0xE000).contains(lo)) {
                        let cp = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
                        if let Some(c) = char::from_u32(cp) {
                            out.push(c);
                            i += 12;
                            continue;
                        }
                    }
                }
                if let Some(c) = char::from_u32(hi) {
                    out.push(c);
                    i += 6;
                    continue;
                }
            }
        }
        // Advance by one full character.
        let c = s[i..].chars().next().unwrap();
        out.push(c);
        i += c.len_utf8();
    }
    out
}

fn transliterate(c: char) -> Option<&'static str> {
    Some(match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' | '\u{02BC}' => "'",
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{00AB}' | '\u{00BB}' => "\"",
        '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}' => "-",
        '\u{2026}' => "...",
        _ => return None,
    })
}

fn clean_once(raw: &str) -> String {
    // Steps 1-3: whitespace-token filters.
    let kept: Vec<&str> = raw
        .split_whitespace()
        .filter(|t| !is_url(t) && !is_mention(t) && !is_media_placeholder(t))
        .collect();
    let joined = kept.join(" ");

    // Step 4: escapes, transliteration, decomposition.
    let decoded = decode_hex_escapes(&joined);
    let mut mapped = String::with_capacity(decoded.len());
    for c in decoded.chars() {
        match transliterate(c) {
            Some(rep) => mapped.push_str(rep),
            None => mapped.push(c),
        }
    }
    let decomposed: String = mapped.nfkd().collect();

    // Step 5: keep printable 7-bit characters and whitespace.
    let ascii: String = decomposed
        .chars()
        .filter(|c| c.is_ascii_graphic() || c.is_ascii_whitespace())
        .collect();

    // Step 6.
    ascii.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Clean a raw tweet text.
///
/// Steps run in a fixed order: URL tokens, `@`-mentions and media
/// placeholders are removed; escapes are decoded and compatibility
/// characters transliterated; remaining non-7-bit characters are dropped and
/// whitespace is collapsed. The sequence is repeated until the text stops
/// changing, since dropping a character can expose a new URL or mention
/// token. Hashtags are kept verbatim.
pub fn clean_text(raw: &str) -> String {
    let mut cur = clean_once(raw);
    loop {
        let next = clean_once(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// True when `text` satisfies the cleaned-text invariants.
pub fn is_clean(text: &str) -> bool {
    text.chars().all(|c| c.is_ascii_graphic() || c == ' ')
        && !text.split(' ').any(|t| is_url(t) || is_mention(t) || is_media_placeholder(t))
}

/// Drop retweets, quotes and media tweets, then remove duplicates on the
/// case-folded cleaned text, keeping the first occurrence. Hashtags are part
/// of the key, so texts that differ only in their hashtags are all kept.
pub fn filter_dump(tweets: &[RawTweet]) -> Vec<RawTweet> {
    let mut seen = HashSet::new();
    tweets
        .iter()
        .filter(|t| !t.is_retweet && !t.is_quote && !t.has_media)
        .filter(|t| seen.insert(clean_text(&t.text).to_lowercase()))
        .cloned()
        .collect()
}

/// Load a raw dump and check the id/topic invariants.
pub fn load_raw_dump(path: &Path) -> Result<Vec<RawTweet>> {
    let tweets: Vec<RawTweet> = io::read_jsonl(path)?;
    let mut ids = HashSet::new();
    for t in &tweets {
        if t.id.is_empty() {
            return Err(Error::Invalid(format!("{}: raw tweet with empty id", path.display())));
        }
        if t.topic.is_empty() {
            return Err(Error::Invalid(format!("{}: tweet `{}` has empty topic", path.display(), t.id)));
        }
        if !ids.insert(t.id.as_str()) {
            return Err(Error::DuplicateId(t.id.clone()));
        }
    }
    Ok(tweets)
}

pub fn load_records(path: &Path) -> Result<Vec<TweetRecord>> {
    io::read_jsonl(path)
}

pub fn save_records(records: &[TweetRecord], path: &Path) -> Result<()> {
    io::write_jsonl(path, records)
}

/// Check that every record's topic resolves and its label is in range.
/// Returns the ids of offending records in the error message.
pub fn validate_against(records: &[TweetRecord], taxonomy: &Taxonomy) -> Result<()> {
    let unknown: Vec<&str> = records
        .iter()
        .filter(|r| taxonomy.get(&r.topic).is_none())
        .map(|r| r.id.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Invalid(format!("records with unknown topic: {}", unknown.join(", "))));
    }
    for r in records {
        if let Some(label) = r.narrative_label {
            let set = taxonomy.get(&r.topic).unwrap();
            if label >= set.len() {
                return Err(Error::IndexOutOfRange {
                    topic: r.topic.clone(),
                    index: label,
                    size: set.len(),
                });
            }
        }
    }
    Ok(())
}
