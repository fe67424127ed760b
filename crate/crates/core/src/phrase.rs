use std::fmt;

/// Marker joining the components of a merged phrase.
pub const JOIN_MARKER: char = '_';

/// Escape a raw token so that it never contains the join marker.
pub fn escape_token(raw: &str) -> String {
    if !raw.contains(['&', JOIN_MARKER]) {
        return raw.to_string();
    }
    raw.replace('&', "&amp;").replace(JOIN_MARKER, "&us;")
}

pub fn unescape_token(escaped: &str) -> String {
    if !escaped.contains('&') {
        return escaped.to_string();
    }
    escaped.replace("&us;", "_").replace("&amp;", "&")
}

/// A sequence of one or more raw tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phrase(Vec<String>);

impl Phrase {
    pub fn new(tokens: Vec<String>) -> Self {
        Phrase(tokens)
    }

    pub fn word(token: &str) -> Self {
        Phrase(vec![token.to_string()])
    }

    /// Parse a space-separated phrase.
    pub fn from_spaced(text: &str) -> Self {
        Phrase(text.split_whitespace().map(str::to_string).collect())
    }

    /// Parse the underscore-joined form produced by [`Phrase::joined`].
    pub fn from_joined(text: &str) -> Self {
        Phrase(text.split(JOIN_MARKER).map(unescape_token).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Components escaped and joined with the join marker.
    pub fn joined(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|t| escape_token(t)).collect();
        parts.join("_")
    }

    pub fn spaced(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spaced())
    }
}

impl From<&[&str]> for Phrase {
    fn from(tokens: &[&str]) -> Self {
        Phrase(tokens.iter().map(|t| t.to_string()).collect())
    }
}
