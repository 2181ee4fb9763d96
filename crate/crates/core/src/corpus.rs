//! Labels shared across the pipeline: vowels, segment identities, segments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vowel {
    A,
    E,
    I,
    O,
    U,
}

impl Vowel {
    pub const ALL: [Vowel; 5] = [Vowel::A, Vowel::E, Vowel::I, Vowel::O, Vowel::U];

    pub fn as_str(self) -> &'static str {
        match self {
            Vowel::A => "a",
            Vowel::E => "e",
            Vowel::I => "i",
            Vowel::O => "o",
            Vowel::U => "u",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Vowel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Vowel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Vowel::A),
            "e" => Ok(Vowel::E),
            "i" => Ok(Vowel::I),
            "o" => Ok(Vowel::O),
            "u" => Ok(Vowel::U),
            other => Err(Error::Config(format!("unknown vowel `{other}`"))),
        }
    }
}

/// Identity of one vocalization: who, which vowel, and its ordinal in the
/// source material.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub subject: String,
    pub vowel: Vowel,
    pub index: usize,
}

impl SegmentKey {
    pub fn new(subject: impl Into<String>, vowel: Vowel, index: usize) -> Self {
        Self {
            subject: subject.into(),
            vowel,
            index,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:03}", self.subject, self.vowel, self.index)
    }
}

impl FromStr for SegmentKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("bad segment id `{s}`")));
        }
        let index = parts[2]
            .parse()
            .map_err(|_| Error::Config(format!("bad segment index in `{s}`")))?;
        Ok(SegmentKey::new(parts[0], parts[1].parse()?, index))
    }
}

/// A single-vocalization audio segment.
#[derive(Debug, Clone)]
pub struct Segment {
    pub key: SegmentKey,
    pub audio: AudioBuffer,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_display_parses_back() {
        let k = SegmentKey::new("S03", Vowel::O, 12);
        assert_eq!(k.to_string(), "S03/o/012");
        assert_eq!(k.to_string().parse::<SegmentKey>().unwrap(), k);
        assert!("S03/x/1".parse::<SegmentKey>().is_err());
    }
}
