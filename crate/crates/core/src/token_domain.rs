//! Tokens, acoustic frames, and the 1:2 interleaved schedule.
//!
//! The generation stream alternates one text token with two coarse acoustic
//! codes. Everything here is a pure value type; (de)interleaving and
//! validation never touch model state.

use crate::error::{Error, Result};

/// A text token with its special-role flags resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TextToken {
    pub id: u32,
    pub is_pad: bool,
    pub is_eos: bool,
}

/// Fixed id layout for the text vocabulary: 0 is pad, 1 is eos, the rest is
/// content. Guarantees exactly one pad and one eos, and pad != eos.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextVocab {
    pub size: usize,
}

impl TextVocab {
    pub const PAD_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;

    pub fn new(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::Config(format!(
                "text vocab needs pad, eos and at least one content id, got {}",
                size
            )));
        }
        Ok(TextVocab { size })
    }

    pub fn token(&self, id: u32) -> Result<TextToken> {
        if id as usize >= self.size {
            return Err(Error::CodeOutOfRange { value: id, size: self.size });
        }
        Ok(TextToken {
            id,
            is_pad: id == Self::PAD_ID,
            is_eos: id == Self::EOS_ID,
        })
    }

    pub fn pad(&self) -> TextToken {
        TextToken { id: Self::PAD_ID, is_pad: true, is_eos: false }
    }

    pub fn eos(&self) -> TextToken {
        TextToken { id: Self::EOS_ID, is_pad: false, is_eos: true }
    }

    /// First id usable for ordinary content tokens.
    pub fn first_content_id(&self) -> u32 {
        2
    }
}

/// The reserved coarse code signalling end-of-generation.
pub fn end_of_audio_code(v: usize) -> u32 {
    (v - 1) as u32
}

/// A single codebook index at one refinement level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcousticCode {
    pub level: usize,
    pub value: u32,
}

impl AcousticCode {
    pub fn new(level: usize, value: u32, n_levels: usize, v: usize) -> Result<Self> {
        if level >= n_levels {
            return Err(Error::LevelOutOfRange { level, max: n_levels });
        }
        if value as usize >= v {
            return Err(Error::CodeOutOfRange { value, size: v });
        }
        Ok(AcousticCode { level, value })
    }
}

/// One time step's full code vector: position `j` holds the level-`j` index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcousticFrame {
    codes: Vec<u32>,
}

impl AcousticFrame {
    pub fn new(codes: Vec<u32>, v: usize) -> Result<Self> {
        for &c in &codes {
            if c as usize >= v {
                return Err(Error::CodeOutOfRange { value: c, size: v });
            }
        }
        Ok(AcousticFrame { codes })
    }

    pub fn n_levels(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, level: usize) -> u32 {
        self.codes[level]
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterleavedItem {
    Text(TextToken),
    /// A coarse (level-0) code value.
    Code(u32),
}

/// Alternating text tokens and coarse codes obeying the 1:2 schedule.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InterleavedSequence {
    pub items: Vec<InterleavedItem>,
}

impl InterleavedSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Merge a text stream and a coarse-code stream at the fixed 1:2 ratio.
///
/// When the codes outlast the text, the text stream continues with `pad`
/// so the schedule never stalls. Too few codes for the given text is an
/// error: the ratio leaves no position for the surplus text.
pub fn interleave(
    text: &[TextToken],
    codes: &[u32],
    pad: TextToken,
) -> Result<InterleavedSequence> {
    if codes.is_empty() {
        return Err(Error::EmptyInput("interleave needs at least one code".into()));
    }
    if codes.len() < 2 * text.len() {
        return Err(Error::Ratio(format!(
            "{} codes cannot host {} text tokens at ratio 1:2",
            codes.len(),
            text.len()
        )));
    }
    let groups = codes.len().div_ceil(2);
    let mut items = Vec::with_capacity(groups + codes.len());
    for g in 0..groups {
        let token = text.get(g).copied().unwrap_or(pad);
        items.push(InterleavedItem::Text(token));
        for &c in codes.iter().skip(2 * g).take(2) {
            items.push(InterleavedItem::Code(c));
        }
    }
    Ok(InterleavedSequence { items })
}

/// Split an interleaved sequence back into its text and code streams.
///
/// Inverse of [`interleave`] on the pad-extended text stream.
pub fn deinterleave(seq: &InterleavedSequence) -> Result<(Vec<TextToken>, Vec<u32>)> {
    let mut text = Vec::new();
    let mut codes = Vec::new();
    let mut codes_in_group: Option<usize> = None;
    for (index, item) in seq.items.iter().enumerate() {
        match (item, &mut codes_in_group) {
            (InterleavedItem::Code(_), None) => {
                return Err(Error::MalformedSequence {
                    index,
                    reason: "code precedes any text token".into(),
                });
            }
            (InterleavedItem::Code(c), Some(n)) => {
                if *n == 2 {
                    return Err(Error::MalformedSequence {
                        index,
                        reason: "more than two codes after a text token".into(),
                    });
                }
                codes.push(*c);
                *n += 1;
            }
            (InterleavedItem::Text(t), state) => {
                if let Some(n) = state {
                    if *n != 2 {
                        return Err(Error::MalformedSequence {
                            index,
                            reason: format!("text token after {} codes, expected 2", n),
                        });
                    }
                }
                text.push(*t);
                *state = Some(0);
            }
        }
    }
    Ok((text, codes))
}

/// True iff the sequence obeys the 1:2 schedule. The final group may be
/// truncated by end-of-generation; everything earlier must be exact.
pub fn validate_ratio(seq: &InterleavedSequence) -> bool {
    deinterleave(seq).is_ok()
}

// ---------------------------------------------------------------------------
// Text serialization: `T <id>` / `A <value>` records, one per line; code
// sequences as frame-major whitespace-separated integers, one frame per line.
// ---------------------------------------------------------------------------

pub fn write_interleaved(seq: &InterleavedSequence) -> String {
    let mut out = String::new();
    for item in &seq.items {
        match item {
            InterleavedItem::Text(t) => out.push_str(&format!("T {}\n", t.id)),
            InterleavedItem::Code(c) => out.push_str(&format!("A {}\n", c)),
        }
    }
    out
}

pub fn parse_interleaved(text: &str, vocab: &TextVocab) -> Result<InterleavedSequence> {
    let mut items = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        let value: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {}: expected `T <id>` or `A <value>`", lineno + 1)))?;
        match tag {
            "T" => items.push(InterleavedItem::Text(vocab.token(value)?)),
            "A" => items.push(InterleavedItem::Code(value)),
            other => {
                return Err(Error::Parse(format!("line {}: unknown tag `{}`", lineno + 1, other)));
            }
        }
    }
    Ok(InterleavedSequence { items })
}

pub fn write_frames(frames: &[AcousticFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let line: Vec<String> = f.codes().iter().map(|c| c.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_frames(text: &str, n_levels: usize, v: usize) -> Result<Vec<AcousticFrame>> {
    let mut frames = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let codes: Vec<u32> = line
            .split_whitespace()
            .map(|s| s.parse::<u32>().map_err(|_| Error::Parse(format!("line {}: bad code `{}`", lineno + 1, s))))
            .collect::<Result<_>>()?;
        if codes.len() != n_levels {
            return Err(Error::Parse(format!(
                "line {}: expected {} codes per frame, got {}",
                lineno + 1,
                n_levels,
                codes.len()
            )));
        }
        frames.push(AcousticFrame::new(codes, v)?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> TextVocab {
        TextVocab::new(16).unwrap()
    }

    fn tok(id: u32) -> TextToken {
        vocab().token(id).unwrap()
    }

    #[test]
    fn interleave_even_split() {
        let seq = interleave(&[tok(3), tok(4)], &[10, 11, 12, 13], vocab().pad()).unwrap();
        let expected = vec![
            InterleavedItem::Text(tok(3)),
            InterleavedItem::Code(10),
            InterleavedItem::Code(11),
            InterleavedItem::Text(tok(4)),
            InterleavedItem::Code(12),
            InterleavedItem::Code(13),
        ];
        assert_eq!(seq.items, expected);
    }

    #[test]
    fn interleave_pads_when_codes_outlast_text() {
        let seq = interleave(&[tok(3)], &[10, 11, 12, 13], vocab().pad()).unwrap();
        assert_eq!(seq.items[3], InterleavedItem::Text(vocab().pad()));
        assert!(validate_ratio(&seq));
    }

    #[test]
    fn interleave_rejects_surplus_text() {
        let err = interleave(&[tok(3), tok(4)], &[10], vocab().pad()).unwrap_err();
        assert!(matches!(err, Error::Ratio(_)));
    }

    #[test]
    fn interleave_rejects_empty_codes() {
        let err = interleave(&[tok(3)], &[], vocab().pad()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn deinterleave_simple() {
        let seq = InterleavedSequence {
            items: vec![
                InterleavedItem::Text(tok(5)),
                InterleavedItem::Code(1),
                InterleavedItem::Code(2),
            ],
        };
        let (text, codes) = deinterleave(&seq).unwrap();
        assert_eq!(text, vec![tok(5)]);
        assert_eq!(codes, vec![1, 2]);
    }

    #[test]
    fn deinterleave_rejects_leading_code() {
        let seq = InterleavedSequence {
            items: vec![InterleavedItem::Code(1), InterleavedItem::Text(tok(5))],
        };
        assert!(matches!(
            deinterleave(&seq).unwrap_err(),
            Error::MalformedSequence { index: 0, .. }
        ));
    }

    #[test]
    fn validate_ratio_catches_single_code_groups() {
        let seq = InterleavedSequence {
            items: vec![
                InterleavedItem::Text(tok(3)),
                InterleavedItem::Code(1),
                InterleavedItem::Text(tok(4)),
                InterleavedItem::Code(2),
            ],
        };
        assert!(!validate_ratio(&seq));
    }

    #[test]
    fn validate_ratio_accepts_empty_and_truncated() {
        assert!(validate_ratio(&InterleavedSequence::default()));
        let seq = interleave(&[tok(3)], &[10, 11, 12], vocab().pad()).unwrap();
        assert!(validate_ratio(&seq));
    }

    #[test]
    fn roundtrip_identity_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = vocab();
        for _ in 0..100 {
            let n_text = rng.gen_range(0..8usize);
            let min_codes = (2 * n_text).max(1);
            let n_codes = rng.gen_range(min_codes..min_codes + 9);
            let text: Vec<TextToken> =
                (0..n_text).map(|_| v.token(rng.gen_range(2..16)).unwrap()).collect();
            let codes: Vec<u32> = (0..n_codes).map(|_| rng.gen_range(0..256)).collect();
            let seq = interleave(&text, &codes, v.pad()).unwrap();
            assert!(validate_ratio(&seq));
            let (text2, codes2) = deinterleave(&seq).unwrap();
            assert_eq!(codes2, codes, "codes survive the round trip");
            assert_eq!(&text2[..n_text], &text[..], "original text preserved in order");
            assert!(text2[n_text..].iter().all(|t| t.is_pad), "extension is all pad");
        }
    }

    #[test]
    fn text_serialization_roundtrip() {
        let seq = interleave(&[tok(3), tok(4)], &[10, 11, 12, 13, 14], vocab().pad()).unwrap();
        let text = write_interleaved(&seq);
        let parsed = parse_interleaved(&text, &vocab()).unwrap();
        assert_eq!(parsed, seq);
    }

    #[test]
    fn frame_file_roundtrip_and_validation() {
        let frames = vec![
            AcousticFrame::new(vec![1, 2, 3], 8).unwrap(),
            AcousticFrame::new(vec![4, 5, 6], 8).unwrap(),
        ];
        let text = write_frames(&frames);
        assert_eq!(parse_frames(&text, 3, 8).unwrap(), frames);
        assert!(parse_frames(&text, 4, 8).is_err());
        assert!(parse_frames("9 9 9\n", 3, 8).is_err());
    }

    #[test]
    fn acoustic_code_bounds() {
        assert!(AcousticCode::new(2, 7, 8, 8).is_ok());
        assert!(matches!(
            AcousticCode::new(8, 0, 8, 8).unwrap_err(),
            Error::LevelOutOfRange { .. }
        ));
        assert!(matches!(
            AcousticCode::new(0, 8, 8, 8).unwrap_err(),
            Error::CodeOutOfRange { .. }
        ));
    }
}
