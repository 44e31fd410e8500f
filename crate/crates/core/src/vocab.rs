//! Token space shared by every stage of the pipeline.
//!
//! Ids are laid out in four contiguous, disjoint blocks:
//!
//! | class     | ids                                   | rendering        |
//! |-----------|---------------------------------------|------------------|
//! | text      | `0..256`                              | the raw byte     |
//! | image     | `256..256 + image_vocab_size`         | `IMG{k}`         |
//! | sentinel  | next 16 ids                           | `<mask:0>`..`<mask:15>` |
//! | end       | last id                               | `<eod>`          |

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Number of byte-level text tokens.
pub const TEXT_BASE_SIZE: u32 = 256;
/// Number of enumerated mask sentinels.
pub const NUM_SENTINELS: u32 = 16;
/// Codebook size used when none is configured.
pub const DEFAULT_IMAGE_VOCAB_SIZE: u32 = 1024;

const MASK_PREFIX: &[u8] = b"<mask:";
const EOD_TEXT: &[u8] = b"<eod>";
const IMG_PREFIX: &[u8] = b"IMG";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("malformed special token {text:?} at byte {position}")]
    Malformed { position: usize, text: String },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("unparseable rendered token {0:?}")]
    BadRendering(String),
}

/// Token classes, used for filtering statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Text,
    Image,
    Sentinel,
    Eod,
}

/// A decoded token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Byte(u8),
    Image(u32),
    Sentinel(u8),
    Eod,
}

impl Token {
    pub fn class(self) -> TokenClass {
        match self {
            Token::Byte(_) => TokenClass::Text,
            Token::Image(_) => TokenClass::Image,
            Token::Sentinel(_) => TokenClass::Sentinel,
            Token::Eod => TokenClass::Eod,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    image_vocab_size: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_IMAGE_VOCAB_SIZE)
    }
}

impl Vocab {
    pub fn new(image_vocab_size: u32) -> Self {
        Self { image_vocab_size }
    }

    pub fn text_base_size(&self) -> u32 {
        TEXT_BASE_SIZE
    }

    pub fn image_vocab_size(&self) -> u32 {
        self.image_vocab_size
    }

    pub fn total_size(&self) -> u32 {
        TEXT_BASE_SIZE + self.image_vocab_size + NUM_SENTINELS + 1
    }

    pub fn byte(&self, b: u8) -> TokenId {
        b as TokenId
    }

    /// Id of image token `k`. Panics if `k` is outside the codebook.
    pub fn image(&self, k: u32) -> TokenId {
        assert!(k < self.image_vocab_size, "image token {k} out of range");
        TEXT_BASE_SIZE + k
    }

    /// Id of sentinel `<mask:k>`. Panics if `k >= 16`.
    pub fn sentinel(&self, k: u32) -> TokenId {
        assert!(k < NUM_SENTINELS, "sentinel {k} out of range");
        TEXT_BASE_SIZE + self.image_vocab_size + k
    }

    pub fn eod(&self) -> TokenId {
        TEXT_BASE_SIZE + self.image_vocab_size + NUM_SENTINELS
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        let image_start = TEXT_BASE_SIZE;
        let sentinel_start = image_start + self.image_vocab_size;
        let eod = sentinel_start + NUM_SENTINELS;
        if id < image_start {
            Some(Token::Byte(id as u8))
        } else if id < sentinel_start {
            Some(Token::Image(id - image_start))
        } else if id < eod {
            Some(Token::Sentinel((id - sentinel_start) as u8))
        } else if id == eod {
            Some(Token::Eod)
        } else {
            None
        }
    }

    pub fn class(&self, id: TokenId) -> Option<TokenClass> {
        self.token(id).map(Token::class)
    }

    /// Index of the sentinel if `id` is one.
    pub fn sentinel_index(&self, id: TokenId) -> Option<u32> {
        match self.token(id) {
            Some(Token::Sentinel(k)) => Some(k as u32),
            _ => None,
        }
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        matches!(self.token(id), Some(Token::Sentinel(_) | Token::Eod))
    }

    pub fn id_of(&self, token: Token) -> Result<TokenId, VocabError> {
        Ok(match token {
            Token::Byte(b) => self.byte(b),
            Token::Image(k) if k < self.image_vocab_size => self.image(k),
            Token::Sentinel(k) if (k as u32) < NUM_SENTINELS => self.sentinel(k as u32),
            Token::Eod => self.eod(),
            Token::Image(k) => return Err(VocabError::BadRendering(format!("IMG{k}"))),
            Token::Sentinel(k) => return Err(VocabError::BadRendering(format!("<mask:{k}>"))),
        })
    }

    /// Encodes raw bytes. `<mask:K>`, `<eod>` and `IMG{k}` are recognized as single tokens;
    /// everything else is one token per byte.
    pub fn encode(&self, text: &[u8]) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::with_capacity(text.len());
        let mut i = 0;
        while i < text.len() {
            let rest = &text[i..];
            if rest.starts_with(EOD_TEXT) {
                out.push(self.eod());
                i += EOD_TEXT.len();
                continue;
            }
            if rest.starts_with(MASK_PREFIX) {
                let digits = leading_digits(&rest[MASK_PREFIX.len()..]);
                let close = MASK_PREFIX.len() + digits;
                if digits > 0 && rest.get(close) == Some(&b'>') {
                    let text_of = &rest[..=close];
                    let k = parse_canonical(&rest[MASK_PREFIX.len()..close])
                        .filter(|&k| k < NUM_SENTINELS as u64)
                        .ok_or_else(|| malformed(i, text_of))?;
                    out.push(self.sentinel(k as u32));
                    i += close + 1;
                    continue;
                }
            }
            if rest.starts_with(IMG_PREFIX) {
                let digits = leading_digits(&rest[IMG_PREFIX.len()..]);
                if digits > 0 {
                    let end = IMG_PREFIX.len() + digits;
                    let k = parse_canonical(&rest[IMG_PREFIX.len()..end])
                        .filter(|&k| k < self.image_vocab_size as u64)
                        .ok_or_else(|| malformed(i, &rest[..end]))?;
                    out.push(self.image(k as u32));
                    i += end;
                    continue;
                }
            }
            out.push(self.byte(text[i]));
            i += 1;
        }
        Ok(out)
    }

    pub fn encode_str(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        self.encode(text.as_bytes())
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::with_capacity(tokens.len());
        for &id in tokens {
            match self.token(id).ok_or(VocabError::UnknownId(id))? {
                Token::Byte(b) => out.push(b),
                Token::Image(k) => out.extend_from_slice(format!("IMG{k}").as_bytes()),
                Token::Sentinel(k) => out.extend_from_slice(format!("<mask:{k}>").as_bytes()),
                Token::Eod => out.extend_from_slice(EOD_TEXT),
            }
        }
        Ok(out)
    }

    /// Decodes to a `String`, replacing invalid UTF-8 sequences.
    pub fn decode_lossy(&self, tokens: &[TokenId]) -> Result<String, VocabError> {
        Ok(String::from_utf8_lossy(&self.decode(tokens)?).into_owned())
    }

    /// Renders one token for the record format. Printable ASCII bytes render as themselves,
    /// other bytes as `<0xHH>`.
    pub fn render(&self, id: TokenId) -> Result<String, VocabError> {
        Ok(match self.token(id).ok_or(VocabError::UnknownId(id))? {
            Token::Byte(b) if (0x20..0x7f).contains(&b) => (b as char).to_string(),
            Token::Byte(b) => format!("<0x{b:02X}>"),
            Token::Image(k) => format!("IMG{k}"),
            Token::Sentinel(k) => format!("<mask:{k}>"),
            Token::Eod => "<eod>".to_string(),
        })
    }

    pub fn render_all(&self, tokens: &[TokenId]) -> Result<Vec<String>, VocabError> {
        tokens.iter().map(|&t| self.render(t)).collect()
    }

    /// Inverse of [`Vocab::render`].
    pub fn parse_rendered(&self, s: &str) -> Result<TokenId, VocabError> {
        let bad = || VocabError::BadRendering(s.to_string());
        let b = s.as_bytes();
        if b.len() == 1 && (0x20..0x7f).contains(&b[0]) {
            return Ok(self.byte(b[0]));
        }
        if b.len() == 6 && s.starts_with("<0x") && s.ends_with('>') {
            let hex = &s[3..5];
            if hex.bytes().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_lowercase()) {
                let v = u8::from_str_radix(hex, 16).map_err(|_| bad())?;
                if !(0x20..0x7f).contains(&v) {
                    return Ok(self.byte(v));
                }
            }
            return Err(bad());
        }
        let ids = self.encode(b).map_err(|_| bad())?;
        match ids.as_slice() {
            [id] if self.class(*id) != Some(TokenClass::Text) => Ok(*id),
            _ => Err(bad()),
        }
    }

    pub fn parse_rendered_all<S: AsRef<str>>(&self, items: &[S]) -> Result<Vec<TokenId>, VocabError> {
        items.iter().map(|s| self.parse_rendered(s.as_ref())).collect()
    }
}

fn leading_digits(b: &[u8]) -> usize {
    b.iter().take_while(|c| c.is_ascii_digit()).count()
}

/// Parses a decimal with no redundant leading zero; `None` for non-canonical or overflowing input.
fn parse_canonical(digits: &[u8]) -> Option<u64> {
    if digits.is_empty() || digits.len() > 18 || (digits.len() > 1 && digits[0] == b'0') {
        return None;
    }
    std::str::from_utf8(digits).ok()?.parse().ok()
}

fn malformed(position: usize, text: &[u8]) -> VocabError {
    VocabError::Malformed {
        position,
        text: String::from_utf8_lossy(text).into_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_round_trip() {
        let v = Vocab::default();
        assert!(v.encode(b"").unwrap().is_empty());
        assert!(v.decode(&[]).unwrap().is_empty());
    }

    #[test]
    fn sentinel_then_bytes() {
        let v = Vocab::default();
        assert_eq!(
            v.encode(b"<mask:0>ab").unwrap(),
            vec![v.sentinel(0), v.byte(b'a'), v.byte(b'b')]
        );
    }

    #[test]
    fn image_tokens_and_space() {
        let v = Vocab::new(1024);
        let ids = v.encode(b"IMG3 IMG3").unwrap();
        assert_eq!(ids, vec![v.image(3), v.byte(b' '), v.image(3)]);
        assert_eq!(v.decode(&ids).unwrap(), b"IMG3 IMG3");
    }

    #[test]
    fn decode_specials() {
        let v = Vocab::default();
        assert_eq!(v.decode(&[v.sentinel(15)]).unwrap(), b"<mask:15>");
        let ids = v.encode(b"a<eod>").unwrap();
        assert_eq!(ids, vec![v.byte(b'a'), v.eod()]);
        assert_eq!(v.decode(&ids).unwrap(), b"a<eod>");
    }

    #[test]
    fn malformed_specials_are_rejected_with_position() {
        let v = Vocab::new(1024);
        assert_eq!(
            v.encode(b"xy<mask:16>").unwrap_err(),
            VocabError::Malformed { position: 2, text: "<mask:16>".into() }
        );
        assert!(matches!(v.encode(b"IMG1024"), Err(VocabError::Malformed { position: 0, .. })));
        assert!(matches!(v.encode(b"<mask:01>"), Err(VocabError::Malformed { .. })));
        assert!(matches!(v.encode(b"IMG007"), Err(VocabError::Malformed { .. })));
        // Near misses are plain bytes.
        assert_eq!(v.encode(b"<mask:x>").unwrap().len(), 8);
        assert_eq!(v.encode(b"IMG").unwrap().len(), 3);
        assert_eq!(v.encode(b"<mask:3").unwrap().len(), 7);
    }

    #[test]
    fn unknown_id_is_rejected() {
        let v = Vocab::new(4);
        assert_eq!(v.decode(&[v.total_size()]), Err(VocabError::UnknownId(v.total_size())));
    }

    #[test]
    fn classes_are_disjoint_and_contiguous() {
        let v = Vocab::new(1024);
        assert_eq!(v.total_size(), 256 + 1024 + 17);
        let mut last = TokenClass::Text;
        let mut transitions = 0;
        for id in 0..v.total_size() {
            let c = v.class(id).unwrap();
            if c != last {
                transitions += 1;
                last = c;
            }
            // The id -> token -> id mapping is a bijection.
            assert_eq!(v.id_of(v.token(id).unwrap()).unwrap(), id);
        }
        assert_eq!(transitions, 3);
        assert_eq!(v.class(v.total_size()), None);
        let sentinels = (0..v.total_size()).filter(|&i| v.class(i) == Some(TokenClass::Sentinel)).count();
        assert_eq!(sentinels, 16);
    }

    #[test]
    fn rendering_round_trips_every_id() {
        let v = Vocab::new(1024);
        for id in 0..v.total_size() {
            let r = v.render(id).unwrap();
            assert_eq!(v.parse_rendered(&r).unwrap(), id, "{r}");
        }
        assert!(v.parse_rendered("ab").is_err());
        assert!(v.parse_rendered("<0x41>").is_err());
    }

    fn piece() -> impl Strategy<Value = Vec<u8>> {
        prop_oneof![
            any::<u8>().prop_map(|b| vec![b]),
            (0u32..16).prop_map(|k| format!("<mask:{k}>").into_bytes()),
            (0u32..1024).prop_map(|k| format!("IMG{k}").into_bytes()),
            Just(b"<eod>".to_vec()),
            Just(b"<mask:".to_vec()),
            Just(b"IMG".to_vec()),
            Just(b"<".to_vec()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn decode_inverts_encode(pieces in proptest::collection::vec(piece(), 0..24)) {
            let v = Vocab::new(1024);
            let text: Vec<u8> = pieces.concat();
            // Inputs that accidentally spell a malformed special token are out of contract.
            if let Ok(ids) = v.encode(&text) {
                prop_assert_eq!(v.decode(&ids).unwrap(), text);
            }
        }
    }
}
