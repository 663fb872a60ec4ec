//! Deterministic binary encoding for every signed or hashed payload.
//!
//! The encoding is a small self-describing tree. Each value starts with a
//! one-byte tag; integers and lengths are fixed-width big-endian; map keys are
//! short text strings kept in byte order. Decoding is strict: unsorted or
//! duplicate keys, non-minimal booleans, trailing bytes and invalid UTF-8 are
//! all rejected, so every value has exactly one byte representation and
//! `decode(encode(v)) == v` holds bit-for-bit.
//!
//! ```text
//! 0x01 Uint   u64
//! 0x02 Bytes  u32 len | bytes
//! 0x03 Text   u32 len | utf-8
//! 0x04 List   u32 count | values
//! 0x05 Map    u32 count | (u8 key len | key | value)*   keys strictly ascending
//! 0x06 Bool   0x00 | 0x01
//! ```

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

const TAG_UINT: u8 = 0x01;
const TAG_BYTES: u8 = 0x02;
const TAG_TEXT: u8 = 0x03;
const TAG_LIST: u8 = 0x04;
const TAG_MAP: u8 = 0x05;
const TAG_BOOL: u8 = 0x06;

/// Nesting limit for decoding untrusted input.
pub const MAX_DEPTH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unknown tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("map keys not strictly ascending")]
    KeyOrder,
    #[error("invalid utf-8")]
    Utf8,
    #[error("invalid boolean byte")]
    Bool,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("nesting deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("length {0} exceeds remaining input")]
    Length(u64),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unexpected field `{0}`")]
    UnexpectedField(String),
    #[error("field `{0}` has the wrong type")]
    FieldType(&'static str),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Uint(u64),
    Bytes(Vec<u8>),
    Text(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
    Bool(bool),
}

impl Value {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out);
        out
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Value::Uint(n) => {
                out.push(TAG_UINT);
                out.extend_from_slice(&n.to_be_bytes());
            }
            Value::Bytes(b) => {
                out.push(TAG_BYTES);
                out.extend_from_slice(&(b.len() as u32).to_be_bytes());
                out.extend_from_slice(b);
            }
            Value::Text(s) => {
                out.push(TAG_TEXT);
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::List(items) => {
                out.push(TAG_LIST);
                out.extend_from_slice(&(items.len() as u32).to_be_bytes());
                for item in items {
                    item.write(out);
                }
            }
            Value::Map(map) => {
                out.push(TAG_MAP);
                out.extend_from_slice(&(map.len() as u32).to_be_bytes());
                for (k, v) in map {
                    assert!(k.len() <= u8::MAX as usize, "map key too long");
                    out.push(k.len() as u8);
                    out.extend_from_slice(k.as_bytes());
                    v.write(out);
                }
            }
            Value::Bool(b) => {
                out.push(TAG_BOOL);
                out.push(u8::from(*b));
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Value, DecodeError> {
        let mut reader = Reader { buf: bytes, pos: 0 };
        let v = reader.value(0)?;
        let rest = bytes.len() - reader.pos;
        if rest != 0 {
            return Err(DecodeError::Trailing(rest));
        }
        Ok(v)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        // Every element occupies at least one byte, so a count larger than the
        // remaining input is malformed regardless of element type.
        if n > self.buf.len() - self.pos {
            return Err(DecodeError::Length(n as u64));
        }
        Ok(n)
    }

    fn value(&mut self, depth: usize) -> Result<Value, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::TooDeep);
        }
        match self.u8()? {
            TAG_UINT => Ok(Value::Uint(u64::from_be_bytes(
                self.take(8)?.try_into().unwrap(),
            ))),
            TAG_BYTES => {
                let n = self.len()?;
                Ok(Value::Bytes(self.take(n)?.to_vec()))
            }
            TAG_TEXT => {
                let n = self.len()?;
                let raw = self.take(n)?;
                let s = std::str::from_utf8(raw).map_err(|_| DecodeError::Utf8)?;
                Ok(Value::Text(s.to_owned()))
            }
            TAG_LIST => {
                let n = self.len()?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                Ok(Value::List(items))
            }
            TAG_MAP => {
                let n = self.len()?;
                let mut map = BTreeMap::new();
                let mut prev: Option<&[u8]> = None;
                for _ in 0..n {
                    let klen = self.u8()? as usize;
                    let key = self.take(klen)?;
                    if let Some(p) = prev {
                        if key <= p {
                            return Err(DecodeError::KeyOrder);
                        }
                    }
                    prev = Some(key);
                    let key = std::str::from_utf8(key).map_err(|_| DecodeError::Utf8)?;
                    let v = self.value(depth + 1)?;
                    map.insert(key.to_owned(), v);
                }
                Ok(Value::Map(map))
            }
            TAG_BOOL => match self.u8()? {
                0 => Ok(Value::Bool(false)),
                1 => Ok(Value::Bool(true)),
                _ => Err(DecodeError::Bool),
            },
            t => Err(DecodeError::UnknownTag(t)),
        }
    }
}

/// Types with a single canonical byte representation.
pub trait Canonical: Sized {
    fn to_value(&self) -> Value;
    fn from_value(v: Value) -> Result<Self, DecodeError>;

    fn canonical_bytes(&self) -> Vec<u8> {
        self.to_value().to_bytes()
    }

    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_value(Value::from_bytes(bytes)?)
    }
}

/// Builder for map values.
#[derive(Default)]
pub struct MapBuilder(BTreeMap<String, Value>);

impl MapBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.0.insert(key.to_owned(), v.into());
        self
    }

    pub fn opt_field(self, key: &str, v: Option<impl Into<Value>>) -> Self {
        match v {
            Some(v) => self.field(key, v),
            None => self,
        }
    }

    pub fn build(self) -> Value {
        Value::Map(self.0)
    }
}

/// Field-by-field reader for map values. `finish` rejects unknown keys so
/// decoding stays injective.
pub struct MapReader(BTreeMap<String, Value>);

impl MapReader {
    pub fn new(v: Value) -> Result<Self, DecodeError> {
        match v {
            Value::Map(m) => Ok(Self(m)),
            _ => Err(DecodeError::FieldType("<map>")),
        }
    }

    pub fn take(&mut self, key: &'static str) -> Result<Value, DecodeError> {
        self.0.remove(key).ok_or(DecodeError::MissingField(key))
    }

    pub fn take_opt(&mut self, key: &'static str) -> Option<Value> {
        self.0.remove(key)
    }

    pub fn uint(&mut self, key: &'static str) -> Result<u64, DecodeError> {
        match self.take(key)? {
            Value::Uint(n) => Ok(n),
            _ => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn text(&mut self, key: &'static str) -> Result<String, DecodeError> {
        match self.take(key)? {
            Value::Text(s) => Ok(s),
            _ => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn bytes(&mut self, key: &'static str) -> Result<Vec<u8>, DecodeError> {
        match self.take(key)? {
            Value::Bytes(b) => Ok(b),
            _ => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn fixed<const N: usize>(&mut self, key: &'static str) -> Result<[u8; N], DecodeError> {
        self.bytes(key)?
            .try_into()
            .map_err(|_| DecodeError::FieldType(key))
    }

    pub fn list(&mut self, key: &'static str) -> Result<Vec<Value>, DecodeError> {
        match self.take(key)? {
            Value::List(l) => Ok(l),
            _ => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn boolean(&mut self, key: &'static str) -> Result<bool, DecodeError> {
        match self.take(key)? {
            Value::Bool(b) => Ok(b),
            _ => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn get<T: Canonical>(&mut self, key: &'static str) -> Result<T, DecodeError> {
        T::from_value(self.take(key)?)
    }

    pub fn get_opt<T: Canonical>(&mut self, key: &'static str) -> Result<Option<T>, DecodeError> {
        self.take_opt(key).map(T::from_value).transpose()
    }

    /// ISO `YYYY-MM-DD` date stored as text.
    pub fn date(&mut self, key: &'static str) -> Result<NaiveDate, DecodeError> {
        parse_date(key, &self.text(key)?)
    }

    pub fn date_opt(&mut self, key: &'static str) -> Result<Option<NaiveDate>, DecodeError> {
        match self.take_opt(key) {
            None => Ok(None),
            Some(Value::Text(s)) => parse_date(key, &s).map(Some),
            Some(_) => Err(DecodeError::FieldType(key)),
        }
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.0.into_keys().next() {
            Some(k) => Err(DecodeError::UnexpectedField(k)),
            None => Ok(()),
        }
    }
}

fn parse_date(key: &'static str, s: &str) -> Result<NaiveDate, DecodeError> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| DecodeError::Invalid {
        field: key,
        reason: e.to_string(),
    })?;
    // Reject non-canonical spellings such as "2021-3-1".
    if d.format("%Y-%m-%d").to_string() != s {
        return Err(DecodeError::Invalid {
            field: key,
            reason: format!("non-canonical date `{s}`"),
        });
    }
    Ok(d)
}

impl From<NaiveDate> for Value {
    fn from(d: NaiveDate) -> Self {
        Value::Text(d.format("%Y-%m-%d").to_string())
    }
}

impl From<u64> for Value {
    fn from(n: u64) -> Self {
        Value::Uint(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<Vec<u8>> for Value {
    fn from(b: Vec<u8>) -> Self {
        Value::Bytes(b)
    }
}

impl From<&[u8]> for Value {
    fn from(b: &[u8]) -> Self {
        Value::Bytes(b.to_vec())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<Vec<Value>> for Value {
    fn from(l: Vec<Value>) -> Self {
        Value::List(l)
    }
}

pub fn encode_list<T: Canonical>(items: &[T]) -> Value {
    Value::List(items.iter().map(Canonical::to_value).collect())
}

pub fn decode_list<T: Canonical>(items: Vec<Value>) -> Result<Vec<T>, DecodeError> {
    items.into_iter().map(T::from_value).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Value {
        MapBuilder::new()
            .field("zip", "02139")
            .field("i", 7u64)
            .field("sig", vec![1u8, 2, 3])
            .field("ok", true)
            .field("l", vec![Value::Uint(1), Value::Text("x".into())])
            .build()
    }

    #[test]
    fn keys_are_emitted_in_byte_order() {
        let bytes = sample().to_bytes();
        // tag, count, then first key "i"
        assert_eq!(bytes[0], TAG_MAP);
        assert_eq!(&bytes[1..5], &5u32.to_be_bytes());
        assert_eq!(bytes[5], 1);
        assert_eq!(bytes[6], b'i');
    }

    #[test]
    fn integers_are_big_endian() {
        assert_eq!(
            Value::Uint(0x0102).to_bytes(),
            vec![TAG_UINT, 0, 0, 0, 0, 0, 0, 1, 2]
        );
    }

    #[test]
    fn rejects_unsorted_keys() {
        let mut bytes = vec![TAG_MAP, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, b'b', TAG_BOOL, 0]);
        bytes.extend_from_slice(&[1, b'a', TAG_BOOL, 0]);
        assert_eq!(Value::from_bytes(&bytes), Err(DecodeError::KeyOrder));
    }

    #[test]
    fn rejects_duplicate_keys() {
        let mut bytes = vec![TAG_MAP, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, b'a', TAG_BOOL, 0]);
        bytes.extend_from_slice(&[1, b'a', TAG_BOOL, 1]);
        assert_eq!(Value::from_bytes(&bytes), Err(DecodeError::KeyOrder));
    }

    #[test]
    fn rejects_trailing_and_truncated() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert_eq!(Value::from_bytes(&bytes), Err(DecodeError::Trailing(1)));
        let bytes = sample().to_bytes();
        assert!(Value::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Value::from_bytes(&[]).is_err());
    }

    #[test]
    fn rejects_non_minimal_bool_and_huge_lengths() {
        assert_eq!(Value::from_bytes(&[TAG_BOOL, 2]), Err(DecodeError::Bool));
        assert!(matches!(
            Value::from_bytes(&[TAG_LIST, 0xff, 0xff, 0xff, 0xff]),
            Err(DecodeError::Length(_))
        ));
    }

    #[test]
    fn rejects_deep_nesting() {
        let mut bytes = Vec::new();
        for _ in 0..(MAX_DEPTH + 2) {
            bytes.extend_from_slice(&[TAG_LIST, 0, 0, 0, 1]);
        }
        bytes.extend_from_slice(&[TAG_BOOL, 0]);
        assert_eq!(Value::from_bytes(&bytes), Err(DecodeError::TooDeep));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            any::<u64>().prop_map(Value::Uint),
            prop::collection::vec(any::<u8>(), 0..24).prop_map(Value::Bytes),
            "[a-z0-9 ]{0,12}".prop_map(Value::Text),
            any::<bool>().prop_map(Value::Bool),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
                prop::collection::btree_map("[a-z]{1,6}", inner, 0..4).prop_map(Value::Map),
            ]
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(v in arb_value()) {
            let bytes = v.to_bytes();
            let back = Value::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            if let Ok(v) = Value::from_bytes(&bytes) {
                prop_assert_eq!(v.to_bytes(), bytes);
            }
        }
    }
}
