//! Hierarchical, typed properties.
//!
//! A property is addressed by a dot-separated path such as
//! `system.max31855.temp` and carries a value whose type is fixed when the
//! property is registered. Values travel between processes in a canonical
//! text encoding; floats use the shortest decimal that round-trips.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PropertyError {
    #[error("invalid property key {0:?}")]
    InvalidKey(String),
    #[error("property {0} is already registered")]
    DuplicateKey(String),
    #[error("unknown property {0}")]
    UnknownKey(String),
    #[error("type mismatch for {key}: registered {expected}, got {found}")]
    TypeMismatch { key: String, expected: ValueType, found: ValueType },
    #[error("cannot decode {text:?} as {ty}")]
    Decode { ty: ValueType, text: String },
    #[error("unknown value type {0:?}")]
    UnknownType(String),
}

/// Dot-separated property path. Every segment matches `[A-Za-z_][A-Za-z0-9_]*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PropertyKey(String);

impl PropertyKey {
    pub fn new(path: impl Into<String>) -> Result<Self, PropertyError> {
        let path = path.into();
        if Self::is_valid(&path) { Ok(PropertyKey(path)) } else { Err(PropertyError::InvalidKey(path)) }
    }

    pub fn is_valid(path: &str) -> bool {
        !path.is_empty() && path.split('.').all(is_valid_segment)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('.')
    }
}

fn is_valid_segment(seg: &str) -> bool {
    let mut chars = seg.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for PropertyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PropertyKey {
    type Err = PropertyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PropertyKey::new(s)
    }
}

impl AsRef<str> for PropertyKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Type tag of a property value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueType {
    Float64,
    Float32,
    UInt32,
    Bool,
    String,
}

impl ValueType {
    pub const ALL: [ValueType; 5] =
        [ValueType::Float64, ValueType::Float32, ValueType::UInt32, ValueType::Bool, ValueType::String];

    pub fn name(self) -> &'static str {
        match self {
            ValueType::Float64 => "Float64",
            ValueType::Float32 => "Float32",
            ValueType::UInt32 => "UInt32",
            ValueType::Bool => "Bool",
            ValueType::String => "String",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValueType {
    type Err = PropertyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValueType::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| PropertyError::UnknownType(s.to_owned()))
    }
}

/// A typed scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum PropertyValue {
    Float64(f64),
    Float32(f32),
    UInt32(u32),
    Bool(bool),
    String(String),
}

impl PropertyValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            PropertyValue::Float64(_) => ValueType::Float64,
            PropertyValue::Float32(_) => ValueType::Float32,
            PropertyValue::UInt32(_) => ValueType::UInt32,
            PropertyValue::Bool(_) => ValueType::Bool,
            PropertyValue::String(_) => ValueType::String,
        }
    }

    /// Canonical text form. `Debug` formatting of floats is the shortest
    /// decimal that parses back to the same bits and always carries a
    /// fractional part or exponent (`10.0`, `1e-7`).
    pub fn encode(&self) -> String {
        match self {
            PropertyValue::Float64(v) => format!("{v:?}"),
            PropertyValue::Float32(v) => format!("{v:?}"),
            PropertyValue::UInt32(v) => v.to_string(),
            PropertyValue::Bool(v) => v.to_string(),
            PropertyValue::String(v) => v.clone(),
        }
    }

    pub fn decode(ty: ValueType, text: &str) -> Result<PropertyValue, PropertyError> {
        let bad = || PropertyError::Decode { ty, text: text.to_owned() };
        // Rust's float/int parsers accept a leading '+', which has no
        // canonical form; refuse it along with surrounding whitespace.
        if ty != ValueType::String && (text.starts_with('+') || text.trim() != text) {
            return Err(bad());
        }
        // a finite literal must not overflow to infinity
        let explicit_inf = || {
            let t = text.trim_start_matches('-');
            t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity")
        };
        Ok(match ty {
            ValueType::Float64 => {
                let v: f64 = text.parse().map_err(|_| bad())?;
                if v.is_infinite() && !explicit_inf() {
                    return Err(bad());
                }
                PropertyValue::Float64(v)
            }
            ValueType::Float32 => {
                let v: f32 = text.parse().map_err(|_| bad())?;
                if v.is_infinite() && !explicit_inf() {
                    return Err(bad());
                }
                PropertyValue::Float32(v)
            }
            ValueType::UInt32 => PropertyValue::UInt32(text.parse().map_err(|_| bad())?),
            ValueType::Bool => match text {
                "true" => PropertyValue::Bool(true),
                "false" => PropertyValue::Bool(false),
                _ => return Err(bad()),
            },
            ValueType::String => PropertyValue::String(text.to_owned()),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            PropertyValue::Float64(v) => Some(v),
            PropertyValue::Float32(v) => Some(v as f64),
            PropertyValue::UInt32(v) => Some(v as f64),
            _ => None,
        }
    }

    pub fn as_u32(&self) -> Option<u32> {
        match *self {
            PropertyValue::UInt32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<f32> {
        match *self {
            PropertyValue::Float32(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for PropertyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Returned by [`PropertyRegistry::register`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyHandle {
    key: PropertyKey,
    ty: ValueType,
}

impl PropertyHandle {
    pub fn key(&self) -> &PropertyKey {
        &self.key
    }

    pub fn value_type(&self) -> ValueType {
        self.ty
    }
}

/// Map from key to current value. The type tag of an entry never changes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyRegistry {
    entries: BTreeMap<PropertyKey, PropertyValue>,
}

impl PropertyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, key: PropertyKey, initial: PropertyValue) -> Result<PropertyHandle, PropertyError> {
        if self.entries.contains_key(&key) {
            return Err(PropertyError::DuplicateKey(key.0));
        }
        let ty = initial.value_type();
        self.entries.insert(key.clone(), initial);
        Ok(PropertyHandle { key, ty })
    }

    pub fn get(&self, key: &str) -> Result<&PropertyValue, PropertyError> {
        self.entries.get(key).ok_or_else(|| PropertyError::UnknownKey(key.to_owned()))
    }

    pub fn value_type(&self, key: &str) -> Result<ValueType, PropertyError> {
        self.get(key).map(PropertyValue::value_type)
    }

    pub fn set(&mut self, key: &str, value: PropertyValue) -> Result<(), PropertyError> {
        let slot = self.entries.get_mut(key).ok_or_else(|| PropertyError::UnknownKey(key.to_owned()))?;
        let expected = slot.value_type();
        let found = value.value_type();
        if expected != found {
            return Err(PropertyError::TypeMismatch { key: key.to_owned(), expected, found });
        }
        *slot = value;
        Ok(())
    }

    /// Decodes `text` with the registered type and stores it.
    pub fn set_encoded(&mut self, key: &str, text: &str) -> Result<(), PropertyError> {
        let ty = self.value_type(key)?;
        let value = PropertyValue::decode(ty, text)?;
        self.set(key, value)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&PropertyKey, &PropertyValue)> {
        self.entries.iter()
    }
}

// `BTreeMap::get` needs `PropertyKey: Borrow<str>`; keys compare exactly like
// their string, so this is sound.
impl std::borrow::Borrow<str> for PropertyKey {
    fn borrow(&self) -> &str {
        &self.0
    }
}
