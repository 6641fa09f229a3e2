//! Canonical structured text: UTF-8 JSON with object keys sorted, so equal
//! values always encode to equal bytes. Used for bus payloads, REST bodies
//! and report files.

use alloc::string::String;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("structured text: {0}")]
pub struct TextError(String);

impl From<serde_json::Error> for TextError {
    fn from(e: serde_json::Error) -> Self {
        use alloc::string::ToString;
        Self(e.to_string())
    }
}

pub fn to_text<T: Serialize + ?Sized>(value: &T) -> Result<String, TextError> {
    // Round-trip through `Value`: its map is a BTreeMap, which sorts keys.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Indented variant for files meant to be read by people.
pub fn to_text_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String, TextError> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Result<alloc::vec::Vec<u8>, TextError> {
    to_text(value).map(String::into_bytes)
}

pub fn from_text<T: DeserializeOwned>(s: &str) -> Result<T, TextError> {
    Ok(serde_json::from_str(s)?)
}

pub fn from_bytes<T: DeserializeOwned>(b: &[u8]) -> Result<T, TextError> {
    Ok(serde_json::from_slice(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Rec {
        zeta: u32,
        alpha: f64,
        mid: &'static str,
    }

    #[test]
    fn keys_are_sorted() {
        let s = to_text(&Rec { zeta: 1, alpha: 0.5, mid: "m" }).unwrap();
        assert_eq!(s, r#"{"alpha":0.5,"mid":"m","zeta":1}"#);
    }
}
