//! Canonical JSON encoding.
//!
//! All signed or audited documents are serialized canonically: object keys
//! sorted lexicographically by their UTF-8 bytes, no insignificant
//! whitespace, and numbers in serde_json's shortest form (integers carry no
//! leading zeros). Two semantically equal documents always produce the same
//! byte string, which is what makes detached signatures and golden audit
//! files possible.

use serde::Serialize;
use serde_json::Value;

use super::ProtocolError;

/// Serialize any value to canonical JSON bytes.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ProtocolError> {
    let value = serde_json::to_value(value).map_err(|e| ProtocolError::Unencodable(e.to_string()))?;
    let mut out = Vec::with_capacity(256);
    write_canonical(&value, &mut out)?;
    Ok(out)
}

/// Serialize any value to a canonical JSON string.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, ProtocolError> {
    let bytes = to_canonical_bytes(value)?;
    // write_canonical only emits valid UTF-8.
    Ok(String::from_utf8(bytes).expect("canonical output is UTF-8"))
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) -> Result<(), ProtocolError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            // serde_json::Number cannot hold NaN or infinity, and its
            // Display form is already minimal.
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => {
            let escaped =
                serde_json::to_string(s).map_err(|e| ProtocolError::Unencodable(e.to_string()))?;
            out.extend_from_slice(escaped.as_bytes());
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            // serde_json's map is BTreeMap-backed by default, but sort
            // explicitly so canonical form never depends on crate features.
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let escaped = serde_json::to_string(key)
                    .map_err(|e| ProtocolError::Unencodable(e.to_string()))?;
                out.extend_from_slice(escaped.as_bytes());
                out.push(b':');
                write_canonical(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

/// Reject JSON values containing non-finite numbers before they are
/// silently degraded by serialization. `serde_json` maps NaN and infinity
/// to `null`, so callers holding raw floats must check them prior to
/// conversion; this helper covers values that are already `Value`s.
pub fn ensure_finite(value: &Value) -> Result<(), ProtocolError> {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if !f.is_finite() {
                    return Err(ProtocolError::Unencodable("non-finite number".into()));
                }
            }
            Ok(())
        }
        Value::Array(items) => items.iter().try_for_each(ensure_finite),
        Value::Object(map) => map.values().try_for_each(ensure_finite),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted() {
        let v = json!({"zeta": 1, "alpha": {"y": 2, "x": 3}, "mid": [1, 2]});
        let s = to_canonical_string(&v).unwrap();
        assert_eq!(s, r#"{"alpha":{"x":3,"y":2},"mid":[1,2],"zeta":1}"#);
    }

    #[test]
    fn no_whitespace() {
        let v = json!({"a": [1, {"b": "c d"}]});
        let s = to_canonical_string(&v).unwrap();
        assert!(!s.replace("c d", "cd").contains(' '));
    }

    #[test]
    fn equal_documents_equal_bytes() {
        let a = json!({"k1": 1, "k2": "two"});
        let b = json!({"k2": "two", "k1": 1});
        assert_eq!(to_canonical_bytes(&a).unwrap(), to_canonical_bytes(&b).unwrap());
    }

    #[test]
    fn string_escapes_survive() {
        let v = json!({"q": "a\"b\\c\nd"});
        let s = to_canonical_string(&v).unwrap();
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["q"], "a\"b\\c\nd");
    }
}
