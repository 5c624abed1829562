//! Canonical request digests used as transcript keys.

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatRequest, LlmError};

/// Compact JSON with object keys sorted recursively.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// SHA-256 hex digest of the request's canonical JSON form.
pub fn request_digest(request: &ChatRequest) -> String {
    let value = serde_json::to_value(request).expect("ChatRequest always serializes");
    hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
}

/// Digest of a serialized request; insensitive to key order and whitespace.
pub fn digest_serialized(text: &str) -> Result<String, LlmError> {
    let request: ChatRequest =
        serde_json::from_str(text).map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
    Ok(request_digest(&request))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_order_and_whitespace_do_not_matter() {
        let a = r#"{"model_id":"openai/gpt-4o","system_text":"s","user_text":"u","temperature":0.0,"max_output_tokens":10}"#;
        let b = "{ \"max_output_tokens\" : 10,\n \"user_text\":\"u\", \"temperature\": 0,\n\t\"system_text\":\"s\", \"model_id\":\"openai/gpt-4o\" }";
        assert_eq!(digest_serialized(a).unwrap(), digest_serialized(b).unwrap());
    }

    #[test]
    fn known_digest_is_stable() {
        let r = ChatRequest::new("openai/gpt-4o", "s", "u");
        // canonical form is fixed; the digest must never drift between releases
        let canon = canonical_json(&serde_json::to_value(&r).unwrap());
        assert_eq!(
            canon,
            r#"{"max_output_tokens":1024,"model_id":"openai/gpt-4o","system_text":"s","temperature":0.0,"user_text":"u"}"#
        );
        assert_eq!(request_digest(&r), hex::encode(Sha256::digest(canon.as_bytes())));
    }
}
