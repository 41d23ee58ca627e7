//! Recovering a JSON array from model output that may wrap it in prose,
//! code fences or reasoning text.

use serde_json::Value;

/// First JSON array in `text` that is empty or holds at least one object.
/// Arrays of bare scalars (citation markers such as `[1]`) are skipped.
pub fn extract_first_array(text: &str) -> Option<Vec<Value>> {
    for (i, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            if items.is_empty() || items.iter().any(Value::is_object) {
                return Some(items);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn bare_and_wrapped() {
        let bare = r#"[{"a":1},{"b":[2,3]}]"#;
        let expect = Some(vec![json!({"a":1}), json!({"b":[2,3]})]);
        assert_eq!(extract_first_array(bare), expect);
        assert_eq!(extract_first_array(&format!("Here you go:\n```json\n{bare}\n```\nDone [1].")), expect);
        assert_eq!(extract_first_array(&format!("See [1] and [note].\n{bare}")), expect);
        assert_eq!(extract_first_array(&format!("{{\"alerts\": {bare}}}")), expect);
    }

    #[test]
    fn empty_array_counts() {
        assert_eq!(extract_first_array("No issues found: []"), Some(vec![]));
    }

    #[test]
    fn unrecoverable() {
        assert_eq!(extract_first_array(""), None);
        assert_eq!(extract_first_array("I cannot analyze this code."), None);
        assert_eq!(extract_first_array("[{'single': 'quotes'}]"), None);
        assert_eq!(extract_first_array("[1, 2, 3]"), None);
        assert_eq!(extract_first_array("[{\"a\":1},"), None);
    }
}
