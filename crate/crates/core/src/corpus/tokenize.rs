/// Lowercases, splits on whitespace and peels punctuation off both ends of
/// each chunk. Punctuation runs are kept as tokens of their own, so
/// `"Hello, world!!"` becomes `["hello", ",", "world", "!!"]`.
///
/// "Punctuation" here is any non-alphanumeric character, which keeps the
/// rule script-agnostic (Greek, Cyrillic and Latin text behave the same).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<(usize, char)> = lower.char_indices().collect();
        let start = chars.iter().position(|(_, c)| c.is_alphanumeric());
        let Some(start) = start else {
            tokens.push(lower);
            continue;
        };
        let end = chars.iter().rposition(|(_, c)| c.is_alphanumeric()).unwrap_or(start);

        let byte_start = chars[start].0;
        let byte_end = chars.get(end + 1).map_or(lower.len(), |(i, _)| *i);
        if byte_start > 0 {
            tokens.push(lower[..byte_start].to_string());
        }
        tokens.push(lower[byte_start..byte_end].to_string());
        if byte_end < lower.len() {
            tokens.push(lower[byte_end..].to_string());
        }
    }
    tokens
}
