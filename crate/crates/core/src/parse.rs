//! Helpers shared by the response parsers: delimited verdict blocks and
//! fenced JSON blocks.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictError {
    #[error("response has no `{open}`...`{close}` block")]
    MissingMarkers { open: String, close: String },
    #[error("unrecognized verdict `{0}`")]
    Unrecognized(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JsonBlockError {
    #[error("response has no fenced json block")]
    NoJsonBlock,
    #[error("malformed json in fenced block: {0}")]
    Malformed(String),
    #[error("fenced json is not an array")]
    NotArray,
}

/// Text between the first `open` and the next `close` after it.
pub fn delimited<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}

/// Parses a two-valued verdict from a delimited block, case-insensitively.
pub fn binary_verdict(
    text: &str,
    open: &str,
    close: &str,
    yes: &str,
    no: &str,
) -> Result<bool, VerdictError> {
    let inner = delimited(text, open, close).ok_or_else(|| VerdictError::MissingMarkers {
        open: open.to_string(),
        close: close.to_string(),
    })?;
    let verdict = inner.trim();
    if verdict.eq_ignore_ascii_case(yes) {
        Ok(true)
    } else if verdict.eq_ignore_ascii_case(no) {
        Ok(false)
    } else {
        Err(VerdictError::Unrecognized(verdict.to_string()))
    }
}

/// Body of the last fenced code block tagged `json` (or untagged).
pub fn last_fenced_json(text: &str) -> Option<&str> {
    let mut found = None;
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after_ticks = open + 3;
        let header_end = match rest[after_ticks..].find('\n') {
            Some(n) => after_ticks + n,
            None => break,
        };
        let lang = rest[after_ticks..header_end].trim();
        let body_start = header_end + 1;
        let Some(close) = rest[body_start..].find("```") else {
            break;
        };
        if lang.is_empty() || lang.eq_ignore_ascii_case("json") {
            let s = offset + body_start;
            found = Some(&text[s..s + close]);
        }
        let consumed = body_start + close + 3;
        offset += consumed;
        rest = &rest[consumed..];
    }
    found
}

/// Parses the last fenced JSON block as an array.
///
/// Model output often carries trailing commas (the extraction prompt's own
/// example has them) and unescaped LaTeX backslashes, so a strict parse
/// failure is followed by one repair attempt.
pub fn last_json_array(text: &str) -> Result<Vec<Value>, JsonBlockError> {
    let block = last_fenced_json(text).ok_or(JsonBlockError::NoJsonBlock)?;
    let value = match serde_json::from_str::<Value>(block) {
        Ok(v) => v,
        Err(strict) => serde_json::from_str::<Value>(&repair_json(block))
            .map_err(|_| JsonBlockError::Malformed(strict.to_string()))?,
    };
    match value {
        Value::Array(items) => Ok(items),
        _ => Err(JsonBlockError::NotArray),
    }
}

/// Drops trailing commas before `]`/`}`, doubles backslashes that do not
/// start a valid JSON escape, and inserts missing commas between adjacent
/// objects (`} {`).
fn repair_json(input: &str) -> String {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len() + 16);
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            match c {
                '\\' => {
                    let next = chars.get(i + 1).copied();
                    match next {
                        Some('"') | Some('\\') | Some('/') => {
                            out.push(c);
                            out.push(next.unwrap());
                            i += 2;
                            continue;
                        }
                        Some('u')
                            if chars.len() > i + 5
                                && chars[i + 2..i + 6].iter().all(|h| h.is_ascii_hexdigit()) =>
                        {
                            out.push(c);
                        }
                        Some('n') | Some('t') | Some('r')
                            if !chars.get(i + 2).is_some_and(|a| a.is_ascii_alphabetic()) =>
                        {
                            out.push(c);
                        }
                        _ => out.push_str("\\\\"),
                    }
                }
                '"' => {
                    in_string = false;
                    out.push(c);
                }
                '\n' => out.push_str("\\n"),
                _ => out.push(c),
            }
        } else {
            match c {
                '"' => {
                    in_string = true;
                    out.push(c);
                }
                ',' => {
                    let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
                    if !matches!(next, Some(']') | Some('}')) {
                        out.push(c);
                    }
                }
                '{' => {
                    let prev = out.chars().rev().find(|p| !p.is_whitespace());
                    if prev == Some('}') {
                        out.push(',');
                    }
                    out.push(c);
                }
                _ => out.push(c),
            }
        }
        i += 1;
    }
    out
}

/// Text preceding the first occurrence of `marker`, trimmed and capped.
pub fn reasoning_excerpt(text: &str, marker: &str, max_chars: usize) -> String {
    let head = text.find(marker).map(|i| &text[..i]).unwrap_or(text).trim();
    head.chars().take(max_chars).collect()
}
