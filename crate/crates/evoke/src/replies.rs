//! Parsing of structured model replies.
//!
//! Instruction templates ask for a single fenced json block; these helpers
//! pull that block out (falling back to treating the whole reply as JSON)
//! and split free-form phrase lists into clean cue phrases.

use serde_json::Value;

use crate::taxonomy::{normalize_phrase, MAX_CUE_LEN};

/// Extracts the first fenced code block's JSON payload, or parses the whole
/// reply when no fence is present.
pub fn fenced_json(reply: &str) -> Result<Value, String> {
    let payload = match extract_fenced_block(reply) {
        Some(block) => block,
        None => reply.trim().to_string(),
    };
    serde_json::from_str(&payload).map_err(|e| format!("invalid json: {e}"))
}

fn extract_fenced_block(reply: &str) -> Option<String> {
    let mut inside = false;
    let mut lines: Vec<&str> = Vec::new();
    for line in reply.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            if inside {
                return Some(lines.join("\n"));
            }
            inside = true;
            continue;
        }
        if inside {
            lines.push(line);
        }
    }
    None
}

/// Splits an extraction reply into short phrases: one per line or
/// semicolon-separated, bullets and numbering stripped, deduplicated
/// case-insensitively, long prose lines dropped.
pub fn parse_phrase_list(reply: &str) -> Vec<String> {
    let mut phrases: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for line in reply.lines().flat_map(|l| l.split(';')) {
        let phrase = normalize_phrase(strip_bullet(line));
        if phrase.is_empty() || phrase.chars().count() > MAX_CUE_LEN {
            continue;
        }
        let folded = phrase.to_lowercase();
        if seen.contains(&folded) {
            continue;
        }
        seen.push(folded);
        phrases.push(phrase);
    }
    phrases
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    // "1." / "2)" style numbering
    let mut chars = line.char_indices().peekable();
    let mut digits_end = 0;
    while let Some((i, c)) = chars.peek().copied() {
        if c.is_ascii_digit() {
            digits_end = i + c.len_utf8();
            chars.next();
        } else {
            break;
        }
    }
    if digits_end > 0 {
        if let Some(rest) = line[digits_end..].strip_prefix(['.', ')']) {
            return rest.trim();
        }
    }
    line
}
