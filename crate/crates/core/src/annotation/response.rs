//! Parser for the structured MLLM reply:
//!
//! ```text
//! Regions: 2
//! 1. What: pedestrian on the left. Why: may step onto the road.
//! 2. What: traffic light. Why: it is turning red.
//! ```

use super::AnnotationError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub region_count: usize,
    pub what: Vec<String>,
    pub why: Vec<String>,
}

fn parse_err(rule: &str, raw: &str) -> AnnotationError {
    AnnotationError::Parse {
        rule: rule.to_string(),
        raw_response: raw.to_string(),
    }
}

fn clean(s: &str) -> String {
    let t = s.trim();
    t.strip_suffix('.').unwrap_or(t).trim_end().to_string()
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    hay.to_ascii_lowercase().find(&needle.to_ascii_lowercase())
}

/// `"12. rest"` → `(12, "rest")`.
fn numbered(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = t[digits..].strip_prefix('.').or_else(|| t[digits..].strip_prefix(')'))?;
    Some((t[..digits].parse().ok()?, rest))
}

pub fn parse_mllm_response(text: &str) -> Result<ParsedResponse, AnnotationError> {
    let mut lines = text.lines();
    let declared = loop {
        let Some(line) = lines.next() else {
            return Err(parse_err("missing `Regions:` line", text));
        };
        if let Some(pos) = find_ci(line, "regions:") {
            let n = line[pos + "regions:".len()..].trim().trim_end_matches('.');
            break n
                .parse::<usize>()
                .map_err(|_| parse_err("region count is not an integer", text))?;
        }
    };

    // Group the remaining lines into numbered entries; unnumbered lines continue the previous one.
    let mut entries: Vec<(usize, String)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        match numbered(line) {
            Some((k, rest)) => entries.push((k, rest.to_string())),
            None => match entries.last_mut() {
                Some((_, body)) => {
                    body.push(' ');
                    body.push_str(line.trim());
                }
                None => return Err(parse_err("text before the first numbered region", text)),
            },
        }
    }

    let mut what = Vec::with_capacity(entries.len());
    let mut why = Vec::with_capacity(entries.len());
    for (i, (k, body)) in entries.iter().enumerate() {
        if *k != i + 1 {
            return Err(parse_err("regions must be numbered 1..n", text));
        }
        let w = find_ci(body, "what:").ok_or_else(|| parse_err("region without `What:`", text))?;
        let y = find_ci(body, "why:").ok_or_else(|| parse_err("region without `Why:`", text))?;
        if y < w {
            return Err(parse_err("`Why:` before `What:`", text));
        }
        let w_text = clean(&body[w + 5..y]);
        let y_text = clean(&body[y + 4..]);
        if w_text.is_empty() || y_text.is_empty() {
            return Err(parse_err("empty What or Why", text));
        }
        what.push(w_text);
        why.push(y_text);
    }
    if what.len() != declared {
        return Err(parse_err("count mismatch", text));
    }
    Ok(ParsedResponse {
        region_count: declared,
        what,
        why,
    })
}

/// Renders a reply in the grammar accepted by [`parse_mllm_response`].
pub fn format_response(what: &[String], why: &[String]) -> String {
    let mut out = format!("Regions: {}\n", what.len());
    for (i, (w, y)) in what.iter().zip(why).enumerate() {
        out.push_str(&format!("{}. What: {}. Why: {}.\n", i + 1, w, y));
    }
    out
}
