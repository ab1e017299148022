use crate::error::{Error, Result};

pub const BEGIN_MARKER: &str = "*** python begin ***";
pub const END_MARKER: &str = "*** python end ***";

/// Pulls rule source out of an agent response.
///
/// Takes the text between the first begin marker and the next end marker.
/// Without markers, falls back to the first triple-backtick fence. A fence
/// nested directly inside the markers is stripped as well.
pub fn extract_code(response: &str) -> Result<String> {
    let body = between_markers(response)
        .map(|inner| strip_fence(inner).unwrap_or(inner))
        .or_else(|| strip_fence(response))
        .ok_or(Error::Extraction)?;
    let body = trim_blank_lines(body);
    if body.trim().is_empty() {
        return Err(Error::Extraction);
    }
    Ok(body.to_string())
}

fn between_markers(text: &str) -> Option<&str> {
    let begin = text.find(BEGIN_MARKER)?;
    let after = &text[begin + BEGIN_MARKER.len()..];
    // Drop the remainder of the marker line.
    let after = after.split_once('\n').map_or("", |(_, rest)| rest);
    let end = after.find(END_MARKER)?;
    Some(&after[..end])
}

fn strip_fence(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let (_, body) = after.split_once('\n')?;
    let close = body.find("```")?;
    Some(&body[..close])
}

fn trim_blank_lines(text: &str) -> &str {
    let text = text.trim_end();
    let start = text
        .char_indices()
        .find(|&(_, c)| !c.is_whitespace())
        .map_or(text.len(), |(i, _)| i);
    // Keep indentation of the first real line.
    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
    &text[line_start..]
}
