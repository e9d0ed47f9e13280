//! Shared prompt vocabulary: task headers, tagged sections and transcript rendering.
//!
//! Every system prompt starts with one of the `TASK_*` header lines and
//! wraps its inputs in simple XML-style tags so both hosted models and the
//! deterministic mock can locate them.

use crate::ticket::Message;

pub const TASK_CLASSIFY: &str = "## Task: ticket escalation classification";
pub const TASK_SUMMARIZE: &str = "## Task: ticket issue identification";
pub const TASK_REWRITE: &str = "## Task: escalated issue rewriting";
pub const TASK_REVISE: &str = "## Task: classification reasoning completion";

/// Renders `messages` oldest-first, one `author: text` line each. When more
/// than `max_messages` are present the oldest are dropped and a marker line
/// takes their place.
pub fn render_transcript(messages: &[Message], max_messages: usize) -> String {
    let skip = messages.len().saturating_sub(max_messages);
    let mut lines = Vec::with_capacity(messages.len() - skip + 1);
    if skip > 0 {
        lines.push(omitted_marker(skip));
    }
    for m in &messages[skip..] {
        lines.push(format!("{}: {}", m.author.as_str(), flatten(&m.text)));
    }
    lines.join("\n")
}

pub fn omitted_marker(count: usize) -> String {
    format!("[{count} earlier messages omitted]")
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Content of the last `<tag ...>...</tag>` section.
pub fn last_section<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    sections(text, tag).pop()
}

/// Contents of every `<tag ...>...</tag>` section, in order.
pub fn sections<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        // the opening tag must end here, not be a longer tag name
        if !after.starts_with('>') && !after.starts_with(' ') {
            rest = after;
            continue;
        }
        let Some(gt) = after.find('>') else { break };
        let body = &after[gt + 1..];
        let Some(end) = body.find(&close) else { break };
        out.push(body[..end].trim_matches('\n'));
        rest = &body[end + close.len()..];
    }
    out
}

/// Value of `attr="..."` inside the opening tag of a section.
pub fn tagged_with<'a>(text: &'a str, tag: &str, attr: &str, value: &str) -> Vec<&'a str> {
    let open = format!("<{tag} {attr}=\"{value}\">");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body = &rest[start + open.len()..];
        let Some(end) = body.find(&close) else { break };
        out.push(body[..end].trim_matches('\n'));
        rest = &body[end + close.len()..];
    }
    out
}

/// The outermost `{...}` span in `text`, tolerating code fences and prose around it.
pub fn json_object_span(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}
