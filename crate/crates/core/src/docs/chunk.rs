use super::{DocChunk, DocumentPage};

/// Parses an ATX heading line into (level, text). Indentation beyond three
/// spaces, missing space after the hashes, or more than six hashes disqualify.
pub fn parse_heading(line: &str) -> Option<(usize, String)> {
    let line = line.trim_end_matches(['\n', '\r']);
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let level = rest.len() - rest.trim_start_matches('#').len();
    if !(1..=6).contains(&level) {
        return None;
    }
    let after = &rest[level..];
    if !after.is_empty() && !after.starts_with([' ', '\t']) {
        return None;
    }
    let mut text = after.trim();
    let stripped = text.trim_end_matches('#');
    if stripped.is_empty() || stripped.ends_with([' ', '\t']) {
        text = stripped.trim_end();
    }
    Some((level, text.to_string()))
}

/// Start of a fenced code block: (fence char, run length).
fn fence_open(line: &str) -> Option<(char, usize)> {
    let t = line.trim_start_matches(' ');
    if line.len() - t.len() > 3 {
        return None;
    }
    let c = t.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let run = t.len() - t.trim_start_matches(c).len();
    (run >= 3).then_some((c, run))
}

fn fence_closes(line: &str, open: (char, usize)) -> bool {
    let t = line.trim();
    fence_open(line).is_some_and(|(c, n)| c == open.0 && n >= open.1) && t.chars().all(|c| c == open.0)
}

/// Splits a page body at every heading line outside code fences. Text before
/// the first heading forms its own chunk unless it is blank, in which case it
/// is kept at the front of the first section so the chunks stay lossless.
pub fn chunk_page(page: &DocumentPage) -> Vec<DocChunk> {
    let mut sections: Vec<(Vec<String>, String)> = Vec::new();
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut current = String::new();
    let mut current_path: Vec<String> = Vec::new();
    let mut started = false;
    let mut fence: Option<(char, usize)> = None;

    for line in page.body.split_inclusive('\n') {
        if let Some(open) = fence {
            if fence_closes(line, open) {
                fence = None;
            }
            current.push_str(line);
            continue;
        }
        if let Some(open) = fence_open(line) {
            fence = Some(open);
            current.push_str(line);
            continue;
        }
        if let Some((level, text)) = parse_heading(line) {
            let blank_preamble = !started && current.trim().is_empty();
            if !blank_preamble {
                sections.push((std::mem::take(&mut current_path), std::mem::take(&mut current)));
            }
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, text));
            current_path = stack.iter().map(|(_, t)| t.clone()).collect();
            started = true;
        }
        current.push_str(line);
    }
    if !current.is_empty() || sections.is_empty() {
        sections.push((current_path, current));
    }
    sections
        .into_iter()
        .enumerate()
        .map(|(i, (heading_path, body))| DocChunk {
            chunk_id: format!("{}#{i}", page.page_id),
            page_id: page.page_id.clone(),
            heading_path,
            body,
        })
        .collect()
}
