//! Atomic HTML bundling.
//!
//! Content served by a beacon travels as one indivisible stream, so the
//! document must carry every resource it renders with: stylesheets and
//! scripts inlined into `<head>`, images converted to `data:` URIs. The
//! transformer works on byte spans over the original text and only
//! splices in replacements, so a document with nothing to inline comes
//! back byte-identical and the whole operation is idempotent.

use std::collections::HashMap;
use std::ops::Range;
use std::path::{Component, Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Advertisement titles must fit the frame payload.
pub const MAX_BUNDLE_TITLE_BYTES: usize = 26;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("document cannot be parsed tolerantly: {0}")]
    MalformedHtml(String),
    #[error("resolver has no entry for {0:?}")]
    UnresolvedResource(String),
    #[error("text resource {url:?} is not valid UTF-8")]
    ResourceNotUtf8 { url: String },
    #[error("resource {url:?} resolved with mime {mime:?}, which does not match its tag")]
    MimeMismatch { url: String, mime: String },
}

/// What kind of element referenced a resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceKind {
    Stylesheet,
    Script,
    Image,
}

/// One external reference found in a document, optionally resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRef {
    pub kind: ResourceKind,
    pub url: String,
    pub resolved_bytes: Option<Vec<u8>>,
    pub mime: String,
}

/// A self-contained HTML document plus the metadata a beacon advertises.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentBundle {
    pub html: String,
    pub size_bytes: usize,
    pub content_hash: [u8; 32],
    pub title: String,
}

impl ContentBundle {
    /// Wraps a document, computing its size, digest and advertisement
    /// title (the `<title>` text truncated to 26 bytes, or "untitled").
    pub fn new(html: String) -> Self {
        let title = extract_title(&html)
            .map(|t| truncate_utf8(&t, MAX_BUNDLE_TITLE_BYTES).to_owned())
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| "untitled".to_owned());
        let size_bytes = html.len();
        let content_hash = Sha256::digest(html.as_bytes()).into();
        Self {
            html,
            size_bytes,
            content_hash,
            title,
        }
    }

    pub fn hash_hex(&self) -> String {
        self.content_hash
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Answers external references during inlining.
pub trait ResourceResolver {
    fn resolve(&self, url: &str) -> Option<(Vec<u8>, String)>;
}

impl ResourceResolver for HashMap<String, (Vec<u8>, String)> {
    fn resolve(&self, url: &str) -> Option<(Vec<u8>, String)> {
        self.get(url).cloned()
    }
}

/// Resolves relative references against a directory on disk, guessing
/// the mime type from the file extension. Rejects traversal outside the
/// root and anything that is not a plain relative path.
#[derive(Debug, Clone)]
pub struct DirResolver {
    root: PathBuf,
}

impl DirResolver {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ResourceResolver for DirResolver {
    fn resolve(&self, url: &str) -> Option<(Vec<u8>, String)> {
        if url.contains("://") || url.starts_with("//") {
            return None;
        }
        let path = url.split(['?', '#']).next().unwrap_or("");
        let rel = Path::new(path.trim_start_matches('/'));
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return None;
        }
        let bytes = std::fs::read(self.root.join(rel)).ok()?;
        Some((bytes, mime_for_path(path)))
    }
}

fn mime_for_path(path: &str) -> String {
    let ext = path.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        "ico" => "image/x-icon",
        "bmp" => "image/bmp",
        "css" => "text/css",
        "js" | "mjs" => "text/javascript",
        "html" | "htm" => "text/html",
        "txt" => "text/plain",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
    .to_owned()
}

/// `data:<mime>;base64,<payload>` with the standard padded alphabet.
pub fn encode_data_uri(bytes: &[u8], mime: &str) -> String {
    debug_assert!(!mime.is_empty(), "mime must be non-empty");
    format!("data:{mime};base64,{}", BASE64.encode(bytes))
}

fn truncate_utf8(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut end = max_bytes;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

// ---------------------------------------------------------------------------
// Tolerant tag scanner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ScannedAttr {
    name: String,
    value: Option<String>,
    span: Range<usize>,
}

#[derive(Debug, Clone)]
struct ScannedTag {
    name: String,
    attrs: Vec<ScannedAttr>,
    span: Range<usize>,
    self_closing: bool,
}

impl ScannedTag {
    fn attr(&self, name: &str) -> Option<&ScannedAttr> {
        self.attrs.iter().find(|a| a.name == name)
    }

    fn attr_value(&self, name: &str) -> Option<&str> {
        self.attr(name).and_then(|a| a.value.as_deref())
    }
}

#[derive(Debug)]
enum Event {
    Start(ScannedTag),
    End {
        name: String,
        span: Range<usize>,
    },
    /// Content span of a raw-text element (`script`, `style`, `title`).
    Raw {
        element: String,
        span: Range<usize>,
    },
}

/// Elements whose content is opaque text up to the matching close tag.
const RAW_TEXT_ELEMENTS: [&str; 3] = ["script", "style", "title"];

fn scan(src: &str) -> Result<Vec<Event>, BundleError> {
    let bytes = src.as_bytes();
    let mut events = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let Some(lt) = src[pos..].find('<').map(|o| pos + o) else {
            break;
        };
        let rest = &src[lt..];
        if let Some(after) = rest.strip_prefix("<!--") {
            let close = after
                .find("-->")
                .ok_or_else(|| BundleError::MalformedHtml("unterminated comment".into()))?;
            pos = lt + 4 + close + 3;
        } else if rest.starts_with("<!") || rest.starts_with("<?") {
            let close = rest
                .find('>')
                .ok_or_else(|| BundleError::MalformedHtml("unterminated declaration".into()))?;
            pos = lt + close + 1;
        } else if rest.starts_with("</") {
            let close = rest
                .find('>')
                .ok_or_else(|| BundleError::MalformedHtml("unterminated end tag".into()))?;
            let name = rest[2..close].trim().to_ascii_lowercase();
            events.push(Event::End {
                name,
                span: lt..lt + close + 1,
            });
            pos = lt + close + 1;
        } else if rest[1..].starts_with(|c: char| c.is_ascii_alphabetic()) {
            let tag = scan_start_tag(src, lt)?;
            pos = tag.span.end;
            let raw_for = RAW_TEXT_ELEMENTS.iter().find(|e| **e == tag.name).copied();
            let self_closing = tag.self_closing;
            events.push(Event::Start(tag));
            if let (Some(element), false) = (raw_for, self_closing) {
                let close_pat = format!("</{element}");
                let lower = src[pos..].to_ascii_lowercase();
                let content_end = lower.find(&close_pat).map(|o| pos + o).unwrap_or(src.len());
                events.push(Event::Raw {
                    element: element.to_owned(),
                    span: pos..content_end,
                });
                pos = content_end;
            }
        } else {
            // Stray '<' in text.
            pos = lt + 1;
        }
    }
    Ok(events)
}

fn scan_start_tag(src: &str, lt: usize) -> Result<ScannedTag, BundleError> {
    let bytes = src.as_bytes();
    let mut i = lt + 1;
    let name_start = i;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' && bytes[i] != b'/'
    {
        i += 1;
    }
    let name = src[name_start..i].to_ascii_lowercase();
    let mut attrs = Vec::new();
    let mut self_closing = false;
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(BundleError::MalformedHtml(format!(
                "unterminated <{name}> tag"
            )));
        }
        match bytes[i] {
            b'>' => {
                return Ok(ScannedTag {
                    name,
                    attrs,
                    span: lt..i + 1,
                    self_closing,
                });
            }
            b'/' if bytes.get(i + 1) == Some(&b'>') => {
                self_closing = true;
                return Ok(ScannedTag {
                    name,
                    attrs,
                    span: lt..i + 2,
                    self_closing,
                });
            }
            b'/' => {
                i += 1;
            }
            _ => {
                let attr_start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'=' | b'>' | b'/')
                {
                    i += 1;
                }
                let attr_name = src[attr_start..i].to_ascii_lowercase();
                let mut ws = i;
                while ws < bytes.len() && bytes[ws].is_ascii_whitespace() {
                    ws += 1;
                }
                if bytes.get(ws) == Some(&b'=') {
                    i = ws + 1;
                    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                        i += 1;
                    }
                    match bytes.get(i) {
                        Some(&q @ (b'"' | b'\'')) => {
                            let val_start = i + 1;
                            let close = src[val_start..].find(q as char).ok_or_else(|| {
                                BundleError::MalformedHtml("unterminated attribute value".into())
                            })?;
                            let val_end = val_start + close;
                            attrs.push(ScannedAttr {
                                name: attr_name,
                                value: Some(src[val_start..val_end].to_owned()),
                                span: attr_start..val_end + 1,
                            });
                            i = val_end + 1;
                        }
                        _ => {
                            let val_start = i;
                            while i < bytes.len()
                                && !bytes[i].is_ascii_whitespace()
                                && bytes[i] != b'>'
                            {
                                i += 1;
                            }
                            attrs.push(ScannedAttr {
                                name: attr_name,
                                value: Some(src[val_start..i].to_owned()),
                                span: attr_start..i,
                            });
                        }
                    }
                } else if !attr_name.is_empty() {
                    attrs.push(ScannedAttr {
                        name: attr_name,
                        value: None,
                        span: attr_start..i,
                    });
                }
            }
        }
    }
}

fn extract_title(html: &str) -> Option<String> {
    let events = scan(html).ok()?;
    for (idx, event) in events.iter().enumerate() {
        if let Event::Start(tag) = event {
            if tag.name == "title" {
                if let Some(Event::Raw { span, .. }) = events.get(idx + 1) {
                    return Some(html[span.clone()].trim().to_owned());
                }
            }
        }
    }
    None
}

/// True when the reference would need a fetch to render: everything but
/// `data:` URIs, fragment anchors, `mailto:` and empty values.
fn needs_fetch(url: &str) -> bool {
    let url = url.trim();
    !(url.is_empty()
        || url.starts_with('#')
        || url.len() >= 5 && url[..5].eq_ignore_ascii_case("data:")
        || url.len() >= 7 && url[..7].eq_ignore_ascii_case("mailto:"))
}

fn rel_is_stylesheet(tag: &ScannedTag) -> bool {
    tag.attr_value("rel")
        .map(|rel| {
            rel.split_ascii_whitespace()
                .any(|t| t.eq_ignore_ascii_case("stylesheet"))
        })
        .unwrap_or(false)
}

// ---------------------------------------------------------------------------
// Inlining
// ---------------------------------------------------------------------------

struct Edit {
    span: Range<usize>,
    replacement: String,
}

/// Where the document's head sits, if anywhere.
struct HeadLayout {
    open_end: Option<usize>,
    close_start: Option<usize>,
    synth_at: usize,
}

fn head_layout(html: &str, events: &[Event]) -> HeadLayout {
    let mut open_end = None;
    let mut close_start = None;
    let mut html_open_end = None;
    for event in events {
        match event {
            Event::Start(tag) if tag.name == "head" && open_end.is_none() => {
                open_end = Some(tag.span.end);
            }
            Event::Start(tag) if tag.name == "html" && html_open_end.is_none() => {
                html_open_end = Some(tag.span.end);
            }
            Event::End { name, span } if name == "head" && close_start.is_none() => {
                close_start = Some(span.start);
            }
            _ => {}
        }
    }
    // Synthesis point when no head exists: after <html>, else after the
    // document prologue (leading whitespace, comments, doctype).
    let synth_at = html_open_end.unwrap_or_else(|| after_prologue(html));
    HeadLayout {
        open_end,
        close_start,
        synth_at,
    }
}

fn after_prologue(html: &str) -> usize {
    let bytes = html.as_bytes();
    let mut pos = 0;
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let rest = &html[pos..];
        if let Some(after) = rest.strip_prefix("<!--") {
            match after.find("-->") {
                Some(close) => pos += 4 + close + 3,
                None => return 0,
            }
        } else if rest.starts_with("<!") || rest.starts_with("<?") {
            match rest.find('>') {
                Some(close) => pos += close + 1,
                None => return 0,
            }
        } else {
            return pos;
        }
    }
}

fn resolve_text(
    resolver: &dyn ResourceResolver,
    url: &str,
    expect_kind: ResourceKind,
) -> Result<ResourceRef, BundleError> {
    let (bytes, mime) = resolver
        .resolve(url)
        .ok_or_else(|| BundleError::UnresolvedResource(url.to_owned()))?;
    Ok(ResourceRef {
        kind: expect_kind,
        url: url.to_owned(),
        resolved_bytes: Some(bytes),
        mime,
    })
}

fn utf8_text(resource: &ResourceRef) -> Result<String, BundleError> {
    String::from_utf8(resource.resolved_bytes.clone().unwrap_or_default()).map_err(|_| {
        BundleError::ResourceNotUtf8 {
            url: resource.url.clone(),
        }
    })
}

/// Inlines every stylesheet, script and image so the document renders
/// with no network at all. Stylesheets and scripts land in `<head>`
/// (synthesized when the document has none); images are rewritten to
/// `data:` URIs in place.
pub fn inline_bundle(
    html: &str,
    resolver: &dyn ResourceResolver,
) -> Result<ContentBundle, BundleError> {
    let events = scan(html)?;
    let layout = head_layout(html, &events);
    let in_head = |span: &Range<usize>| match (layout.open_end, layout.close_start) {
        (Some(open), Some(close)) => span.start >= open && span.end <= close,
        (Some(open), None) => span.start >= open,
        _ => false,
    };

    let mut edits: Vec<Edit> = Vec::new();
    let mut head_inserts: Vec<String> = Vec::new();

    let mut idx = 0;
    while idx < events.len() {
        if let Event::Start(tag) = &events[idx] {
            match tag.name.as_str() {
                "link" if rel_is_stylesheet(tag) => {
                    if let Some(href) = tag.attr_value("href").map(str::trim) {
                        if needs_fetch(href) {
                            let resource = resolve_text(resolver, href, ResourceKind::Stylesheet)?;
                            let css = utf8_text(&resource)?;
                            let inline = format!("<style>{css}</style>");
                            if in_head(&tag.span) {
                                edits.push(Edit {
                                    span: tag.span.clone(),
                                    replacement: inline,
                                });
                            } else {
                                edits.push(Edit {
                                    span: tag.span.clone(),
                                    replacement: String::new(),
                                });
                                head_inserts.push(inline);
                            }
                        }
                    }
                }
                "script" => {
                    if let Some(src) = tag.attr_value("src").map(str::trim) {
                        if needs_fetch(src) {
                            let resource = resolve_text(resolver, src, ResourceKind::Script)?;
                            let js = utf8_text(&resource)?;
                            let inline = format!("<script>{js}</script>");
                            // The element reaches through its close tag.
                            let mut end = tag.span.end;
                            let mut look = idx + 1;
                            while let Some(next) = events.get(look) {
                                match next {
                                    Event::Raw { element, span } if element == "script" => {
                                        end = span.end;
                                        look += 1;
                                    }
                                    Event::End { name, span } if name == "script" => {
                                        end = span.end;
                                        break;
                                    }
                                    _ => break,
                                }
                            }
                            if in_head(&tag.span) {
                                edits.push(Edit {
                                    span: tag.span.start..end,
                                    replacement: inline,
                                });
                            } else {
                                edits.push(Edit {
                                    span: tag.span.start..end,
                                    replacement: String::new(),
                                });
                                head_inserts.push(inline);
                            }
                        }
                    }
                }
                "img" => {
                    if let Some(attr) = tag.attr("src") {
                        let src = attr.value.clone().unwrap_or_default();
                        let src = src.trim();
                        if needs_fetch(src) {
                            let (bytes, mime) = resolver
                                .resolve(src)
                                .ok_or_else(|| BundleError::UnresolvedResource(src.to_owned()))?;
                            if !mime.to_ascii_lowercase().starts_with("image/") {
                                return Err(BundleError::MimeMismatch {
                                    url: src.to_owned(),
                                    mime,
                                });
                            }
                            let uri = encode_data_uri(&bytes, &mime);
                            edits.push(Edit {
                                span: attr.span.clone(),
                                replacement: format!("src=\"{uri}\""),
                            });
                        }
                    }
                }
                _ => {}
            }
        }
        idx += 1;
    }

    if !head_inserts.is_empty() {
        let inserted = head_inserts.concat();
        let (at, replacement) = match (layout.close_start, layout.open_end) {
            (Some(close), _) => (close, inserted),
            (None, Some(open)) => (open, inserted),
            (None, None) => (layout.synth_at, format!("<head>{inserted}</head>")),
        };
        edits.push(Edit {
            span: at..at,
            replacement,
        });
    }

    if edits.is_empty() {
        return Ok(ContentBundle::new(html.to_owned()));
    }

    edits.sort_by_key(|e| (e.span.start, e.span.end));
    let mut out = String::with_capacity(html.len());
    let mut cursor = 0;
    for edit in &edits {
        assert!(edit.span.start >= cursor, "overlapping edits");
        out.push_str(&html[cursor..edit.span.start]);
        out.push_str(&edit.replacement);
        cursor = edit.span.end;
    }
    out.push_str(&html[cursor..]);
    Ok(ContentBundle::new(out))
}

// ---------------------------------------------------------------------------
// Atomicity validation
// ---------------------------------------------------------------------------

/// One reason a document is not atomic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub tag: String,
    pub url: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "<{}> references external resource {:?}",
            self.tag, self.url
        )
    }
}

/// External `url(...)` targets inside CSS text.
fn css_external_urls(css: &str) -> Vec<String> {
    let lower = css.to_ascii_lowercase();
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(off) = lower[from..].find("url(") {
        let start = from + off + 4;
        let Some(close) = css[start..].find(')') else {
            break;
        };
        let mut target = css[start..start + close].trim();
        target = target.trim_matches(|c| c == '"' || c == '\'').trim();
        if needs_fetch(target) {
            found.push(target.to_owned());
        }
        from = start + close + 1;
    }
    found
}

/// Lists every render-time external reference left in the document:
/// any `src` attribute, `<link href>`, and `url(...)` inside stylesheet
/// text or `style` attributes. Hyperlinks (`<a href>`), anchors,
/// `mailto:` and `data:` URIs need no network and are not violations.
pub fn validate_atomic(bundle: &ContentBundle) -> Vec<Violation> {
    let events = match scan(&bundle.html) {
        Ok(events) => events,
        Err(err) => {
            return vec![Violation {
                tag: "(document)".into(),
                url: err.to_string(),
            }];
        }
    };
    let mut violations = Vec::new();
    for event in &events {
        match event {
            Event::Start(tag) => {
                if let Some(src) = tag.attr_value("src").map(str::trim) {
                    if needs_fetch(src) {
                        violations.push(Violation {
                            tag: tag.name.clone(),
                            url: src.to_owned(),
                        });
                    }
                }
                if tag.name == "link" {
                    if let Some(href) = tag.attr_value("href").map(str::trim) {
                        if needs_fetch(href) {
                            violations.push(Violation {
                                tag: "link".into(),
                                url: href.to_owned(),
                            });
                        }
                    }
                }
                if let Some(style) = tag.attr_value("style") {
                    for url in css_external_urls(style) {
                        violations.push(Violation {
                            tag: tag.name.clone(),
                            url,
                        });
                    }
                }
            }
            Event::Raw { element, span } if element == "style" => {
                for url in css_external_urls(&bundle.html[span.clone()]) {
                    violations.push(Violation {
                        tag: "style".into(),
                        url,
                    });
                }
            }
            _ => {}
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Deterministic corpus generation
// ---------------------------------------------------------------------------

const CORPUS_PARAGRAPH: &str = "<p>The waymarked route climbs gently through laurel forest, \
crosses an old water channel and reaches a viewpoint over the valley. Expect loose stones \
after rain, allow ninety minutes for the full loop, and carry water because the spring at \
the halfway shelter runs dry in summer.</p>\n";

/// Builds one atomic document per target size, padded with an HTML
/// comment so `size_bytes` lands on the target exactly (well inside the
/// ±1% band). Content is fixed text, so output is reproducible.
///
/// Panics if any target is zero.
pub fn generate_corpus(target_sizes_kb: &[u32]) -> Vec<ContentBundle> {
    target_sizes_kb
        .iter()
        .map(|&kb| {
            assert!(kb >= 1, "corpus target must be at least 1 kb");
            corpus_document(kb)
        })
        .collect()
}

fn corpus_document(kb: u32) -> ContentBundle {
    let target = kb as usize * 1024;
    let title = format!("Corpus {kb}kb");
    let prefix = format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<title>{title}</title>\n\
         <style>body{{font-family:sans-serif;margin:1.5em;max-width:40em}}</style>\n\
         </head>\n<body>\n<h1>{title}</h1>\n"
    );
    let suffix = "</body>\n</html>\n";
    const MIN_COMMENT: usize = "<!---->".len();
    let base = prefix.len() + suffix.len();
    assert!(
        target >= base + MIN_COMMENT,
        "target too small for the document skeleton"
    );
    let budget = target - base - MIN_COMMENT;
    let paragraphs = budget / CORPUS_PARAGRAPH.len();
    let pad = budget - paragraphs * CORPUS_PARAGRAPH.len() + MIN_COMMENT;
    let mut html = String::with_capacity(target);
    html.push_str(&prefix);
    for _ in 0..paragraphs {
        html.push_str(CORPUS_PARAGRAPH);
    }
    html.push_str("<!--");
    for _ in 0..pad - MIN_COMMENT {
        html.push('x');
    }
    html.push_str("-->");
    html.push_str(suffix);
    debug_assert_eq!(html.len(), target);
    ContentBundle::new(html)
}
