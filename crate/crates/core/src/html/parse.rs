//! Tolerant HTML tree builder.
//!
//! Never fails: stray `<` characters and unterminated tags become text, unmatched
//! end tags are dropped and unclosed elements are closed at end of input.
//! Comments, doctypes and processing instructions are discarded. Tags spelled like
//! reserved tokens (`<eod>`, `<mask:K>`) are unwrapped so that parsed markup can
//! never smuggle special tokens into a document.

use std::collections::BTreeMap;

use super::{DomNode, Element};

pub(crate) const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

const RAW_TEXT_ELEMENTS: &[&str] = &["script", "style", "textarea", "xmp", "noscript", "template"];

/// Elements closed implicitly when a sibling of the same kind opens.
const SELF_NESTING_FORBIDDEN: &[&str] = &["p", "li", "dt", "dd", "option", "tr", "td", "th"];

pub fn is_void(tag: &str) -> bool {
    VOID_ELEMENTS.contains(&tag)
}

fn is_reserved_tag(tag: &str) -> bool {
    tag == "eod" || tag.starts_with("mask:")
}

enum Item {
    Text(String),
    Open { tag: String, attrs: BTreeMap<String, String>, self_closing: bool },
    Close(String),
}

/// Parses arbitrary bytes into a tree rooted at [`Element::root`].
pub fn parse_dom(html: &[u8]) -> Element {
    let text = String::from_utf8_lossy(html);
    let mut builder = TreeBuilder { stack: vec![Element::root()] };
    for item in Lexer::new(&text) {
        builder.push(item);
    }
    builder.finish()
}

struct TreeBuilder {
    stack: Vec<Element>,
}

impl TreeBuilder {
    fn top(&mut self) -> &mut Element {
        self.stack.last_mut().expect("root is never popped")
    }

    fn append(&mut self, node: DomNode) {
        let top = self.top();
        if let (DomNode::Text(new), Some(DomNode::Text(prev))) = (&node, top.children.last_mut()) {
            prev.push_str(new);
            return;
        }
        top.children.push(node);
    }

    fn pop(&mut self) {
        let el = self.stack.pop().expect("pop above root");
        self.append(DomNode::Element(el));
    }

    fn push(&mut self, item: Item) {
        match item {
            Item::Text(t) => {
                if !t.is_empty() {
                    self.append(DomNode::Text(t));
                }
            }
            Item::Open { tag, .. } if is_reserved_tag(&tag) => {}
            Item::Close(tag) if is_reserved_tag(&tag) => {}
            Item::Open { tag, attrs, self_closing } => {
                if SELF_NESTING_FORBIDDEN.contains(&tag.as_str()) && self.stack.len() > 1 && self.top().tag == tag {
                    self.pop();
                }
                let el = Element { tag, attrs, children: Vec::new() };
                if self_closing || is_void(&el.tag) {
                    self.append(DomNode::Element(el));
                } else {
                    self.stack.push(el);
                }
            }
            Item::Close(tag) => {
                if let Some(depth) = self.stack.iter().skip(1).rposition(|e| e.tag == tag) {
                    let target = depth + 1;
                    while self.stack.len() > target {
                        self.pop();
                    }
                }
            }
        }
    }

    fn finish(mut self) -> Element {
        while self.stack.len() > 1 {
            self.pop();
        }
        self.stack.pop().unwrap()
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    /// Set after a raw-text element opens; its content runs to the matching end tag.
    raw_text: Option<String>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0, raw_text: None }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn take_raw_text(&mut self, tag: &str) -> Item {
        let rest = self.rest();
        let lower = rest.to_ascii_lowercase();
        let needle = format!("</{tag}");
        let end = lower.find(&needle).unwrap_or(rest.len());
        self.pos += end;
        Item::Text(rest[..end].to_string())
    }

    fn lex_markup(&mut self) -> Option<Item> {
        let rest = self.rest();
        let bytes = rest.as_bytes();
        debug_assert_eq!(bytes[0], b'<');
        if rest.starts_with("<!--") {
            let end = rest[4..].find("-->").map(|i| i + 7).unwrap_or(rest.len());
            self.pos += end;
            return None;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            let end = rest.find('>').map(|i| i + 1).unwrap_or(rest.len());
            self.pos += end;
            return None;
        }
        let closing = bytes.get(1) == Some(&b'/');
        let name_start = if closing { 2 } else { 1 };
        if !bytes.get(name_start).is_some_and(|c| c.is_ascii_alphabetic()) {
            self.pos += 1;
            return Some(Item::Text("<".into()));
        }
        let mut i = name_start;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'/' && bytes[i] != b'>' {
            i += 1;
        }
        let tag = rest[name_start..i].to_ascii_lowercase();
        let (attrs, self_closing, end) = match lex_attributes(rest, i) {
            Some(parsed) => parsed,
            None => {
                // Unterminated tag: the remainder is text.
                self.pos = self.src.len();
                return Some(Item::Text(rest.to_string()));
            }
        };
        self.pos += end;
        if closing {
            return Some(Item::Close(tag));
        }
        if RAW_TEXT_ELEMENTS.contains(&tag.as_str()) && !self_closing {
            self.raw_text = Some(tag.clone());
        }
        Some(Item::Open { tag, attrs, self_closing })
    }
}

impl Iterator for Lexer<'_> {
    type Item = Item;

    fn next(&mut self) -> Option<Item> {
        loop {
            if self.pos >= self.src.len() {
                return None;
            }
            if let Some(tag) = self.raw_text.take() {
                let item = self.take_raw_text(&tag);
                if matches!(&item, Item::Text(t) if t.is_empty()) {
                    continue;
                }
                return Some(item);
            }
            let rest = self.rest();
            if rest.starts_with('<') {
                if let Some(item) = self.lex_markup() {
                    return Some(item);
                }
                continue;
            }
            let end = rest.find('<').unwrap_or(rest.len());
            self.pos += end;
            return Some(Item::Text(rest[..end].to_string()));
        }
    }
}

/// Lexes attributes starting at byte `i` of `s`. Returns the attributes, the
/// self-closing flag, and the offset just past `>`; `None` if no `>` follows.
fn lex_attributes(s: &str, mut i: usize) -> Option<(BTreeMap<String, String>, bool, usize)> {
    let b = s.as_bytes();
    let mut attrs = BTreeMap::new();
    let mut self_closing = false;
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        match b.get(i)? {
            b'>' => return Some((attrs, self_closing, i + 1)),
            b'/' => {
                self_closing = b.get(i + 1) == Some(&b'>');
                i += 1;
                continue;
            }
            _ => {}
        }
        self_closing = false;
        let name_start = i;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        // A lone `/` or quote char with no name: skip it.
        if i == name_start {
            i += 1;
            continue;
        }
        let name = s[name_start..i].to_ascii_lowercase();
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if b.get(i) == Some(&b'=') {
            i += 1;
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i)? {
                q @ (b'"' | b'\'') => {
                    let close = s[i + 1..].find(*q as char)? + i + 1;
                    value = decode_attr_entities(&s[i + 1..close]);
                    i = close + 1;
                }
                _ => {
                    let start = i;
                    while i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'>' {
                        i += 1;
                    }
                    value = decode_attr_entities(&s[start..i]);
                }
            }
        }
        attrs.entry(name).or_insert(value);
    }
}

/// Decodes exactly the entities the serializer emits, plus the two apostrophe spellings.
fn decode_attr_entities(v: &str) -> String {
    if !v.contains('&') {
        return v.to_string();
    }
    let mut out = String::with_capacity(v.len());
    let mut rest = v;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let table = [("&amp;", '&'), ("&lt;", '<'), ("&gt;", '>'), ("&quot;", '"'), ("&#39;", '\''), ("&apos;", '\'')];
        match table.iter().find(|(ent, _)| rest.starts_with(ent)) {
            Some((ent, ch)) => {
                out.push(*ch);
                rest = &rest[ent.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
