//! Raw HTML to minimal HTML.
//!
//! [`minify`] runs `parse → remove_noise → strip_non_textual → fold_divs →
//! filter_attributes → serialize`. Every pass is a pure tree-to-tree function and
//! the composition is idempotent on its own output.

mod parse;
mod passes;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use parse::{is_void, parse_dom};
pub use passes::{filter_attributes, fold_divs, remove_noise, strip_non_textual, visible_text, NOISE_TAGS};

/// Tag name of the synthetic document root.
pub const ROOT_TAG: &str = "#root";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomNode {
    Element(Element),
    Text(String),
}

/// An element. Attributes live in a `BTreeMap`, so names are unique and iterate
/// in alphabetical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<DomNode>,
}

impl Element {
    pub fn new(tag: impl Into<String>) -> Self {
        Self { tag: tag.into(), attrs: BTreeMap::new(), children: Vec::new() }
    }

    pub fn root() -> Self {
        Self::new(ROOT_TAG)
    }

    pub fn is_root(&self) -> bool {
        self.tag == ROOT_TAG
    }

    /// Number of elements in this subtree, the root itself excluded when it is the document root.
    pub fn element_count(&self) -> usize {
        let own = usize::from(!self.is_root());
        own + self
            .children
            .iter()
            .map(|c| match c {
                DomNode::Element(e) => e.element_count(),
                DomNode::Text(_) => 0,
            })
            .sum::<usize>()
    }

    /// Depth-first visit of every element, this one included.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Element)) {
        f(self);
        for c in &self.children {
            if let DomNode::Element(e) = c {
                e.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Element)) {
        f(self);
        for c in &mut self.children {
            if let DomNode::Element(e) = c {
                e.walk_mut(f);
            }
        }
    }
}

/// What the passes removed or rewrote.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinifyReport {
    pub input_elements: usize,
    pub output_elements: usize,
    /// Elements dropped because their subtree carries no text.
    pub non_textual: usize,
    /// Elements dropped as noise, keyed by reason (`tag:footer`, `token:copyright`, ...).
    /// Counts include every element of a dropped subtree.
    pub noise: BTreeMap<String, usize>,
    pub folded_divs: usize,
    pub stripped_attributes: usize,
}

impl MinifyReport {
    pub fn removed_total(&self) -> usize {
        self.non_textual + self.noise.values().sum::<usize>() + self.folded_divs
    }
}

/// Serializes the children of `root` (or `root` itself when it is a real element).
pub fn serialize(root: &Element) -> String {
    let mut out = String::new();
    if root.is_root() {
        for c in &root.children {
            write_node(c, &mut out);
        }
    } else {
        write_element(root, &mut out);
    }
    out
}

fn write_node(node: &DomNode, out: &mut String) {
    match node {
        DomNode::Text(t) => out.push_str(t),
        DomNode::Element(e) => write_element(e, out),
    }
}

fn write_element(e: &Element, out: &mut String) {
    out.push('<');
    out.push_str(&e.tag);
    for (name, value) in &e.attrs {
        out.push(' ');
        out.push_str(name);
        out.push_str("=\"");
        escape_attr(value, out);
        out.push('"');
    }
    out.push('>');
    if is_void(&e.tag) {
        return;
    }
    for c in &e.children {
        write_node(c, out);
    }
    out.push_str("</");
    out.push_str(&e.tag);
    out.push('>');
}

fn escape_attr(v: &str, out: &mut String) {
    for ch in v.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minified {
    pub minimal_html: String,
    pub report: MinifyReport,
}

/// Full minimal-HTML pipeline.
pub fn minify(html: &[u8]) -> Minified {
    let dom = parse_dom(html);
    let mut report = MinifyReport { input_elements: dom.element_count(), ..Default::default() };
    let dom = remove_noise(dom, &mut report);
    let dom = strip_non_textual(dom, &mut report);
    let dom = fold_divs(dom, &mut report);
    let dom = filter_attributes(dom, &mut report);
    report.output_elements = dom.element_count();
    Minified { minimal_html: serialize(&dom), report }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        let m = minify(b"");
        assert_eq!(m.minimal_html, "");
        assert_eq!(m.report, MinifyReport::default());
    }

    #[test]
    fn void_elements_have_no_close_tag() {
        let mut img = Element::new("img");
        img.attrs.insert("src".into(), "a<b".into());
        img.attrs.insert("alt".into(), "\"q\" & r".into());
        assert_eq!(serialize(&img), r#"<img alt="&quot;q&quot; &amp; r" src="a&lt;b">"#);
    }

    #[test]
    fn accounting_balances() {
        let html = br#"<html><body><header>h</header><div><div class="x"><p>t<span></span></p></div></div>
            <form><p>f</p></form><footer>c</footer></body></html>"#;
        let m = minify(html);
        assert_eq!(m.report.input_elements - m.report.output_elements, m.report.removed_total());
        assert_eq!(m.minimal_html, r#"<html><body><div class="x"><p>t</p></div></body></html>"#);
    }
}
