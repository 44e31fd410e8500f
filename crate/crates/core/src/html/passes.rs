use super::{DomNode, Element, MinifyReport};

/// Elements removed wholesale as boilerplate.
pub const NOISE_TAGS: &[&str] = &["header", "footer", "form", "iframe", "dialog"];

/// `class`/`id` tokens marking boilerplate containers.
const NOISE_TOKENS: &[&str] = &["header", "footer", "copyright", "dialog"];

/// Elements whose character data is not document text.
const NON_TEXTUAL_TAGS: &[&str] = &["script", "style", "noscript", "template", "svg", "canvas", "object"];

const FUNCTIONAL_ATTRS: &[&str] = &["alt", "class", "href", "id", "src", "title"];
const MICRODATA_ATTRS: &[&str] = &["itemprop", "itemscope", "itemtype"];

fn noise_reason(e: &Element) -> Option<String> {
    if NOISE_TAGS.contains(&e.tag.as_str()) {
        return Some(format!("tag:{}", e.tag));
    }
    for attr in ["class", "id"] {
        let Some(value) = e.attrs.get(attr) else { continue };
        for token in value.split(|c: char| !c.is_alphanumeric()) {
            let token = token.to_lowercase();
            if let Some(hit) = NOISE_TOKENS.iter().find(|n| **n == token) {
                return Some(format!("token:{hit}"));
            }
        }
    }
    None
}

/// Drops noise elements (by tag, or by an exact `class`/`id` token match).
pub fn remove_noise(mut root: Element, report: &mut MinifyReport) -> Element {
    root.children = std::mem::take(&mut root.children)
        .into_iter()
        .filter_map(|c| match c {
            DomNode::Element(e) => match noise_reason(&e) {
                Some(reason) => {
                    *report.noise.entry(reason).or_default() += e.element_count();
                    None
                }
                None => Some(DomNode::Element(remove_noise(e, report))),
            },
            t => Some(t),
        })
        .collect();
    root
}

/// Elements kept even without text: images (tokenized later) and structured-data `meta`.
fn is_exempt(e: &Element) -> bool {
    e.tag == "img" || (e.tag == "meta" && (e.attrs.contains_key("property") || e.attrs.contains_key("itemprop")))
}

fn carries_content(e: &Element) -> bool {
    if NON_TEXTUAL_TAGS.contains(&e.tag.as_str()) {
        return false;
    }
    is_exempt(e)
        || e.children.iter().any(|c| match c {
            DomNode::Text(t) => !t.trim().is_empty(),
            DomNode::Element(child) => carries_content(child),
        })
}

/// Drops every element without a non-whitespace text descendant, except images,
/// structured `meta` tags and their ancestors. Whitespace-only text containing a
/// line break is layout, and is dropped too.
pub fn strip_non_textual(mut root: Element, report: &mut MinifyReport) -> Element {
    root.children = std::mem::take(&mut root.children)
        .into_iter()
        .filter_map(|c| match c {
            DomNode::Element(e) if carries_content(&e) => Some(DomNode::Element(strip_non_textual(e, report))),
            DomNode::Element(e) => {
                report.non_textual += e.element_count();
                None
            }
            DomNode::Text(t) if t.trim().is_empty() && t.contains('\n') => None,
            t => Some(t),
        })
        .collect();
    root
}

/// Collapses chains of `div`s whose only child is another `div`.
///
/// Merged attributes keep the outer value on conflicts, except `class`, whose
/// token lists are unioned (outer tokens first).
pub fn fold_divs(mut root: Element, report: &mut MinifyReport) -> Element {
    root.children = std::mem::take(&mut root.children)
        .into_iter()
        .map(|c| match c {
            DomNode::Element(e) => DomNode::Element(fold_divs(e, report)),
            t => t,
        })
        .collect();
    if root.tag != "div" {
        return root;
    }
    let mut significant = root.children.iter().filter(|c| !matches!(c, DomNode::Text(t) if t.trim().is_empty()));
    let only_div = match (significant.next(), significant.next()) {
        (Some(DomNode::Element(inner)), None) if inner.tag == "div" => true,
        _ => false,
    };
    if !only_div {
        return root;
    }
    let inner = root
        .children
        .drain(..)
        .find_map(|c| match c {
            DomNode::Element(e) => Some(e),
            _ => None,
        })
        .expect("checked above");
    let mut merged = inner.attrs;
    for (name, value) in std::mem::take(&mut root.attrs) {
        if name == "class" {
            let mut tokens: Vec<&str> = value.split_whitespace().collect();
            let inner_class = merged.get("class").cloned().unwrap_or_default();
            for t in inner_class.split_whitespace() {
                if !tokens.contains(&t) {
                    tokens.push(t);
                }
            }
            merged.insert(name, tokens.join(" "));
        } else {
            merged.insert(name, value);
        }
    }
    report.folded_divs += 1;
    Element { tag: root.tag, attrs: merged, children: inner.children }
}

fn attribute_allowed(tag: &str, name: &str) -> bool {
    name.starts_with("og:")
        || name.starts_with("twitter:")
        || MICRODATA_ATTRS.contains(&name)
        || FUNCTIONAL_ATTRS.contains(&name)
        || (tag == "meta" && (name == "property" || name == "content"))
}

/// Keeps only structured-data attributes (OpenGraph, Twitter, schema.org microdata)
/// and the functional set `alt class href id src title`.
pub fn filter_attributes(mut root: Element, report: &mut MinifyReport) -> Element {
    root.walk_mut(&mut |e| {
        let before = e.attrs.len();
        let tag = e.tag.clone();
        e.attrs.retain(|name, _| attribute_allowed(&tag, name));
        report.stripped_attributes += before - e.attrs.len();
    });
    root
}

/// Concatenated document text, skipping script-like elements.
pub fn visible_text(root: &Element) -> String {
    fn collect(e: &Element, out: &mut String) {
        if NON_TEXTUAL_TAGS.contains(&e.tag.as_str()) {
            return;
        }
        for c in &e.children {
            match c {
                DomNode::Text(t) => {
                    out.push_str(t);
                    out.push(' ');
                }
                DomNode::Element(child) => collect(child, out),
            }
        }
    }
    let mut out = String::new();
    collect(root, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::html::{minify, parse_dom, serialize};

    fn run(pass: fn(Element, &mut MinifyReport) -> Element, html: &str) -> (String, MinifyReport) {
        let mut report = MinifyReport::default();
        let out = pass(parse_dom(html.as_bytes()), &mut report);
        (serialize(&out), report)
    }

    #[test]
    fn strips_empty_span() {
        let (out, r) = run(strip_non_textual, "<div><span></span><p>x</p></div>");
        assert_eq!(out, "<div><p>x</p></div>");
        assert_eq!(r.non_textual, 1);
    }

    #[test]
    fn image_and_its_ancestors_survive() {
        let (out, r) = run(strip_non_textual, r#"<div><img src="u"></div>"#);
        assert_eq!(out, r#"<div><img src="u"></div>"#);
        assert_eq!(r.non_textual, 0);
    }

    #[test]
    fn scripts_are_not_text() {
        let (out, r) = run(strip_non_textual, "<div><script>var x = 1;</script></div><p>k</p>");
        assert_eq!(out, "<p>k</p>");
        assert_eq!(r.non_textual, 2);
    }

    #[test]
    fn noise_by_tag() {
        let (out, r) = run(remove_noise, "<footer>c</footer><p>x</p>");
        assert_eq!(out, "<p>x</p>");
        assert_eq!(r.noise["tag:footer"], 1);
        let (out, r) = run(remove_noise, "<div><form><p>t</p></form></div>");
        assert_eq!(out, "<div></div>");
        assert_eq!(r.noise["tag:form"], 2);
    }

    #[test]
    fn noise_by_class_token() {
        let (out, r) = run(remove_noise, r#"<div class="site-copyright">©</div><p>x</p>"#);
        assert_eq!(out, "<p>x</p>");
        assert_eq!(r.noise["token:copyright"], 1);
        let (out, _) = run(remove_noise, r#"<pre class="preformatted">x</pre><div id="Page_Header">h</div>"#);
        assert_eq!(out, r#"<pre class="preformatted">x</pre>"#);
    }

    #[test]
    fn fold_merges_attributes() {
        let (out, r) = run(fold_divs, r#"<div id="a"><div class="b"><p>x</p></div></div>"#);
        assert_eq!(out, r#"<div class="b" id="a"><p>x</p></div>"#);
        assert_eq!(r.folded_divs, 1);
        let (out, _) = run(fold_divs, r#"<div class="a b" id="o"><div class="b c" id="i" title="t">x</div></div>"#);
        assert_eq!(out, r#"<div class="a b c" id="o" title="t">x</div>"#);
    }

    #[test]
    fn fold_leaves_mixed_children() {
        let html = "<div><p>x</p><div><p>y</p></div></div>";
        assert_eq!(run(fold_divs, html).0, html);
    }

    #[test]
    fn fold_reaches_fixpoint() {
        let (out, r) = run(fold_divs, "<div><div><div><p>x</p></div></div></div>");
        assert_eq!(out, "<div><p>x</p></div>");
        assert_eq!(r.folded_divs, 2);
        assert_eq!(run(fold_divs, &out).0, out);
    }

    #[test]
    fn attribute_whitelist() {
        let (out, r) = run(filter_attributes, r#"<img data-track="1" src="u" alt="cat">"#);
        assert_eq!(out, r#"<img alt="cat" src="u">"#);
        assert_eq!(r.stripped_attributes, 1);
        let meta = r#"<meta content="T" property="og:title">"#;
        assert_eq!(run(filter_attributes, meta).0, meta);
        let (out, _) = run(filter_attributes, r#"<a onclick="f()" title="Memphis, Egypt">Memphis</a>"#);
        assert_eq!(out, r#"<a title="Memphis, Egypt">Memphis</a>"#);
        let (out, _) = run(filter_attributes, r#"<span itemprop="name" style="x" content="c">n</span>"#);
        assert_eq!(out, r#"<span itemprop="name">n</span>"#);
    }

    #[test]
    fn structured_meta_survives_minify() {
        let html = r#"<html><head><meta property="og:title" content="T"><meta name="viewport" content="w"><title>T</title></head></html>"#;
        let m = minify(html.as_bytes());
        assert_eq!(
            m.minimal_html,
            r#"<html><head><meta content="T" property="og:title"><title>T</title></head></html>"#
        );
    }

    #[test]
    fn visible_text_skips_scripts() {
        let root = parse_dom(b"<p>a</p><script>x</script><b>c</b>");
        assert_eq!(visible_text(&root).split_whitespace().collect::<Vec<_>>(), ["a", "c"]);
    }
}
