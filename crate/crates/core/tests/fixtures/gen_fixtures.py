#!/usr/bin/env python3
"""Regenerates the HTML fixture corpus, its goldens, and the fixture images.

Every page is assembled from blocks that carry both the raw markup and the
minimal HTML it must reduce to, so the goldens come from the cleaning rules
applied by hand here, never from the Rust minifier:

  * noise tags (header/footer/form/iframe/dialog) and class/id tokens
    header/footer/copyright/dialog drop the whole subtree;
  * elements with no non-whitespace text (img and structured meta exempt)
    drop, as do script/style and whitespace runs containing a newline;
  * a div whose only child is a div merges into it (outer wins, classes union);
  * attributes outside og:*, twitter:*, itemprop/itemscope/itemtype,
    meta property/content and alt/class/href/id/src/title are stripped;
  * attributes serialize alphabetically.

Run from this directory: python3 gen_fixtures.py
"""

import json
import random
import struct
import zlib
from pathlib import Path

HERE = Path(__file__).resolve().parent
HTML = HERE / "html"
IMAGES = HERE / "images"

WORDS = """river stone harbor lantern meadow copper orchard falcon granite willow
canyon ember glacier hollow island juniper kestrel lagoon marble nectar
oasis prairie quarry raven saffron tundra umber valley walnut yarrow
zephyr basalt cedar delta estuary fjord grove heath inlet jasper""".split()

TOPICS = ["Memphis", "Thebes", "Luxor", "Giza", "Aswan", "Abydos", "Karnak", "Edfu", "Dendera", "Kom Ombo"]


def png(width, height, pixel):
    raw = b"".join(b"\x00" + b"".join(bytes(pixel(x, y)) for x in range(width)) for y in range(height))

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def write_images():
    IMAGES.mkdir(exist_ok=True)
    patterns = [
        lambda x, y: (255 * (x // 8 % 2), 255 * (y // 8 % 2), 128),
        lambda x, y: (x * 8 % 256, y * 8 % 256, (x + y) * 4 % 256),
        lambda x, y: (200, 40, 40) if (x - 16) ** 2 + (y - 16) ** 2 < 100 else (20, 20, 120),
        lambda x, y: (x * 7 % 256,) * 3,
        lambda x, y: (0, 180, 0) if y > 20 else (120, 180, 255),
        lambda x, y: ((x ^ y) * 9 % 256, (x * y) % 256, 60),
    ]
    for i, p in enumerate(patterns):
        (IMAGES / f"photo{i:02}.png").write_bytes(png(32, 32, p))


class Page:
    """Raw and expected markup built in lockstep."""

    def __init__(self):
        self.raw = []
        self.want = []
        self.non_textual = 0

    def add(self, raw, want="", non_textual=0):
        self.raw.append(raw)
        self.want.append(want)
        self.non_textual += non_textual


def sentence(rng, n):
    return " ".join(rng.choice(WORDS) for _ in range(n)).capitalize() + "."


def block_paragraph(page, rng):
    a, b = sentence(rng, rng.randint(4, 9)), sentence(rng, rng.randint(3, 7))
    w = rng.choice(WORDS)
    href = f"/wiki/{w}"
    page.add(
        f'    <p style="margin:0">{a} See <a href="{href}" onclick="track()" rel="nofollow">{w}</a> and more. {b}</p>\n',
        f'<p>{a} See <a href="{href}">{w}</a> and more. {b}</p>',
    )


def block_spans(page, rng):
    k = rng.randint(1, 3)
    icons = "".join(f'<span class="icon icon-{i}"></span>' for i in range(k))
    text = sentence(rng, 5)
    page.add(f"    <p>{icons}{text}</p>\n", f"<p>{text}</p>", non_textual=k)


def block_figure(page, rng, image):
    alt = sentence(rng, 4)[:-1]
    cap = sentence(rng, 6)
    page.add(
        f'    <figure class="media">\n      <img data-lazy="true" src="{image}" alt="{alt}" width="32">\n'
        f"      <figcaption>{cap}</figcaption>\n    </figure>\n",
        f'<figure class="media"><img alt="{alt}" src="{image}"><figcaption>{cap}</figcaption></figure>',
    )


def block_list(page, rng):
    items = [sentence(rng, 3) for _ in range(rng.randint(2, 4))]
    raw = "    <ul class=\"facts\">\n" + "".join(f"      <li>{i}</li>\n" for i in items) + "    </ul>\n"
    page.add(raw, '<ul class="facts">' + "".join(f"<li>{i}</li>" for i in items) + "</ul>")


def block_heading(page, rng):
    h = sentence(rng, 3)[:-1]
    page.add(f'    <h2 id="s-{rng.randint(0, 999)}" data-anchor="x">{h}</h2>\n', None)
    # The id survives; recover it from the raw line to keep the golden exact.
    hid = page.raw[-1].split('id="')[1].split('"')[0]
    page.want[-1] = f'<h2 id="{hid}">{h}</h2>'


def block_chain(page, rng):
    t = sentence(rng, 5)
    page.add(
        f'    <div class="outer wrap">\n      <div class="wrap inner" data-x="1">\n        <div id="deep">\n'
        f"          <p>{t}</p>\n        </div>\n      </div>\n    </div>\n",
        f'<div class="outer wrap inner" id="deep"><p>{t}</p></div>',
    )


def block_noise(page, rng):
    kind = rng.randrange(4)
    if kind == 0:
        page.add(f'    <div class="site-copyright">&copy; 20{rng.randint(10, 23)} {rng.choice(WORDS)}</div>\n')
    elif kind == 1:
        page.add('    <form action="/s"><p>Search</p><input name="q"></form>\n')
    elif kind == 2:
        page.add('    <iframe src="https://ads.example.com/frame"></iframe>\n')
    else:
        page.add('    <div id="cookie-dialog"><p>We use cookies.</p><button>OK</button></div>\n')


def block_preformatted(page, rng):
    t = rng.choice(WORDS)
    page.add(f'    <pre class="preformatted">let {t} = 1;</pre>\n', f'<pre class="preformatted">let {t} = 1;</pre>')


def block_entity(page, rng):
    place = rng.choice(TOPICS)
    page.add(
        f'    <p>The city of <a title="{place}, Egypt" target="_blank">{place}</a> &amp; its temples.</p>\n',
        f'<p>The city of <a title="{place}, Egypt">{place}</a> &amp; its temples.</p>',
    )


def corpus_page(i):
    rng = random.Random(1000 + i)
    topic = TOPICS[i % len(TOPICS)]
    title = f"{topic} {rng.choice(WORDS)} {i}"
    page = Page()
    page.add(
        '<!DOCTYPE html>\n<html lang="en">\n<head>\n  <meta charset="utf-8">\n'
        f"  <title>{title}</title>\n"
        f'  <meta property="og:title" content="{title}">\n'
        "  <script>window.dataLayer = [];</script>\n  <style>p { color: #333 }</style>\n</head>\n"
        '<body class="page" onload="init()">\n'
        '  <header class="top"><nav><a href="/">Home</a><a href="/about">About</a></nav></header>\n'
        '  <div id="main">\n   <div class="article-body">\n',
        f'<html><head><title>{title}</title><meta content="{title}" property="og:title"></head>'
        '<body class="page"><div class="article-body" id="main">',
        non_textual=3,
    )
    page.add(f"    <h1>{title}</h1>\n", f"<h1>{title}</h1>")
    builders = [block_paragraph, block_spans, block_list, block_heading, block_chain, block_noise, block_preformatted, block_entity]
    for k in range(rng.randint(4, 8)):
        if k == 1 and i % 3 != 2:
            # Some pages point at a CDN URL whose basename exists locally, some at a missing file.
            src = f"https://cdn.example.com/img/photo{i % 6:02}.png?w=320" if i % 2 else f"photo{i % 6:02}.png"
            if i % 7 == 0:
                src = "missing.png"
            block_figure(page, rng, src)
        else:
            rng.choice(builders)(page, rng)
    page.add(
        "   </div>\n  </div>\n"
        f"  <footer><p>&copy; {topic} Press</p></footer>\n</body>\n</html>\n",
        "</div></body></html>",
    )
    return "".join(page.raw), "".join(page.want), page.non_textual


# Pages with goldens written out by hand.
SPECIAL = {
    "article": (
        """<!doctype html>
<html>
<head><title>Memphis, Egypt</title>
<meta property="og:type" content="article"></head>
<body>
<header id="masthead"><h1>Daily Antiquity</h1></header>
<div><div class="story main"><div class="story">
<h1 class="headline" data-id="7">Memphis</h1>
<p>Memphis was the ancient capital of <a title="Lower Egypt" href="/lower" onclick="go()">Lower Egypt</a>.</p>
<img src="photo02.png" alt="Ruins at Memphis" loading="lazy">
<p>Its ruins lie near <b>Helwan</b>, south of Giza.<span></span></p>
</div></div></div>
<div class="Copyright">All rights reserved.</div>
<dialog open><p>Subscribe?</p></dialog>
</body>
</html>
""",
        '<html><head><title>Memphis, Egypt</title><meta content="article" property="og:type"></head>'
        '<body><div class="story main"><h1 class="headline">Memphis</h1>'
        '<p>Memphis was the ancient capital of <a href="/lower" title="Lower Egypt">Lower Egypt</a>.</p>'
        '<img alt="Ruins at Memphis" src="photo02.png">'
        "<p>Its ruins lie near <b>Helwan</b>, south of Giza.</p></div></body></html>",
        1,
    ),
    "decorative_spans": (
        "<html><body>\n<div class=\"card\">\n"
        + "".join(f'  <span class="dot d{i}"></span>\n' for i in range(7))
        + "  <p>Twelve ornaments<span></span><span> </span>, one line.</p>\n"
        + '  <div class="row"><span class="sep">\n</span><span></span></div>\n'
        + "</div>\n</body></html>\n",
        '<html><body><div class="card"><p>Twelve ornaments, one line.</p></div></body></html>',
        12,
    ),
    "structured": (
        '<div itemscope itemtype="https://schema.org/Person" data-v="2">'
        '<meta itemprop="birthDate" content="1920-01-01">'
        '<span itemprop="name" class="n" style="x">Ada</span>'
        '<meta name="twitter:card" twitter:card="summary">'
        "</div>",
        '<div itemscope="" itemtype="https://schema.org/Person"><meta content="1920-01-01" itemprop="birthDate">'
        '<span class="n" itemprop="name">Ada</span></div>',
        1,
    ),
}


def main():
    HTML.mkdir(exist_ok=True)
    write_images()
    expected = {}
    for name, (raw, want, nt) in SPECIAL.items():
        (HTML / f"{name}.html").write_text(raw)
        (HTML / f"{name}.golden.html").write_text(want)
        expected[name] = {"non_textual": nt}
    for i in range(50 - len(SPECIAL)):
        raw, want, nt = corpus_page(i)
        name = f"page{i:02}"
        (HTML / f"{name}.html").write_text(raw)
        (HTML / f"{name}.golden.html").write_text(want)
        expected[name] = {"non_textual": nt}
    (HERE / "expected_reports.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
