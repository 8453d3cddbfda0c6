//! Splits element markup into segments along block-level nodes.
//!
//! Every block node (`p`, `li`, `td`, `th`, `h1`-`h6`, leaf `div`, ...) yields
//! one candidate segment. Text that sits directly inside a container next to
//! nested blocks becomes its own segment, so nothing is lost when lists nest.
//! Inline markup is dropped except `<strong>`, which is kept in lowercase
//! canonical form. The tokenizer recovers from unbalanced markup and reports
//! what it repaired.

use crate::text;

const BLOCK: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "caption", "dd", "details", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "html", "legend", "li", "main", "nav", "ol", "p", "pre", "section", "summary", "table", "tbody", "td",
    "tfoot", "th", "thead", "tr", "ul",
];

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr",
];

/// Elements whose content is not text.
const OPAQUE: &[&str] = &["script", "style", "template", "head", "title"];

/// Elements whose end tag may be omitted without a warning.
const OPTIONAL_END: &[&str] = &["p", "li", "dt", "dd", "td", "th", "tr", "thead", "tbody", "tfoot"];

fn is_block(name: &str) -> bool {
    BLOCK.contains(&name)
}

/// A segment candidate: escaped plain text plus the markup it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentText {
    pub text: String,
    pub html: String,
}

/// Problems repaired while reading markup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkupIssue {
    pub byte_offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Text(&'a str),
    Start { name: String, self_closing: bool },
    End { name: String },
    Skip,
}

struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
    issues: Vec<MarkupIssue>,
}

impl<'a> Tokenizer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0, issues: Vec::new() }
    }

    fn issue(&mut self, at: usize, message: impl Into<String>) {
        self.issues.push(MarkupIssue { byte_offset: at, message: message.into() });
    }

    /// Returns the next token with its byte span.
    fn next_token(&mut self) -> Option<(Token<'a>, usize, usize)> {
        let start = self.pos;
        let rest = &self.src[start..];
        if rest.is_empty() {
            return None;
        }
        if !rest.starts_with('<') {
            let len = rest.find('<').unwrap_or(rest.len());
            self.pos += len;
            return Some((Token::Text(&rest[..len]), start, self.pos));
        }
        if let Some(body) = rest.strip_prefix("<!--") {
            match body.find("-->") {
                Some(i) => self.pos += 4 + i + 3,
                None => {
                    self.issue(start, "unterminated comment");
                    self.pos = self.src.len();
                }
            }
            return Some((Token::Skip, start, self.pos));
        }
        if rest.starts_with("<!") || rest.starts_with("<?") {
            let len = rest.find('>').map(|i| i + 1).unwrap_or(rest.len());
            self.pos += len;
            return Some((Token::Skip, start, self.pos));
        }
        let (closing, name_from) = if rest.starts_with("</") { (true, 2) } else { (false, 1) };
        let name: String = rest[name_from..]
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        if name.is_empty() || !name.starts_with(|c: char| c.is_ascii_alphabetic()) {
            // A literal '<' in text.
            let len = 1 + rest[1..].find('<').unwrap_or(rest.len() - 1);
            self.pos += len;
            return Some((Token::Text(&rest[..len]), start, self.pos));
        }
        let Some(end) = find_tag_end(&rest[name_from + name.len()..]) else {
            self.issue(start, format!("tag <{name}> is not terminated; treated as text"));
            let len = 1 + rest[1..].find('<').unwrap_or(rest.len() - 1);
            self.pos += len;
            return Some((Token::Text(&rest[..len]), start, self.pos));
        };
        let tag_len = name_from + name.len() + end + 1;
        let self_closing = rest[..tag_len - 1].ends_with('/');
        self.pos += tag_len;
        let name = name.to_ascii_lowercase();
        let token = if closing {
            Token::End { name }
        } else {
            Token::Start { name, self_closing }
        };
        Some((token, start, self.pos))
    }
}

/// Offset of the `>` closing a tag, honouring quoted attribute values.
fn find_tag_end(s: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '>' => return Some(i),
            None if c == '<' => return None,
            None => {}
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Char(char),
    Open,
    Close,
}

#[derive(Default)]
struct Run {
    pieces: Vec<Piece>,
    span: Option<(usize, usize)>,
}

impl Run {
    fn touch(&mut self, start: usize, end: usize) {
        self.span = Some(match self.span {
            Some((s, _)) => (s, end),
            None => (start, end),
        });
    }
}

struct Segmenter<'a> {
    src: &'a str,
    stack: Vec<String>,
    run: Run,
    out: Vec<SegmentText>,
}

impl<'a> Segmenter<'a> {
    fn strong_depth(&self) -> usize {
        self.stack.iter().filter(|n| *n == "strong").count()
    }

    fn opaque(&self) -> bool {
        self.stack.iter().any(|n| OPAQUE.contains(&n.as_str()))
    }

    fn flush(&mut self) {
        let run = std::mem::take(&mut self.run);
        if let Some((s, e)) = run.span {
            let text = render(&run.pieces);
            if !text::strip_strong(&text).trim().is_empty() {
                self.out.push(SegmentText { text, html: self.src[s..e].trim().to_string() });
            }
        }
        if self.strong_depth() > 0 {
            self.run.pieces.push(Piece::Open);
        }
    }

    /// Pops the stack down to (and including) index `k`, emitting the effects of
    /// each closed element. Returns the names closed above `k`.
    fn close_to(&mut self, k: usize, at: usize) -> Vec<String> {
        let mut above = Vec::new();
        while self.stack.len() > k {
            let name = self.stack.pop().expect("non-empty");
            if name == "strong" {
                self.run.pieces.push(Piece::Close);
            }
            if is_block(&name) {
                if let Some((s, _)) = self.run.span {
                    self.run.span = Some((s, at.max(s)));
                }
                self.flush();
            }
            if self.stack.len() > k {
                above.push(name);
            }
        }
        above
    }

    /// Index of the element a new `name` start tag implicitly closes.
    fn implied_close(&self, name: &str) -> Option<usize> {
        let search = |targets: &[&str], barriers: &[&str]| {
            for (i, open) in self.stack.iter().enumerate().rev() {
                if targets.contains(&open.as_str()) {
                    return Some(i);
                }
                if barriers.contains(&open.as_str()) {
                    return None;
                }
            }
            None
        };
        match name {
            "li" => search(&["li"], &["ul", "ol", "table", "div"]),
            "dt" | "dd" => search(&["dt", "dd"], &["dl", "table", "div"]),
            "td" | "th" => search(&["td", "th"], &["tr", "table"]),
            "tr" => search(&["tr"], &["table"]),
            n if is_block(n) => {
                // A block start closes an open paragraph when only inline
                // elements sit above it.
                for (i, open) in self.stack.iter().enumerate().rev() {
                    if open == "p" {
                        return Some(i);
                    }
                    if is_block(open) {
                        return None;
                    }
                }
                None
            }
            _ => None,
        }
    }
}

/// Turns the buffered pieces of one run into segment text.
fn render(pieces: &[Piece]) -> String {
    // Balance strong markup: outermost open/close only.
    let mut toks = Vec::with_capacity(pieces.len());
    let mut depth = 0usize;
    for &p in pieces {
        match p {
            Piece::Open => {
                depth += 1;
                if depth == 1 {
                    toks.push(Piece::Open);
                }
            }
            Piece::Close => {
                if depth > 0 {
                    depth -= 1;
                    if depth == 0 {
                        toks.push(Piece::Close);
                    }
                }
            }
            Piece::Char(c) if c.is_whitespace() => toks.push(Piece::Char(' ')),
            c => toks.push(c),
        }
    }
    if depth > 0 {
        toks.push(Piece::Close);
    }
    // Move whitespace outside the strong tags so they hug their content.
    loop {
        let mut changed = false;
        for i in 0..toks.len().saturating_sub(1) {
            match (toks[i], toks[i + 1]) {
                (Piece::Open, Piece::Char(' ')) | (Piece::Char(' '), Piece::Close) => {
                    toks.swap(i, i + 1);
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    let mut s = String::new();
    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            Piece::Open if toks.get(i + 1) == Some(&Piece::Close) => i += 1,
            Piece::Open => s.push_str(text::STRONG_OPEN),
            Piece::Close => s.push_str(text::STRONG_CLOSE),
            Piece::Char(c) => match c {
                '&' => s.push_str("&amp;"),
                '<' => s.push_str("&lt;"),
                '>' => s.push_str("&gt;"),
                c => s.push(c),
            },
        }
        i += 1;
    }
    text::nfc(&text::collapse_whitespace(&s))
}

/// Splits `element_html` into segments, returning them with any repairs made.
pub fn segment_html(element_html: &str) -> (Vec<SegmentText>, Vec<MarkupIssue>) {
    let mut tokenizer = Tokenizer::new(element_html);
    let mut seg = Segmenter {
        src: element_html,
        stack: Vec::new(),
        run: Run::default(),
        out: Vec::new(),
    };
    let mut issues = Vec::new();

    while let Some((token, start, end)) = tokenizer.next_token() {
        match token {
            Token::Skip => {}
            Token::Text(raw) => {
                if seg.opaque() {
                    continue;
                }
                let decoded = html_escape::decode_html_entities(raw);
                seg.run.pieces.extend(decoded.chars().map(Piece::Char));
                seg.run.touch(start, end);
            }
            Token::Start { name, self_closing } => {
                if seg.opaque() {
                    continue;
                }
                if let Some(k) = seg.implied_close(&name) {
                    seg.close_to(k, start);
                }
                if VOID.contains(&name.as_str()) {
                    if name == "hr" {
                        seg.flush();
                    } else if name == "br" {
                        seg.run.pieces.push(Piece::Char(' '));
                        seg.run.touch(start, end);
                    }
                    continue;
                }
                if is_block(&name) {
                    seg.flush();
                    if !self_closing {
                        seg.stack.push(name);
                        seg.run.touch(start, end);
                    }
                } else if !self_closing {
                    if name == "strong" {
                        seg.run.pieces.push(Piece::Open);
                    }
                    seg.run.touch(start, end);
                    seg.stack.push(name);
                }
            }
            Token::End { name } => {
                if VOID.contains(&name.as_str()) {
                    continue;
                }
                let Some(k) = seg.stack.iter().rposition(|n| *n == name) else {
                    if !seg.opaque() {
                        issues.push(MarkupIssue { byte_offset: start, message: format!("stray end tag </{name}> ignored") });
                    }
                    continue;
                };
                seg.run.touch(start, end);
                let above = seg.close_to(k, end);
                for unclosed in above.iter().filter(|n| !OPTIONAL_END.contains(&n.as_str())) {
                    issues.push(MarkupIssue {
                        byte_offset: start,
                        message: format!("<{unclosed}> closed implicitly by </{name}>"),
                    });
                }
            }
        }
    }
    let len = element_html.len();
    for unclosed in seg.stack.iter().filter(|n| !OPTIONAL_END.contains(&n.as_str())) {
        issues.push(MarkupIssue { byte_offset: len, message: format!("<{unclosed}> not closed before end of input") });
    }
    seg.close_to(0, len);
    seg.flush();

    let mut all = tokenizer.issues;
    all.extend(issues);
    all.sort_by_key(|i| i.byte_offset);
    (seg.out, all)
}
