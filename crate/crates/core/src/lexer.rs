// SPDX-License-Identifier: MIT OR Apache-2.0

//! Region lexer for Java-like source.
//!
//! Splits text into code, comment and literal regions without parsing the
//! grammar. Handles `//` and `/* */` comments, double-quoted strings and
//! character literals with backslash escapes, and `"""` text blocks.
//! Unicode escapes (`\u002F`) are not pre-processed.
//!
//! A string or character literal that reaches a newline before its closing
//! quote ends there. An unterminated block comment or text block runs to the
//! end of input.

/// Kind of a lexical region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// Anything outside comments and literals.
    Code,
    /// `// ...` up to (not including) the line terminator.
    LineComment,
    /// `/* ... */`, or to end of input when unterminated.
    BlockComment,
    /// String literal, character literal, or text block.
    Literal,
}

/// Half-open byte range `[start, end)` tagged with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    pub start: usize,
    pub end: usize,
}

/// Lex `source` into ordered, non-overlapping, gap-free regions.
pub fn regions(source: &str) -> Vec<Region> {
    let b = source.as_bytes();
    let n = b.len();
    let mut out: Vec<Region> = Vec::new();
    let mut code_start = 0;
    let mut i = 0;

    let flush_code = |out: &mut Vec<Region>, upto: usize, from: usize| {
        if upto > from {
            out.push(Region {
                kind: RegionKind::Code,
                start: from,
                end: upto,
            });
        }
    };

    while i < n {
        let (kind, end) = match b[i] {
            b'/' if b.get(i + 1) == Some(&b'/') => {
                (RegionKind::LineComment, line_comment_end(b, i))
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                (RegionKind::BlockComment, block_comment_end(b, i))
            }
            b'"' if opens_text_block(b, i) => (RegionKind::Literal, text_block_end(b, i)),
            b'"' => (RegionKind::Literal, quoted_end(b, i, b'"')),
            b'\'' => (RegionKind::Literal, quoted_end(b, i, b'\'')),
            _ => {
                i += 1;
                continue;
            }
        };
        flush_code(&mut out, i, code_start);
        out.push(Region {
            kind,
            start: i,
            end,
        });
        i = end;
        code_start = end;
    }
    flush_code(&mut out, n, code_start);
    out
}

fn line_comment_end(b: &[u8], start: usize) -> usize {
    let mut j = start + 2;
    while j < b.len() && b[j] != b'\n' {
        j += 1;
    }
    // keep the `\r` of a CRLF terminator outside the comment
    if j < b.len() && j > start + 2 && b[j - 1] == b'\r' {
        j - 1
    } else {
        j
    }
}

fn block_comment_end(b: &[u8], start: usize) -> usize {
    let mut j = start + 2;
    while j + 1 < b.len() {
        if b[j] == b'*' && b[j + 1] == b'/' {
            return j + 2;
        }
        j += 1;
    }
    b.len()
}

/// `"""` followed by optional horizontal whitespace and a line terminator.
fn opens_text_block(b: &[u8], i: usize) -> bool {
    if !b[i..].starts_with(b"\"\"\"") {
        return false;
    }
    let mut j = i + 3;
    while j < b.len() && matches!(b[j], b' ' | b'\t' | b'\x0c') {
        j += 1;
    }
    j < b.len() && (b[j] == b'\n' || (b[j] == b'\r' && b.get(j + 1) == Some(&b'\n')))
}

fn text_block_end(b: &[u8], start: usize) -> usize {
    let mut j = start + 3;
    while j < b.len() {
        if b[j] == b'\\' {
            j += 2;
        } else if b[j..].starts_with(b"\"\"\"") {
            return j + 3;
        } else {
            j += 1;
        }
    }
    b.len()
}

fn quoted_end(b: &[u8], start: usize, quote: u8) -> usize {
    let mut j = start + 1;
    while j < b.len() {
        match b[j] {
            b'\\' if j + 1 < b.len() && b[j + 1] != b'\n' => j += 2,
            b'\n' => return j,
            c if c == quote => return j + 1,
            _ => j += 1,
        }
    }
    b.len()
}
