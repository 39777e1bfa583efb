// SPDX-License-Identifier: MIT OR Apache-2.0

//! Comment location, concept classification and stripping for Java source.
//!
//! Four concepts are recognised:
//!
//! - **Comment**: any comment at all (the union of the three below).
//! - **Javadoc**: a `/* ... */` block whose text spans more than one line.
//!   This is a lexical definition; the `/**` marker is not required.
//! - **Inline**: a comment confined to one line, either a `//` comment or a
//!   one-line `/* ... */`, standalone or trailing code.
//! - **Multiline**: a maximal run of two or more standalone `//` comments on
//!   consecutive lines.
//!
//! Every comment belongs to exactly one [`ConceptGroup`].

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexer::{self, RegionKind};

/// Comment delimiter syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Syntax {
    /// `// ...`
    Line,
    /// `/* ... */`
    Block,
}

/// Where a comment sits on its first line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Placement {
    /// Only whitespace precedes it on its first line.
    Standalone,
    /// Something other than whitespace precedes it on the same line.
    Trailing,
}

/// One located comment.
///
/// `byte_start..byte_end` is a half-open byte range into the scanned source
/// and `text` is exactly that slice, delimiters included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentSpan {
    pub byte_start: usize,
    pub byte_end: usize,
    /// 1-based line of the first byte.
    pub line_start: usize,
    /// 1-based line of the last byte.
    pub line_end: usize,
    pub syntax: Syntax,
    pub placement: Placement,
    pub text: String,
}

/// The comment concepts that can be probed and steered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Comment,
    Javadoc,
    Inline,
    Multiline,
}

impl ConceptKind {
    pub const ALL: [ConceptKind; 4] = [
        ConceptKind::Comment,
        ConceptKind::Javadoc,
        ConceptKind::Inline,
        ConceptKind::Multiline,
    ];

    /// Whether a group of kind `group` is an instance of this concept.
    pub fn covers(self, group: ConceptKind) -> bool {
        self == ConceptKind::Comment || self == group
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConceptKind::Comment => "comment",
            ConceptKind::Javadoc => "javadoc",
            ConceptKind::Inline => "inline",
            ConceptKind::Multiline => "multiline",
        }
    }
}

impl fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConceptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "comment" => Ok(ConceptKind::Comment),
            "javadoc" => Ok(ConceptKind::Javadoc),
            "inline" => Ok(ConceptKind::Inline),
            "multiline" => Ok(ConceptKind::Multiline),
            other => Err(Error::InvalidArgument(format!("unknown concept `{other}`"))),
        }
    }
}

/// A set of spans forming one instance of a subtype concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    /// One of `Javadoc`, `Inline` or `Multiline`.
    pub kind: ConceptKind,
    pub spans: Vec<CommentSpan>,
}

/// Byte offsets at which each line begins.
fn line_starts(source: &str) -> Vec<usize> {
    std::iter::once(0)
        .chain(
            source
                .bytes()
                .enumerate()
                .filter(|&(_, c)| c == b'\n')
                .map(|(i, _)| i + 1),
        )
        .collect()
}

/// 1-based line containing byte `offset`.
fn line_of(starts: &[usize], offset: usize) -> usize {
    starts.partition_point(|&s| s <= offset)
}

fn is_blank_byte(c: u8) -> bool {
    matches!(c, b' ' | b'\t' | b'\x0c' | b'\r')
}

/// Locate every comment in `source`.
///
/// Comment markers inside string literals, character literals and text
/// blocks are ignored. An unterminated `/*` runs to the end of input.
pub fn scan_comments(source: &str) -> Vec<CommentSpan> {
    let starts = line_starts(source);
    let bytes = source.as_bytes();
    lexer::regions(source)
        .into_iter()
        .filter_map(|r| {
            let syntax = match r.kind {
                RegionKind::LineComment => Syntax::Line,
                RegionKind::BlockComment => Syntax::Block,
                _ => return None,
            };
            let line_start = line_of(&starts, r.start);
            let line_begin = starts[line_start - 1];
            let placement = if bytes[line_begin..r.start].iter().all(|&c| is_blank_byte(c)) {
                Placement::Standalone
            } else {
                Placement::Trailing
            };
            Some(CommentSpan {
                byte_start: r.start,
                byte_end: r.end,
                line_start,
                line_end: line_of(&starts, r.end - 1),
                syntax,
                placement,
                text: source[r.start..r.end].to_owned(),
            })
        })
        .collect()
}

/// Partition `spans` (as returned by [`scan_comments`] on `source`) into
/// concept groups, in source order.
pub fn classify_concepts(source: &str, spans: &[CommentSpan]) -> Result<Vec<ConceptGroup>> {
    for s in spans {
        let ok = s.byte_start < s.byte_end
            && source.get(s.byte_start..s.byte_end) == Some(s.text.as_str());
        if !ok {
            return Err(Error::ForeignSpan {
                start: s.byte_start,
                end: s.byte_end,
                len: source.len(),
            });
        }
    }

    let mut groups = Vec::new();
    let mut run: Vec<CommentSpan> = Vec::new();

    fn flush(run: &mut Vec<CommentSpan>, groups: &mut Vec<ConceptGroup>) {
        let kind = match run.len() {
            0 => return,
            1 => ConceptKind::Inline,
            _ => ConceptKind::Multiline,
        };
        groups.push(ConceptGroup {
            kind,
            spans: std::mem::take(run),
        });
    }

    for span in spans {
        if span.syntax == Syntax::Line && span.placement == Placement::Standalone {
            let continues = run
                .last()
                .is_some_and(|last| last.line_end + 1 == span.line_start);
            if !continues {
                flush(&mut run, &mut groups);
            }
            run.push(span.clone());
            continue;
        }
        flush(&mut run, &mut groups);
        let kind = if span.syntax == Syntax::Block && span.line_end > span.line_start {
            ConceptKind::Javadoc
        } else {
            ConceptKind::Inline
        };
        groups.push(ConceptGroup {
            kind,
            spans: vec![span.clone()],
        });
    }
    flush(&mut run, &mut groups);
    Ok(groups)
}

/// Scan and classify in one step.
pub fn concept_groups(source: &str) -> Vec<ConceptGroup> {
    let spans = scan_comments(source);
    classify_concepts(source, &spans).expect("spans come from the same source")
}

/// Whether `source` contains at least one instance of `kind`.
pub fn contains_concept(source: &str, kind: ConceptKind) -> bool {
    concept_groups(source).iter().any(|g| kind.covers(g.kind))
}

/// Remove every instance of `kind` from `source`.
///
/// Text outside the removed spans is kept byte-for-byte, except that a line
/// whose removed span was the last thing on it loses its trailing
/// whitespace, and lines left holding only whitespace are deleted together
/// with their terminator. Removal is repeated until the concept is gone, so
/// the result never contains `kind` even when deleting a span changes how
/// the surrounding text lexes.
pub fn strip_concept(source: &str, kind: ConceptKind) -> String {
    let mut current: Cow<'_, str> = Cow::Borrowed(source);
    loop {
        let ranges: Vec<(usize, usize)> = concept_groups(&current)
            .into_iter()
            .filter(|g| kind.covers(g.kind))
            .flat_map(|g| g.spans.into_iter().map(|s| (s.byte_start, s.byte_end)))
            .collect();
        if ranges.is_empty() {
            return current.into_owned();
        }
        current = Cow::Owned(remove_ranges(&current, ranges));
    }
}

fn remove_ranges(source: &str, mut ranges: Vec<(usize, usize)>) -> String {
    ranges.sort_unstable();
    let mut joined = String::with_capacity(source.len());
    let mut cuts = Vec::with_capacity(ranges.len());
    let mut cursor = 0;
    for (start, end) in ranges {
        joined.push_str(&source[cursor..start]);
        cuts.push(joined.len());
        cursor = end;
    }
    joined.push_str(&source[cursor..]);

    let mut out = String::with_capacity(joined.len());
    let mut cut_iter = cuts.into_iter().peekable();
    let mut line_start = 0;
    for line in joined.split_inclusive('\n') {
        let body = line.strip_suffix('\n').unwrap_or(line);
        let content = body
            .strip_suffix('\r')
            .filter(|_| body.len() < line.len())
            .unwrap_or(body);
        let terminator = &line[content.len()..];
        let content_end = line_start + content.len();

        let mut touched = false;
        let mut cut_at_end = false;
        while let Some(&c) = cut_iter.peek() {
            if c > content_end {
                break;
            }
            touched = true;
            cut_at_end |= joined.as_bytes()[c..content_end]
                .iter()
                .all(|&b| is_blank_byte(b));
            cut_iter.next();
        }

        if !touched {
            out.push_str(line);
        } else if !content.bytes().all(is_blank_byte) {
            if cut_at_end {
                out.push_str(content.trim_end_matches([' ', '\t', '\x0c', '\r']));
            } else {
                out.push_str(content);
            }
            out.push_str(terminator);
        }
        line_start += line.len();
    }
    out
}
