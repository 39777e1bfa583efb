// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-labeled Java snippets shared by the integration tests.

#![allow(dead_code)]

use commentcav::comments::{classify_concepts, scan_comments, strip_concept};
use commentcav::{ConceptKind, Placement, Syntax};

use ConceptKind::{Comment, Inline, Javadoc, Multiline};
use Placement::{Standalone as S, Trailing as T};
use Syntax::{Block as B, Line as L};

pub struct Case {
    pub name: &'static str,
    pub src: &'static str,
    /// `(text, syntax, placement, line_start, line_end)` in source order.
    pub spans: &'static [(&'static str, Syntax, Placement, usize, usize)],
    pub groups: &'static [ConceptKind],
    /// Expected output of stripping a concept. Concepts not listed here
    /// are derived: absent subtypes leave the source unchanged.
    pub strips: &'static [(ConceptKind, &'static str)],
}

pub const CASES: &[Case] = &[
    Case {
        name: "trailing line comment",
        src: "int x = 1; // init\n",
        spans: &[("// init", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int x = 1;\n")],
    },
    Case {
        name: "standalone line comment",
        src: "// note\nint x;\n",
        spans: &[("// note", L, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int x;\n")],
    },
    Case {
        name: "indented standalone line comment",
        src: "    // note\n    x++;\n",
        spans: &[("// note", L, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "    x++;\n")],
    },
    Case {
        name: "one-line block on its own line",
        src: "/* a */\nint x;\n",
        spans: &[("/* a */", B, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Inline, "int x;\n")],
    },
    Case {
        name: "one-line block after code",
        src: "int x; /* a */\n",
        spans: &[("/* a */", B, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int x;\n")],
    },
    Case {
        name: "one-line block before code",
        src: "/* a */ int x;\n",
        spans: &[("/* a */", B, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, " int x;\n")],
    },
    Case {
        name: "block inside an expression",
        src: "int x = /* one */ 1;\n",
        spans: &[("/* one */", B, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int x =  1;\n")],
    },
    Case {
        name: "javadoc before a method",
        src: "/**\n * Doc.\n */\nvoid f() {}\n",
        spans: &[("/**\n * Doc.\n */", B, S, 1, 3)],
        groups: &[Javadoc],
        strips: &[(Javadoc, "void f() {}\n")],
    },
    Case {
        name: "plain two-line block",
        src: "/* a\n   b */\nint y;\n",
        spans: &[("/* a\n   b */", B, S, 1, 2)],
        groups: &[Javadoc],
        strips: &[(Comment, "int y;\n")],
    },
    Case {
        name: "two consecutive line comments",
        src: "// a\n// b\nint x;\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 2, 2)],
        groups: &[Multiline],
        strips: &[(Multiline, "int x;\n")],
    },
    Case {
        name: "indented run of three",
        src: "  // a\n  // b\n  // c\n  x();\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 2, 2), ("// c", L, S, 3, 3)],
        groups: &[Multiline],
        strips: &[(Comment, "  x();\n")],
    },
    Case {
        name: "run broken by a blank line",
        src: "// a\n\n// b\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 3, 3)],
        groups: &[Inline, Inline],
        strips: &[(Comment, "\n")],
    },
    Case {
        name: "run broken by code",
        src: "// a\nx();\n// b\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 3, 3)],
        groups: &[Inline, Inline],
        strips: &[(Comment, "x();\n")],
    },
    Case {
        name: "trailing comment does not extend a run",
        src: "// a\nint x; // b\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, T, 2, 2)],
        groups: &[Inline, Inline],
        strips: &[(Inline, "int x;\n")],
    },
    Case {
        name: "run followed by a trailing comment",
        src: "// a\n// b\nx(); // c\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 2, 2), ("// c", L, T, 3, 3)],
        groups: &[Multiline, Inline],
        strips: &[(Multiline, "x(); // c\n"), (Inline, "// a\n// b\nx();\n")],
    },
    Case {
        name: "block comment splits a run",
        src: "// a\n/* b */\n// c\n",
        spans: &[("// a", L, S, 1, 1), ("/* b */", B, S, 2, 2), ("// c", L, S, 3, 3)],
        groups: &[Inline, Inline, Inline],
        strips: &[(Comment, "")],
    },
    Case {
        name: "line marker inside a string",
        src: "String s = \"// no\";\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "block markers inside a string",
        src: "String s = \"/* no */\";\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "slash character literal",
        src: "char c = '/'; // yes\n",
        spans: &[("// yes", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "char c = '/';\n")],
    },
    Case {
        name: "escaped quote character literal",
        src: "char q = '\\''; // c\n",
        spans: &[("// c", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "char q = '\\'';\n")],
    },
    Case {
        name: "escaped quote inside a string",
        src: "String s = \"a\\\"// b\"; // c\n",
        spans: &[("// c", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "String s = \"a\\\"// b\";\n")],
    },
    Case {
        name: "markers inside a text block",
        src: "String t = \"\"\"\n  // not\n  /* not */\n  \"\"\";\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "comment after a text block",
        src: "String t = \"\"\"\n  x\n  \"\"\"; // c\n",
        spans: &[("// c", L, T, 3, 3)],
        groups: &[Inline],
        strips: &[(Comment, "String t = \"\"\"\n  x\n  \"\"\";\n")],
    },
    Case {
        name: "quotes and markers inside a text block",
        src: "s = \"\"\"\n  \"quoted\" // no\n  \"\"\";\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "unterminated block runs to the end",
        src: "int x;\n/* open\nint y;\n",
        spans: &[("/* open\nint y;\n", B, S, 2, 3)],
        groups: &[Javadoc],
        strips: &[(Comment, "int x;\n")],
    },
    Case {
        name: "unterminated one-line block",
        src: "x(); /* open",
        spans: &[("/* open", B, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();")],
    },
    Case {
        name: "CRLF trailing comment",
        src: "int x; // a\r\nint y;\r\n",
        spans: &[("// a", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int x;\r\nint y;\r\n")],
    },
    Case {
        name: "CRLF run",
        src: "// a\r\n// b\r\nx();\r\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 2, 2)],
        groups: &[Multiline],
        strips: &[(Comment, "x();\r\n")],
    },
    Case {
        name: "CRLF javadoc",
        src: "/**\r\n * d\r\n */\r\nclass A {}\r\n",
        spans: &[("/**\r\n * d\r\n */", B, S, 1, 3)],
        groups: &[Javadoc],
        strips: &[(Comment, "class A {}\r\n")],
    },
    Case {
        name: "line marker inside a block",
        src: "/* a // b */ x();\n",
        spans: &[("/* a // b */", B, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, " x();\n")],
    },
    Case {
        name: "block opener inside a line comment",
        src: "// a /* b\nx();\n",
        spans: &[("// a /* b", L, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();\n")],
    },
    Case {
        name: "block comments do not nest",
        src: "/* a /* b */ c */\n",
        spans: &[("/* a /* b */", B, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, " c */\n")],
    },
    Case {
        name: "empty block",
        src: "/**/x();\n",
        spans: &[("/**/", B, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();\n")],
    },
    Case {
        name: "division is not a comment",
        src: "int a = b / c / d;\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "comment after division",
        src: "int a = b / c; // d\n",
        spans: &[("// d", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "int a = b / c;\n")],
    },
    Case {
        name: "URL inside a string",
        src: "String u = \"http://x\"; // link\n",
        spans: &[("// link", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "String u = \"http://x\";\n")],
    },
    Case {
        name: "trailing comments on consecutive lines",
        src: "a(); // x\nb(); // y\n",
        spans: &[("// x", L, T, 1, 1), ("// y", L, T, 2, 2)],
        groups: &[Inline, Inline],
        strips: &[(Multiline, "a(); // x\nb(); // y\n"), (Comment, "a();\nb();\n")],
    },
    Case {
        name: "block then line comment on one line",
        src: "/* a */ // b\n",
        spans: &[("/* a */", B, S, 1, 1), ("// b", L, T, 1, 1)],
        groups: &[Inline, Inline],
        strips: &[(Comment, "")],
    },
    Case {
        name: "method with all three subtypes",
        src: "/**\n * Adds.\n */\nint add(int a, int b) {\n    // first\n    // second\n    return a + b; // sum\n}\n",
        spans: &[
            ("/**\n * Adds.\n */", B, S, 1, 3),
            ("// first", L, S, 5, 5),
            ("// second", L, S, 6, 6),
            ("// sum", L, T, 7, 7),
        ],
        groups: &[Javadoc, Multiline, Inline],
        strips: &[
            (Javadoc, "int add(int a, int b) {\n    // first\n    // second\n    return a + b; // sum\n}\n"),
            (Multiline, "/**\n * Adds.\n */\nint add(int a, int b) {\n    return a + b; // sum\n}\n"),
            (Inline, "/**\n * Adds.\n */\nint add(int a, int b) {\n    // first\n    // second\n    return a + b;\n}\n"),
            (Comment, "int add(int a, int b) {\n    return a + b;\n}\n"),
        ],
    },
    Case {
        name: "multi-line block trailing code",
        src: "int x; /* a\n b */\n",
        spans: &[("/* a\n b */", B, T, 1, 2)],
        groups: &[Javadoc],
        strips: &[(Javadoc, "int x;\n")],
    },
    Case {
        name: "trailing spaces after a removed comment",
        src: "x();   // a   \n",
        spans: &[("// a   ", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();\n")],
    },
    Case {
        name: "tab-indented run",
        src: "\t// a\n\t// b\n",
        spans: &[("// a", L, S, 1, 1), ("// b", L, S, 2, 2)],
        groups: &[Multiline],
        strips: &[(Comment, "")],
    },
    Case {
        name: "empty line comments",
        src: "//\n//\n",
        spans: &[("//", L, S, 1, 1), ("//", L, S, 2, 2)],
        groups: &[Multiline],
        strips: &[(Multiline, "")],
    },
    Case {
        name: "slash and star character literals",
        src: "char a = '/', b = '*'; x();\n",
        spans: &[],
        groups: &[],
        strips: &[],
    },
    Case {
        name: "non-ASCII comment text",
        src: "// h\u{e9}llo\nx();\n",
        spans: &[("// h\u{e9}llo", L, S, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();\n")],
    },
    Case {
        name: "no final newline",
        src: "x(); // end",
        spans: &[("// end", L, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "x();")],
    },
    Case {
        name: "block closer inside a string",
        src: "s = \"*/\"; /* real */\n",
        spans: &[("/* real */", B, T, 1, 1)],
        groups: &[Inline],
        strips: &[(Comment, "s = \"*/\";\n")],
    },
    Case {
        name: "class with javadoc and separated runs",
        src: "/**\n * A counter.\n */\nclass C {\n    // state\n    int n;\n\n    // bump\n    // it\n    void inc() { n++; }\n}\n",
        spans: &[
            ("/**\n * A counter.\n */", B, S, 1, 3),
            ("// state", L, S, 5, 5),
            ("// bump", L, S, 8, 8),
            ("// it", L, S, 9, 9),
        ],
        groups: &[Javadoc, Inline, Multiline],
        strips: &[(Comment, "class C {\n    int n;\n\n    void inc() { n++; }\n}\n")],
    },
];

/// Expected strip output for `kind`: the labeled value, or the source
/// itself when the case holds no instance of `kind`.
pub fn expected_strip(case: &Case, kind: ConceptKind) -> Option<String> {
    if let Some((_, s)) = case.strips.iter().find(|(k, _)| *k == kind) {
        return Some((*s).to_owned());
    }
    if !case.groups.iter().any(|&g| kind.covers(g)) {
        return Some(case.src.to_owned());
    }
    None
}

/// Check one case against its labels; returns a description per mismatch.
pub fn check_case(case: &Case) -> Vec<String> {
    let mut bad = Vec::new();
    let spans = scan_comments(case.src);
    let got: Vec<_> = spans
        .iter()
        .map(|s| {
            (
                s.text.as_str(),
                s.syntax,
                s.placement,
                s.line_start,
                s.line_end,
            )
        })
        .collect();
    if got != case.spans {
        bad.push(format!("{}: spans {got:?}", case.name));
    }
    for s in &spans {
        if case.src[s.byte_start..s.byte_end] != s.text {
            bad.push(format!("{}: span offsets do not match text", case.name));
        }
    }
    match classify_concepts(case.src, &spans) {
        Ok(groups) => {
            let kinds: Vec<_> = groups.iter().map(|g| g.kind).collect();
            if kinds != case.groups {
                bad.push(format!("{}: groups {kinds:?}", case.name));
            }
        }
        Err(e) => bad.push(format!("{}: classify failed: {e}", case.name)),
    }
    for kind in ConceptKind::ALL {
        if let Some(want) = expected_strip(case, kind) {
            let got = strip_concept(case.src, kind);
            if got != want {
                bad.push(format!("{}: strip {kind} gave {got:?}", case.name));
            }
        }
    }
    bad
}

/// Files of the seeded synthetic Java corpus.
pub fn synth_sources(count: usize, seed: u64) -> Vec<String> {
    let opts = commentcav::synth::SynthOptions {
        seed,
        ..Default::default()
    };
    commentcav::synth::corpus(count, &opts)
        .into_iter()
        .map(|(_, s)| s)
        .collect()
}
