// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generator of small commented Java files.
//!
//! Used for fixtures, the demo and end-to-end checks where no real corpus
//! is at hand. Each file is one class with a few short methods and at least
//! one comment drawn from every concept class in varying mixes.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

const TYPES: [&str; 5] = ["int", "long", "double", "boolean", "String"];
const NOUNS: [&str; 16] = [
    "count", "total", "index", "limit", "value", "offset", "size", "result", "score", "width",
    "height", "depth", "rate", "name", "label", "key",
];
const VERBS: [&str; 10] = [
    "compute", "update", "check", "load", "merge", "scale", "find", "parse", "reset", "apply",
];
const CLASSES: [&str; 10] = [
    "Counter", "Buffer", "Parser", "Matrix", "Cache", "Router", "Ledger", "Queue", "Filter",
    "Tracker",
];
const WORDS: [&str; 24] = [
    "the", "value", "is", "cached", "here", "because", "callers", "reuse", "it", "check", "bounds",
    "first", "returns", "zero", "when", "empty", "note", "this", "may", "overflow", "keep",
    "order", "stable", "fast",
];

/// Generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub seed: u64,
    /// Upper bound on file length in bytes.
    pub max_bytes: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            max_bytes: 480,
        }
    }
}

fn phrase(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn camel(a: &str, b: &str) -> String {
    let mut s = a.to_owned();
    let mut chars = b.chars();
    if let Some(c) = chars.next() {
        s.extend(c.to_uppercase());
        s.push_str(chars.as_str());
    }
    s
}

fn statement(rng: &mut ChaCha8Rng) -> String {
    let a = *NOUNS.choose(rng).expect("non-empty");
    let b = *NOUNS.choose(rng).expect("non-empty");
    let k = rng.random_range(1..10);
    match rng.random_range(0..5) {
        0 => format!("int {a} = {b} + {k};"),
        1 => format!("{a} += {k};"),
        2 => format!("if ({a} > {b}) {{ {a} = {b}; }}"),
        3 => format!(
            "{}({a}, {k});",
            camel(VERBS.choose(rng).expect("non-empty"), b)
        ),
        _ => format!("for (int i = 0; i < {k}; i++) {{ {a}++; }}"),
    }
}

/// One comment in the given style, as lines without indentation.
fn comment(rng: &mut ChaCha8Rng, style: usize) -> Vec<String> {
    match style {
        0 => {
            let mut lines = vec!["/**".to_owned()];
            for _ in 0..rng.random_range(1..=2) {
                lines.push(format!(" * {}", phrase(rng, 3, 7)));
            }
            lines.push(" */".to_owned());
            lines
        }
        1 => vec![format!("// {}", phrase(rng, 2, 6))],
        2 => (0..rng.random_range(2..=3))
            .map(|_| format!("// {}", phrase(rng, 2, 5)))
            .collect(),
        _ => vec![format!("/* {} */", phrase(rng, 2, 5))],
    }
}

/// One Java file. Always contains at least one comment.
pub fn java_file(rng: &mut ChaCha8Rng, max_bytes: usize) -> String {
    let class = *CLASSES.choose(rng).expect("non-empty");
    let field = *NOUNS.choose(rng).expect("non-empty");
    let ty = *TYPES.choose(rng).expect("non-empty");
    let n_methods = rng.random_range(1..=2);
    let mut methods = Vec::new();
    let mut commented = false;
    for m in 0..n_methods {
        let mut lines = Vec::new();
        let name = camel(
            VERBS.choose(rng).expect("non-empty"),
            NOUNS.choose(rng).expect("non-empty"),
        );
        let force = m + 1 == n_methods && !commented;
        if rng.random_bool(0.5) || force {
            // Method headers are mostly Javadoc in practice.
            let style = if rng.random_bool(0.7) {
                0
            } else {
                rng.random_range(1..4)
            };
            lines.extend(comment(rng, style).into_iter().map(|l| format!("    {l}")));
            commented = true;
        }
        lines.push(format!("    int {name}(int {field}) {{"));
        for _ in 0..rng.random_range(1..=3) {
            let stmt = statement(rng);
            if rng.random_bool(0.25) {
                lines.push(format!("        {stmt} // {}", phrase(rng, 1, 4)));
                commented = true;
            } else if rng.random_bool(0.15) {
                let style = rng.random_range(1..4);
                lines.extend(
                    comment(rng, style)
                        .into_iter()
                        .map(|l| format!("        {l}")),
                );
                lines.push(format!("        {stmt}"));
                commented = true;
            } else {
                lines.push(format!("        {stmt}"));
            }
        }
        lines.push(format!("        return {field};"));
        lines.push("    }".to_owned());
        methods.push(lines.join("\n"));
    }
    let header = if rng.random_bool(0.6) {
        comment(rng, 0).join("\n") + "\n"
    } else {
        String::new()
    };
    let render = |methods: &[String]| {
        format!(
            "{header}class {class} {{\n    private {ty} {field};\n\n{}\n}}\n",
            methods.join("\n\n")
        )
    };
    let mut src = render(&methods);
    while src.len() > max_bytes && methods.len() > 1 {
        methods.remove(0);
        src = render(&methods);
    }
    src
}

/// `count` files named `Snippet0000.java`, ... in generation order. Files
/// longer than `max_bytes` after trimming are regenerated.
pub fn corpus(count: usize, opts: &SynthOptions) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let src = java_file(&mut rng, opts.max_bytes);
        if src.len() <= opts.max_bytes
            && crate::comments::contains_concept(&src, crate::ConceptKind::Comment)
        {
            out.push((format!("Snippet{:04}.java", out.len()), src));
        }
    }
    out
}

/// Write [`corpus`] into `dir`.
pub fn write_corpus(dir: &Path, count: usize, opts: &SynthOptions) -> Result<Vec<PathBuf>> {
    corpus(count, opts)
        .into_iter()
        .map(|(name, src)| {
            let path = dir.join(name);
            crate::io::write_atomic(&path, src.as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comments::{strip_concept, ConceptKind};

    #[test]
    fn deterministic_and_bounded() {
        let opts = SynthOptions::default();
        let a = corpus(40, &opts);
        assert_eq!(a, corpus(40, &opts));
        assert_ne!(a, corpus(40, &SynthOptions { seed: 1, ..opts }));
        for (_, src) in &a {
            assert!(src.len() <= opts.max_bytes);
            assert_ne!(strip_concept(src, ConceptKind::Comment), *src);
        }
    }
}
