//! Every rust code block in the book must appear verbatim as a doc-test in
//! the library, so `cargo test` keeps the book honest.

use std::fs;
use std::path::{Path, PathBuf};

fn rust_blocks(markdown: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in markdown.lines() {
        match (&mut current, line.trim_end()) {
            (None, "```rust") => current = Some(String::new()),
            (Some(_), "```") => blocks.push(current.take().unwrap()),
            (Some(block), l) => {
                block.push_str(l);
                block.push('\n');
            }
            (None, _) => {}
        }
    }
    blocks
}

fn doc_text(source: &str) -> String {
    source
        .lines()
        .filter_map(|l| {
            let t = l.trim_start();
            t.strip_prefix("//! ").or_else(|| t.strip_prefix("//!")).map(|s| s.to_string())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn collect_files(dir: &Path, ext: &str, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, ext, out);
        } else if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
}

#[test]
fn book_snippets_match_doc_tests() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let book = root.join("../../book/src");
    let src = root.join("src");

    let mut md = Vec::new();
    collect_files(&book, "md", &mut md);
    assert!(!md.is_empty(), "no book chapters found at {}", book.display());

    let mut rs = Vec::new();
    collect_files(&src, "rs", &mut rs);
    let docs: Vec<(PathBuf, String)> =
        rs.iter().map(|p| (p.clone(), doc_text(&fs::read_to_string(p).unwrap()))).collect();

    let mut checked = 0;
    for chapter in &md {
        let text = fs::read_to_string(chapter).unwrap();
        for block in rust_blocks(&text) {
            let found = docs.iter().any(|(_, d)| d.contains(block.trim_end()));
            assert!(
                found,
                "code block in {} has no matching doc-test:\n{}",
                chapter.display(),
                block
            );
            checked += 1;
        }
    }
    assert!(checked >= 6, "expected the book to carry doc-tested snippets, found {checked}");
}
