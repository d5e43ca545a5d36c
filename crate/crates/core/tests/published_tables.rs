use std::path::PathBuf;

use qselect::montecarlo::tables::{layout, Family, TableId};

fn source() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.md");
    std::fs::read_to_string(path).expect("source document present")
}

/// Lines between the tabular opening that follows `heading` and its closing.
fn tabular<'a>(text: &'a str, heading: &str) -> Vec<&'a str> {
    let lines: Vec<&str> = text.lines().collect();
    let at = lines.iter().position(|l| l.contains(heading)).expect("heading present");
    let end = lines[at..].iter().position(|l| l.contains("\\end{tabular}")).unwrap() + at;
    lines[at..end].to_vec()
}

fn decimals(s: &str) -> Vec<f64> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            let tok = &s[start..i];
            if tok.contains('.') {
                out.push(tok.parse().unwrap());
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Per case block, the rate rows in reading order.
fn blocks(lines: &[&str]) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    for l in lines {
        let t = l.trim_start();
        if t.starts_with("CASE") || t.starts_with("Case") {
            out.push(Vec::new());
        } else if let Some(pos) = t.find("$n=") {
            let rest = &t[pos + 3..];
            let after = &rest[rest.find('$').unwrap() + 1..];
            out.last_mut().expect("row inside a case").push(decimals(after));
        }
    }
    out
}

/// Flattens rows into columns of `[α₁ n₁, α₁ n₂, α₂ n₁, α₂ n₂]`.
fn columns(rows: &[Vec<f64>]) -> Vec<[f64; 4]> {
    let mut cols = Vec::new();
    for group in rows.chunks(4) {
        assert_eq!(group.len(), 4);
        cols.extend((0..group[0].len()).map(|k| [group[0][k], group[1][k], group[2][k], group[3][k]]));
    }
    cols
}

fn check(family: Family, parsed: &[Vec<Vec<f64>>]) {
    for (i, rows) in parsed.iter().enumerate() {
        let id = TableId { family, case: i as u8 + 1 };
        let expected = columns(rows);
        let got: Vec<[f64; 4]> = layout(id).unwrap().columns.iter().map(|c| c.published).collect();
        assert_eq!(got, expected, "{id}");
    }
}

#[test]
fn first_quantile_test_rates_match() {
    let text = source();
    let parsed = blocks(&tabular(&text, "Conditional Quantile - First Test"));
    assert_eq!(parsed.len(), 8);
    check(Family::T1, &parsed);
}

#[test]
fn second_quantile_test_rates_match() {
    let text = source();
    let parsed = blocks(&tabular(&text, "Conditional Quantile - Second Test"));
    assert_eq!(parsed.len(), 6);
    check(Family::T2, &parsed);
}

#[test]
fn mean_test_rates_match() {
    let text = source();
    let parsed = blocks(&tabular(&text, "Conditional Mean - First Test"));
    assert_eq!(parsed.len(), 6);
    check(Family::S1, &parsed);
}
