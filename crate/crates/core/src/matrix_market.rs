//! Matrix Market coordinate-format reader.
//!
//! Supports `real`, `integer`, and `pattern` fields with `general` or
//! `symmetric` symmetry. Indices are converted from 1-based to 0-based,
//! symmetric storage is expanded to both triangles, duplicates are summed,
//! and the result is sorted row-major.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{Entry, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let file = File::open(path.as_ref())?;
    parse(BufReader::new(file))
}

pub fn parse_matrix_market_str(text: &str) -> Result<SparseMatrix> {
    parse(BufReader::new(text.as_bytes()))
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse<R: BufRead>(reader: R) -> Result<SparseMatrix> {
    let mut lines = reader.lines().enumerate();

    // Banner: "%%MatrixMarket matrix coordinate <field> <symmetry>"
    let (lineno, banner) = match lines.next() {
        Some((n, l)) => (n + 1, l?),
        None => return Err(err(0, "empty file")),
    };
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(err(lineno, "missing %%MatrixMarket banner"));
    }
    if tokens[2] != "coordinate" {
        return Err(err(lineno, format!("unsupported format '{}'", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(err(lineno, format!("unsupported field kind '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(err(lineno, format!("unsupported symmetry '{other}'"))),
    };

    // Size line: first non-comment, non-blank line.
    let (lineno, size_line) = loop {
        match lines.next() {
            Some((n, l)) => {
                let l = l?;
                let t = l.trim();
                if t.is_empty() || t.starts_with('%') {
                    continue;
                }
                break (n + 1, l);
            }
            None => return Err(err(0, "missing size line")),
        }
    };
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(err(lineno, "size line must be 'nrows ncols nnz'"));
    }
    let nrows: usize = dims[0].parse().map_err(|_| err(lineno, "bad row count"))?;
    let ncols: usize = dims[1]
        .parse()
        .map_err(|_| err(lineno, "bad column count"))?;
    let declared_nnz: usize = dims[2]
        .parse()
        .map_err(|_| err(lineno, "bad nonzero count"))?;

    let mut entries: Vec<Entry> = Vec::with_capacity(declared_nnz);
    let mut seen = 0usize;
    for (n, l) in lines {
        let lineno = n + 1;
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let expect = if field == Field::Pattern { 2 } else { 3 };
        if parts.len() != expect {
            return Err(err(
                lineno,
                format!("expected {expect} fields, found {}", parts.len()),
            ));
        }
        let i: usize = parts[0].parse().map_err(|_| err(lineno, "bad row index"))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| err(lineno, "bad column index"))?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(err(
                lineno,
                format!("index ({i}, {j}) outside 1..={nrows} x 1..={ncols}"),
            ));
        }
        let val = match field {
            Field::Pattern => 1.0,
            _ => parts[2]
                .parse::<f64>()
                .map_err(|_| err(lineno, "bad value"))?,
        };
        let (r, c) = (i - 1, j - 1);
        entries.push(Entry::new(r, c, val));
        if symmetry == Symmetry::Symmetric && r != c {
            entries.push(Entry::new(c, r, val));
        }
        seen += 1;
    }
    if seen != declared_nnz {
        return Err(err(
            0,
            format!("header declares {declared_nnz} entries, file has {seen}"),
        ));
    }
    SparseMatrix::from_entries_summed(nrows, ncols, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_general() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 2.0\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!((m.nrows(), m.ncols(), m.nnz()), (2, 2, 1));
        assert_eq!(m.entries()[0], Entry::new(0, 0, 2.0));
    }

    #[test]
    fn symmetric_expansion() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 2\n2 1 4.0\n3 3 1.0\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.entries()[0], Entry::new(0, 1, 4.0));
        assert_eq!(m.entries()[1], Entry::new(1, 0, 4.0));
        assert_eq!(m.entries()[2], Entry::new(2, 2, 1.0));
    }

    #[test]
    fn duplicates_summed_vs_reference_parse() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n2 2 1.0\n2 2 2.0\n";
        // Two-line reference parse of the same body.
        let mut want = std::collections::BTreeMap::new();
        for l in text.lines().skip(2) {
            let f: Vec<&str> = l.split_whitespace().collect();
            *want
                .entry((
                    f[0].parse::<usize>().unwrap() - 1,
                    f[1].parse::<usize>().unwrap() - 1,
                ))
                .or_insert(0.0) += f[2].parse::<f64>().unwrap();
        }
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m.nnz(), want.len());
        for e in m.entries() {
            assert_eq!(want[&(e.row, e.col)], e.val);
        }
        assert_eq!(m.entries()[0], Entry::new(1, 1, 3.0));
    }

    #[test]
    fn pattern_entries_get_unit_value() {
        let text = "%%MatrixMarket matrix coordinate pattern general\n2 3 2\n1 3\n2 1\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert!(m.entries().iter().all(|e| e.val == 1.0));
    }

    #[test]
    fn integer_field_accepted() {
        let text = "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 7\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m.entries()[0].val, 7.0);
    }

    #[test]
    fn rejects_complex_and_array() {
        let complex = "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n";
        assert!(matches!(
            parse_matrix_market_str(complex),
            Err(Error::Parse { line: 1, .. })
        ));
        let array = "%%MatrixMarket matrix array real general\n1 1\n1.0\n";
        assert!(parse_matrix_market_str(array).is_err());
        let skew = "%%MatrixMarket matrix coordinate real skew-symmetric\n2 2 1\n2 1 1.0\n";
        assert!(parse_matrix_market_str(skew).is_err());
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 2.0\n";
        match parse_matrix_market_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 2.0\n";
        assert!(parse_matrix_market_str(text).is_err());
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let text = "%%MatrixMarket matrix coordinate real general\n% a comment\n\n2 2 1\n% another\n1 2 5.0\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.entries()[0], Entry::new(0, 1, 5.0));
    }
}
