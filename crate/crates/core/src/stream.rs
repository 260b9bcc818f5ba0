//! Stream model and the line-oriented text formats.
//!
//! A stream file starts with a header line, either `turnstile n d` followed
//! by `i j delta` lines (0-based indices, integer deltas), or `rows n d`
//! followed by exactly `n` lines of `d` decimals. Blank lines and lines
//! starting with `#` are ignored.
//!
//! A projector file is either `projector d` followed by `d` rows of an
//! explicit matrix, or `complement d m` followed by `m` rows whose span is
//! projected away.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, OrthoBasis, Projector};

/// Largest accepted magnitude of a turnstile delta; keeps deltas exact in f64.
pub const MAX_DELTA: i64 = 1 << 53;

/// Caps `n·d` for anything that materializes a dense matrix from a file.
pub const MAX_DENSE_CELLS: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurnstileUpdate {
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

impl TurnstileUpdate {
    pub fn new(row: usize, col: usize, delta: f64) -> Self {
        TurnstileUpdate { row, col, delta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamMode {
    Turnstile,
    Rows,
}

/// A finite stream over an implicit `n × d` matrix that starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub n: usize,
    pub d: usize,
    pub mode: StreamMode,
    pub updates: Vec<TurnstileUpdate>,
}

impl Stream {
    pub fn turnstile(n: usize, d: usize, updates: Vec<TurnstileUpdate>) -> Result<Self> {
        for u in &updates {
            check_index(u.row, n, "row")?;
            check_index(u.col, d, "column")?;
        }
        Ok(Stream {
            n,
            d,
            mode: StreamMode::Turnstile,
            updates,
        })
    }

    /// The row-arrival stream of a dense matrix: one update per nonzero entry,
    /// row by row.
    pub fn from_matrix(a: &DenseMatrix) -> Self {
        let mut updates = Vec::new();
        for (i, row) in a.rows().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    updates.push(TurnstileUpdate::new(i, j, x));
                }
            }
        }
        Stream {
            n: a.n(),
            d: a.d(),
            mode: StreamMode::Rows,
            updates,
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        if self.n.saturating_mul(self.d) > MAX_DENSE_CELLS {
            return Err(Error::SizeGuard(format!(
                "{}x{} matrix exceeds {} cells",
                self.n, self.d, MAX_DENSE_CELLS
            )));
        }
        let mut m = DenseMatrix::zeros(self.n, self.d);
        for u in &self.updates {
            let v = m.get(u.row, u.col) + u.delta;
            m.set(u.row, u.col, v);
        }
        Ok(m)
    }

    /// Feeds every update to `sink` in stream order.
    pub fn replay<F: FnMut(TurnstileUpdate)>(&self, mut sink: F) {
        for &u in &self.updates {
            sink(u);
        }
    }
}

fn check_index(i: usize, bound: usize, what: &'static str) -> Result<()> {
    if i >= bound {
        return Err(Error::IndexOutOfRange {
            what,
            index: i,
            bound,
        });
    }
    Ok(())
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| perr(line, format!("{what}: expected a nonnegative integer, got {tok:?}")))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v = tok
        .parse::<f64>()
        .map_err(|_| perr(line, format!("expected a decimal number, got {tok:?}")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    keywords: &[&str],
    arity: usize,
) -> Result<(usize, &'a str, Vec<usize>)> {
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "missing header line"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let kw = toks[0];
    if !keywords.contains(&kw) {
        return Err(perr(ln, format!("unknown header {kw:?}; expected one of {keywords:?}")));
    }
    if toks.len() != arity + 1 {
        return Err(perr(ln, format!("header {kw:?} takes {arity} integers")));
    }
    let nums = toks[1..]
        .iter()
        .map(|t| parse_usize(t, ln, "header"))
        .collect::<Result<Vec<_>>>()?;
    Ok((ln, kw, nums))
}

pub fn parse_stream(text: &str) -> Result<Stream> {
    let mut lines = content_lines(text);
    let (hl, kw, dims) = parse_header(&mut lines, &["turnstile", "rows"], 2)?;
    let (n, d) = (dims[0], dims[1]);
    if n == 0 || d == 0 {
        return Err(perr(hl, "n and d must be positive"));
    }
    match kw {
        "turnstile" => {
            let mut updates = Vec::new();
            for (ln, l) in lines {
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(perr(ln, format!("expected \"i j delta\", got {l:?}")));
                }
                let i = parse_usize(toks[0], ln, "row index")?;
                let j = parse_usize(toks[1], ln, "column index")?;
                if i >= n {
                    return Err(perr(ln, format!("row index {i} out of range (n = {n})")));
                }
                if j >= d {
                    return Err(perr(ln, format!("column index {j} out of range (d = {d})")));
                }
                let delta = toks[2]
                    .parse::<i64>()
                    .map_err(|_| perr(ln, format!("delta must be an integer, got {:?}", toks[2])))?;
                if delta.abs() > MAX_DELTA {
                    return Err(perr(ln, format!("delta {delta} exceeds bound {MAX_DELTA}")));
                }
                updates.push(TurnstileUpdate::new(i, j, delta as f64));
            }
            Ok(Stream {
                n,
                d,
                mode: StreamMode::Turnstile,
                updates,
            })
        }
        _ => {
            let mut updates = Vec::new();
            let mut count = 0usize;
            for (ln, l) in lines {
                if count == n {
                    return Err(perr(ln, format!("more than {n} rows")));
                }
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != d {
                    return Err(perr(ln, format!("expected {d} values, got {}", toks.len())));
                }
                for (j, t) in toks.iter().enumerate() {
                    let x = parse_f64(t, ln)?;
                    if x != 0.0 {
                        updates.push(TurnstileUpdate::new(count, j, x));
                    }
                }
                count += 1;
            }
            if count != n {
                return Err(perr(
                    text.lines().count().max(1),
                    format!("header promises {n} rows, found {count}"),
                ));
            }
            Ok(Stream {
                n,
                d,
                mode: StreamMode::Rows,
                updates,
            })
        }
    }
}

/// Renders a stream in the text format accepted by [`parse_stream`].
/// Row-mode streams are written densely; turnstile deltas must be integral.
pub fn render_stream(s: &Stream) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    match s.mode {
        StreamMode::Turnstile => {
            writeln!(out, "turnstile {} {}", s.n, s.d).unwrap();
            for u in &s.updates {
                if u.delta.fract() != 0.0 || u.delta.abs() > MAX_DELTA as f64 {
                    return Err(Error::InvalidParameter(format!(
                        "turnstile delta {} is not a bounded integer",
                        u.delta
                    )));
                }
                writeln!(out, "{} {} {}", u.row, u.col, u.delta as i64).unwrap();
            }
        }
        StreamMode::Rows => {
            let m = s.to_dense()?;
            writeln!(out, "rows {} {}", s.n, s.d).unwrap();
            for row in m.rows() {
                let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
        }
    }
    Ok(out)
}

pub fn parse_projector(text: &str) -> Result<Projector> {
    let mut lines = content_lines(text);
    let (hl, kw, nums) = match parse_header(&mut lines, &["projector"], 1) {
        Ok(h) => h,
        Err(_) => {
            let mut again = content_lines(text);
            parse_header(&mut again, &["projector", "complement"], 2).map(|h| {
                lines = again;
                h
            })?
        }
    };
    let d = nums[0];
    if d == 0 {
        return Err(perr(hl, "dimension must be positive"));
    }
    let rows_expected = if kw == "projector" { d } else { nums[1] };
    if d.saturating_mul(rows_expected) > MAX_DENSE_CELLS {
        return Err(perr(hl, "projector too large"));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(rows_expected.min(1024));
    let mut last = hl;
    for (ln, l) in lines {
        last = ln;
        if rows.len() == rows_expected {
            return Err(perr(ln, format!("more than {rows_expected} rows")));
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != d {
            return Err(perr(ln, format!("expected {d} values, got {}", toks.len())));
        }
        rows.push(toks.iter().map(|t| parse_f64(t, ln)).collect::<Result<_>>()?);
    }
    if rows.len() != rows_expected {
        return Err(perr(last, format!("expected {rows_expected} rows, found {}", rows.len())));
    }
    if kw == "projector" {
        Projector::matrix(DenseMatrix::from_rows(&rows)?)
    } else {
        Ok(Projector::complement_of(&OrthoBasis::from_rows(d, &rows)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_turnstile() {
        let s = parse_stream("# demo\nturnstile 3 2\n0 1 5\n\n2 0 -7\n").unwrap();
        assert_eq!((s.n, s.d, s.mode), (3, 2, StreamMode::Turnstile));
        assert_eq!(s.updates[1], TurnstileUpdate::new(2, 0, -7.0));
        let m = s.to_dense().unwrap();
        assert_eq!(m.row(0), &[0.0, 5.0]);
    }

    #[test]
    fn parses_rows() {
        let s = parse_stream("rows 2 3\n1 0 2.5\n0 0 -1e-3\n").unwrap();
        let m = s.to_dense().unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 2.5]);
        assert_eq!(m.row(1), &[0.0, 0.0, -1e-3]);
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let err = parse_stream("turnstile 2 2\n0 0 1\nx y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_stream("turnstile 2 2\n0 5 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_stream("turnstile 2 2\n0 0 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_stream("rows 2 2\n1 2\n").is_err());
        assert!(parse_stream("rows 1 2\n1 2\n3 4\n").is_err());
        assert!(parse_stream("matrix 1 1\n").is_err());
        assert!(parse_stream("").is_err());
        assert!(parse_stream("rows 1 1\nnan\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let s = parse_stream("turnstile 4 3\n0 1 5\n3 2 -9\n0 1 -5\n").unwrap();
        assert_eq!(parse_stream(&render_stream(&s).unwrap()).unwrap(), s);
        let r = parse_stream("rows 2 2\n1.5 0\n0 -2\n").unwrap();
        assert_eq!(
            parse_stream(&render_stream(&r).unwrap()).unwrap().to_dense().unwrap(),
            r.to_dense().unwrap()
        );
    }

    #[test]
    fn parses_projectors() {
        let p = parse_projector("projector 2\n1 0\n0 0\n").unwrap();
        assert_eq!(p.apply(&[3.0, 4.0]).0, vec![3.0, 0.0]);
        let c = parse_projector("complement 2 1\n1 0\n").unwrap();
        assert_eq!(c.apply(&[3.0, 4.0]).0, vec![0.0, 4.0]);
        assert!(parse_projector("projector 2\n1 0\n").is_err());
        assert!(parse_projector("complement 2 1\n1 0 0\n").is_err());
    }
}
