//! Text formats: the sparse canonical `qpinst` format and a dense token format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{InstanceError, QpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Canonical,
    DenseText,
}

pub fn load_instance(path: &Path, format: Format) -> Result<QpInstance, InstanceError> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        Format::Canonical => parse_canonical(&text, &name),
        Format::DenseText => parse_dense_text(&text, &name),
    }
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> InstanceError {
    InstanceError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

/// A whitespace-separated token with its 1-based position.
#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

fn tokens_of_line(line_no: usize, line: &str) -> Vec<Token<'_>> {
    let content = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in content.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &content[s..i],
                    line: line_no,
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &content[s..],
            line: line_no,
            col: s + 1,
        });
    }
    out
}

fn parse_usize(t: &Token) -> Result<usize, InstanceError> {
    t.text
        .parse()
        .map_err(|_| err(t.line, t.col, format!("expected a nonnegative integer, found `{}`", t.text)))
}

fn parse_f64(t: &Token, allow_inf: bool) -> Result<f64, InstanceError> {
    let v: f64 = t
        .text
        .parse()
        .map_err(|_| err(t.line, t.col, format!("expected a number, found `{}`", t.text)))?;
    if v.is_nan() || (v.is_infinite() && !allow_inf) {
        return Err(err(t.line, t.col, format!("non-finite value `{}`", t.text)));
    }
    Ok(v)
}

fn parse_index(t: &Token, bound: usize) -> Result<usize, InstanceError> {
    let i = parse_usize(t)?;
    if i == 0 || i > bound {
        return Err(err(t.line, t.col, format!("index {i} outside 1..={bound}")));
    }
    Ok(i - 1)
}

const SECTIONS: [&str; 9] = ["Q", "d", "A", "b", "Aeq", "beq", "lb", "ub", "const"];

/// Parses the canonical format; `name` labels the instance.
pub fn parse_canonical(text: &str, name: &str) -> Result<QpInstance, InstanceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| tokens_of_line(i + 1, l))
        .filter(|t| !t.is_empty());

    let magic = lines.next().ok_or_else(|| err(1, 1, "empty file"))?;
    if magic.len() != 2 || magic[0].text != "qpinst" {
        return Err(err(magic[0].line, magic[0].col, "expected header `qpinst 1`"));
    }
    if magic[1].text != "1" {
        return Err(err(magic[1].line, magic[1].col, format!("unsupported version `{}`", magic[1].text)));
    }
    let dims = lines.next().ok_or_else(|| err(magic[0].line + 1, 1, "missing dimension line"))?;
    if dims.len() != 4 {
        return Err(err(dims[0].line, dims[0].col, "expected `n m m_eq has_bounds`"));
    }
    let n = parse_usize(&dims[0])?;
    let m = parse_usize(&dims[1])?;
    let m_eq = parse_usize(&dims[2])?;
    let has_bounds = match dims[3].text {
        "0" => false,
        "1" => true,
        other => return Err(err(dims[3].line, dims[3].col, format!("has_bounds must be 0 or 1, found `{other}`"))),
    };

    let mut q = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut a_eq = DMatrix::zeros(m_eq, n);
    let mut b_eq = DVector::zeros(m_eq);
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    let mut constant = 0.0;
    let mut section: Option<&str> = None;
    let mut seen: Vec<&str> = Vec::new();

    for toks in lines {
        let first = toks[0];
        if toks.len() == 1 && SECTIONS.contains(&first.text) {
            if seen.contains(&first.text) {
                return Err(err(first.line, first.col, format!("duplicate section `{}`", first.text)));
            }
            if !has_bounds && matches!(first.text, "lb" | "ub") {
                return Err(err(first.line, first.col, "bound section present but has_bounds is 0"));
            }
            seen.push(first.text);
            section = Some(SECTIONS.iter().copied().find(|s| *s == first.text).unwrap());
            continue;
        }
        let sec = section.ok_or_else(|| err(first.line, first.col, "data before any section header"))?;
        let want = match sec {
            "Q" | "A" | "Aeq" => 3,
            "const" => 1,
            _ => 2,
        };
        if toks.len() != want {
            return Err(err(
                first.line,
                first.col,
                format!("section `{sec}` expects {want} fields per line, found {}", toks.len()),
            ));
        }
        match sec {
            "Q" => {
                let i = parse_index(&toks[0], n)?;
                let j = parse_index(&toks[1], n)?;
                let v = parse_f64(&toks[2], false)?;
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
            "A" | "Aeq" => {
                let rows = if sec == "A" { m } else { m_eq };
                let i = parse_index(&toks[0], rows)?;
                let j = parse_index(&toks[1], n)?;
                let v = parse_f64(&toks[2], false)?;
                if sec == "A" {
                    a[(i, j)] = v;
                } else {
                    a_eq[(i, j)] = v;
                }
            }
            "const" => constant = parse_f64(&toks[0], false)?,
            _ => {
                let (len, allow_inf) = match sec {
                    "d" => (n, false),
                    "b" => (m, false),
                    "beq" => (m_eq, false),
                    _ => (n, true),
                };
                let i = parse_index(&toks[0], len)?;
                let v = parse_f64(&toks[1], allow_inf)?;
                match sec {
                    "d" => d[i] = v,
                    "b" => b[i] = v,
                    "beq" => b_eq[i] = v,
                    "lb" => lb[i] = v,
                    _ => ub[i] = v,
                }
            }
        }
    }

    let (lower, upper) = if has_bounds { (Some(lb), Some(ub)) } else { (None, None) };
    Ok(QpInstance::new(name, q, d, a, b, a_eq, b_eq, lower, upper)?.with_constant(constant))
}

fn push_vec(out: &mut String, header: &str, v: &DVector<f64>) {
    out.push_str(header);
    out.push('\n');
    for (i, x) in v.iter().enumerate() {
        if *x != 0.0 {
            let _ = writeln!(out, "{} {:e}", i + 1, x);
        }
    }
}

fn push_mat(out: &mut String, header: &str, a: &DMatrix<f64>, upper_only: bool) {
    out.push_str(header);
    out.push('\n');
    for i in 0..a.nrows() {
        let start = if upper_only { i } else { 0 };
        for j in start..a.ncols() {
            if a[(i, j)] != 0.0 {
                let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, a[(i, j)]);
            }
        }
    }
}

/// Serializes to the canonical format; `parse_canonical` inverts it exactly.
pub fn write_canonical(inst: &QpInstance) -> String {
    let has_bounds = inst.lower.is_some() || inst.upper.is_some();
    let mut out = String::new();
    out.push_str("qpinst 1\n");
    let _ = writeln!(out, "{} {} {} {}", inst.n, inst.m(), inst.m_eq(), u8::from(has_bounds));
    push_mat(&mut out, "Q", &inst.q, true);
    push_vec(&mut out, "d", &inst.d);
    push_mat(&mut out, "A", &inst.a_ineq, false);
    push_vec(&mut out, "b", &inst.b_ineq);
    push_mat(&mut out, "Aeq", &inst.a_eq, false);
    push_vec(&mut out, "beq", &inst.b_eq);
    if has_bounds {
        let lb = inst
            .lower
            .clone()
            .unwrap_or_else(|| DVector::from_element(inst.n, f64::NEG_INFINITY));
        let ub = inst
            .upper
            .clone()
            .unwrap_or_else(|| DVector::from_element(inst.n, f64::INFINITY));
        push_vec(&mut out, "lb", &lb);
        push_vec(&mut out, "ub", &ub);
    }
    if inst.constant != 0.0 {
        let _ = writeln!(out, "const\n{:e}", inst.constant);
    }
    out
}

/// Dense whitespace format: `n m m_eq`, then `Q` (row-major), `d`, `A`, `b`,
/// `Aeq`, `beq`, and optionally `lb` and `ub`. `#` starts a comment.
pub fn parse_dense_text(text: &str, name: &str) -> Result<QpInstance, InstanceError> {
    let toks: Vec<Token> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| tokens_of_line(i + 1, l))
        .collect();
    let mut pos = 0usize;
    let last_line = text.lines().count().max(1);
    let mut next = |what: &str| -> Result<Token, InstanceError> {
        let t = toks
            .get(pos)
            .copied()
            .ok_or_else(|| err(last_line, 1, format!("unexpected end of input while reading {what}")))?;
        pos += 1;
        Ok(t)
    };
    let n = parse_usize(&next("n")?)?;
    let m = parse_usize(&next("m")?)?;
    let m_eq = parse_usize(&next("m_eq")?)?;
    let mut read = |count: usize, what: &str, allow_inf: bool| -> Result<Vec<f64>, InstanceError> {
        (0..count).map(|_| parse_f64(&next(what)?, allow_inf)).collect()
    };
    let q = DMatrix::from_row_slice(n, n, &read(n * n, "Q", false)?);
    let d = DVector::from_vec(read(n, "d", false)?);
    let a = DMatrix::from_row_slice(m, n, &read(m * n, "A", false)?);
    let b = DVector::from_vec(read(m, "b", false)?);
    let a_eq = DMatrix::from_row_slice(m_eq, n, &read(m_eq * n, "Aeq", false)?);
    let b_eq = DVector::from_vec(read(m_eq, "beq", false)?);
    let remaining = toks.len() - pos_after(n, m, m_eq);
    let (lower, upper) = match remaining {
        0 => (None, None),
        r if r == 2 * n => (
            Some(DVector::from_vec(read(n, "lb", true)?)),
            Some(DVector::from_vec(read(n, "ub", true)?)),
        ),
        _ => {
            let t = toks[pos_after(n, m, m_eq)];
            return Err(err(
                t.line,
                t.col,
                format!("expected 0 or {} trailing bound values, found {remaining}", 2 * n),
            ));
        }
    };
    QpInstance::new(name, q, d, a, b, a_eq, b_eq, lower, upper)
}

fn pos_after(n: usize, m: usize, m_eq: usize) -> usize {
    3 + n * n + n + m * n + m + m_eq * n + m_eq
}
