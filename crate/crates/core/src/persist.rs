//! Text encoding shared by the checkpoint formats: `key=value` header lines,
//! then named tensors as `tensor <name> <rows> <cols>` followed by one line
//! per row of 17-significant-digit floats, then a closing `end`.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub(crate) struct TextDoc {
    pub magic: String,
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl TextDoc {
    pub fn require(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Corrupt(format!("missing header field {key}")))
    }

    pub fn require_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::Corrupt(format!("bad value for {key}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub(crate) fn encode(doc: &TextDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", doc.magic);
    for (k, v) in &doc.header {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = writeln!(out, "tensors={}", doc.tensors.len());
    for (name, t) in &doc.tensors {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        for i in 0..t.rows() {
            let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

pub(crate) fn decode(text: &str, magic: &str) -> Result<TextDoc> {
    let mut lines = text.lines();
    match lines.next() {
        Some(m) if m == magic => {}
        Some(m) => return Err(Error::Corrupt(format!("unexpected magic {m:?}, want {magic:?}"))),
        None => return Err(Error::Corrupt("empty file".into())),
    }
    let mut header = Vec::new();
    let count: usize = loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Corrupt("truncated header".into()))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Corrupt(format!("bad header line {line:?}")))?;
        if k == "tensors" {
            break v
                .parse()
                .map_err(|_| Error::Corrupt("bad tensor count".into()))?;
        }
        header.push((k.to_string(), v.to_string()));
    };

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::Corrupt("truncated before tensor header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (name, rows, cols) = match toks[..] {
            ["tensor", name, r, c] => (
                name.to_string(),
                r.parse::<usize>()
                    .map_err(|_| Error::Corrupt(format!("bad rows in {line:?}")))?,
                c.parse::<usize>()
                    .map_err(|_| Error::Corrupt(format!("bad cols in {line:?}")))?,
            ),
            _ => return Err(Error::Corrupt(format!("bad tensor header {line:?}"))),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines
                .next()
                .ok_or_else(|| Error::Corrupt(format!("truncated inside tensor {name}")))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::Corrupt(format!("bad float {tok:?} in {name}")))?,
                );
            }
            if data.len() - before != cols {
                return Err(Error::Corrupt(format!("row width mismatch in {name}")));
            }
        }
        tensors.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    match lines.next() {
        Some("end") => {}
        _ => return Err(Error::Corrupt("missing end marker".into())),
    }
    Ok(TextDoc {
        magic: magic.to_string(),
        header,
        tensors,
    })
}
