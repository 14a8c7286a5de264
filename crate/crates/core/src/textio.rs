//! Line-oriented ASCII helpers shared by the text formats ('#' comments,
//! whitespace-separated tokens).

use std::str::FromStr;

use crate::error::{Error, Result};

pub struct Lines<'a> {
    name: String,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str, name: &str) -> Self {
        Lines {
            name: name.to_string(),
            inner: text.lines().enumerate(),
        }
    }

    pub fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.name.clone(), line, msg)
    }

    /// Next non-empty, non-comment line as tokens, with its 1-based number.
    pub fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let content = line.split('#').next().unwrap_or("");
            let toks: Vec<&str> = content.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }

    pub fn require_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let name = self.name.clone();
        self.next_tokens()
            .ok_or_else(|| Error::parse(name, 0, format!("unexpected end of file while reading {what}")))
    }

    pub fn parse_tok<T: FromStr>(&self, line: usize, toks: &[&str], i: usize) -> Result<T> {
        let tok = toks
            .get(i)
            .ok_or_else(|| self.err(line, format!("missing field {}", i + 1)))?;
        tok.parse::<T>()
            .map_err(|_| self.err(line, format!("cannot parse `{tok}`")))
    }

    pub fn expect_header(&mut self, magic: &str, version: &str) -> Result<()> {
        let (ln, toks) = self.require_tokens("header")?;
        let ok = toks.len() == 2 && toks[0] == magic && (toks[1] == version || toks[1] == format!("v{version}"));
        if !ok {
            return Err(self.err(ln, format!("expected header `{magic} {version}`")));
        }
        Ok(())
    }
}

/// Parse `key value...` pairs after a header into a list preserving order.
pub fn parse_number_list(lines: &Lines<'_>, line: usize, toks: &[&str], from: usize) -> Result<Vec<f64>> {
    (from..toks.len()).map(|i| lines.parse_tok(line, toks, i)).collect()
}
