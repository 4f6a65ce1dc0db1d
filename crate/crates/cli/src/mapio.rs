//! Map files. Pointwise maps hold one 0-based target index per source
//! vertex line; functional maps hold a `k1 k2` header then row-major values.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use faer::Mat;

pub fn parse_p2p(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .with_context(|| format!("map line {}: expected a vertex index, got {:?}", i + 1, l.trim()))
        })
        .collect()
}

pub fn format_p2p(map: &[usize]) -> String {
    let mut s = String::with_capacity(map.len() * 6);
    for i in map {
        writeln!(s, "{i}").unwrap();
    }
    s
}

pub fn parse_fmap(text: &str) -> Result<Mat<f64>> {
    let mut tokens = text.split_whitespace();
    let mut dim = |what: &str| -> Result<usize> {
        let t = tokens.next().with_context(|| format!("fmap header: missing {what}"))?;
        t.parse().with_context(|| format!("fmap header: bad {what} {t:?}"))
    };
    let (r, c) = (dim("row count")?, dim("column count")?);
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().with_context(|| format!("fmap: bad value {t:?}")))
        .collect::<Result<_>>()?;
    if values.len() != r * c {
        bail!("fmap: header says {r}x{c} but {} values follow", values.len());
    }
    Ok(Mat::from_fn(r, c, |i, j| values[i * c + j]))
}

pub fn format_fmap(c: &Mat<f64>) -> String {
    let mut s = format!("{} {}\n", c.nrows(), c.ncols());
    for i in 0..c.nrows() {
        let row: Vec<String> = (0..c.ncols()).map(|j| format!("{:e}", c[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_p2p(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_p2p(&text).with_context(|| format!("in {}", path.display()))
}

pub fn read_fmap(path: &Path) -> Result<Mat<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_fmap(&text).with_context(|| format!("in {}", path.display()))
}
