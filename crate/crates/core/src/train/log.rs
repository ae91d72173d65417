//! Metrics log: tab-separated, one header line then one line per iteration.
//!
//! Columns: `iter`, `lr`, `patch`, `loss`, `val_psnr`. `iter` counts completed steps; `val_psnr`
//! is `-` on iterations without validation and `inf` for a perfect reconstruction. Floats use
//! the shortest representation that round-trips.

use std::fmt;

use crate::error::{Error, Result};

pub const HEADER: &str = "iter\tlr\tpatch\tloss\tval_psnr";

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub lr: f64,
    pub patch: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:?}\t{}\t{:?}\t", self.iter, self.lr, self.patch, self.loss)?;
        match self.val_psnr {
            Some(v) => write!(f, "{v:?}"),
            None => write!(f, "-"),
        }
    }
}

impl LogRecord {
    pub fn parse(line: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("metrics line `{line}`: {m}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        Ok(LogRecord {
            iter: f[0].parse().map_err(|_| bad("bad iter"))?,
            lr: float(f[1])?,
            patch: f[2].parse().map_err(|_| bad("bad patch"))?,
            loss: float(f[3])?,
            val_psnr: if f[4] == "-" { None } else { Some(float(f[4])?) },
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Format("metrics log header missing".into()));
    }
    lines.filter(|l| !l.is_empty()).map(LogRecord::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            LogRecord { iter: 1, lr: 2e-4, patch: 32, loss: 0.123456789, val_psnr: None },
            LogRecord { iter: 2, lr: 1.005e-4, patch: 48, loss: 1e-3, val_psnr: Some(27.5) },
            LogRecord { iter: 3, lr: 1e-6, patch: 48, loss: 1e-3, val_psnr: Some(f64::INFINITY) },
        ];
        let mut text = format!("{HEADER}\n");
        for r in &recs {
            text.push_str(&format!("{r}\n"));
        }
        assert_eq!(parse_log(&text).unwrap(), recs);
        assert!(parse_log("nope\n").is_err());
        assert!(LogRecord::parse("1\t2").is_err());
    }
}
