//! Per-image quality tables.
//!
//! Tab-separated: header `image\tpsnr\tssim\tmae`, one row per image, then a `MEAN` row holding
//! the arithmetic mean of each column. Values are written in shortest round-trip form; a
//! perfect reconstruction has PSNR `inf`.

use crate::analysis::metrics::{mae, psnr, ssim};
use crate::blocks::Model;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EVAL_HEADER: &str = "image\tpsnr\tssim\tmae";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

pub fn score(name: &str, restored: &Tensor, clean: &Tensor) -> Result<EvalRow> {
    let restored = restored.to_dtype(clean.dtype());
    Ok(EvalRow {
        name: name.to_string(),
        psnr: psnr(&restored, clean, 1.0)?,
        ssim: ssim(&restored, clean)?,
        mae: mae(&restored, clean)?,
    })
}

/// Score `model` on every pair, or the degraded inputs themselves when `model` is `None`.
pub fn evaluate(model: Option<&Model>, pairs: &[(String, ImagePair)]) -> Result<Vec<EvalRow>> {
    pairs
        .iter()
        .map(|(name, pair)| {
            let restored = match model {
                Some(m) => m.restore(&pair.degraded)?,
                None if pair.degraded.shape() == pair.clean.shape() => pair.degraded.clone(),
                None => {
                    return Err(Error::Invalid(format!(
                        "{name}: degraded input {:?} is not comparable to {:?} without a model",
                        pair.degraded.shape(),
                        pair.clean.shape()
                    )))
                }
            };
            score(name, &restored, &pair.clean)
        })
        .collect()
}

pub fn mean_row(rows: &[EvalRow]) -> EvalRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    EvalRow {
        name: "MEAN".into(),
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        mae: avg(|r| r.mae),
    }
}

pub fn format_eval_table(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for r in rows.iter().chain(std::iter::once(&mean_row(rows))) {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.name, r.psnr, r.ssim, r.mae));
    }
    out
}

/// Parse a table back into its per-image rows and the `MEAN` row.
pub fn parse_eval_table(text: &str) -> Result<(Vec<EvalRow>, EvalRow)> {
    let mut lines = text.lines().filter(|l| !l.is_empty());
    if lines.next() != Some(EVAL_HEADER) {
        return Err(Error::Format("eval table header missing".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number in `{line}`")));
        if f.len() != 4 {
            return Err(Error::Format(format!("eval row `{line}` needs 4 fields")));
        }
        rows.push(EvalRow {
            name: f[0].to_string(),
            psnr: num(f[1])?,
            ssim: num(f[2])?,
            mae: num(f[3])?,
        });
    }
    match rows.pop() {
        Some(mean) if mean.name == "MEAN" => Ok((rows, mean)),
        _ => Err(Error::Format("eval table has no MEAN row".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_scene;

    #[test]
    fn identity_pairs_score_perfectly_and_round_trip() {
        let pairs: Vec<(String, ImagePair)> = (0..3)
            .map(|i| {
                let c = synthetic_scene(16, 16, i);
                (format!("img{i}"), ImagePair::new(c.clone(), c).unwrap())
            })
            .collect();
        let rows = evaluate(None, &pairs).unwrap();
        assert!(rows.iter().all(|r| r.psnr == f64::INFINITY && r.ssim == 1.0 && r.mae == 0.0));
        let (back, mean) = parse_eval_table(&format_eval_table(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(mean.ssim, 1.0);
    }

    #[test]
    fn mean_row_is_the_column_average() {
        let rows = vec![
            EvalRow { name: "a".into(), psnr: 20.0, ssim: 0.5, mae: 0.1 },
            EvalRow { name: "b".into(), psnr: 31.0, ssim: 0.75, mae: 0.2 },
        ];
        let (_, mean) = parse_eval_table(&format_eval_table(&rows)).unwrap();
        assert_eq!(mean.psnr, 25.5);
        assert_eq!(mean.ssim, 0.625);
        assert!((mean.mae - 0.15).abs() < 1e-15);
        assert!(parse_eval_table("image\tpsnr\tssim\tmae\na\t1\t2\t3\n").is_err());
    }
}
