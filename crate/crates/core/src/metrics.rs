//! Reference-based quality metrics.

use std::fmt::Write as _;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn mse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(gt)?;
    let n = pred.len().max(1) as f64;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok(sum / n)
}

/// `scale * sqrt(mean((pred - gt)^2))` over every pixel.
pub fn rmse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, scale: f64) -> Result<f64> {
    Ok(scale * mse(pred, gt)?.sqrt())
}

/// `10 log10(1 / mse)` for data in `[0, 1]`; `+inf` on exact equality.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// One evaluated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub pair: String,
    pub rmse: f64,
    pub psnr: f64,
    pub pixels: usize,
}

impl EvalRow {
    /// RMSE in physical units (`value_scale` per stored unit) and PSNR on
    /// data divided by `peak`.
    pub fn evaluate<T: Scalar>(pair: impl Into<String>, pred: &Tensor<T>, gt: &Tensor<T>, value_scale: f64, peak: f64) -> Result<Self> {
        let inv = T::lit(1.0 / peak);
        Ok(Self {
            pair: pair.into(),
            rmse: rmse(pred, gt, value_scale)?,
            psnr: psnr(&pred.scale(inv), &gt.scale(inv))?,
            pixels: gt.len(),
        })
    }
}

/// Per-pair rows plus their aggregate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "pair,rmse,psnr,pixels";

impl EvalReport {
    /// Means of RMSE and PSNR over rows; PSNR mean skips infinite entries.
    pub fn aggregate(&self) -> Option<EvalRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let finite: Vec<f64> = self.rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        Some(EvalRow {
            pair: "mean".into(),
            rmse: self.rows.iter().map(|r| r.rmse).sum::<f64>() / n,
            psnr,
            pixels: self.rows.iter().map(|r| r.pixels).sum(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in self.rows.iter().chain(self.aggregate().as_ref()) {
            let psnr = if r.psnr.is_finite() { r.psnr.to_string() } else { "inf".into() };
            let _ = writeln!(s, "{},{},{},{}", r.pair, r.rmse, psnr, r.pixels);
        }
        s
    }
}
