use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided Welch's t-test with Satterthwaite degrees of freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: a.len().min(b.len()),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(Error::degenerate("both samples have zero variance"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::degenerate(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn summarize_folds(values: &[f64]) -> Result<FoldSummary> {
    if values.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: values.len(),
        });
    }
    let (mean, var) = mean_var(values);
    Ok(FoldSummary {
        mean,
        stderr: (var / values.len() as f64).sqrt(),
        n: values.len(),
    })
}
