//! Size-indexed study tables with fitted log-log slopes.

use serde::Serialize;

/// One row of a rate study: the ensemble/population size and the quantity
/// measured at that size (an error or a correlation magnitude).
#[derive(Clone, Debug, Serialize)]
pub struct ErrorRow {
    pub size: usize,
    pub value: f64,
}

/// A rate study result: per-size values plus the least-squares slope of
/// `ln value` against `ln size`. The slope is `None` when fewer than two
/// rows carry positive finite values.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub slope: Option<f64>,
}

impl ErrorTable {
    pub fn from_rows(rows: Vec<ErrorRow>) -> ErrorTable {
        let slope = fit_loglog_slope(
            &rows
                .iter()
                .map(|r| (r.size as f64, r.value))
                .collect::<Vec<_>>(),
        );
        ErrorTable { rows, slope }
    }
}

/// Least-squares slope of ln y on ln x over points with positive finite y.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0 && y.is_finite())
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
