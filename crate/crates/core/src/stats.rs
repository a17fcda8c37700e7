//! Small fitting and summary-statistics helpers shared by the scans and the
//! experiment harness.

use serde::Serialize;

/// Least-squares line fit with the usual residual-based slope uncertainty.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Fit `y = slope·x + intercept`; needs at least two points, three for a
/// meaningful standard error.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let slope_stderr = if n > 2 {
        let ss_res: f64 = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
            .sum();
        (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Fit on log-log axes; every entry must be strictly positive.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.iter().chain(ys.iter()).any(|&v| v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.slope_stderr.abs() < 1e-12);
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let xs = [0.4f64, 0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * x.powf(1.1)).collect();
        let fit = fit_log_log(&xs, &ys).unwrap();
        assert!((fit.slope - 1.1).abs() < 1e-10);
        assert!(fit_log_log(&xs, &[1.0, 2.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn mean_and_stderr_basics() {
        let (m, se) = mean_and_stderr(&[1.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((se - 1.0).abs() < 1e-12);
    }
}
