//! Small statistics helpers: means, standard errors, batch means, line fits.

/// Sample mean and standard error of the mean (`s/√n`, with `n − 1` in `s²`).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and batch-means standard error with `batches` equal batches; the
/// tail that does not fill a batch is dropped from the error estimate only.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let b = batches.max(2);
    let size = n / b;
    if size == 0 {
        return (mean, mean_and_stderr(xs).1);
    }
    let means: Vec<f64> = (0..b)
        .map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    (mean, mean_and_stderr(&means).1)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let (s, i) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-15 && (i - 1.0).abs() < 1e-15);
        let (bm, _) = batch_means(&[1.0; 100], 10);
        assert_eq!(bm, 1.0);
    }
}
