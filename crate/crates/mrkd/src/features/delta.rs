//! Delta features: least-squares slope of each bin over a sliding window.

use super::FeatureError;

/// First-order regression deltas along the time axis of a `time x freq`
/// plane, with edge frames replicated.
///
/// `delta[t] = sum_{n=1..=w} n * (x[t+n] - x[t-n]) / (2 * sum_{n=1..=w} n^2)`
/// where out-of-range indices clamp to the first or last frame. With the
/// default half window of 4 the denominator is 60.
pub fn delta(
    values: &[f64],
    time: usize,
    freq: usize,
    half_window: usize,
) -> Result<Vec<f64>, FeatureError> {
    if half_window == 0 {
        return Err(FeatureError::Parameter(
            "delta half window must be at least 1".into(),
        ));
    }
    if time == 0 || values.len() != time * freq {
        return Err(FeatureError::InvalidInput(format!(
            "delta input has {} values, expected {} ({} frames x {} bins)",
            values.len(),
            time * freq,
            time,
            freq
        )));
    }
    let denom: f64 = 2.0 * (1..=half_window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = vec![0.0; values.len()];
    for t in 0..time {
        for n in 1..=half_window {
            let ahead = (t + n).min(time - 1);
            let behind = t.saturating_sub(n);
            let w = n as f64;
            for f in 0..freq {
                out[t * freq + f] += w * (values[ahead * freq + f] - values[behind * freq + f]);
            }
        }
        for f in 0..freq {
            out[t * freq + f] /= denom;
        }
    }
    Ok(out)
}
