use serde::{Deserialize, Serialize};

/// Shortest interval holding at least `mass` of the samples.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Option<(f64, f64)> {
    if samples.is_empty() || !(mass > 0.0 && mass <= 1.0) || samples.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (s[0], s[k - 1]);
    for i in 1..=(n - k) {
        let (lo, hi) = (s[i], s[i + k - 1]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    Some(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensitySummary {
    pub mean: f64,
    pub hpd68: (f64, f64),
    pub hpd95: (f64, f64),
    pub n: usize,
}

impl IntensitySummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        Some(IntensitySummary {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            hpd68: hpd_interval(samples, 0.68)?,
            hpd95: hpd_interval(samples, 0.95)?,
            n: samples.len(),
        })
    }
}
