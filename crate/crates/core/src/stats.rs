//! Scalar density helpers and summary statistics.

use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log Φ(x), accurate far into the lower tail.
pub fn std_normal_logcdf(x: f64) -> f64 {
    if x > -20.0 {
        return std_normal_cdf(x).ln();
    }
    // Asymptotic Mills-ratio expansion.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -LN_SQRT_2PI - 0.5 * x2 - (-x).ln() + series.ln()
}

/// Density of a N(mode, sd²) truncated to the positive half line.
pub fn half_normal_logpdf(x: f64, mode: f64, sd: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(x, mode, sd) - std_normal_logcdf(mode / sd)
}

pub fn half_cauchy_logpdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    (2.0 / std::f64::consts::PI).ln() - scale.ln() - (1.0 + z * z).ln()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// 64-bit FNV-1a, used to key random streams by subject id.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer over a combined key.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n − 1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile on sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Split potential scale reduction over chains of equal length.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains.iter().map(Vec::len).min()?;
    let half = n / 2;
    if chains.len() < 2 || half < 2 {
        return None;
    }
    let mut parts = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = half as f64 * variance(&means);
    if w <= 0.0 {
        return None;
    }
    let var_plus = (half as f64 - 1.0) / half as f64 * w + b / half as f64;
    Some((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logcdf_tail_is_continuous() {
        let a = std_normal_logcdf(-19.999_999);
        let b = std_normal_logcdf(-20.000_001);
        assert!((a - b).abs() < 1e-4);
        assert!((std_normal_logcdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn type7_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert!((quantile_sorted(&v, 0.05) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_large_values() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
