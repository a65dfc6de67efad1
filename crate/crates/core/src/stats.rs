//! Sample statistics and the normality instrument.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Sample moments with large-sample standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_skewness: f64,
    pub se_kurtosis: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn moments(xs: &[f64]) -> Result<Moments> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need >= 2 samples, got {n}")));
    }
    let nf = n as f64;
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let var = m2 * nf / (nf - 1.0);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(Moments {
        n,
        mean: m,
        variance: var,
        skewness: skew,
        excess_kurtosis: kurt,
        se_mean: (var / nf).sqrt(),
        se_variance: var * (2.0 / (nf - 1.0)).sqrt(),
        se_skewness: (6.0 / nf).sqrt(),
        se_kurtosis: (24.0 / nf).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub n: usize,
    /// Kolmogorov–Smirnov distance to the fitted normal.
    pub ks_statistic: f64,
    /// Lilliefors p-value (Dallal–Wilkinson approximation).
    pub p_value: f64,
    pub skewness_z: f64,
    pub kurtosis_z: f64,
}

/// Minimum sample size accepted by [`normality_test`].
pub const NORMALITY_MIN_N: usize = 100;

/// Lilliefors test: KS distance to the normal law with the sample's own
/// mean and standard deviation. The p-value uses the Dallal–Wilkinson
/// formula, refined by Stephens' polynomials when it exceeds 0.1.
pub fn normality_test(xs: &[f64]) -> Result<NormalityResult> {
    let n = xs.len();
    if n < NORMALITY_MIN_N {
        return Err(Error::InsufficientData(format!(
            "normality test needs >= {NORMALITY_MIN_N} samples, got {n}"
        )));
    }
    let mo = moments(xs)?;
    let sd = mo.variance.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let mut z: Vec<f64> = xs.iter().map(|x| (x - mo.mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &zi) in z.iter().enumerate() {
        let f = normal_cdf(zi);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    Ok(NormalityResult {
        n,
        ks_statistic: d,
        p_value: lilliefors_p(d, n),
        skewness_z: mo.skewness / mo.se_skewness,
        kurtosis_z: mo.excess_kurtosis / mo.se_kurtosis,
    })
}

fn lilliefors_p(d: f64, n: usize) -> f64 {
    let nf = n as f64;
    let (kd, nd) = if n <= 100 {
        (d, nf)
    } else {
        (d * (nf / 100.0).powf(0.49), 100.0)
    };
    let mut p = (-7.01256 * kd * kd * (nd + 2.78019) + 2.99587 * kd * (nd + 2.78019).sqrt()
        - 0.122119
        + 0.974598 / nd.sqrt()
        + 1.67997 / nd)
        .exp();
    if p > 0.1 {
        let k = (nf.sqrt() - 0.01 + 0.85 / nf.sqrt()) * d;
        let poly = |c: [f64; 5]| c[0] + k * (c[1] + k * (c[2] + k * (c[3] + k * c[4])));
        p = if k <= 0.302 {
            1.0
        } else if k <= 0.5 {
            poly([2.76773, -19.828, 80.709, -138.55, 81.218])
        } else if k <= 0.9 {
            poly([-4.901, 40.662, -97.49, 94.029, -32.355])
        } else if k <= 1.31 {
            poly([6.198, -19.558, 23.186, -12.234, 2.423])
        } else {
            0.0
        };
    }
    p.clamp(0.0, 1.0)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=20)
            .map(|j| {
                let jf = j as f64;
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * jf * jf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov test; returns (D, asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

/// Standard error of the mean of a correlated series by batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> Result<f64> {
    let batches = batches.min(xs.len());
    if batches < 2 {
        return Err(Error::InsufficientData("batch means need >= 2 batches".into()));
    }
    let len = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * len..(b + 1) * len]))
        .collect();
    Ok((variance(&means) / batches as f64).sqrt())
}

/// Jackknife standard error of a statistic; `leave_out(i)` evaluates it
/// with observation `i` removed.
pub fn jackknife_se(n: usize, leave_out: impl Fn(usize) -> f64) -> f64 {
    if n < 2 {
        return f64::NAN;
    }
    let vals: Vec<f64> = (0..n).map(leave_out).collect();
    let m = mean(&vals);
    let ss: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum();
    ((n as f64 - 1.0) / n as f64 * ss).sqrt()
}

/// Ordinary least squares y = a + b x; returns (a, b, R²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (my - b * mx, b, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay rate: minus the fitted slope of log-estimate against n.
    pub gamma: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub points: usize,
}

/// Fit log(estimate) = a - γ n. Points are taken in increasing n and the
/// range stops at the first zero (or non-finite) estimate.
pub fn decay_fit(ns: &[f64], estimates: &[f64]) -> Result<DecayFit> {
    if ns.len() != estimates.len() {
        return Err(Error::ShapeMismatch {
            expected: ns.len(),
            got: estimates.len(),
        });
    }
    let mut pts: Vec<(f64, f64)> = ns.iter().copied().zip(estimates.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let usable: Vec<(f64, f64)> = pts
        .into_iter()
        .take_while(|&(_, e)| e > 0.0 && e.is_finite())
        .collect();
    if usable.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs >= 5 nonzero estimates, got {}",
            usable.len()
        )));
    }
    let x: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    if variance(&y) == 0.0 {
        return Err(Error::NoDecay("estimates are constant in n".into()));
    }
    let (a, b, r2) = linear_fit(&x, &y);
    if b >= 0.0 {
        return Err(Error::NoDecay(format!("fitted slope {b} is not negative")));
    }
    Ok(DecayFit {
        gamma: -b,
        intercept: a,
        r_squared: r2,
        n_min: x[0],
        n_max: x[x.len() - 1],
        points: x.len(),
    })
}

/// Sample covariance matrix (unbiased) of row vectors.
pub fn covariance_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData("covariance needs >= 2 rows".into()));
    }
    let k = rows[0].len();
    let mut mu = vec![0.0; k];
    for r in rows {
        if r.len() != k {
            return Err(Error::ShapeMismatch {
                expected: k,
                got: r.len(),
            });
        }
        for (m, v) in mu.iter_mut().zip(r) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = vec![vec![0.0; k]; k];
    for r in rows {
        for i in 0..k {
            for j in 0..k {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    for row in &mut c {
        row.iter_mut().for_each(|v| *v /= n as f64 - 1.0);
    }
    Ok(c)
}

/// ‖a - b‖_F / ‖b‖_F.
pub fn relative_frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, Exp, StandardNormal};

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-11);
    }

    #[test]
    fn moments_of_small_sample() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(m.skewness.abs() < 1e-15);
        assert!((m.excess_kurtosis - (-1.36)).abs() < 1e-12);
    }

    #[test]
    fn normality_rejects_small_and_constant_samples() {
        assert!(matches!(
            normality_test(&[0.0; 50]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(normality_test(&[3.0; 200]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normality_has_power_against_exponential() {
        let mut rng = stream(11, 0);
        let e = Exp::new(1.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| e.sample(&mut rng)).collect();
        let r = normality_test(&xs).unwrap();
        assert!(r.p_value < 1e-6, "p = {}", r.p_value);
        assert!(r.skewness_z > 10.0);
    }

    #[test]
    fn normality_false_alarm_rate() {
        let mut pass = 0;
        for rep in 0..100 {
            let mut rng = stream(5, rep);
            let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
            if normality_test(&xs).unwrap().p_value >= 0.01 {
                pass += 1;
            }
        }
        assert!(pass >= 99, "{pass} of 100 passed");
    }

    #[test]
    fn lilliefors_matches_reference_values() {
        // Reference values from the Dallal–Wilkinson / Stephens formulas.
        assert_eq!(lilliefors_p(0.005, 1000), 1.0);
        assert!(lilliefors_p(0.01, 1000) > 0.99);
        let p = lilliefors_p(0.1, 100);
        assert!(p > 0.01 && p < 0.05, "{p}");
        assert!(lilliefors_p(0.5, 200) < 1e-20);
    }

    #[test]
    fn kolmogorov_branches_agree_at_switch() {
        let lo = kolmogorov_sf(1.18 - 1e-9);
        let hi = kolmogorov_sf(1.18 + 1e-9);
        assert!((lo - hi).abs() < 1e-7);
        assert!((kolmogorov_sf(1.3580986) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn two_sample_ks_same_and_shifted() {
        let mut rng = stream(3, 0);
        let a: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample(&a, &b).unwrap().1 > 0.001);
        assert!(ks_two_sample(&a, &c).unwrap().1 < 1e-10);
    }

    #[test]
    fn decay_fit_recovers_exponential() {
        let ns: Vec<f64> = (1..=10).map(f64::from).collect();
        let ys: Vec<f64> = ns.iter().map(|n| (-0.5 * n).exp()).collect();
        let f = decay_fit(&ns, &ys).unwrap();
        assert!((f.gamma - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_fit_rejects_flat_and_short() {
        let ns: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!(matches!(decay_fit(&ns, &[1.0; 10]), Err(Error::NoDecay(_))));
        let mut ys: Vec<f64> = ns.iter().map(|n| (-n).exp()).collect();
        ys[4] = 0.0;
        assert!(matches!(decay_fit(&ns, &ys), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn jackknife_of_mean_is_classical_se() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
        let tot: f64 = xs.iter().sum();
        let se = jackknife_se(xs.len(), |i| (tot - xs[i]) / 4.0);
        let classical = (variance(&xs) / 5.0).sqrt();
        assert!((se - classical).abs() < 1e-12);
    }
}
