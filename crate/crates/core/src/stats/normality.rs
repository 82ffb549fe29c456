//! Shapiro–Wilk W test, following Royston's AS R94 algorithm (uncensored).

use super::dist::{normal_quantile, normal_sf};
use super::{NormalityResult, StatsError};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];
const SMALL: f64 = 1e-19;

/// Evaluates `c[0] + c[1] x + c[2] x^2 + ...`.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro–Wilk normality test for `3 <= n <= 5000` observations.
pub fn shapiro_wilk(samples: &[f64]) -> Result<NormalityResult, StatsError> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::SampleSizeOutOfRange(n));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    // centre on the median; W is location invariant and this keeps the
    // range-scaled values well conditioned
    let median = if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    };
    for v in &mut x {
        *v -= median;
    }
    let range = x[n - 1] - x[0];
    let scale = x[n - 1].abs().max(x[0].abs());
    if range <= SMALL || range <= scale * 1e-13 {
        return Err(StatsError::ZeroVariance);
    }

    let a = coefficients(n);
    let nn2 = n / 2;
    let an = n as f64;

    // W = (sum a_i x_(i))^2 / sum (x_i - mean)^2 computed as in AS R94 via
    // the correlation between the antisymmetric coefficients and the data
    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        if i < j {
            -a[i]
        } else if i > j {
            a[j]
        } else {
            0.0
        }
    };
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sx = xs.iter().sum::<f64>() / an;
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in xs.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = xi - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = (1.0 - w1).clamp(0.0, 1.0);
    debug_assert!(nn2 >= 1);

    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let p = (1.0 - pi6 * w.sqrt().acos()).max(0.0);
        return Ok(NormalityResult {
            w: w.max(0.75),
            p_value: p.clamp(0.0, 1.0),
            n,
        });
    }

    let y = w1.ln();
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            SMALL
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            normal_sf((y - m) / s)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        normal_sf((y - m) / s)
    };
    Ok(NormalityResult {
        w,
        p_value: p.clamp(0.0, 1.0),
        n,
    })
}

/// The first `n/2` Shapiro–Wilk coefficients (positive, descending order of
/// magnitude) using Royston's polynomial approximation.
fn coefficients(n: usize) -> Vec<f64> {
    let nn2 = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an = n as f64;
    let an25 = an + 0.25;
    let mut m: Vec<f64> = (0..nn2)
        .map(|i| normal_quantile((i as f64 + 1.0 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        m[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    m[0] = a1;
    for v in m.iter_mut().skip(first) {
        *v = -*v / fac;
    }
    m
}
