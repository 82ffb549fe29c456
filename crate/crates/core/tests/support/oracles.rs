//! Reference values frozen from an independent implementation (SciPy) or
//! derived by hand, with the tolerance each check is held to.

#![allow(dead_code)]

pub struct SwCase {
    pub name: &'static str,
    pub data: Vec<f64>,
    pub w: f64,
    pub p: f64,
}

pub fn shapiro_wilk_cases() -> Vec<SwCase> {
    let mut cases = vec![
        SwCase {
            name: "1..10",
            data: (1..=10).map(f64::from).collect(),
            w: 0.9701646110856056,
            p: 0.8923673061902978,
        },
        SwCase {
            name: "seven values",
            data: vec![2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8],
            w: 0.9401366781979513,
            p: 0.6399513746153818,
        },
        SwCase {
            name: "n=3",
            data: vec![1.0, 2.0, 4.0],
            w: 0.9642857142857142,
            p: 0.6368868450289689,
        },
        SwCase {
            name: "normal n=50",
            data: vec![
                1.576, 4.264, 2.129, 2.741, 2.925, 2.259, 1.632, 3.649, 3.361, 1.047, 5.347,
                3.968, 2.241, 3.902, 2.533, 2.939, 3.789, 1.743, 3.576, 4.399, 4.322, 2.7, 3.903,
                1.378, 2.842, 3.449, 1.656, 2.918, 4.725, 5.618, 3.777, 3.829, 2.041, 1.791,
                1.588, 3.542, 3.752, 2.341, 1.771, 3.258, 3.313, 2.869, 4.27, 2.907, 2.934, 1.892,
                3.136, 4.347, 3.061, 3.071,
            ],
            w: 0.9799658320886344,
            p: 0.550523620286099,
        },
        SwCase {
            name: "exponential n=30",
            data: vec![
                0.117, 0.065, 1.038, 0.054, 0.912, 1.04, 0.458, 1.195, 4.125, 2.134, 0.386, 0.086,
                1.349, 0.755, 1.201, 0.151, 1.354, 0.556, 0.159, 0.169, 1.175, 0.291, 1.431,
                0.587, 0.309, 4.47, 0.1, 0.181, 0.828, 0.973,
            ],
            w: 0.7204552149941127,
            p: 3.14e-06,
        },
    ];
    let mut two_point = vec![0.0; 200];
    two_point.extend(vec![1.0; 200]);
    cases.push(SwCase {
        name: "200 zeros + 200 ones",
        data: two_point,
        w: 0.6365205508785031,
        p: 2.996e-28,
    });
    cases
}

/// Four-decimal agreement; tiny p-values are compared relatively.
pub fn sw_matches(case: &SwCase, w: f64, p: f64) -> bool {
    let p_ok = if case.p < 1e-4 {
        (p / case.p - 1.0).abs() < 0.05
    } else {
        (p - case.p).abs() < 5e-5
    };
    (w - case.w).abs() < 5e-5 && p_ok
}

/// (q, k, df, upper tail) from SciPy's studentized_range.
pub const STUDENTIZED_RANGE_SF: &[(f64, usize, f64, f64)] = &[
    (3.5, 3, 20.0, 0.055891849081749934),
    (2.0, 3, 117.0, 0.33690842065688),
    (4.0, 3, 1000.0, 0.013228307617030644),
];

/// q(0.95; k = 3, df = 10).
pub const Q_CRIT_3_10: f64 = 3.876776750013158;

/// Friedman on three (1, 2, 3) rows: χ² = 6, p = e^{-3}.
pub const FRIEDMAN_CHI2: f64 = 6.0;
pub const FRIEDMAN_P: f64 = 0.04978706836786395;

/// Rows (1,2,3), (2,4,3): SS_cond = 3, SS_subj = 1.5, SS_err = 1 so
/// F = 1.5 / 0.5 = 3 with df (2, 2) and p = 1 / (1 + F).
pub fn anova_rows() -> Vec<Vec<f64>> {
    vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 3.0]]
}
pub const ANOVA_F: f64 = 3.0;
pub const ANOVA_P: f64 = 0.25;
