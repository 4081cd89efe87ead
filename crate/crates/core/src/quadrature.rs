//! Gauss–Legendre rules and orthonormal associated Legendre functions.
//!
//! `λ_l^m(x)` denotes the associated Legendre function normalized so that
//! `λ_l^m(cos θ) T_m(φ)` is an orthonormal real spherical harmonic on the unit
//! sphere, with `T_0 = 1`, `T_m = √2 cos mφ`, `T_{-m} = √2 sin mφ`
//! (no Condon–Shortley phase). Hence `∫_{-1}^{1} (λ_l^m)² dx = 1/(2π)`.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, exact for polynomials of
/// degree `≤ 2n − 1`. Nodes are ascending and mirror-symmetric.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess for the i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_p(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_p(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussLegendre { nodes, weights }
}

/// `(P_n(x), P_n'(x))` for the unnormalized Legendre polynomial.
fn legendre_p(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Position of `(l, m)`, `0 ≤ m ≤ l`, in a packed triangular table.
#[inline]
pub fn lm_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

pub fn lm_table_len(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 2) / 2
}

/// `λ_l^m(x)` for all `0 ≤ m ≤ l ≤ lmax`, packed by [`lm_index`].
pub fn legendre_table(lmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; lm_table_len(lmax)];
    let sin = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin;
        }
        out[lm_index(m, m)] = pmm;
        if m == lmax {
            break;
        }
        let mf = m as f64;
        out[lm_index(m + 1, m)] = x * (2.0 * mf + 3.0).sqrt() * pmm;
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let lp = lf - 1.0;
            let b = ((lp * lp - mf * mf) / (4.0 * lp * lp - 1.0)).sqrt();
            out[lm_index(l, m)] = a * (x * out[lm_index(l - 1, m)] - b * out[lm_index(l - 2, m)]);
        }
    }
    out
}

/// `λ_l^m`, `∂_θ λ_l^m` and `∂²_θ λ_l^m` at `x = cos θ`, `0 < θ < π`.
#[derive(Clone, Debug)]
pub struct LegendreRing {
    pub value: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub d2_theta: Vec<f64>,
}

/// Legendre functions with colatitude derivatives at an interior node.
///
/// Uses `sin θ ∂_θ λ_l^m = l x λ_l^m − sqrt((2l+1)(l²−m²)/(2l−1)) λ_{l−1}^m`
/// and the associated Legendre equation for the second derivative.
pub fn legendre_ring(lmax: usize, x: f64) -> LegendreRing {
    let value = legendre_table(lmax, x);
    let sin = (1.0 - x * x).sqrt();
    assert!(sin > 0.0, "derivatives requested at a pole");
    let cot = x / sin;
    let mut d_theta = vec![0.0; value.len()];
    let mut d2_theta = vec![0.0; value.len()];
    for l in 0..=lmax {
        let lf = l as f64;
        for m in 0..=l {
            let mf = m as f64;
            let i = lm_index(l, m);
            let mut num = lf * x * value[i];
            if l > m {
                let c = ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt();
                num -= c * value[lm_index(l - 1, m)];
            }
            let d1 = num / sin;
            d_theta[i] = d1;
            d2_theta[i] = -cot * d1 - (lf * (lf + 1.0) - mf * mf / (sin * sin)) * value[i];
        }
    }
    LegendreRing {
        value,
        d_theta,
        d2_theta,
    }
}

/// Real longitude factor `T_m(φ)`.
#[inline]
pub fn trig_factor(m: i32, phi: f64) -> f64 {
    use std::f64::consts::SQRT_2;
    match m {
        0 => 1.0,
        m if m > 0 => SQRT_2 * (m as f64 * phi).cos(),
        m => SQRT_2 * ((-m) as f64 * phi).sin(),
    }
}

/// `dT_m/dφ`.
#[inline]
pub fn trig_factor_deriv(m: i32, phi: f64) -> f64 {
    use std::f64::consts::SQRT_2;
    match m {
        0 => 0.0,
        m if m > 0 => -SQRT_2 * m as f64 * (m as f64 * phi).sin(),
        m => SQRT_2 * (-m) as f64 * ((-m) as f64 * phi).cos(),
    }
}
