//! Exact quadrature transforms between coefficient space and a physical grid.
//!
//! A transform of degree `D` integrates every band-limited function of degree
//! `≤ D` exactly: on the sphere a Gauss–Legendre × uniform-longitude grid with
//! `D/2 + 1` rings of `D + 1` points; on the torus a uniform `(D+1) × (D+1)`
//! grid, where degree means the largest wavevector component.
//!
//! Gradients and Hessians are returned as components in a positively
//! oriented orthonormal frame: `(∂_x, ∂_y)` on the torus and `(ê_θ, ê_φ)` on
//! the sphere.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, legendre_ring, lm_index, trig_factor, trig_factor_deriv};
use crate::spectrum::{ManifoldKind, ModeId, ModeLabel, Parity, SpectrumTable, TableId};

#[derive(Clone, Debug)]
pub struct Transform {
    table: TableId,
    degree: usize,
    weights: Vec<f64>,
    backend: Backend,
}

#[derive(Clone, Debug)]
enum Backend {
    Torus(TorusGrid),
    Sphere(SphereGrid),
}

#[derive(Clone, Debug)]
struct TorusGrid {
    n: usize,
    /// `(n1, n2, parity)` of each table mode.
    modes: Vec<([i32; 2], Parity)>,
    /// `cos(2π a j / n)` and `sin(2π a j / n)` for `a ∈ [0, amax]`, row-major by `a`.
    cos: Vec<f64>,
    sin: Vec<f64>,
    amax: usize,
}

#[derive(Clone, Debug)]
struct SphereGrid {
    lmax: usize,
    n_lat: usize,
    n_lon: usize,
    sin_theta: Vec<f64>,
    cot_theta: Vec<f64>,
    lat_weights: Vec<f64>,
    /// Per ring: packed `λ_l^m`, `∂_θ λ`, `∂²_θ λ`.
    leg: Vec<f64>,
    leg_d: Vec<f64>,
    leg_dd: Vec<f64>,
    /// `T_m(φ_k)` and `T_m'(φ_k)`, indexed `(m + lmax) * n_lon + k`.
    trig: Vec<f64>,
    trig_d: Vec<f64>,
}

/// Grid values of a field together with its frame gradient.
#[derive(Clone, Debug)]
pub struct GridGrad {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Frame components of the Hessian `(H11, H12, H22)`.
#[derive(Clone, Debug)]
pub struct GridHessian {
    pub h11: Vec<f64>,
    pub h12: Vec<f64>,
    pub h22: Vec<f64>,
}

impl Transform {
    /// Build a transform exact for band-limited integrands of degree `≤ degree`.
    pub fn new(table: &SpectrumTable, degree: usize) -> Result<Self> {
        let need = table.max_degree() as usize;
        if degree < need {
            return Err(Error::Config(format!(
                "quadrature degree {degree} cannot resolve modes of degree {need}"
            )));
        }
        match table.kind() {
            ManifoldKind::Torus => Ok(Self::torus(table, degree)),
            ManifoldKind::Sphere => Ok(Self::sphere(table, degree)),
        }
    }

    fn torus(table: &SpectrumTable, degree: usize) -> Self {
        let n = degree + 1;
        let amax = table.max_degree() as usize;
        let mut cos = vec![0.0; (amax + 1) * n];
        let mut sin = vec![0.0; (amax + 1) * n];
        for a in 0..=amax {
            for j in 0..n {
                // reduce the product modulo n so large wavenumbers stay exact
                let t = 2.0 * PI * ((a * j) % n) as f64 / n as f64;
                cos[a * n + j] = t.cos();
                sin[a * n + j] = t.sin();
            }
        }
        let modes = table
            .modes()
            .iter()
            .map(|m| match m.label {
                ModeLabel::Torus { n, parity } => (n, parity),
                ModeLabel::Sphere { .. } => unreachable!(),
            })
            .collect();
        let w = 1.0 / (n * n) as f64;
        Transform {
            table: table.id(),
            degree,
            weights: vec![w; n * n],
            backend: Backend::Torus(TorusGrid {
                n,
                modes,
                cos,
                sin,
                amax,
            }),
        }
    }

    fn sphere(table: &SpectrumTable, degree: usize) -> Self {
        let lmax = table.max_degree() as usize;
        let n_lat = degree / 2 + 1;
        let n_lon = degree + 1;
        let gl = gauss_legendre(n_lat);
        let mut leg = Vec::new();
        let mut leg_d = Vec::new();
        let mut leg_dd = Vec::new();
        let mut sin_theta = Vec::with_capacity(n_lat);
        let mut cot_theta = Vec::with_capacity(n_lat);
        for &x in &gl.nodes {
            let ring = legendre_ring(lmax, x);
            leg.extend_from_slice(&ring.value);
            leg_d.extend_from_slice(&ring.d_theta);
            leg_dd.extend_from_slice(&ring.d2_theta);
            let s = (1.0 - x * x).sqrt();
            sin_theta.push(s);
            cot_theta.push(x / s);
        }
        let nm = 2 * lmax + 1;
        let mut trig = vec![0.0; nm * n_lon];
        let mut trig_d = vec![0.0; nm * n_lon];
        for mi in 0..nm {
            let m = mi as i32 - lmax as i32;
            for k in 0..n_lon {
                let phi = 2.0 * PI * k as f64 / n_lon as f64;
                trig[mi * n_lon + k] = trig_factor(m, phi);
                trig_d[mi * n_lon + k] = trig_factor_deriv(m, phi);
            }
        }
        let dphi = 2.0 * PI / n_lon as f64;
        let mut weights = Vec::with_capacity(n_lat * n_lon);
        for &w in &gl.weights {
            weights.extend(std::iter::repeat_n(w * dphi, n_lon));
        }
        Transform {
            table: table.id(),
            degree,
            weights,
            backend: Backend::Sphere(SphereGrid {
                lmax,
                n_lat,
                n_lon,
                sin_theta,
                cot_theta,
                lat_weights: gl.weights,
                leg,
                leg_d,
                leg_dd,
                trig,
                trig_d,
            }),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn table_id(&self) -> TableId {
        self.table
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    /// Quadrature weights, summing to the surface area.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// `∫ f g`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// Grid coordinates: `(x, y)` on the torus, `(θ, φ)` on the sphere.
    pub fn points(&self) -> Vec<[f64; 2]> {
        match &self.backend {
            Backend::Torus(g) => {
                let mut out = Vec::with_capacity(g.n * g.n);
                for i in 0..g.n {
                    for j in 0..g.n {
                        out.push([i as f64 / g.n as f64, j as f64 / g.n as f64]);
                    }
                }
                out
            }
            Backend::Sphere(g) => {
                let mut out = Vec::with_capacity(g.n_lat * g.n_lon);
                for r in 0..g.n_lat {
                    let theta = g.sin_theta[r].atan2(g.cot_theta[r] * g.sin_theta[r]);
                    for k in 0..g.n_lon {
                        out.push([theta, 2.0 * PI * k as f64 / g.n_lon as f64]);
                    }
                }
                out
            }
        }
    }

    fn check_len(&self, coeffs: &[f64]) {
        assert_eq!(coeffs.len(), self.table.modes, "coefficient vector does not match table");
    }

    /// Field values on the grid.
    pub fn synth(&self, coeffs: &[f64]) -> Vec<f64> {
        self.check_len(coeffs);
        match &self.backend {
            Backend::Torus(g) => g.synth(coeffs, false).value,
            Backend::Sphere(g) => g.synth(coeffs, false).value,
        }
    }

    /// Field values and frame gradient on the grid.
    pub fn synth_grad(&self, coeffs: &[f64]) -> GridGrad {
        self.check_len(coeffs);
        match &self.backend {
            Backend::Torus(g) => g.synth(coeffs, true),
            Backend::Sphere(g) => g.synth(coeffs, true),
        }
    }

    /// Frame components of the covariant Hessian.
    pub fn synth_hessian(&self, coeffs: &[f64]) -> GridHessian {
        self.check_len(coeffs);
        match &self.backend {
            Backend::Torus(g) => g.hessian(coeffs),
            Backend::Sphere(g) => g.hessian(coeffs),
        }
    }

    /// `J(ψ, ω) = ⟨curl ψ, ∇ω⟩` on the grid, with `curl ψ = (∂₂ψ, −∂₁ψ)`.
    pub fn jacobian(&self, psi: &GridGrad, omega: &GridGrad) -> Vec<f64> {
        psi.d2
            .iter()
            .zip(&psi.d1)
            .zip(omega.d1.iter().zip(&omega.d2))
            .map(|((p2, p1), (w1, w2))| p2 * w1 - p1 * w2)
            .collect()
    }

    /// L² projection of grid values onto every table mode.
    pub fn analyze(&self, values: &[f64]) -> Vec<f64> {
        let all: Vec<ModeId> = (0..self.table.modes).collect();
        self.analyze_onto(values, &all)
    }

    /// L² projection of grid values onto the listed modes (in the given order).
    pub fn analyze_onto(&self, values: &[f64], modes: &[ModeId]) -> Vec<f64> {
        assert_eq!(values.len(), self.n_points());
        match &self.backend {
            Backend::Torus(g) => g.analyze(values, modes, self.weights[0]),
            Backend::Sphere(g) => g.analyze(values, modes),
        }
    }
}

impl TorusGrid {
    /// `(cos, sin)` of `2π a j / n` for signed `a`.
    #[inline]
    fn cs(&self, a: i32, j: usize) -> (f64, f64) {
        let idx = a.unsigned_abs() as usize * self.n + j;
        let s = self.sin[idx];
        (self.cos[idx], if a < 0 { -s } else { s })
    }

    fn synth(&self, coeffs: &[f64], grad: bool) -> GridGrad {
        let n = self.n;
        debug_assert!(self.amax < usize::MAX);
        let mut value = vec![0.0; n * n];
        let (mut d1, mut d2) = if grad {
            (vec![0.0; n * n], vec![0.0; n * n])
        } else {
            (Vec::new(), Vec::new())
        };
        for (id, &(nv, parity)) in self.modes.iter().enumerate() {
            let c = coeffs[id];
            if c == 0.0 {
                continue;
            }
            if nv == [0, 0] {
                value.iter_mut().for_each(|v| *v += c);
                continue;
            }
            let amp = SQRT_2 * c;
            let k1 = 2.0 * PI * nv[0] as f64;
            let k2 = 2.0 * PI * nv[1] as f64;
            for i in 0..n {
                let (ca, sa) = self.cs(nv[0], i);
                for j in 0..n {
                    let (cb, sb) = self.cs(nv[1], j);
                    let cosv = ca * cb - sa * sb;
                    let sinv = sa * cb + ca * sb;
                    let p = i * n + j;
                    let (f, df) = match parity {
                        Parity::Cos => (cosv, -sinv),
                        Parity::Sin => (sinv, cosv),
                    };
                    value[p] += amp * f;
                    if grad {
                        d1[p] += amp * k1 * df;
                        d2[p] += amp * k2 * df;
                    }
                }
            }
        }
        GridGrad { value, d1, d2 }
    }

    fn hessian(&self, coeffs: &[f64]) -> GridHessian {
        let n = self.n;
        let mut h11 = vec![0.0; n * n];
        let mut h12 = vec![0.0; n * n];
        let mut h22 = vec![0.0; n * n];
        for (id, &(nv, parity)) in self.modes.iter().enumerate() {
            let c = coeffs[id];
            if c == 0.0 || nv == [0, 0] {
                continue;
            }
            let amp = SQRT_2 * c;
            let k1 = 2.0 * PI * nv[0] as f64;
            let k2 = 2.0 * PI * nv[1] as f64;
            for i in 0..n {
                let (ca, sa) = self.cs(nv[0], i);
                for j in 0..n {
                    let (cb, sb) = self.cs(nv[1], j);
                    let f = match parity {
                        Parity::Cos => ca * cb - sa * sb,
                        Parity::Sin => sa * cb + ca * sb,
                    };
                    let p = i * n + j;
                    h11[p] -= amp * k1 * k1 * f;
                    h12[p] -= amp * k1 * k2 * f;
                    h22[p] -= amp * k2 * k2 * f;
                }
            }
        }
        GridHessian { h11, h12, h22 }
    }

    fn analyze(&self, values: &[f64], modes: &[ModeId], w: f64) -> Vec<f64> {
        let n = self.n;
        modes
            .iter()
            .map(|&id| {
                let (nv, parity) = self.modes[id];
                if nv == [0, 0] {
                    return values.iter().sum::<f64>() * w;
                }
                let mut acc = 0.0;
                for i in 0..n {
                    let (ca, sa) = self.cs(nv[0], i);
                    let row = &values[i * n..(i + 1) * n];
                    for (j, v) in row.iter().enumerate() {
                        let (cb, sb) = self.cs(nv[1], j);
                        let f = match parity {
                            Parity::Cos => ca * cb - sa * sb,
                            Parity::Sin => sa * cb + ca * sb,
                        };
                        acc += v * f;
                    }
                }
                SQRT_2 * acc * w
            })
            .collect()
    }
}

impl SphereGrid {
    #[inline]
    fn mode_lm(id: ModeId) -> (usize, i32) {
        let l = (id as f64).sqrt() as usize;
        let l = if (l + 1) * (l + 1) <= id { l + 1 } else if l * l > id { l - 1 } else { l };
        (l, id as i32 - (l * l + l) as i32)
    }

    fn ring_len(&self) -> usize {
        crate::quadrature::lm_table_len(self.lmax)
    }

    /// Per-ring longitude coefficients `a_m = Σ_l c_lm λ_l^m` and the θ-derivative analogues.
    fn ring_coeffs(&self, coeffs: &[f64], r: usize, order: usize) -> [Vec<f64>; 3] {
        let nm = 2 * self.lmax + 1;
        let mut a = vec![0.0; nm];
        let mut b = if order >= 1 { vec![0.0; nm] } else { Vec::new() };
        let mut c = if order >= 2 { vec![0.0; nm] } else { Vec::new() };
        let base = r * self.ring_len();
        let n_modes = coeffs.len();
        for l in 0..=self.lmax {
            let row = l * l + l;
            for m in -(l as i32)..=(l as i32) {
                let id = (row as i32 + m) as usize;
                if id >= n_modes {
                    continue;
                }
                let cf = coeffs[id];
                if cf == 0.0 {
                    continue;
                }
                let li = base + lm_index(l, m.unsigned_abs() as usize);
                let mi = (m + self.lmax as i32) as usize;
                a[mi] += cf * self.leg[li];
                if order >= 1 {
                    b[mi] += cf * self.leg_d[li];
                }
                if order >= 2 {
                    c[mi] += cf * self.leg_dd[li];
                }
            }
        }
        [a, b, c]
    }

    fn synth(&self, coeffs: &[f64], grad: bool) -> GridGrad {
        let np = self.n_lat * self.n_lon;
        let nm = 2 * self.lmax + 1;
        let mut value = vec![0.0; np];
        let (mut d1, mut d2) = if grad {
            (vec![0.0; np], vec![0.0; np])
        } else {
            (Vec::new(), Vec::new())
        };
        for r in 0..self.n_lat {
            let [a, b, _] = self.ring_coeffs(coeffs, r, if grad { 1 } else { 0 });
            let off = r * self.n_lon;
            for mi in 0..nm {
                let tr = &self.trig[mi * self.n_lon..(mi + 1) * self.n_lon];
                let td = &self.trig_d[mi * self.n_lon..(mi + 1) * self.n_lon];
                if a[mi] != 0.0 {
                    for k in 0..self.n_lon {
                        value[off + k] += a[mi] * tr[k];
                    }
                    if grad {
                        let s = a[mi] / self.sin_theta[r];
                        for k in 0..self.n_lon {
                            d2[off + k] += s * td[k];
                        }
                    }
                }
                if grad && b[mi] != 0.0 {
                    for k in 0..self.n_lon {
                        d1[off + k] += b[mi] * tr[k];
                    }
                }
            }
        }
        GridGrad { value, d1, d2 }
    }

    fn hessian(&self, coeffs: &[f64]) -> GridHessian {
        let np = self.n_lat * self.n_lon;
        let nm = 2 * self.lmax + 1;
        let mut h11 = vec![0.0; np];
        let mut h12 = vec![0.0; np];
        let mut h22 = vec![0.0; np];
        for r in 0..self.n_lat {
            let [a, b, c] = self.ring_coeffs(coeffs, r, 2);
            let s = self.sin_theta[r];
            let cot = self.cot_theta[r];
            let off = r * self.n_lon;
            for mi in 0..nm {
                let m = mi as f64 - self.lmax as f64;
                let tr = &self.trig[mi * self.n_lon..(mi + 1) * self.n_lon];
                let td = &self.trig_d[mi * self.n_lon..(mi + 1) * self.n_lon];
                for k in 0..self.n_lon {
                    let f_tt = c[mi] * tr[k];
                    let f_tp = b[mi] * td[k];
                    let f_p = a[mi] * td[k];
                    let f_pp = -m * m * a[mi] * tr[k];
                    let f_t = b[mi] * tr[k];
                    h11[off + k] += f_tt;
                    h12[off + k] += (f_tp - cot * f_p) / s;
                    h22[off + k] += f_pp / (s * s) + cot * f_t;
                }
            }
        }
        GridHessian { h11, h12, h22 }
    }

    fn analyze(&self, values: &[f64], modes: &[ModeId]) -> Vec<f64> {
        let nm = 2 * self.lmax + 1;
        let dphi = 2.0 * PI / self.n_lon as f64;
        // ring DFT: F[r][m] = Σ_k f(r,k) T_m(φ_k) Δφ, for the orders actually requested
        let mut need = vec![false; nm];
        for &id in modes {
            let (_, m) = Self::mode_lm(id);
            need[(m + self.lmax as i32) as usize] = true;
        }
        let mut ring_dft = vec![0.0; self.n_lat * nm];
        for r in 0..self.n_lat {
            let row = &values[r * self.n_lon..(r + 1) * self.n_lon];
            for mi in 0..nm {
                if !need[mi] {
                    continue;
                }
                let tr = &self.trig[mi * self.n_lon..(mi + 1) * self.n_lon];
                let s: f64 = row.iter().zip(tr).map(|(v, t)| v * t).sum();
                ring_dft[r * nm + mi] = s * dphi;
            }
        }
        let rl = self.ring_len();
        modes
            .iter()
            .map(|&id| {
                let (l, m) = Self::mode_lm(id);
                let mi = (m + self.lmax as i32) as usize;
                let li = lm_index(l, m.unsigned_abs() as usize);
                (0..self.n_lat)
                    .map(|r| self.lat_weights[r] * self.leg[r * rl + li] * ring_dft[r * nm + mi])
                    .sum()
            })
            .collect()
    }
}
