//! Triad coupling tensors of the real eigenbasis.
//!
//! * `product(i,j,k) = ∫ e_i e_j e_k` is fully symmetric; only `i ≤ j ≤ k` is stored.
//! * `advection(i,j,k) = ∫ e_i J(e_j, e_k)` is totally antisymmetric (it is
//!   antisymmetric in `(j,k)` and `∫ a J(b,c) = ∫ b J(c,a)`), so only
//!   `i < j < k` is stored and every other ordering follows by permutation sign.
//! * `harmonic(h,j,k) = ∫ e_k ⟨H_h, ∇e_j⟩` is antisymmetric in `(j,k)` because
//!   harmonic fields are divergence free; only `j < k` is stored.
//!
//! Entries live in sorted coordinate lists, so lookups are binary searches and
//! the layout is independent of assembly order.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, legendre_ring, lm_index, lm_table_len};
use crate::spectrum::{ManifoldKind, ModeId, ModeLabel, Parity, SpectrumTable, TableId};

/// Entries whose magnitude falls below this are selection-rule zeros.
const DROP: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub idx: [u32; 3],
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriadTensor {
    table: TableId,
    quad_degree: usize,
    product: Vec<Entry>,
    advection: Vec<Entry>,
    harmonic: Vec<Entry>,
}

/// Quadrature degree used for sphere triads: `3 l_max + 2`.
pub fn default_quad_degree(table: &SpectrumTable) -> usize {
    match table.kind() {
        ManifoldKind::Sphere => 3 * table.max_degree() as usize + 2,
        ManifoldKind::Torus => 0,
    }
}

/// Assemble all nonzero triads among the modes of `table`.
pub fn build_triads(table: &SpectrumTable) -> TriadTensor {
    build_triads_with_degree(table, default_quad_degree(table))
        .expect("default quadrature degree is always sufficient")
}

/// As [`build_triads`] with an explicit sphere quadrature degree (ignored on the torus).
pub fn build_triads_with_degree(table: &SpectrumTable, quad_degree: usize) -> Result<TriadTensor> {
    match table.kind() {
        ManifoldKind::Torus => Ok(torus_triads(table)),
        ManifoldKind::Sphere => {
            let need = 3 * table.max_degree() as usize;
            if quad_degree < need {
                return Err(Error::Config(format!(
                    "sphere triads need quadrature degree ≥ {need}, got {quad_degree}"
                )));
            }
            Ok(sphere_triads(table, quad_degree))
        }
    }
}

fn sorted3(mut idx: [usize; 3]) -> ([usize; 3], f64) {
    // bubble sort with permutation parity
    let mut sign = 1.0;
    for _ in 0..2 {
        for p in 0..2 {
            if idx[p] > idx[p + 1] {
                idx.swap(p, p + 1);
                sign = -sign;
            }
        }
    }
    (idx, sign)
}

fn find(entries: &[Entry], key: [u32; 3]) -> f64 {
    entries
        .binary_search_by(|e| e.idx.cmp(&key))
        .map(|p| entries[p].value)
        .unwrap_or(0.0)
}

impl TriadTensor {
    /// Assemble from raw parts; entries are sorted and validated.
    pub fn from_parts(
        table: TableId,
        quad_degree: usize,
        mut product: Vec<Entry>,
        mut advection: Vec<Entry>,
        mut harmonic: Vec<Entry>,
    ) -> Result<Self> {
        for list in [&mut product, &mut advection, &mut harmonic] {
            list.sort_by_key(|e| e.idx);
            if list.windows(2).any(|w| w[0].idx == w[1].idx) {
                return Err(Error::Format("duplicate triad entry".into()));
            }
        }
        let n = table.modes as u32;
        if product.iter().any(|e| !(e.idx[0] <= e.idx[1] && e.idx[1] <= e.idx[2] && e.idx[2] < n))
            || advection.iter().any(|e| !(e.idx[0] < e.idx[1] && e.idx[1] < e.idx[2] && e.idx[2] < n))
            || harmonic.iter().any(|e| !(e.idx[1] < e.idx[2] && e.idx[2] < n))
        {
            return Err(Error::Format("triad entry outside canonical order".into()));
        }
        Ok(TriadTensor {
            table,
            quad_degree,
            product,
            advection,
            harmonic,
        })
    }

    pub fn table_id(&self) -> TableId {
        self.table
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
    }

    /// Canonical product entries `i ≤ j ≤ k`.
    pub fn product_entries(&self) -> &[Entry] {
        &self.product
    }

    /// Canonical advection entries `i < j < k`.
    pub fn advection_entries(&self) -> &[Entry] {
        &self.advection
    }

    /// Canonical harmonic entries `(h, j, k)` with `j < k`.
    pub fn harmonic_entries(&self) -> &[Entry] {
        &self.harmonic
    }

    pub fn nonzero_count(&self) -> usize {
        self.product.len() + self.advection.len() + self.harmonic.len()
    }

    pub fn product(&self, i: ModeId, j: ModeId, k: ModeId) -> f64 {
        let (s, _) = sorted3([i, j, k]);
        find(&self.product, [s[0] as u32, s[1] as u32, s[2] as u32])
    }

    /// `∫ e_i J(e_j, e_k)`.
    pub fn advection(&self, i: ModeId, j: ModeId, k: ModeId) -> f64 {
        if i == j || j == k || i == k {
            return 0.0;
        }
        let (s, sign) = sorted3([i, j, k]);
        sign * find(&self.advection, [s[0] as u32, s[1] as u32, s[2] as u32])
    }

    /// `∫ e_k ⟨H_h, ∇e_j⟩`.
    pub fn harmonic(&self, h: usize, j: ModeId, k: ModeId) -> f64 {
        if j == k {
            return 0.0;
        }
        let (a, b, sign) = if j < k { (j, k, 1.0) } else { (k, j, -1.0) };
        sign * find(&self.harmonic, [h as u32, a as u32, b as u32])
    }

    fn check(&self, table: TableId, len: usize) -> Result<()> {
        if table != self.table {
            return Err(Error::Assembly(
                "triad tensor was assembled for a different spectrum table".into(),
            ));
        }
        if len != self.table.modes {
            return Err(Error::Assembly(format!(
                "coefficient vector has {len} entries, tensor covers {}",
                self.table.modes
            )));
        }
        Ok(())
    }

    /// Adds the coefficients of `J(ψ, ω)` to `out`: `out_i += Σ_jk A(i,j,k) ψ_j ω_k`.
    pub fn add_jacobian(&self, table: TableId, psi: &[f64], omega: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(table, psi.len())?;
        self.check(table, omega.len())?;
        self.check(table, out.len())?;
        for e in &self.advection {
            let [a, b, c] = [e.idx[0] as usize, e.idx[1] as usize, e.idx[2] as usize];
            let v = e.value;
            out[a] += v * (psi[b] * omega[c] - psi[c] * omega[b]);
            out[b] += v * (psi[c] * omega[a] - psi[a] * omega[c]);
            out[c] += v * (psi[a] * omega[b] - psi[b] * omega[a]);
        }
        Ok(())
    }

    /// Adds the coefficients of `⟨Σ_h a_h H_h, ∇ω⟩` to `out`.
    pub fn add_harmonic_transport(&self, table: TableId, harmonic: &[f64], omega: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(table, omega.len())?;
        self.check(table, out.len())?;
        for e in &self.harmonic {
            let a = harmonic.get(e.idx[0] as usize).copied().unwrap_or(0.0);
            if a == 0.0 {
                continue;
            }
            let (j, k) = (e.idx[1] as usize, e.idx[2] as usize);
            // coefficient on e_k from ω_j, and on e_j from ω_k with the opposite sign
            out[k] += a * e.value * omega[j];
            out[j] -= a * e.value * omega[k];
        }
        Ok(())
    }

    /// Adds the coefficients of the product `f g` projected on retained modes.
    pub fn add_product(&self, table: TableId, f: &[f64], g: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(table, f.len())?;
        self.check(table, g.len())?;
        self.check(table, out.len())?;
        for e in &self.product {
            let [a, b, c] = [e.idx[0] as usize, e.idx[1] as usize, e.idx[2] as usize];
            let v = e.value;
            // distinct orderings of the multiset {a,b,c}
            let mut perms: Vec<[usize; 3]> = vec![
                [a, b, c],
                [a, c, b],
                [b, a, c],
                [b, c, a],
                [c, a, b],
                [c, b, a],
            ];
            perms.sort();
            perms.dedup();
            for [i, j, k] in perms {
                out[i] += v * f[j] * g[k];
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Torus: closed form from complex exponentials.

type Cx = (f64, f64);

fn cmul(a: Cx, b: Cx) -> Cx {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Expansion of a real torus mode into `c · e^{2πi p·x}` terms.
fn torus_expansion(n: [i32; 2], parity: Parity) -> Vec<(Cx, [i32; 2])> {
    if n == [0, 0] {
        return vec![((1.0, 0.0), [0, 0])];
    }
    let r = 1.0 / SQRT_2;
    let neg = [-n[0], -n[1]];
    match parity {
        Parity::Cos => vec![((r, 0.0), n), ((r, 0.0), neg)],
        // sin = -i (E_n - E_-n) / √2
        Parity::Sin => vec![((0.0, -r), n), ((0.0, r), neg)],
    }
}

fn torus_triads(table: &SpectrumTable) -> TriadTensor {
    let labels: Vec<([i32; 2], Parity)> = table
        .modes()
        .iter()
        .map(|m| match m.label {
            ModeLabel::Torus { n, parity } => (n, parity),
            ModeLabel::Sphere { .. } => unreachable!(),
        })
        .collect();
    let exps: Vec<_> = labels.iter().map(|&(n, p)| torus_expansion(n, p)).collect();
    let canonical = |p: [i32; 2]| -> [i32; 2] {
        if p[0] > 0 || (p[0] == 0 && p[1] >= 0) {
            p
        } else {
            [-p[0], -p[1]]
        }
    };
    let lookup = |p: [i32; 2], parity: Parity| -> Option<ModeId> {
        let q = canonical(p);
        let parity = if q == [0, 0] { Parity::Cos } else { parity };
        table.lookup(ModeLabel::Torus { n: q, parity })
    };

    let four_pi2 = 4.0 * PI * PI;
    let product_val = |i: usize, j: usize, k: usize| -> f64 {
        let mut acc = (0.0, 0.0);
        for &(ci, pi) in &exps[i] {
            for &(cj, pj) in &exps[j] {
                for &(ck, pk) in &exps[k] {
                    if pi[0] + pj[0] + pk[0] == 0 && pi[1] + pj[1] + pk[1] == 0 {
                        let c = cmul(cmul(ci, cj), ck);
                        acc.0 += c.0;
                        acc.1 += c.1;
                    }
                }
            }
        }
        acc.0
    };
    // J(E_b, E_c) = 4π² (b × c) E_{b+c}
    let advection_val = |i: usize, j: usize, k: usize| -> f64 {
        let mut acc = (0.0, 0.0);
        for &(ci, pi) in &exps[i] {
            for &(cj, pj) in &exps[j] {
                for &(ck, pk) in &exps[k] {
                    if pi[0] + pj[0] + pk[0] == 0 && pi[1] + pj[1] + pk[1] == 0 {
                        let cross = (pj[0] * pk[1] - pj[1] * pk[0]) as f64;
                        if cross == 0.0 {
                            continue;
                        }
                        let c = cmul(cmul(ci, cj), ck);
                        acc.0 += four_pi2 * cross * c.0;
                        acc.1 += four_pi2 * cross * c.1;
                    }
                }
            }
        }
        acc.0
    };

    let n = labels.len();
    let mut product = Vec::new();
    let mut advection = Vec::new();
    let mut seen_p = std::collections::BTreeSet::new();
    let mut seen_a = std::collections::BTreeSet::new();
    for j in 0..n {
        for k in j..n {
            let (nj, _) = labels[j];
            let (nk, _) = labels[k];
            for target in [
                [nj[0] + nk[0], nj[1] + nk[1]],
                [nj[0] - nk[0], nj[1] - nk[1]],
            ] {
                for parity in [Parity::Cos, Parity::Sin] {
                    let Some(i) = lookup(target, parity) else { continue };
                    let (s, _) = sorted3([i, j, k]);
                    if seen_p.insert(s) {
                        let v = product_val(s[0], s[1], s[2]);
                        if v.abs() > DROP {
                            product.push(Entry {
                                idx: [s[0] as u32, s[1] as u32, s[2] as u32],
                                value: v,
                            });
                        }
                    }
                    if s[0] < s[1] && s[1] < s[2] && seen_a.insert(s) {
                        let v = advection_val(s[0], s[1], s[2]);
                        if v.abs() > DROP * four_pi2 {
                            advection.push(Entry {
                                idx: [s[0] as u32, s[1] as u32, s[2] as u32],
                                value: v,
                            });
                        }
                    }
                }
            }
        }
    }

    // ∂_h √2cos(2πn·x) = -2π n_h √2 sin(2πn·x) and ∂_h √2sin = 2π n_h √2cos
    let mut harmonic = Vec::new();
    for (j, &(nv, parity)) in labels.iter().enumerate() {
        if nv == [0, 0] || parity != Parity::Cos {
            continue;
        }
        let k = table
            .lookup(ModeLabel::Torus { n: nv, parity: Parity::Sin })
            .expect("cos and sin partners are retained together");
        for h in 0..2 {
            let v = -2.0 * PI * nv[h] as f64;
            if v != 0.0 {
                // B(h, j=cos, k=sin) = ∫ sin ∂_h cos = -2π n_h
                harmonic.push(Entry {
                    idx: [h as u32, j.min(k) as u32, j.max(k) as u32],
                    value: if j < k { v } else { -v },
                });
            }
        }
    }

    TriadTensor::from_parts(table.id(), 0, product, advection, harmonic)
        .expect("torus assembly yields canonical entries")
}

// ---------------------------------------------------------------------------
// Sphere: Gauss–Legendre in latitude, closed-form longitude integrals.

/// Exponential expansion of `T_m` (and of `T_m'` when `deriv`).
fn trig_expansion(m: i32, deriv: bool) -> Vec<(Cx, i32)> {
    let r = 1.0 / SQRT_2;
    let base: Vec<(Cx, i32)> = match m {
        0 => vec![((1.0, 0.0), 0)],
        m if m > 0 => vec![((r, 0.0), m), ((r, 0.0), -m)],
        m => vec![((0.0, -r), -m), ((0.0, r), m)],
    };
    if deriv {
        // d/dφ e^{ipφ} = i p e^{ipφ}
        base.into_iter()
            .map(|(c, p)| (cmul(c, (0.0, p as f64)), p))
            .filter(|&(c, _)| c != (0.0, 0.0))
            .collect()
    } else {
        base
    }
}

/// `∫_0^{2π} T_a T_b T_c dφ` with optional derivatives on factors.
fn lon_integral(m: [i32; 3], deriv: [bool; 3]) -> f64 {
    let ea = trig_expansion(m[0], deriv[0]);
    let eb = trig_expansion(m[1], deriv[1]);
    let ec = trig_expansion(m[2], deriv[2]);
    let mut acc = (0.0, 0.0);
    for &(ca, pa) in &ea {
        for &(cb, pb) in &eb {
            for &(cc, pc) in &ec {
                if pa + pb + pc == 0 {
                    let c = cmul(cmul(ca, cb), cc);
                    acc.0 += c.0;
                    acc.1 += c.1;
                }
            }
        }
    }
    2.0 * PI * acc.0
}

struct LatTables {
    weights: Vec<f64>,
    /// Per node, packed `λ_l^m` and `dλ_l^m/dx`.
    value: Vec<Vec<f64>>,
    d_x: Vec<Vec<f64>>,
}

impl LatTables {
    fn new(lmax: usize, degree: usize) -> Self {
        let gl = gauss_legendre(degree / 2 + 1);
        let mut value = Vec::with_capacity(gl.nodes.len());
        let mut d_x = Vec::with_capacity(gl.nodes.len());
        for &x in &gl.nodes {
            let ring = legendre_ring(lmax, x);
            let s = (1.0 - x * x).sqrt();
            d_x.push(ring.d_theta.iter().map(|d| -d / s).collect());
            value.push(ring.value);
        }
        LatTables {
            weights: gl.weights,
            value,
            d_x,
        }
    }

    fn integral(&self, lm: [(usize, usize); 3], deriv: [bool; 3]) -> f64 {
        let idx = lm.map(|(l, m)| lm_index(l, m));
        let mut acc = 0.0;
        for (n, w) in self.weights.iter().enumerate() {
            let mut p = *w;
            for f in 0..3 {
                p *= if deriv[f] { self.d_x[n][idx[f]] } else { self.value[n][idx[f]] };
            }
            acc += p;
        }
        acc
    }
}

fn sphere_triads(table: &SpectrumTable, degree: usize) -> TriadTensor {
    let lmax = table.max_degree() as usize;
    let lat = LatTables::new(lmax, degree);
    debug_assert_eq!(lat.value[0].len(), lm_table_len(lmax));
    let idx_of = |l: usize, m: i32| -> usize { ((l * l + l) as i64 + m as i64) as usize };

    // one task per smallest degree; results concatenated in order
    let chunks: Vec<(Vec<Entry>, Vec<Entry>)> = (0..=lmax)
        .into_par_iter()
        .map(|li| {
            let mut product = Vec::new();
            let mut advection = Vec::new();
            for lj in li..=lmax {
                for lk in lj..=lmax.min(li + lj) {
                    let even = (li + lj + lk) % 2 == 0;
                    for mj in -(lj as i32)..=(lj as i32) {
                        for mk in -(lk as i32)..=(lk as i32) {
                            let (aj, ak) = (mj.abs(), mk.abs());
                            let mut cands = vec![aj + ak, (aj - ak).abs()];
                            cands.dedup();
                            for am in cands {
                                if am as usize > li {
                                    continue;
                                }
                                let signs: &[i32] = if am == 0 { &[1] } else { &[1, -1] };
                                for &sg in signs {
                                    let mi = sg * am;
                                    let (i, j, k) = (idx_of(li, mi), idx_of(lj, mj), idx_of(lk, mk));
                                    if !(i <= j && j <= k) {
                                        continue;
                                    }
                                    let lm = [
                                        (li, am as usize),
                                        (lj, aj as usize),
                                        (lk, ak as usize),
                                    ];
                                    let ms = [mi, mj, mk];
                                    if even {
                                        let lon = lon_integral(ms, [false; 3]);
                                        if lon.abs() > DROP {
                                            let v = lon * lat.integral(lm, [false; 3]);
                                            if v.abs() > DROP {
                                                product.push(Entry {
                                                    idx: [i as u32, j as u32, k as u32],
                                                    value: v,
                                                });
                                            }
                                        }
                                    } else if i < j && j < k {
                                        // ∫ e_i (∂_x e_j ∂_φ e_k − ∂_φ e_j ∂_x e_k) dx dφ
                                        let lon1 = lon_integral(ms, [false, false, true]);
                                        let lon2 = lon_integral(ms, [false, true, false]);
                                        let mut v = 0.0;
                                        if lon1.abs() > DROP {
                                            v += lon1 * lat.integral(lm, [false, true, false]);
                                        }
                                        if lon2.abs() > DROP {
                                            v -= lon2 * lat.integral(lm, [false, false, true]);
                                        }
                                        if v.abs() > DROP {
                                            advection.push(Entry {
                                                idx: [i as u32, j as u32, k as u32],
                                                value: v,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (product, advection)
        })
        .collect();
    let mut product = Vec::new();
    let mut advection = Vec::new();
    for (p, a) in chunks {
        product.extend(p);
        advection.extend(a);
    }
    TriadTensor::from_parts(table.id(), degree, product, advection, Vec::new())
        .expect("sphere assembly yields canonical entries")
}
