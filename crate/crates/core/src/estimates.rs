//! Multilinear eigenfunction estimates measured by exact quadrature.
//!
//! * bilinear: `‖(∇ᵃP_{l₁}f)(∇ᵇ(−Δ)^{−c}P_{l₂}g)‖₂` against
//!   `min(l₁,l₂)^{1/4} l₁ᵃ l₂^{b−2c} ‖P_{l₁}f‖₂ ‖P_{l₂}g‖₂`;
//! * trilinear: `|∫ ∏ⱼ ∇^{aⱼ}(−Δ)^{−bⱼ}P_{lⱼ}fⱼ|` with `l₁` pushed past `l₂ + K l₃ + 2`;
//! * modulation invariance of shell norms;
//! * the three-function integration-by-parts identity
//!   `n₁² ∫e₁e₂e₃ = (n₂²+n₃²) ∫e₁e₂e₃ − 2 ∫e₁⟨∇e₂,∇e₃⟩`.
//!
//! Products of derivatives are contracted as follows: equal orders pair
//! fully (`⟨∇f,∇g⟩`), a scalar times a tensor keeps the tensor and is
//! measured with its pointwise Frobenius norm.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{eigenspace_project, shell_project, SpectralField};
use crate::spectrum::{ManifoldKind, ModeId, ModeLabel, Parity, ShellKey, SpectrumTable};
use crate::transform::Transform;
use crate::trapping::least_squares;

/// Which `(l₁, l₂)` cells a bilinear sweep visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// `l₁ = l₂`.
    Equal,
    /// `l₁ ≤ l₂`.
    Upper,
    /// Every combination.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearConfig {
    pub l1: Vec<ShellKey>,
    pub l2: Vec<ShellKey>,
    pub pairs: PairSelection,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    /// Trial fields per cell (structured candidates included).
    pub trials: usize,
    /// Start each cell with the sectoral/zonal (sphere) or single-mode/coherent (torus) candidates.
    pub structured: bool,
    pub seed: u64,
    /// Quadrature degree; the smallest exact degree when absent.
    pub quad_degree: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCell {
    pub l1: ShellKey,
    pub l2: ShellKey,
    pub k1: f64,
    pub k2: f64,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub trials: usize,
    /// Normalized ratio, max and mean over trials.
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// `‖product‖₂ / (‖P_{l₁}f‖₂ ‖P_{l₂}g‖₂)`, max and mean over trials.
    pub max_raw: f64,
    pub mean_raw: f64,
}

/// Sphere degree or torus `|n|∞` bound of the modes in shell `k`.
pub fn shell_degree(table: &SpectrumTable, k: ShellKey) -> usize {
    table
        .shell_modes(k)
        .iter()
        .map(|&i| match table.mode(i).label {
            ModeLabel::Sphere { l, .. } => l as usize,
            ModeLabel::Torus { n, .. } => n[0].unsigned_abs().max(n[1].unsigned_abs()) as usize,
        })
        .max()
        .unwrap_or(0)
}

fn check_shell(table: &SpectrumTable, k: ShellKey) -> Result<()> {
    if table.shell_modes(k).is_empty() {
        return Err(Error::Config(format!("shell {k} is empty or beyond the cutoff")));
    }
    Ok(())
}

fn rng_for(seed: u64, parts: [u32; 4]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    for (i, p) in parts.iter().enumerate() {
        key[8 + 4 * i..12 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Unit-norm field on shell `k` with Gaussian coefficients.
pub fn random_shell_field(table: &SpectrumTable, k: ShellKey, rng: &mut impl Rng) -> SpectralField {
    let mut f = SpectralField::zeros(table);
    let modes = table.shell_modes(k);
    let mut v: Vec<f64> = modes.iter().map(|_| StandardNormal.sample(&mut *rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= n;
    }
    for (&i, x) in modes.iter().zip(v) {
        f.coeffs_mut()[i] = x;
    }
    f
}

/// Structured candidate `which ∈ {0, 1}` on shell `k`: sectoral / zonal harmonics of
/// the top degree on the sphere, the first mode / the sum of the cosines on the torus.
pub fn structured_shell_field(table: &SpectrumTable, k: ShellKey, which: usize) -> SpectralField {
    let modes = table.shell_modes(k);
    let mut f = SpectralField::zeros(table);
    let pick: Vec<ModeId> = match table.kind() {
        ManifoldKind::Sphere => {
            let l = shell_degree(table, k) as u32;
            let m = if which == 0 { l as i32 } else { 0 };
            vec![table.lookup(ModeLabel::Sphere { l, m }).expect("degree present in shell")]
        }
        ManifoldKind::Torus => {
            if which == 0 {
                vec![modes[0]]
            } else {
                modes
                    .iter()
                    .copied()
                    .filter(|&i| matches!(table.mode(i).label, ModeLabel::Torus { parity: Parity::Cos, .. }))
                    .collect()
            }
        }
    };
    let w = 1.0 / (pick.len() as f64).sqrt();
    for i in pick {
        f.coeffs_mut()[i] = w;
    }
    f
}

/// Pointwise-squared product of `∇ᵃf` and `∇ᵇg` on the grid.
fn product_sq(tr: &Transform, f: &[f64], g: &[f64], a: u32, b: u32) -> Result<Vec<f64>> {
    let sq_grad = |x: &[f64]| {
        let d = tr.synth_grad(x);
        d.d1.iter().zip(&d.d2).map(|(p, q)| p * p + q * q).collect::<Vec<_>>()
    };
    let sq_hess = |x: &[f64]| {
        let h = tr.synth_hessian(x);
        (0..h.h11.len())
            .map(|i| h.h11[i] * h.h11[i] + 2.0 * h.h12[i] * h.h12[i] + h.h22[i] * h.h22[i])
            .collect::<Vec<_>>()
    };
    let sq_value = |x: &[f64]| tr.synth(x).iter().map(|v| v * v).collect::<Vec<_>>();
    let out = match (a, b) {
        (0, 0) => {
            let (u, v) = (tr.synth(f), tr.synth(g));
            u.iter().zip(&v).map(|(p, q)| (p * q) * (p * q)).collect()
        }
        (1, 1) => {
            let (u, v) = (tr.synth_grad(f), tr.synth_grad(g));
            (0..u.d1.len())
                .map(|i| {
                    let s = u.d1[i] * v.d1[i] + u.d2[i] * v.d2[i];
                    s * s
                })
                .collect()
        }
        (1, 0) => mul(&sq_grad(f), &sq_value(g)),
        (0, 1) => mul(&sq_value(f), &sq_grad(g)),
        (2, 0) => mul(&sq_hess(f), &sq_value(g)),
        (0, 2) => mul(&sq_value(f), &sq_hess(g)),
        _ => {
            return Err(Error::Config(format!(
                "derivative orders a = {a}, b = {b} are not supported (need a + b ≤ 2)"
            )))
        }
    };
    Ok(out)
}

fn mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p * q).collect()
}

/// Measured bilinear quantity for one pair of fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearSample {
    /// `‖(∇ᵃP_{l₁}f)(∇ᵇ(−Δ)^{−c}P_{l₂}g)‖₂`.
    pub product_norm: f64,
    /// `product_norm / (‖P_{l₁}f‖₂ ‖P_{l₂}g‖₂)`.
    pub raw: f64,
    /// `product_norm / (min(l₁,l₂)^{1/4} l₁ᵃ l₂^{b−2c} ‖P_{l₁}f‖₂ ‖P_{l₂}g‖₂)`.
    pub ratio: f64,
}

/// Project `f`, `g` on `l1`, `l2`, apply `(−Δ)^{−c}` to `g` and measure the product.
pub fn bilinear_sample(
    table: &SpectrumTable,
    tr: &Transform,
    f: &SpectralField,
    g: &SpectralField,
    l1: ShellKey,
    l2: ShellKey,
    orders: (u32, u32, u32),
) -> Result<BilinearSample> {
    let (a, b, c) = orders;
    let need = 2 * (shell_degree(table, l1) + shell_degree(table, l2)) + 2 * (a + b) as usize;
    if tr.degree() < need {
        return Err(Error::Config(format!(
            "quadrature degree {} is below {need} required for these shells and orders",
            tr.degree()
        )));
    }
    let pf = shell_project(table, f, l1)?;
    let pg = shell_project(table, g, l2)?;
    let nf = pf.l2_norm();
    let ng = pg.l2_norm();
    let mut gc = pg.into_coeffs();
    for (i, x) in gc.iter_mut().enumerate() {
        let s2 = table.mode(i).eigenvalue_sq();
        if *x != 0.0 {
            *x /= s2.powi(c as i32);
        }
    }
    let sq = product_sq(tr, pf.coeffs(), &gc, a, b)?;
    let product_norm = tr.integrate(&sq).max(0.0).sqrt();
    let (k1, k2) = (table.shell_value(l1), table.shell_value(l2));
    let denom = nf * ng;
    let scale = k1.min(k2).powf(0.25) * k1.powi(a as i32) * k2.powf(b as f64 - 2.0 * c as f64);
    let raw = if denom > 0.0 { product_norm / denom } else { 0.0 };
    Ok(BilinearSample {
        product_norm,
        raw,
        ratio: raw / scale,
    })
}

fn bilinear_cells(cfg: &BilinearConfig) -> Vec<(ShellKey, ShellKey)> {
    let mut cells = Vec::new();
    for &l1 in &cfg.l1 {
        for &l2 in &cfg.l2 {
            let keep = match cfg.pairs {
                PairSelection::Equal => l1 == l2,
                PairSelection::Upper => l1 <= l2,
                PairSelection::All => true,
            };
            if keep {
                cells.push((l1, l2));
            }
        }
    }
    cells
}

/// Quadrature degree exact for every cell of `cfg`.
pub fn bilinear_degree(table: &SpectrumTable, cfg: &BilinearConfig) -> usize {
    let d1 = cfg.l1.iter().map(|&k| shell_degree(table, k)).max().unwrap_or(0);
    let d2 = cfg.l2.iter().map(|&k| shell_degree(table, k)).max().unwrap_or(0);
    (2 * (d1 + d2) + 2 * (cfg.a + cfg.b) as usize).max(table.max_degree() as usize)
}

/// Max and mean ratios per cell over seeded trial fields.
pub fn bilinear_sweep(table: &SpectrumTable, cfg: &BilinearConfig) -> Result<Vec<EstimateCell>> {
    if cfg.trials == 0 {
        return Err(Error::Config("bilinear sweep needs at least one trial".into()));
    }
    if cfg.a + cfg.b > 2 {
        return Err(Error::Config(format!("a + b = {} exceeds 2", cfg.a + cfg.b)));
    }
    for &k in cfg.l1.iter().chain(&cfg.l2) {
        check_shell(table, k)?;
    }
    let need = bilinear_degree(table, cfg);
    let degree = match cfg.quad_degree {
        Some(d) if d < need => {
            return Err(Error::Config(format!(
                "quadrature degree {d} is below {need} required for these shells and orders"
            )))
        }
        Some(d) => d,
        None => need,
    };
    let tr = Transform::new(table, degree)?;
    let cells = bilinear_cells(cfg);
    cells
        .par_iter()
        .map(|&(l1, l2)| {
            let mut max_ratio: f64 = 0.0;
            let mut max_raw: f64 = 0.0;
            let (mut sum_ratio, mut sum_raw) = (0.0, 0.0);
            for trial in 0..cfg.trials {
                let (f, g) = if cfg.structured && trial < 2 {
                    (structured_shell_field(table, l1, trial), structured_shell_field(table, l2, trial))
                } else {
                    let mut rng = rng_for(cfg.seed, [l1.0, l2.0, trial as u32, 0]);
                    (random_shell_field(table, l1, &mut rng), random_shell_field(table, l2, &mut rng))
                };
                let s = bilinear_sample(table, &tr, &f, &g, l1, l2, (cfg.a, cfg.b, cfg.c))?;
                max_ratio = max_ratio.max(s.ratio);
                max_raw = max_raw.max(s.raw);
                sum_ratio += s.ratio;
                sum_raw += s.raw;
            }
            let n = cfg.trials as f64;
            Ok(EstimateCell {
                l1,
                l2,
                k1: table.shell_value(l1),
                k2: table.shell_value(l2),
                a: cfg.a,
                b: cfg.b,
                c: cfg.c,
                trials: cfg.trials,
                max_ratio,
                mean_ratio: sum_ratio / n,
                max_raw,
                mean_raw: sum_raw / n,
            })
        })
        .collect()
}

/// Log-log slopes of the equal-shell cells against the shell value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearFit {
    pub cells: usize,
    /// Slope of `log max_ratio` (the `1/4` power divided out).
    pub ratio_slope: f64,
    /// Slope of `log max_raw`.
    pub raw_slope: f64,
}

pub fn bilinear_fit(cells: &[EstimateCell]) -> Result<BilinearFit> {
    let diag: Vec<&EstimateCell> = cells.iter().filter(|c| c.l1 == c.l2 && c.max_raw > 0.0).collect();
    if diag.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs two equal-shell cells, got {}",
            diag.len()
        )));
    }
    let ratio: Vec<(f64, f64)> = diag.iter().map(|c| (c.k1.ln(), c.max_ratio.ln())).collect();
    let raw: Vec<(f64, f64)> = diag.iter().map(|c| (c.k1.ln(), c.max_raw.ln())).collect();
    Ok(BilinearFit {
        cells: diag.len(),
        ratio_slope: least_squares(&ratio).0,
        raw_slope: least_squares(&raw).0,
    })
}

pub fn write_bilinear_csv(w: &mut impl Write, cells: &[EstimateCell]) -> Result<()> {
    writeln!(w, "l1,l2,k1,k2,a,b,c,trials,max_ratio,mean_ratio,max_raw,mean_raw")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            c.l1.0, c.l2.0, c.k1, c.k2, c.a, c.b, c.c, c.trials, c.max_ratio, c.mean_ratio, c.max_raw, c.mean_raw
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrilinearConfig {
    pub l2: ShellKey,
    pub l3: ShellKey,
    /// Separation factors `K`; `l₁` is the first shell at or above `l₂ + K l₃ + 2`.
    pub k_values: Vec<f64>,
    /// Derivative orders `aⱼ`: all zero, or exactly two equal to one.
    pub a: [u32; 3],
    /// Inverse Laplacian powers `bⱼ`.
    pub b: [u32; 3],
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrilinearPoint {
    pub k_sep: f64,
    pub l1: ShellKey,
    pub l2: ShellKey,
    pub l3: ShellKey,
    /// Max over trials of `|∫ ∏|` for unit-norm shell fields.
    pub max_abs: f64,
    /// `max_abs / (l₃^{1/4} ∏ lⱼ^{aⱼ−2bⱼ})`.
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrilinearCurve {
    pub points: Vec<TrilinearPoint>,
    /// The same measurement with `l₁` inside the triangle range, for scale.
    pub baseline: TrilinearPoint,
}

/// `∫ ∏ⱼ ∇^{aⱼ}(−Δ)^{−bⱼ} fⱼ` for fields already supported on their shells.
pub fn trilinear_integral(table: &SpectrumTable, tr: &Transform, fields: [&[f64]; 3], a: [u32; 3], b: [u32; 3]) -> Result<f64> {
    let prep: Vec<Vec<f64>> = fields
        .iter()
        .zip(b)
        .map(|(f, bj)| {
            f.iter()
                .enumerate()
                .map(|(i, &x)| if x == 0.0 { 0.0 } else { x / table.mode(i).eigenvalue_sq().powi(bj as i32) })
                .collect()
        })
        .collect();
    let ones: Vec<usize> = (0..3).filter(|&j| a[j] == 1).collect();
    if a.iter().any(|&x| x > 1) || !(ones.is_empty() || ones.len() == 2) {
        return Err(Error::Config(format!(
            "derivative orders {a:?}: need all zero or exactly two ones"
        )));
    }
    if ones.is_empty() {
        let v: Vec<Vec<f64>> = prep.iter().map(|f| tr.synth(f)).collect();
        let p: Vec<f64> = (0..v[0].len()).map(|i| v[0][i] * v[1][i] * v[2][i]).collect();
        return Ok(tr.integrate(&p));
    }
    let s = (0..3).find(|j| a[*j] == 0).expect("one scalar factor");
    let u = tr.synth_grad(&prep[ones[0]]);
    let v = tr.synth_grad(&prep[ones[1]]);
    let w = tr.synth(&prep[s]);
    let p: Vec<f64> = (0..w.len()).map(|i| w[i] * (u.d1[i] * v.d1[i] + u.d2[i] * v.d2[i])).collect();
    Ok(tr.integrate(&p))
}

fn first_shell_at_or_above(table: &SpectrumTable, value: f64) -> Option<ShellKey> {
    table
        .shells()
        .iter()
        .find(|(k, modes)| !modes.is_empty() && table.shell_value(**k) >= value)
        .map(|(k, _)| *k)
}

/// Trilinear integrals along the separation sequence `l₁ ≥ l₂ + K l₃ + 2`.
pub fn trilinear_decay(table: &SpectrumTable, cfg: &TrilinearConfig) -> Result<TrilinearCurve> {
    if cfg.trials == 0 {
        return Err(Error::Config("trilinear sweep needs at least one trial".into()));
    }
    check_shell(table, cfg.l2)?;
    check_shell(table, cfg.l3)?;
    let (v2, v3) = (table.shell_value(cfg.l2), table.shell_value(cfg.l3));
    let mut l1s = Vec::with_capacity(cfg.k_values.len());
    for &k in &cfg.k_values {
        let target = v2 + k * v3 + 2.0;
        let l1 = first_shell_at_or_above(table, target).ok_or_else(|| {
            Error::Config(format!("no shell at or above {target} within the cutoff for K = {k}"))
        })?;
        l1s.push((k, l1));
    }
    let d23 = shell_degree(table, cfg.l2) + shell_degree(table, cfg.l3);
    let dmax = l1s.iter().map(|&(_, l)| shell_degree(table, l)).max().unwrap_or(0).max(shell_degree(table, cfg.l2) + 1);
    let tr = Transform::new(table, (dmax + d23 + 2).max(table.max_degree() as usize))?;
    let measure = |k_sep: f64, l1: ShellKey| -> Result<TrilinearPoint> {
        let mut max_abs: f64 = 0.0;
        for trial in 0..cfg.trials {
            let mut rng = rng_for(cfg.seed, [l1.0, cfg.l2.0, cfg.l3.0, trial as u32]);
            let f: Vec<SpectralField> = [l1, cfg.l2, cfg.l3].iter().map(|&k| random_shell_field(table, k, &mut rng)).collect();
            let v = trilinear_integral(table, &tr, [f[0].coeffs(), f[1].coeffs(), f[2].coeffs()], cfg.a, cfg.b)?;
            max_abs = max_abs.max(v.abs());
        }
        let vals = [table.shell_value(l1), v2, v3];
        let mut scale = v3.powf(0.25);
        for j in 0..3 {
            scale *= vals[j].powf(cfg.a[j] as f64 - 2.0 * cfg.b[j] as f64);
        }
        Ok(TrilinearPoint {
            k_sep,
            l1,
            l2: cfg.l2,
            l3: cfg.l3,
            max_abs,
            normalized: max_abs / scale,
        })
    };
    let points = l1s.iter().map(|&(k, l1)| measure(k, l1)).collect::<Result<Vec<_>>>()?;
    // triangle-compatible l₁ next to l₂, trying both parities
    let mut baseline = measure(0.0, cfg.l2)?;
    let next = ShellKey(cfg.l2.0 + 1);
    if !table.shell_modes(next).is_empty() && shell_degree(table, next) <= dmax {
        let alt = measure(0.0, next)?;
        if alt.max_abs > baseline.max_abs {
            baseline = alt;
        }
    }
    Ok(TrilinearCurve { points, baseline })
}

pub fn write_trilinear_csv(w: &mut impl Write, curve: &TrilinearCurve) -> Result<()> {
    writeln!(w, "kind,k_sep,l1,l2,l3,max_abs,normalized")?;
    let row = |w: &mut dyn Write, kind: &str, p: &TrilinearPoint| {
        writeln!(
            w,
            "{kind},{:.16e},{},{},{},{:.16e},{:.16e}",
            p.k_sep, p.l1.0, p.l2.0, p.l3.0, p.max_abs, p.normalized
        )
    };
    row(w, "baseline", &curve.baseline)?;
    for p in &curve.points {
        row(w, "separated", p)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTrickResult {
    /// `|‖P_l f_θ‖₂ − ‖P_l f‖₂|`.
    pub residual: f64,
    /// Max coefficient gap between `P_l f` and `Σ_s π_s f` over the shell's eigenvalues.
    pub projection_residual: f64,
    /// Number of distinct eigenvalues in the shell.
    pub eigenvalues: usize,
}

/// Modulate the eigenspace pieces of `P_l f` by `e^{2πizθ}` (with `s = l + z`) and
/// compare norms; the modulated norm is taken by quadrature of its real and imaginary parts.
pub fn fourier_trick_check(
    table: &SpectrumTable,
    tr: &Transform,
    f: &SpectralField,
    k: ShellKey,
    theta: f64,
) -> Result<FourierTrickResult> {
    let pk = shell_project(table, f, k)?;
    let levels = table.shell_levels(k);
    let mut summed = SpectralField::zeros(table);
    let kv = table.shell_value(k);
    let mut re = vec![0.0; table.len()];
    let mut im = vec![0.0; table.len()];
    for &lv in &levels {
        let piece = eigenspace_project(table, f, lv)?;
        summed = summed.add(&piece)?;
        let s = table.mode(table.level_modes(lv)[0]).eigenvalue;
        let phase = 2.0 * PI * (s - kv) * theta;
        let (sn, cs) = phase.sin_cos();
        for &i in table.level_modes(lv) {
            re[i] = cs * f.get(i);
            im[i] = sn * f.get(i);
        }
    }
    let projection_residual = pk
        .coeffs()
        .iter()
        .zip(summed.coeffs())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let (gr, gi) = (tr.synth(&re), tr.synth(&im));
    let modulated = (tr.inner(&gr, &gr) + tr.inner(&gi, &gi)).max(0.0).sqrt();
    Ok(FourierTrickResult {
        residual: (modulated - pk.l2_norm()).abs(),
        projection_residual,
        eigenvalues: levels.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixResidual {
    pub modes: [ModeId; 3],
    /// `n₁² ∫e₁e₂e₃`.
    pub lhs: f64,
    /// `(n₂²+n₃²) ∫e₁e₂e₃ − 2 ∫e₁⟨∇e₂,∇e₃⟩`.
    pub rhs: f64,
    pub residual: f64,
    /// `residual / max(largest term, 10⁻⁶ (n₁²+n₂²+n₃²))`.
    pub relative: f64,
    /// `n₁² = n₂² + n₃²`.
    pub resonant: bool,
}

/// Check the three-eigenfunction identity by quadrature on `tr`.
pub fn appendix_base_identity(table: &SpectrumTable, tr: &Transform, modes: [ModeId; 3]) -> Result<AppendixResidual> {
    if modes.iter().any(|&m| m >= table.len()) {
        return Err(Error::Domain(format!("mode ids {modes:?} exceed the table")));
    }
    let need = 3 * modes.iter().map(|&m| degree_of(table, m)).max().unwrap_or(0);
    if tr.degree() < need {
        return Err(Error::Config(format!("quadrature degree {} is below {need}", tr.degree())));
    }
    let unit = |m: ModeId| {
        let mut v = vec![0.0; table.len()];
        v[m] = 1.0;
        v
    };
    let [e1, e2, e3] = modes.map(unit);
    let v1 = tr.synth(&e1);
    let g2 = tr.synth_grad(&e2);
    let g3 = tr.synth_grad(&e3);
    let triple: Vec<f64> = (0..v1.len()).map(|i| v1[i] * g2.value[i] * g3.value[i]).collect();
    let cross: Vec<f64> = (0..v1.len())
        .map(|i| v1[i] * (g2.d1[i] * g3.d1[i] + g2.d2[i] * g3.d2[i]))
        .collect();
    let g = tr.integrate(&triple);
    let x = tr.integrate(&cross);
    let [n1, n2, n3] = modes.map(|m| table.mode(m).eigenvalue_sq());
    let lhs = n1 * g;
    let t1 = (n2 + n3) * g;
    let t2 = 2.0 * x;
    let rhs = t1 - t2;
    let residual = (lhs - rhs).abs();
    let scale = lhs.abs().max(t1.abs()).max(t2.abs()).max(1e-6 * (n1 + n2 + n3));
    Ok(AppendixResidual {
        modes,
        lhs,
        rhs,
        residual,
        relative: if scale > 0.0 { residual / scale } else { residual },
        resonant: n1 == n2 + n3,
    })
}

fn degree_of(table: &SpectrumTable, m: ModeId) -> usize {
    match table.mode(m).label {
        ModeLabel::Sphere { l, .. } => l as usize,
        ModeLabel::Torus { n, .. } => n[0].unsigned_abs().max(n[1].unsigned_abs()) as usize,
    }
}

/// Seeded eigen-triples: `e₂`, `e₃` uniform among non-constant modes, `e₁` drawn from
/// the modes interacting with `e₂e₃` when there are any.
pub fn random_triples(table: &SpectrumTable, tr: &Transform, count: usize, seed: u64) -> Vec<[ModeId; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ModeId> = (1..table.len()).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e2 = *ids.choose(&mut rng).expect("non-constant modes");
        let e3 = *ids.choose(&mut rng).expect("non-constant modes");
        let mut u = vec![0.0; table.len()];
        let mut v = vec![0.0; table.len()];
        u[e2] = 1.0;
        v[e3] = 1.0;
        let prod = mul(&tr.synth(&u), &tr.synth(&v));
        let coupled: Vec<ModeId> = tr
            .analyze(&prod)
            .iter()
            .enumerate()
            .filter(|&(i, c)| i > 0 && c.abs() > 1e-10)
            .map(|(i, _)| i)
            .collect();
        let e1 = *coupled.choose(&mut rng).unwrap_or_else(|| ids.choose(&mut rng).expect("non-constant modes"));
        out.push([e1, e2, e3]);
    }
    out
}

/// One seeded modulation case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierCase {
    pub shell: ShellKey,
    pub theta: f64,
    pub result: FourierTrickResult,
}

/// `cases` random (shell, field, θ) modulation checks; `theta` fixes the modulation when given.
pub fn fourier_trick_batch(table: &SpectrumTable, cases: usize, seed: u64, theta: Option<f64>) -> Result<Vec<FourierCase>> {
    let tr = Transform::new(table, 2 * table.max_degree() as usize)?;
    let shells: Vec<ShellKey> = table.shell_keys().filter(|&k| !table.shell_modes(k).is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for _ in 0..cases {
        let k = *shells.choose(&mut rng).expect("table has shells");
        let th = theta.unwrap_or_else(|| rng.random::<f64>());
        let f = random_shell_field(table, k, &mut rng);
        // spill energy outside the shell so the projection is exercised
        let mut g = f.clone();
        for x in g.coeffs_mut().iter_mut().skip(1) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += 0.1 * z;
        }
        out.push(FourierCase {
            shell: k,
            theta: th,
            result: fourier_trick_check(table, &tr, &g, k, th)?,
        });
    }
    Ok(out)
}

/// Identity residuals for `count` seeded eigen-triples.
pub fn appendix_batch(table: &SpectrumTable, count: usize, seed: u64) -> Result<Vec<AppendixResidual>> {
    let tr = Transform::new(table, 3 * table.max_degree() as usize)?;
    random_triples(table, &tr, count, seed)
        .into_iter()
        .map(|m| appendix_base_identity(table, &tr, m))
        .collect()
}

pub fn write_fourier_csv(w: &mut impl Write, cases: &[FourierCase]) -> Result<()> {
    writeln!(w, "case,shell,theta,eigenvalues,residual,projection_residual")?;
    for (i, c) in cases.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{:.16e},{},{:.16e},{:.16e}",
            c.shell.0, c.theta, c.result.eigenvalues, c.result.residual, c.result.projection_residual
        )?;
    }
    Ok(())
}

pub fn write_appendix_csv(w: &mut impl Write, rows: &[AppendixResidual]) -> Result<()> {
    writeln!(w, "e1,e2,e3,lhs,rhs,residual,relative,resonant")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.modes[0], r.modes[1], r.modes[2], r.lhs, r.rhs, r.residual, r.relative, r.resonant
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{build_spectrum, LaplacianVariant, ManifoldConfig};
    use crate::triads::build_triads;
    use proptest::prelude::*;

    fn sphere(cutoff: f64) -> SpectrumTable {
        build_spectrum(ManifoldConfig::new(ManifoldKind::Sphere, LaplacianVariant::Hodge, cutoff)).unwrap()
    }

    fn torus(cutoff: f64) -> SpectrumTable {
        build_spectrum(ManifoldConfig::new(ManifoldKind::Torus, LaplacianVariant::Hodge, cutoff)).unwrap()
    }

    fn cfg(l1: Vec<ShellKey>, pairs: PairSelection, orders: (u32, u32, u32), trials: usize) -> BilinearConfig {
        BilinearConfig {
            l2: l1.clone(),
            l1,
            pairs,
            a: orders.0,
            b: orders.1,
            c: orders.2,
            trials,
            structured: false,
            seed: 17,
            quad_degree: None,
        }
    }

    #[test]
    fn l1_sphere_pair_is_nondegenerate() {
        let t = sphere(6.0);
        let cells = bilinear_sweep(&t, &cfg(vec![ShellKey(0)], PairSelection::Equal, (0, 0, 0), 4)).unwrap();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].max_ratio.is_finite() && cells[0].max_ratio > 0.0);
        assert!(cells[0].mean_ratio <= cells[0].max_ratio);
    }

    #[test]
    fn product_norm_matches_product_triads() {
        // ‖fg‖² from the grid vs Σ over the triad product, when all products stay inside the cutoff
        let t = sphere(13.0);
        let tensor = build_triads(&t);
        let tr = Transform::new(&t, 40).unwrap();
        let mut rng = rng_for(3, [0; 4]);
        let f = random_shell_field(&t, ShellKey(2), &mut rng);
        let g = random_shell_field(&t, ShellKey(3), &mut rng);
        let s = bilinear_sample(&t, &tr, &f, &g, ShellKey(2), ShellKey(3), (0, 0, 0)).unwrap();
        let mut out = vec![0.0; t.len()];
        tensor.add_product(t.id(), f.coeffs(), g.coeffs(), &mut out).unwrap();
        let direct = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((s.product_norm - direct).abs() < 1e-10, "{} vs {direct}", s.product_norm);
    }

    #[test]
    fn gradient_contraction_closed_form_on_torus() {
        // f = g = √2 cos 2πx: ⟨∇f,∇g⟩ = 8π² sin² 2πx, ‖·‖² = 64π⁴ · 3/8
        let t = torus(7.0);
        let tr = Transform::new(&t, 8).unwrap();
        let id = t.lookup(ModeLabel::Torus { n: [1, 0], parity: Parity::Cos }).unwrap();
        let f = SpectralField::unit(&t, id);
        let k = t.mode(id).shell.unwrap();
        let s = bilinear_sample(&t, &tr, &f, &f, k, k, (1, 1, 0)).unwrap();
        let exact = (64.0 * PI.powi(4) * 3.0 / 8.0).sqrt();
        assert!((s.product_norm - exact).abs() < 1e-10 * exact);
        // (fg)² = 4 cos⁴, ∫ = 3/2
        let s0 = bilinear_sample(&t, &tr, &f, &f, k, k, (0, 0, 0)).unwrap();
        assert!((s0.product_norm - 1.5f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn hessian_pairing_matches_laplacian_identity() {
        // for an eigenfunction ∫|∇²f|² = ∫(Δf)² − ∫Ric(∇f,∇f) = s⁴ − s² on the unit sphere
        let t = sphere(8.0);
        let tr = Transform::new(&t, 40).unwrap();
        let c = SpectralField::unit(&t, 0).scaled((4.0 * PI).sqrt());
        for id in [5, 13, 20, 33] {
            let f = SpectralField::unit(&t, id);
            let k = t.mode(id).shell.unwrap();
            let s2 = t.mode(id).eigenvalue_sq();
            // g = 1 through the constant mode is outside the shell; evaluate the grid pairing directly
            let sq = product_sq(&tr, f.coeffs(), c.coeffs(), 2, 0).unwrap();
            let h = tr.integrate(&sq);
            assert!((h - (s2 * s2 - s2)).abs() < 1e-9 * s2 * s2, "{id}: {h}");
            assert!(bilinear_sample(&t, &tr, &f, &f, k, k, (2, 0, 0)).unwrap().product_norm > 0.0);
        }
    }

    #[test]
    fn inverse_laplacian_scales_exactly() {
        let t = sphere(10.0);
        let shells: Vec<ShellKey> = (1..6).map(ShellKey).collect();
        let c0 = bilinear_sweep(&t, &cfg(shells.clone(), PairSelection::Upper, (0, 0, 0), 3)).unwrap();
        let c1 = bilinear_sweep(&t, &cfg(shells, PairSelection::Upper, (0, 0, 1), 3)).unwrap();
        for (x, y) in c0.iter().zip(&c1) {
            // single-eigenvalue shells: product shrinks by s², normalization by k₂²
            let l = (x.l2.0 + 1) as f64;
            let s2 = l * (l + 1.0);
            let factor = x.k2 * x.k2 / s2;
            assert!((y.max_ratio / x.max_ratio - factor).abs() < 1e-12, "{} {}", y.max_ratio / x.max_ratio, factor);
            assert!((y.max_raw * s2 / x.max_raw - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_bad_configs() {
        let t = sphere(10.0);
        let mut c = cfg(vec![ShellKey(3)], PairSelection::Equal, (0, 0, 0), 2);
        c.quad_degree = Some(10);
        assert!(matches!(bilinear_sweep(&t, &c), Err(Error::Config(_))));
        c.quad_degree = None;
        c.trials = 0;
        assert!(matches!(bilinear_sweep(&t, &c), Err(Error::Config(_))));
        let c = cfg(vec![ShellKey(3)], PairSelection::Equal, (2, 1, 0), 2);
        assert!(matches!(bilinear_sweep(&t, &c), Err(Error::Config(_))));
        let c = cfg(vec![ShellKey(30)], PairSelection::Equal, (0, 0, 0), 2);
        assert!(matches!(bilinear_sweep(&t, &c), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_is_deterministic_and_selects_cells() {
        let t = sphere(10.0);
        let shells: Vec<ShellKey> = (1..5).map(ShellKey).collect();
        let a = bilinear_sweep(&t, &cfg(shells.clone(), PairSelection::Upper, (1, 0, 0), 3)).unwrap();
        let b = bilinear_sweep(&t, &cfg(shells.clone(), PairSelection::Upper, (1, 0, 0), 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(bilinear_sweep(&t, &cfg(shells.clone(), PairSelection::All, (0, 0, 0), 1)).unwrap().len(), 16);
        let mut buf = Vec::new();
        write_bilinear_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        let v: f64 = text.lines().nth(1).unwrap().split(',').nth(8).unwrap().parse().unwrap();
        assert_eq!(v, a[0].max_ratio);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ratio_is_scale_invariant(alpha in 1e-3f64..1e3, beta in 1e-3f64..1e3, seed in 0u64..1000, a in 0u32..2, b in 0u32..2) {
            let t = sphere(7.0);
            let tr = Transform::new(&t, 40).unwrap();
            let mut rng = rng_for(seed, [1; 4]);
            let f = random_shell_field(&t, ShellKey(2), &mut rng);
            let g = random_shell_field(&t, ShellKey(4), &mut rng);
            let s = bilinear_sample(&t, &tr, &f, &g, ShellKey(2), ShellKey(4), (a, b, 0)).unwrap();
            let r = bilinear_sample(&t, &tr, &f.scaled(alpha), &g.scaled(beta), ShellKey(2), ShellKey(4), (a, b, 0)).unwrap();
            prop_assert!((s.ratio - r.ratio).abs() <= 1e-12 * s.ratio);
            // projecting twice changes nothing
            let pf = shell_project(&t, &f, ShellKey(2)).unwrap();
            let q = bilinear_sample(&t, &tr, &pf, &g, ShellKey(2), ShellKey(4), (a, b, 0)).unwrap();
            prop_assert_eq!(q, s);
        }
    }

    #[test]
    fn trilinear_sphere_separated_vanishes() {
        let t = sphere(22.0);
        let cfg = TrilinearConfig {
            l2: ShellKey(3),
            l3: ShellKey(3),
            k_values: vec![2.0, 3.0],
            a: [0; 3],
            b: [0; 3],
            trials: 4,
            seed: 1,
        };
        let curve = trilinear_decay(&t, &cfg).unwrap();
        for p in &curve.points {
            assert!(p.max_abs <= 1e-10, "{p:?}");
            assert!(t.shell_value(p.l1) >= t.shell_value(p.l2) + p.k_sep * t.shell_value(p.l3) + 2.0);
        }
        assert!(curve.baseline.max_abs > 1e-3);
        let mut bad = cfg.clone();
        bad.k_values = vec![10.0];
        assert!(matches!(trilinear_decay(&t, &bad), Err(Error::Config(_))));
        bad.k_values = vec![2.0];
        bad.a = [1, 0, 0];
        assert!(matches!(trilinear_decay(&t, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn trilinear_torus_without_cancellation_vanishes() {
        let t = torus(2.0 * PI * 9.5);
        let cfg = TrilinearConfig {
            l2: ShellKey(0),
            l3: ShellKey(0),
            k_values: vec![2.0, 4.0],
            a: [1, 1, 0],
            b: [0, 0, 1],
            trials: 3,
            seed: 2,
        };
        let curve = trilinear_decay(&t, &cfg).unwrap();
        for p in &curve.points {
            assert!(p.max_abs <= 1e-10);
        }
    }

    #[test]
    fn trilinear_matches_product_triads() {
        let t = sphere(9.0);
        let tensor = build_triads(&t);
        let tr = Transform::new(&t, 30).unwrap();
        let mut rng = rng_for(9, [0; 4]);
        let f: Vec<SpectralField> = [2, 3, 4].iter().map(|&k| random_shell_field(&t, ShellKey(k), &mut rng)).collect();
        let quad = trilinear_integral(&t, &tr, [f[0].coeffs(), f[1].coeffs(), f[2].coeffs()], [0; 3], [0; 3]).unwrap();
        let mut out = vec![0.0; t.len()];
        tensor.add_product(t.id(), f[1].coeffs(), f[2].coeffs(), &mut out).unwrap();
        let direct: f64 = out.iter().zip(f[0].coeffs()).map(|(x, y)| x * y).sum();
        assert!((quad - direct).abs() < 1e-12);
        assert!(direct.abs() > 1e-4);
    }

    #[test]
    fn fourier_trick_examples() {
        let t = torus(2.0 * PI * 6.0);
        let tr = Transform::new(&t, t.max_degree() as usize * 2).unwrap();
        let mut rng = rng_for(5, [0; 4]);
        let multi = t.shell_keys().find(|&k| t.shell_levels(k).len() >= 2).expect("multi-level shell");
        let f = random_shell_field(&t, multi, &mut rng);
        let r0 = fourier_trick_check(&t, &tr, &f, multi, 0.0).unwrap();
        assert!(r0.residual < 1e-14 && r0.projection_residual == 0.0);
        let r = fourier_trick_check(&t, &tr, &f, multi, 0.37).unwrap();
        assert!(r.eigenvalues >= 2 && r.residual <= 1e-12);
        let s = sphere(12.0);
        let trs = Transform::new(&s, 24).unwrap();
        let g = random_shell_field(&s, ShellKey(5), &mut rng);
        for theta in [0.1, 0.37, 0.9] {
            let r = fourier_trick_check(&s, &trs, &g, ShellKey(5), theta).unwrap();
            assert_eq!(r.eigenvalues, 1);
            assert!(r.residual <= 1e-12 && r.projection_residual == 0.0);
        }
    }

    #[test]
    fn appendix_examples() {
        let t = torus(2.0 * PI * 3.0);
        let tr = Transform::new(&t, 3 * t.max_degree() as usize).unwrap();
        let c = t.lookup(ModeLabel::Torus { n: [1, 0], parity: Parity::Cos }).unwrap();
        let r = appendix_base_identity(&t, &tr, [c, c, c]).unwrap();
        assert!(r.residual <= 1e-12);
        // cos 2πx · cos 2πx couples to cos 4πx: ∫ (√2)³ cos²(2πx) cos(4πx) = 1/√2
        let c2 = t.lookup(ModeLabel::Torus { n: [2, 0], parity: Parity::Cos }).unwrap();
        let r = appendix_base_identity(&t, &tr, [c2, c, c]).unwrap();
        let n2 = 4.0 * PI * PI;
        assert!((r.lhs - 4.0 * n2 / 2f64.sqrt()).abs() < 1e-10);
        assert!(r.relative <= 1e-12);
        assert!(!r.resonant);
        // constant third factor: both sides vanish for distinct levels
        let d = t.lookup(ModeLabel::Torus { n: [1, 1], parity: Parity::Sin }).unwrap();
        let r = appendix_base_identity(&t, &tr, [c, d, 0]).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs.abs() < 1e-12);
        let s = sphere(4.0);
        let trs = Transform::new(&s, 12).unwrap();
        let r = appendix_base_identity(&s, &trs, [6, 2, 2]).unwrap();
        assert!(r.relative <= 1e-9 && r.lhs.abs() > 0.1);
    }

    #[test]
    fn appendix_random_triples_both_backends() {
        for t in [sphere(12.0), torus(2.0 * PI * 4.0)] {
            let tr = Transform::new(&t, 3 * t.max_degree() as usize).unwrap();
            let triples = random_triples(&t, &tr, 30, 4);
            let mut nonzero = 0;
            for m in triples {
                let r = appendix_base_identity(&t, &tr, m).unwrap();
                assert!(r.relative <= 1e-9, "{r:?}");
                nonzero += (r.lhs.abs() > 1e-6) as usize;
            }
            assert!(nonzero > 10);
        }
    }
}
