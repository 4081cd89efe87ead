//! Envelope margins and viscous-domination accounting for shell norms.
//!
//! The envelope is `‖P_k ω‖₂ ≤ A₁ √ℰ* / k^r` for every shell `k`. At a shell
//! `k > K₀` the report compares the convective, harmonic and curvature terms
//! acting on `P_k ω` with the diffusion `ν ⟨⟨−Δ P_k ω, P_k ω⟩⟩ / ‖P_k ω‖₂`.
//! Every convective term `‖P_k J((−Δ)⁻¹P_{l₁}ω, P_{l₂}ω)‖₂` is evaluated
//! exactly, either from the triad tensor or from an exact-quadrature transform.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::GalerkinState;
use crate::error::{Error, Result};
use crate::operators::SpectralField;
use crate::spectrum::{ModeLabel, ShellKey, SpectrumTable};
use crate::transform::Transform;
use crate::triads::TriadTensor;

/// Relative tolerance for boundary contact: `|margin| < CONTACT_TOL · bound`.
pub const CONTACT_TOL: f64 = 1e-6;

/// `A₁ = (K₀^r + 1)(A₀/√ℰ* + 1) + λ₁`.
pub fn envelope_a1(r: f64, a0: f64, k0: f64, e_star: f64, lambda1: f64) -> Result<f64> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::Config(format!("decay exponent r = {r} must exceed 1")));
    }
    if !(k0 >= lambda1 + 10.0) || !k0.is_finite() {
        return Err(Error::Config(format!("K0 = {k0} must be at least λ₁ + 10 = {}", lambda1 + 10.0)));
    }
    if !(e_star > 1.0) || !e_star.is_finite() {
        return Err(Error::Config(format!("E* = {e_star} must exceed 1")));
    }
    if !(a0 >= 0.0) || !a0.is_finite() {
        return Err(Error::Config(format!("A0 = {a0} must be finite and non-negative")));
    }
    Ok((k0.powf(r) + 1.0) * (a0 / e_star.sqrt() + 1.0) + lambda1)
}

/// `ℰ* = (‖ω₀‖₂ + ‖U₀‖₂)² e^{2νCT}`, lifted to the next float above 1 when smaller.
pub fn e_star(vorticity_norm: f64, velocity_norm: f64, nu: f64, c: f64, t_end: f64) -> f64 {
    let base = (vorticity_norm + velocity_norm).powi(2) * (2.0 * nu * c * t_end).exp();
    if base > 1.0 {
        base
    } else {
        1.0f64.next_up()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingEnvelope {
    pub r: f64,
    pub a0: f64,
    pub k0: f64,
    pub e_star: f64,
    pub a1: f64,
    pub lambda1: f64,
}

impl TrappingEnvelope {
    pub fn new(r: f64, a0: f64, k0: f64, e_star: f64, lambda1: f64) -> Result<Self> {
        let a1 = envelope_a1(r, a0, k0, e_star, lambda1)?;
        Ok(TrappingEnvelope {
            r,
            a0,
            k0,
            e_star,
            a1,
            lambda1,
        })
    }

    /// `A₁ √ℰ* / k^r`.
    pub fn bound(&self, k: f64) -> f64 {
        self.a1 * self.e_star.sqrt() / k.powf(self.r)
    }

    /// `A₁ √ℰ* Σ_{l ∈ λ₁+ℕ₀, l > cutoff} l^{−r}`, an upper bound on the envelope mass beyond the cutoff.
    pub fn tail_bound(&self, cutoff: f64) -> f64 {
        let mut n = ((cutoff - self.lambda1).floor().max(-1.0) + 1.0) as u64;
        let mut l = self.lambda1 + n as f64;
        while l <= cutoff {
            n += 1;
            l = self.lambda1 + n as f64;
        }
        let mut sum = 0.0;
        for _ in 0..100_000 {
            sum += l.powf(-self.r);
            n += 1;
            l = self.lambda1 + n as f64;
        }
        // Σ_{m ≥ l} m^{−r} ≤ ∫_{l−1}^∞ x^{−r} dx
        sum += (l - 1.0).powf(1.0 - self.r) / (self.r - 1.0);
        self.a1 * self.e_star.sqrt() * sum
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellMargin {
    pub shell: ShellKey,
    pub k: f64,
    pub norm: f64,
    pub bound: f64,
    /// `bound − norm`; negative outside the envelope.
    pub margin: f64,
    pub contact: bool,
}

/// Margin of every shell of the table against the envelope.
pub fn envelope_margins(table: &SpectrumTable, omega: &SpectralField, envelope: &TrappingEnvelope) -> Vec<ShellMargin> {
    let c = omega.coeffs();
    table
        .shell_keys()
        .map(|key| {
            let norm = table.shell_modes(key).iter().map(|&i| c[i] * c[i]).sum::<f64>().sqrt();
            margin_of(key, table.shell_value(key), norm, envelope)
        })
        .collect()
}

/// Margins from precomputed shell norms (e.g. monitor records).
pub fn margins_from_norms(
    table: &SpectrumTable,
    norms: &[(ShellKey, f64)],
    envelope: &TrappingEnvelope,
) -> Vec<ShellMargin> {
    norms
        .iter()
        .map(|&(key, norm)| margin_of(key, table.shell_value(key), norm, envelope))
        .collect()
}

fn margin_of(shell: ShellKey, k: f64, norm: f64, envelope: &TrappingEnvelope) -> ShellMargin {
    let bound = envelope.bound(k);
    let margin = bound - norm;
    ShellMargin {
        shell,
        k,
        norm,
        bound,
        margin,
        contact: margin.abs() < CONTACT_TOL * bound,
    }
}

/// Region of a shell pair `(l₁, l₂)` relative to the target shell `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    T1,
    T2,
    T3,
    A1a,
    A1b,
    A2a,
    A2b,
    A3a,
    A3b,
    B1a,
    B1b,
    B1c,
    B2a,
    B2b,
    B2c,
}

impl RegionTag {
    pub const ALL: [RegionTag; 15] = [
        RegionTag::T1,
        RegionTag::T2,
        RegionTag::T3,
        RegionTag::A1a,
        RegionTag::A1b,
        RegionTag::A2a,
        RegionTag::A2b,
        RegionTag::A3a,
        RegionTag::A3b,
        RegionTag::B1a,
        RegionTag::B1b,
        RegionTag::B1c,
        RegionTag::B2a,
        RegionTag::B2b,
        RegionTag::B2c,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegionTag::T1 => "T1",
            RegionTag::T2 => "T2",
            RegionTag::T3 => "T3",
            RegionTag::A1a => "A1a",
            RegionTag::A1b => "A1b",
            RegionTag::A2a => "A2a",
            RegionTag::A2b => "A2b",
            RegionTag::A3a => "A3a",
            RegionTag::A3b => "A3b",
            RegionTag::B1a => "B1a",
            RegionTag::B1b => "B1b",
            RegionTag::B1c => "B1c",
            RegionTag::B2a => "B2a",
            RegionTag::B2b => "B2b",
            RegionTag::B2c => "B2c",
        }
    }

    /// Pairs obeying `|l₁−l₂| ≤ k ≤ l₁+l₂`.
    pub fn is_triangle(self) -> bool {
        matches!(self, RegionTag::T1 | RegionTag::T2 | RegionTag::T3)
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tag of `(l₁, l₂)` at target `k`. On the shared edge `l₁ = k` of the first
/// two distant regions the pair goes to `A1`.
pub fn region_of(k: f64, l1: f64, l2: f64) -> RegionTag {
    let gap = (l1 - l2).abs();
    if gap > k {
        if l1 <= k {
            if l2 <= k + 2.0 * l1 + 2.0 {
                RegionTag::A1a
            } else {
                RegionTag::A1b
            }
        } else if l2 >= k {
            if gap < 2.0 * k + 2.0 {
                RegionTag::A2a
            } else {
                RegionTag::A2b
            }
        } else if l1 < k + 2.0 * l2 + 2.0 {
            RegionTag::A3a
        } else {
            RegionTag::A3b
        }
    } else if l1 + l2 < k {
        if l1 >= l2 {
            if k >= l1 + 2.0 * l2 + 2.0 {
                if l1 <= k / 2.0 {
                    RegionTag::B1a
                } else {
                    RegionTag::B1b
                }
            } else {
                RegionTag::B1c
            }
        } else if k >= 2.0 * l1 + l2 + 2.0 {
            if l2 <= k / 2.0 {
                RegionTag::B2a
            } else {
                RegionTag::B2b
            }
        } else {
            RegionTag::B2c
        }
    } else if l1 <= k / 2.0 {
        RegionTag::T1
    } else if l1 <= 2.0 * k {
        RegionTag::T2
    } else {
        RegionTag::T3
    }
}

/// Evaluation route for convective pair norms.
#[derive(Clone, Copy)]
pub enum ConvectiveEngine<'a> {
    /// Contract canonical advection triads.
    Triads(&'a TriadTensor),
    /// Evaluate `J` on an exact-quadrature grid of degree ≥ 3 × max degree.
    Transform(&'a Transform),
}

/// `‖P_k J((−Δ)⁻¹P_{l₁}ω, P_{l₂}ω)‖₂` for one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub l1: ShellKey,
    pub l2: ShellKey,
    pub norm: f64,
}

/// Pair norms for every target shell in `targets` and every pair of shells in `shells`.
pub fn convective_pairs(
    table: &SpectrumTable,
    omega: &SpectralField,
    shells: &[ShellKey],
    targets: &[ShellKey],
    engine: ConvectiveEngine<'_>,
) -> Result<BTreeMap<ShellKey, Vec<PairTerm>>> {
    if omega.table_id() != table.id() {
        return Err(Error::Assembly("field does not belong to the spectrum table".into()));
    }
    for k in shells.iter().chain(targets) {
        if !table.shells().contains_key(k) {
            return Err(Error::Domain(format!("shell {k} is not present in the spectrum")));
        }
    }
    let slot: HashMap<ShellKey, usize> = shells.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let ns = shells.len();
    let buffers = match engine {
        ConvectiveEngine::Triads(t) => triad_buffers(table, omega, &slot, targets, t)?,
        ConvectiveEngine::Transform(tr) => transform_buffers(table, omega, shells, targets, tr)?,
    };
    let mut out = BTreeMap::new();
    for (ti, &k) in targets.iter().enumerate() {
        let mut terms = Vec::with_capacity(ns * ns);
        for (a, &l1) in shells.iter().enumerate() {
            for (b, &l2) in shells.iter().enumerate() {
                let v = &buffers[ti][a * ns + b];
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                terms.push(PairTerm { l1, l2, norm });
            }
        }
        out.insert(k, terms);
    }
    Ok(out)
}

type Buffers = Vec<Vec<Vec<f64>>>;

fn stream_coeffs(table: &SpectrumTable, omega: &SpectralField) -> Vec<f64> {
    table
        .modes()
        .iter()
        .map(|m| {
            let s2 = m.eigenvalue_sq();
            if s2 > 0.0 {
                omega.get(m.id) / s2
            } else {
                0.0
            }
        })
        .collect()
}

fn triad_buffers(
    table: &SpectrumTable,
    omega: &SpectralField,
    slot: &HashMap<ShellKey, usize>,
    targets: &[ShellKey],
    tensor: &TriadTensor,
) -> Result<Buffers> {
    if tensor.table_id() != table.id() {
        return Err(Error::Assembly("triad tensor was assembled for a different spectrum table".into()));
    }
    let ns = slot.len();
    let psi = stream_coeffs(table, omega);
    let w = omega.coeffs();
    // per mode: (target index, local position) and source slot
    let mut target_pos = vec![None; table.len()];
    for (ti, &k) in targets.iter().enumerate() {
        for (p, &i) in table.shell_modes(k).iter().enumerate() {
            target_pos[i] = Some((ti, p));
        }
    }
    let source: Vec<Option<usize>> = table
        .modes()
        .iter()
        .map(|m| m.shell.and_then(|k| slot.get(&k).copied()))
        .collect();
    let mut buffers: Buffers = targets
        .iter()
        .map(|&k| vec![vec![0.0; table.shell_modes(k).len()]; ns * ns])
        .collect();
    for e in tensor.advection_entries() {
        let [a, b, c] = [e.idx[0] as usize, e.idx[1] as usize, e.idx[2] as usize];
        // even permutations carry +A, odd ones −A
        for (i, j, k, sign) in [
            (a, b, c, 1.0),
            (b, c, a, 1.0),
            (c, a, b, 1.0),
            (a, c, b, -1.0),
            (b, a, c, -1.0),
            (c, b, a, -1.0),
        ] {
            let Some((ti, p)) = target_pos[i] else { continue };
            let (Some(sj), Some(sk)) = (source[j], source[k]) else { continue };
            let v = sign * e.value * psi[j] * w[k];
            if v != 0.0 {
                buffers[ti][sj * ns + sk][p] += v;
            }
        }
    }
    Ok(buffers)
}

fn transform_buffers(
    table: &SpectrumTable,
    omega: &SpectralField,
    shells: &[ShellKey],
    targets: &[ShellKey],
    tr: &Transform,
) -> Result<Buffers> {
    if tr.table_id() != table.id() {
        return Err(Error::Assembly("transform was built for a different spectrum table".into()));
    }
    let need = 3 * table.max_degree() as usize;
    if tr.degree() < need {
        return Err(Error::Config(format!(
            "transform degree {} is below {need}, pair norms would alias",
            tr.degree()
        )));
    }
    let psi = stream_coeffs(table, omega);
    let w = omega.coeffs();
    let restrict = |src: &[f64], k: ShellKey| {
        let mut v = vec![0.0; src.len()];
        for &i in table.shell_modes(k) {
            v[i] = src[i];
        }
        v
    };
    let grads: Vec<_> = shells
        .par_iter()
        .map(|&k| (tr.synth_grad(&restrict(&psi, k)), tr.synth_grad(&restrict(w, k))))
        .collect();
    let all_targets: Vec<usize> = targets.iter().flat_map(|&k| table.shell_modes(k).iter().copied()).collect();
    let ns = shells.len();
    let pair_coeffs: Vec<Vec<f64>> = (0..ns * ns)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / ns, ab % ns);
            let zero_a = table.shell_modes(shells[a]).iter().all(|&i| psi[i] == 0.0);
            let zero_b = table.shell_modes(shells[b]).iter().all(|&i| w[i] == 0.0);
            if zero_a || zero_b {
                return vec![0.0; all_targets.len()];
            }
            let j = tr.jacobian(&grads[a].0, &grads[b].1);
            tr.analyze_onto(&j, &all_targets)
        })
        .collect();
    let mut buffers: Buffers = Vec::with_capacity(targets.len());
    let mut offset = 0;
    for &k in targets {
        let len = table.shell_modes(k).len();
        buffers.push(pair_coeffs.iter().map(|c| c[offset..offset + len].to_vec()).collect());
        offset += len;
    }
    Ok(buffers)
}

/// Left- and right-hand sides of the domination comparison at one shell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    /// Shell value `λ₁ + n`.
    pub k: f64,
    pub shell: ShellKey,
    /// Summed pair norms per region.
    pub regions: BTreeMap<RegionTag, f64>,
    /// `‖P_k ⟨𝒫_H U, ∇ω⟩‖₂`.
    pub harmonic: f64,
    /// Curvature terms `ν c ‖P_k ω‖₂`.
    pub linear: f64,
    /// `ν ⟨⟨−Δ P_k ω, P_k ω⟩⟩ / ‖P_k ω‖₂` (zero on an empty shell).
    pub diffusion: f64,
    pub dominated: bool,
    /// Envelope mass beyond the spectral cutoff, left unresolved.
    pub tail_bound: f64,
}

impl DominationReport {
    pub fn convective(&self) -> f64 {
        self.regions.values().sum()
    }

    pub fn non_diffusive(&self) -> f64 {
        self.convective() + self.harmonic + self.linear
    }
}

/// Report at a single shell `k > K₀`.
pub fn domination_report(
    table: &SpectrumTable,
    state: &GalerkinState,
    k: ShellKey,
    envelope: &TrappingEnvelope,
    nu: f64,
    engine: ConvectiveEngine<'_>,
) -> Result<DominationReport> {
    let mut v = domination_sweep(table, state, &[k], envelope, nu, engine)?;
    Ok(v.pop().expect("one target"))
}

/// Reports for several shells sharing one pass over the state.
pub fn domination_sweep(
    table: &SpectrumTable,
    state: &GalerkinState,
    ks: &[ShellKey],
    envelope: &TrappingEnvelope,
    nu: f64,
    engine: ConvectiveEngine<'_>,
) -> Result<Vec<DominationReport>> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::Config(format!("viscosity {nu} must be finite and non-negative")));
    }
    for &k in ks {
        let kv = table.shell_value(k);
        if !(kv > envelope.k0) {
            return Err(Error::Domain(format!("shell {kv} does not exceed K0 = {}", envelope.k0)));
        }
    }
    let pairs = convective_pairs(table, &state.omega, &state.shells, ks, engine)?;
    let c = table.config().ricci_shift();
    let tail = envelope.tail_bound(table.config().cutoff);
    let w = state.omega.coeffs();
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let kv = table.shell_value(k);
        let mut regions: BTreeMap<RegionTag, f64> = RegionTag::ALL.iter().map(|&t| (t, 0.0)).collect();
        for p in &pairs[&k] {
            let tag = region_of(kv, table.shell_value(p.l1), table.shell_value(p.l2));
            *regions.get_mut(&tag).expect("all tags present") += p.norm;
        }
        let modes = table.shell_modes(k);
        let norm = modes.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt();
        let dirichlet: f64 = modes.iter().map(|&i| table.mode(i).eigenvalue_sq() * w[i] * w[i]).sum();
        let diffusion = if norm > 0.0 { nu * dirichlet / norm } else { 0.0 };
        let harmonic = harmonic_term(table, &state.harmonic, w, k);
        let linear = nu * c.abs() * norm;
        let convective: f64 = regions.values().sum();
        out.push(DominationReport {
            k: kv,
            shell: k,
            regions,
            harmonic,
            linear,
            diffusion,
            dominated: convective + harmonic + linear <= diffusion,
            tail_bound: tail,
        });
    }
    Ok(out)
}

/// `‖P_k ⟨a, ∇ω⟩‖₂` for constant `a` on the torus: `a·∇` maps the cosine and
/// sine of wavevector `n` onto each other with factor `2π a·n`, so only `P_k ω`
/// contributes. There are no harmonic fields on the sphere.
fn harmonic_term(table: &SpectrumTable, harmonic: &[f64], w: &[f64], k: ShellKey) -> f64 {
    if harmonic.iter().all(|&a| a == 0.0) {
        return 0.0;
    }
    let mut sq = 0.0;
    for &i in table.shell_modes(k) {
        if let ModeLabel::Torus { n, .. } = table.mode(i).label {
            let an = harmonic[0] * n[0] as f64 + harmonic[1] * n[1] as f64;
            let f = 2.0 * std::f64::consts::PI * an * w[i];
            sq += f * f;
        }
    }
    sq.sqrt()
}

/// Why a fit was not accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRejection {
    /// Every report total is zero.
    ZeroSignal,
    /// Fewer than five reports carry a positive total.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Least-squares slope of `log total` against `log k` (NaN when rejected).
    pub slope: f64,
    pub intercept: f64,
    /// Residuals of the log fit, one per fitted report.
    pub residuals: Vec<f64>,
    /// `−(r − 7/4) + slack`.
    pub threshold: f64,
    pub passes: bool,
    pub rejection: Option<FitRejection>,
}

pub const MIN_FIT_POINTS: usize = 5;

/// Fit `log(non-diffusive total) ~ slope · log k` over a sweep.
pub fn decay_fit(reports: &[DominationReport], r: f64, slack: f64) -> Result<DecayFit> {
    let mut ks: Vec<u32> = reports.iter().map(|p| p.shell.0).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "decay fit needs {MIN_FIT_POINTS} distinct shells, got {}",
            ks.len()
        )));
    }
    let threshold = -(r - 1.75) + slack;
    let points: Vec<(f64, f64)> = reports
        .iter()
        .filter(|p| p.non_diffusive() > 0.0)
        .map(|p| (p.k.ln(), p.non_diffusive().ln()))
        .collect();
    let rejected = |why| DecayFit {
        slope: f64::NAN,
        intercept: f64::NAN,
        residuals: Vec::new(),
        threshold,
        passes: false,
        rejection: Some(why),
    };
    if points.is_empty() {
        return Ok(rejected(FitRejection::ZeroSignal));
    }
    if points.len() < MIN_FIT_POINTS {
        return Ok(rejected(FitRejection::Degenerate));
    }
    let (slope, intercept) = least_squares(&points);
    let residuals = points.iter().map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(DecayFit {
        slope,
        intercept,
        residuals,
        threshold,
        passes: slope <= threshold,
        rejection: None,
    })
}

/// Ordinary least squares `y ≈ a + b x`, returned as `(b, a)`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// State on `shells` with `‖P_l ω‖₂ = amplitude / l^r` and a seeded random direction in each shell.
pub fn power_law_state(
    table: &SpectrumTable,
    shells: &[ShellKey],
    amplitude: f64,
    r: f64,
    seed: u64,
) -> Result<GalerkinState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = SpectralField::zeros(table);
    for &k in shells {
        if !table.shells().contains_key(&k) {
            return Err(Error::Domain(format!("shell {k} is not present in the spectrum")));
        }
        let modes = table.shell_modes(k);
        let mut v: Vec<f64> = modes.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let target = amplitude / table.shell_value(k).powf(r);
        for x in &mut v {
            *x *= target / n;
        }
        for (&i, x) in modes.iter().zip(v) {
            omega.coeffs_mut()[i] = x;
        }
    }
    Ok(GalerkinState {
        t: 0.0,
        shells: shells.to_vec(),
        omega,
        harmonic: vec![0.0; table.kind().harmonic_dim()],
    })
}

/// State sitting exactly on the envelope at every shell of `shells`.
pub fn envelope_state(
    table: &SpectrumTable,
    shells: &[ShellKey],
    envelope: &TrappingEnvelope,
    seed: u64,
) -> Result<GalerkinState> {
    power_law_state(table, shells, envelope.a1 * envelope.e_star.sqrt(), envelope.r, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::resolve_shells;
    use crate::spectrum::{build_spectrum, LaplacianVariant, ManifoldConfig, ManifoldKind};
    use crate::triads::build_triads;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn sphere(variant: LaplacianVariant, cutoff: f64) -> SpectrumTable {
        build_spectrum(ManifoldConfig::new(ManifoldKind::Sphere, variant, cutoff)).unwrap()
    }

    fn torus(cutoff: f64) -> SpectrumTable {
        build_spectrum(ManifoldConfig::new(ManifoldKind::Torus, LaplacianVariant::Hodge, cutoff)).unwrap()
    }

    #[test]
    fn a1_examples() {
        let a1 = envelope_a1(2.0, 1.0, 12.0, 4.0, SQRT_2).unwrap();
        assert!((a1 - (217.5 + SQRT_2)).abs() < 1e-12);
        assert!((a1 - 218.914_213_56).abs() < 1e-8);
        let a1 = envelope_a1(3.0, 0.0, 13.0, 2.0, SQRT_2).unwrap();
        assert_eq!(a1, 13f64.powi(3) + 1.0 + SQRT_2);
        assert!(matches!(envelope_a1(2.0, 1.0, SQRT_2 + 9.0, 4.0, SQRT_2), Err(Error::Config(_))));
        assert!(matches!(envelope_a1(1.0, 1.0, 12.0, 4.0, SQRT_2), Err(Error::Config(_))));
        assert!(matches!(envelope_a1(2.0, 1.0, 12.0, 1.0, SQRT_2), Err(Error::Config(_))));
    }

    #[test]
    fn e_star_exceeds_one() {
        assert!(e_star(0.0, 0.0, 0.1, 2.0, 1.0) > 1.0);
        let e = e_star(2.0, 1.0, 0.1, 2.0, 1.0);
        assert!((e - 9.0 * 0.4f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_brackets_partial_sums() {
        let env = TrappingEnvelope::new(2.0, 1.0, 12.0, 4.0, SQRT_2).unwrap();
        let scale = env.a1 * 2.0;
        // Σ_{n≥9} (√2+n)^{-2} lies between ∫_{√2+9} and ∫_{√2+8}
        let t = env.tail_bound(10.0) / scale;
        let lo = 1.0 / (SQRT_2 + 9.0);
        let hi = 1.0 / (SQRT_2 + 8.0);
        assert!(t > lo && t < hi, "{t} not in ({lo}, {hi})");
        assert!(env.tail_bound(40.0) < env.tail_bound(10.0));
    }

    #[test]
    fn margins_examples() {
        let t = sphere(LaplacianVariant::Hodge, 12.0);
        let env = TrappingEnvelope::new(2.0, 1.0, 12.0, 4.0, SQRT_2).unwrap();
        let zero = SpectralField::zeros(&t);
        let m = envelope_margins(&t, &zero, &env);
        assert_eq!(m.len(), t.shells().len());
        for s in &m {
            assert_eq!(s.margin, env.bound(s.k));
            assert!(s.margin > 0.0 && !s.contact);
        }
        let keys: Vec<ShellKey> = t.shell_keys().collect();
        let on = envelope_state(&t, &keys, &env, 3).unwrap();
        for s in envelope_margins(&t, &on.omega, &env) {
            assert!(s.contact, "shell {} margin {}", s.k, s.margin);
        }
        let target = keys[4];
        let mut above = on.omega.scaled(0.5);
        for &i in t.shell_modes(target) {
            above.coeffs_mut()[i] *= 2.2;
        }
        for s in envelope_margins(&t, &above, &env) {
            if s.shell == target {
                assert!(s.margin < 0.0);
                assert!((s.norm / s.bound - 1.1).abs() < 1e-12);
            } else {
                assert!(s.margin > 0.0 && !s.contact);
            }
        }
    }

    #[test]
    fn region_examples() {
        assert_eq!(region_of(10.0, 4.0, 8.0), RegionTag::T1);
        assert_eq!(region_of(10.0, 30.0, 5.0), RegionTag::A3b);
        assert_eq!(region_of(10.0, 2.0, 3.0), RegionTag::B2a);
        assert_eq!(region_of(10.0, 12.0, 5.0), RegionTag::T2);
        assert_eq!(region_of(10.0, 25.0, 20.0), RegionTag::T3);
        assert_eq!(region_of(10.0, 3.0, 14.0), RegionTag::A1a);
        assert_eq!(region_of(10.0, 3.0, 19.0), RegionTag::A1b);
        assert_eq!(region_of(10.0, 12.0, 40.0), RegionTag::A2b);
        assert_eq!(region_of(10.0, 12.0, 25.0), RegionTag::A2a);
        assert_eq!(region_of(10.0, 15.0, 4.0), RegionTag::A3a);
        assert_eq!(region_of(20.0, 6.0, 2.0), RegionTag::B1a);
        assert_eq!(region_of(20.0, 12.0, 2.0), RegionTag::B1b);
        assert_eq!(region_of(20.0, 9.0, 5.0), RegionTag::B1c);
        assert_eq!(region_of(20.0, 2.0, 11.0), RegionTag::B2b);
        assert_eq!(region_of(20.0, 5.0, 9.0), RegionTag::B2c);
    }

    /// The defining inequalities of each region, written out independently of `region_of`.
    fn membership(k: f64, l1: f64, l2: f64) -> Vec<RegionTag> {
        let gap = (l1 - l2).abs();
        let tri = gap <= k && k <= l1 + l2;
        let a = gap > k;
        let b = l1 + l2 < k;
        let a1 = a && l1 <= k;
        let a2 = a && l1 >= k && l2 >= k && !a1;
        let a3 = a && l1 >= k && k > l2;
        let b1 = b && l1 >= l2;
        let b2 = b && l1 < l2;
        let checks = [
            (RegionTag::T1, tri && l1 <= k / 2.0),
            (RegionTag::T2, tri && k / 2.0 < l1 && l1 <= 2.0 * k),
            (RegionTag::T3, tri && l1 > 2.0 * k),
            (RegionTag::A1a, a1 && k <= l2 && l2 <= k + 2.0 * l1 + 2.0),
            (RegionTag::A1b, a1 && k + 2.0 * l1 + 2.0 < l2),
            (RegionTag::A2a, a2 && gap < 2.0 * k + 2.0),
            (RegionTag::A2b, a2 && 2.0 * k + 2.0 <= gap),
            (RegionTag::A3a, a3 && k + 2.0 * l2 + 2.0 > l1),
            (RegionTag::A3b, a3 && l1 >= k + 2.0 * l2 + 2.0),
            (RegionTag::B1a, b1 && k >= l1 + 2.0 * l2 + 2.0 && l1 <= k / 2.0),
            (RegionTag::B1b, b1 && k >= l1 + 2.0 * l2 + 2.0 && l1 > k / 2.0),
            (RegionTag::B1c, b1 && l1 + 2.0 * l2 + 2.0 > k),
            (RegionTag::B2a, b2 && k >= 2.0 * l1 + l2 + 2.0 && l2 <= k / 2.0),
            (RegionTag::B2b, b2 && k >= 2.0 * l1 + l2 + 2.0 && l2 > k / 2.0),
            (RegionTag::B2c, b2 && 2.0 * l1 + l2 + 2.0 > k),
        ];
        checks.iter().filter(|c| c.1).map(|c| c.0).collect()
    }

    #[test]
    fn region_partition_dense_grid() {
        for lam in [SQRT_2, 2.0 * std::f64::consts::PI] {
            for kn in 0..40 {
                for a in 0..90 {
                    for b in 0..90 {
                        let (k, l1, l2) = (lam + kn as f64, lam + a as f64, lam + b as f64);
                        let m = membership(k, l1, l2);
                        assert_eq!(m, vec![region_of(k, l1, l2)], "k={k} l1={l1} l2={l2}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn region_partition_random(k in 0.5f64..200.0, l1 in 0.0f64..500.0, l2 in 0.0f64..500.0) {
            prop_assert_eq!(membership(k, l1, l2), vec![region_of(k, l1, l2)]);
        }
    }

    fn small_state(t: &SpectrumTable, seed: u64, harmonic: f64) -> GalerkinState {
        let shells = resolve_shells(t, None).unwrap();
        let mut s = power_law_state(t, &shells, 0.3, 1.0, seed).unwrap();
        for (i, h) in s.harmonic.iter_mut().enumerate() {
            *h = harmonic * (1.0 + i as f64);
        }
        s
    }

    #[test]
    fn engines_agree_with_quadrature() {
        for t in [sphere(LaplacianVariant::Deformation, 9.0), torus(26.0)] {
            let tensor = build_triads(&t);
            let tr = Transform::new(&t, 3 * t.max_degree() as usize + 2).unwrap();
            let s = small_state(&t, 11, 0.0);
            let targets: Vec<ShellKey> = t.shell_keys().collect();
            let a = convective_pairs(&t, &s.omega, &s.shells, &targets, ConvectiveEngine::Triads(&tensor)).unwrap();
            let b = convective_pairs(&t, &s.omega, &s.shells, &targets, ConvectiveEngine::Transform(&tr)).unwrap();
            let mut nonzero = 0;
            for k in &targets {
                for (p, q) in a[k].iter().zip(&b[k]) {
                    assert_eq!((p.l1, p.l2), (q.l1, q.l2));
                    assert!((p.norm - q.norm).abs() < 1e-8, "{k} {:?} {} vs {}", (p.l1, p.l2), p.norm, q.norm);
                    nonzero += (p.norm > 1e-6) as usize;
                }
            }
            assert!(nonzero > 10);
        }
    }

    #[test]
    fn pair_norm_matches_direct_quadrature() {
        // synthesize each pair separately on a finer grid and project by hand
        let t = sphere(LaplacianVariant::Deformation, 8.0);
        let s = small_state(&t, 5, 0.0);
        let fine = Transform::new(&t, 4 * t.max_degree() as usize + 6).unwrap();
        let keys: Vec<ShellKey> = t.shell_keys().collect();
        let tensor = build_triads(&t);
        let pairs = convective_pairs(&t, &s.omega, &s.shells, &keys, ConvectiveEngine::Triads(&tensor)).unwrap();
        let psi_all = stream_coeffs(&t, &s.omega);
        for &k in &keys {
            for p in &pairs[&k] {
                let mut psi = vec![0.0; t.len()];
                let mut w = vec![0.0; t.len()];
                for &i in t.shell_modes(p.l1) {
                    psi[i] = psi_all[i];
                }
                for &i in t.shell_modes(p.l2) {
                    w[i] = s.omega.get(i);
                }
                let j = fine.jacobian(&fine.synth_grad(&psi), &fine.synth_grad(&w));
                let mut sq = 0.0;
                for &i in t.shell_modes(k) {
                    let mut e = vec![0.0; t.len()];
                    e[i] = 1.0;
                    let c = fine.inner(&fine.synth(&e), &j);
                    sq += c * c;
                }
                assert!((sq.sqrt() - p.norm).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sphere_off_triangle_terms_vanish() {
        let t = sphere(LaplacianVariant::Hodge, 12.0);
        let tensor = build_triads(&t);
        let s = small_state(&t, 2, 0.0);
        let keys: Vec<ShellKey> = t.shell_keys().collect();
        let pairs = convective_pairs(&t, &s.omega, &s.shells, &keys, ConvectiveEngine::Triads(&tensor)).unwrap();
        for &k in &keys {
            let kv = t.shell_value(k);
            for p in &pairs[&k] {
                if !region_of(kv, t.shell_value(p.l1), t.shell_value(p.l2)).is_triangle() {
                    assert!(p.norm <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn report_examples() {
        // torus hodge without harmonic part: no harmonic or linear terms
        let t = torus(2.0 * std::f64::consts::PI * 3.2);
        let tensor = build_triads(&t);
        let lam = t.lambda1();
        let env = TrappingEnvelope::new(2.0, 1.0, lam + 10.0, 2.0, lam).unwrap();
        let s = small_state(&t, 7, 0.0);
        let top = *t.shells().keys().last().unwrap();
        let rep = domination_report(&t, &s, top, &env, 0.1, ConvectiveEngine::Triads(&tensor)).unwrap();
        assert_eq!(rep.harmonic, 0.0);
        assert_eq!(rep.linear, 0.0);
        assert!(rep.diffusion > 0.0);
        assert!(rep.regions.values().all(|&v| v >= 0.0));
        assert_eq!(rep.dominated, rep.non_diffusive() <= rep.diffusion);
        let pairs = convective_pairs(&t, &s.omega, &s.shells, &[top], ConvectiveEngine::Triads(&tensor)).unwrap();
        let total: f64 = pairs[&top].iter().map(|p| p.norm).sum();
        assert!((rep.convective() - total).abs() <= 1e-12 * total.max(1.0));
        assert!(matches!(
            domination_report(&t, &s, ShellKey(3), &env, 0.1, ConvectiveEngine::Triads(&tensor)),
            Err(Error::Domain(_))
        ));
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["k", "regions", "harmonic", "linear", "diffusion", "dominated", "tail_bound"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn harmonic_term_matches_triads() {
        let t = torus(2.0 * std::f64::consts::PI * 3.2);
        let tensor = build_triads(&t);
        let s = small_state(&t, 9, 0.7);
        for k in t.shell_keys() {
            let mut pk = vec![0.0; t.len()];
            for &i in t.shell_modes(k) {
                pk[i] = s.omega.get(i);
            }
            let mut out = vec![0.0; t.len()];
            tensor.add_harmonic_transport(t.id(), &s.harmonic, &pk, &mut out).unwrap();
            let direct = t.shell_modes(k).iter().map(|&i| out[i] * out[i]).sum::<f64>().sqrt();
            let closed = harmonic_term(&t, &s.harmonic, s.omega.coeffs(), k);
            assert!((direct - closed).abs() < 1e-12 * closed.max(1.0));
            assert!(closed > 0.0);
        }
    }

    #[test]
    fn single_shell_state_uses_one_bin() {
        let t = sphere(LaplacianVariant::Deformation, 24.0);
        let tensor = build_triads(&t);
        let lam = t.lambda1();
        let env = TrappingEnvelope::new(2.0, 1.0, lam + 10.0, 2.0, lam).unwrap();
        let star = ShellKey(14);
        let shells = resolve_shells(&t, None).unwrap();
        let mut s = power_law_state(&t, &[star], 1.0, 2.0, 4).unwrap();
        s.shells = shells;
        let rep = domination_report(&t, &s, star, &env, 0.1, ConvectiveEngine::Triads(&tensor)).unwrap();
        let tag = region_of(t.shell_value(star), t.shell_value(star), t.shell_value(star));
        for (&r, &v) in &rep.regions {
            if r != tag {
                assert_eq!(v, 0.0);
            }
        }
        assert!(rep.linear > 0.0 && rep.harmonic == 0.0);
    }

    #[test]
    fn decay_fit_cases() {
        let t = sphere(LaplacianVariant::Deformation, 20.0);
        let lam = t.lambda1();
        let env = TrappingEnvelope::new(3.0, 1.0, lam + 10.0, 2.0, lam).unwrap();
        let tensor = build_triads(&t);
        let shells = resolve_shells(&t, None).unwrap();
        let ks: Vec<ShellKey> = (11..17).map(ShellKey).collect();
        let zero = GalerkinState {
            t: 0.0,
            shells: shells.clone(),
            omega: SpectralField::zeros(&t),
            harmonic: vec![],
        };
        let reps = domination_sweep(&t, &zero, &ks, &env, 0.1, ConvectiveEngine::Triads(&tensor)).unwrap();
        assert!(reps.iter().all(|r| r.non_diffusive() == 0.0 && r.diffusion == 0.0));
        let fit = decay_fit(&reps, 3.0, 0.3).unwrap();
        assert_eq!(fit.rejection, Some(FitRejection::ZeroSignal));
        assert!(!fit.passes);

        let mut single = zero.clone();
        single.omega.coeffs_mut()[t.shell_modes(ShellKey(12))[0]] = 1.0;
        let reps = domination_sweep(&t, &single, &ks, &env, 0.1, ConvectiveEngine::Triads(&tensor)).unwrap();
        assert_eq!(decay_fit(&reps, 3.0, 0.3).unwrap().rejection, Some(FitRejection::Degenerate));

        assert!(matches!(decay_fit(&reps[..4], 3.0, 0.3), Err(Error::InsufficientData(_))));

        let synthetic = power_law_state(&t, &shells, 1.0, 3.0, 1).unwrap();
        let reps = domination_sweep(&t, &synthetic, &ks, &env, 0.1, ConvectiveEngine::Triads(&tensor)).unwrap();
        let fit = decay_fit(&reps, 3.0, 0.3).unwrap();
        assert!(fit.rejection.is_none());
        assert_eq!(fit.residuals.len(), ks.len());
    }

    #[test]
    fn least_squares_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 - 1.5 * i as f64)).collect();
        let (b, a) = least_squares(&pts);
        assert!((b + 1.5).abs() < 1e-14 && (a - 2.0).abs() < 1e-14);
    }
}
