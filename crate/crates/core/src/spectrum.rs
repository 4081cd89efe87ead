//! Eigenstructure of `sqrt(-Δ)` on the supported surfaces.
//!
//! The torus is the unit square `[0,1)²` with the real Fourier basis
//! `1, √2 cos(2π n·x), √2 sin(2π n·x)`; the sphere is the unit sphere with
//! real orthonormal spherical harmonics. Every retained mode carries an exact
//! eigen-level (torus `|n|²`, sphere `l`) and, for nonzero modes, the frequency
//! shell `[λ₁ + n, λ₁ + n + 1)` it belongs to.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Torus,
    Sphere,
}

impl ManifoldKind {
    pub fn lambda1(self) -> f64 {
        match self {
            ManifoldKind::Torus => 2.0 * PI,
            ManifoldKind::Sphere => SQRT_2,
        }
    }

    /// Total area of the surface (unit square torus, unit sphere).
    pub fn area(self) -> f64 {
        match self {
            ManifoldKind::Torus => 1.0,
            ManifoldKind::Sphere => 4.0 * PI,
        }
    }

    /// First Betti number: dimension of the harmonic vector fields.
    pub fn harmonic_dim(self) -> usize {
        match self {
            ManifoldKind::Torus => 2,
            ManifoldKind::Sphere => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Torus => "torus",
            ManifoldKind::Sphere => "sphere",
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus" => Ok(ManifoldKind::Torus),
            "sphere" => Ok(ManifoldKind::Sphere),
            other => Err(Error::Config(format!("unknown manifold kind `{other}`"))),
        }
    }
}

/// Choice of vector Laplacian `Δ_M = Δ_H + F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianVariant {
    Hodge,
    Bochner,
    Deformation,
}

impl LaplacianVariant {
    pub fn name(self) -> &'static str {
        match self {
            LaplacianVariant::Hodge => "hodge",
            LaplacianVariant::Bochner => "bochner",
            LaplacianVariant::Deformation => "deformation",
        }
    }
}

impl std::str::FromStr for LaplacianVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hodge" => Ok(LaplacianVariant::Hodge),
            "bochner" => Ok(LaplacianVariant::Bochner),
            "deformation" => Ok(LaplacianVariant::Deformation),
            other => Err(Error::Config(format!("unknown laplacian variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub kind: ManifoldKind,
    pub variant: LaplacianVariant,
    /// Modes with `sqrt(-Δ)` eigenvalue strictly below the cutoff are retained.
    pub cutoff: f64,
}

impl ManifoldConfig {
    pub fn new(kind: ManifoldKind, variant: LaplacianVariant, cutoff: f64) -> Self {
        ManifoldConfig {
            kind,
            variant,
            cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l1 = self.kind.lambda1();
        if !self.cutoff.is_finite() || self.cutoff < l1 {
            return Err(Error::Config(format!(
                "cutoff {} is below λ₁ = {} for the {}",
                self.cutoff,
                l1,
                self.kind.name()
            )));
        }
        if self.cutoff <= l1 {
            return Err(Error::Config(format!(
                "cutoff {} retains only the constant mode",
                self.cutoff
            )));
        }
        Ok(())
    }

    /// The zeroth-order shift `c` in `⋆dΔ_M♭ curl ψ = Δω + cω`.
    ///
    /// Ricci vanishes on the flat torus; on the unit sphere `Ric` is the
    /// identity on vector fields, entering once for Bochner and twice for the
    /// deformation Laplacian.
    pub fn ricci_shift(&self) -> f64 {
        match (self.kind, self.variant) {
            (ManifoldKind::Torus, _) => 0.0,
            (ManifoldKind::Sphere, LaplacianVariant::Hodge) => 0.0,
            (ManifoldKind::Sphere, LaplacianVariant::Bochner) => 1.0,
            (ManifoldKind::Sphere, LaplacianVariant::Deformation) => 2.0,
        }
    }
}

/// Frequency shell `[λ₁ + n, λ₁ + n + 1)`, stored by its integer offset `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShellKey(pub u32);

impl ShellKey {
    pub fn offset(self) -> u32 {
        self.0
    }

    pub fn value(self, lambda1: f64) -> f64 {
        lambda1 + self.0 as f64
    }
}

impl fmt::Display for ShellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "λ₁+{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Cos,
    Sin,
}

/// Degeneracy label of a real eigenfunction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    /// `√2 cos(2π n·x)` or `√2 sin(2π n·x)`; `n = (0,0)` with `Cos` is the constant 1.
    Torus { n: [i32; 2], parity: Parity },
    /// Real spherical harmonic: `m > 0` cosine type, `m < 0` sine type.
    Sphere { l: u32, m: i32 },
}

pub type ModeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub id: ModeId,
    /// Eigenvalue `s` of `sqrt(-Δ)`.
    pub eigenvalue: f64,
    /// Exact eigen-level: `|n|²` on the torus, `l` on the sphere.
    pub level: u32,
    pub label: ModeLabel,
    pub shell: Option<ShellKey>,
}

impl Mode {
    pub fn is_constant(&self) -> bool {
        self.level == 0
    }

    pub fn eigenvalue_sq(&self) -> f64 {
        match self.label {
            ModeLabel::Torus { .. } => 4.0 * PI * PI * self.level as f64,
            ModeLabel::Sphere { l, .. } => (l * (l + 1)) as f64,
        }
    }
}

/// Identity of a spectrum table; fields and tensors carry it to detect mixing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableId {
    pub kind: ManifoldKind,
    pub cutoff_bits: u64,
    pub modes: usize,
}

#[derive(Clone, Debug)]
pub struct SpectrumTable {
    config: ManifoldConfig,
    lambda1: f64,
    modes: Vec<Mode>,
    shells: BTreeMap<ShellKey, Vec<ModeId>>,
    levels: BTreeMap<u32, Vec<ModeId>>,
    index: HashMap<ModeLabel, ModeId>,
}

impl PartialEq for SpectrumTable {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.modes == other.modes
    }
}

/// Build the retained eigenbasis for `config`.
pub fn build_spectrum(config: ManifoldConfig) -> Result<SpectrumTable> {
    config.validate()?;
    let labels = match config.kind {
        ManifoldKind::Torus => torus_labels(config.cutoff),
        ManifoldKind::Sphere => sphere_labels(config.cutoff),
    };
    SpectrumTable::from_labels(config, labels)
}

fn torus_labels(cutoff: f64) -> Vec<(u32, ModeLabel)> {
    let nmax = (cutoff / (2.0 * PI)).ceil() as i32 + 1;
    let mut out = vec![(
        0,
        ModeLabel::Torus {
            n: [0, 0],
            parity: Parity::Cos,
        },
    )];
    for n1 in 0..=nmax {
        for n2 in -nmax..=nmax {
            if n1 == 0 && n2 <= 0 {
                continue;
            }
            let level = (n1 * n1 + n2 * n2) as u32;
            if 2.0 * PI * (level as f64).sqrt() >= cutoff {
                continue;
            }
            for parity in [Parity::Cos, Parity::Sin] {
                out.push((level, ModeLabel::Torus { n: [n1, n2], parity }));
            }
        }
    }
    out.sort_by_key(|&(level, label)| match label {
        ModeLabel::Torus { n, parity } => (level, n[0], n[1], parity),
        ModeLabel::Sphere { .. } => unreachable!(),
    });
    out
}

fn sphere_labels(cutoff: f64) -> Vec<(u32, ModeLabel)> {
    let mut out = Vec::new();
    let mut l: u32 = 0;
    while ((l * (l + 1)) as f64).sqrt() < cutoff {
        for m in -(l as i32)..=(l as i32) {
            out.push((l, ModeLabel::Sphere { l, m }));
        }
        l += 1;
    }
    out
}

/// Offset `n` of the shell holding `sqrt(l(l+1))` on the unit sphere, decided
/// in integer arithmetic: `√2 + n ≤ sqrt(l(l+1)) < √2 + n + 1`.
fn sphere_shell_offset(l: u32) -> u32 {
    let q = (l as i64) * (l as i64 + 1);
    // (√2 + n)² ≤ q  ⇔  q − n² − 2 ≥ 2√2 n  ⇔  d ≥ 0 and d² ≥ 8n²
    let at_least = |n: i64| {
        let d = q - n * n - 2;
        d >= 0 && d * d >= 8 * n * n
    };
    let mut n = ((q as f64).sqrt() - SQRT_2).floor().max(0.0) as i64;
    while n > 0 && !at_least(n) {
        n -= 1;
    }
    while at_least(n + 1) {
        n += 1;
    }
    n as u32
}

impl SpectrumTable {
    fn from_labels(config: ManifoldConfig, labels: Vec<(u32, ModeLabel)>) -> Result<Self> {
        let lambda1 = config.kind.lambda1();
        let mut modes = Vec::with_capacity(labels.len());
        let mut shells: BTreeMap<ShellKey, Vec<ModeId>> = BTreeMap::new();
        let mut levels: BTreeMap<u32, Vec<ModeId>> = BTreeMap::new();
        let mut index = HashMap::new();
        for (id, (level, label)) in labels.into_iter().enumerate() {
            let eigenvalue = match label {
                ModeLabel::Torus { .. } => 2.0 * PI * (level as f64).sqrt(),
                ModeLabel::Sphere { l, .. } => ((l * (l + 1)) as f64).sqrt(),
            };
            let shell = if level == 0 {
                None
            } else {
                Some(match label {
                    ModeLabel::Sphere { l, .. } => ShellKey(sphere_shell_offset(l)),
                    ModeLabel::Torus { .. } => ShellKey((eigenvalue - lambda1).floor() as u32),
                })
            };
            if let Some(k) = shell {
                shells.entry(k).or_default().push(id);
            }
            levels.entry(level).or_default().push(id);
            index.insert(label, id);
            modes.push(Mode {
                id,
                eigenvalue,
                level,
                label,
                shell,
            });
        }
        if modes.len() < 2 {
            return Err(Error::Config(
                "cutoff retains only the constant mode".into(),
            ));
        }
        Ok(SpectrumTable {
            config,
            lambda1,
            modes,
            shells,
            levels,
            index,
        })
    }

    pub fn config(&self) -> &ManifoldConfig {
        &self.config
    }

    pub fn kind(&self) -> ManifoldKind {
        self.config.kind
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn id(&self) -> TableId {
        TableId {
            kind: self.config.kind,
            cutoff_bits: self.config.cutoff.to_bits(),
            modes: self.modes.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, id: ModeId) -> &Mode {
        &self.modes[id]
    }

    pub fn lookup(&self, label: ModeLabel) -> Option<ModeId> {
        self.index.get(&label).copied()
    }

    /// Id of the constant mode (always 0).
    pub fn constant_mode(&self) -> ModeId {
        0
    }

    pub fn shells(&self) -> &BTreeMap<ShellKey, Vec<ModeId>> {
        &self.shells
    }

    pub fn shell_keys(&self) -> impl Iterator<Item = ShellKey> + '_ {
        self.shells.keys().copied()
    }

    pub fn shell_modes(&self, k: ShellKey) -> &[ModeId] {
        self.shells.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn shell_value(&self, k: ShellKey) -> f64 {
        k.value(self.lambda1)
    }

    /// Eigen-levels (exact eigenvalue groups) with their modes.
    pub fn levels(&self) -> &BTreeMap<u32, Vec<ModeId>> {
        &self.levels
    }

    pub fn level_modes(&self, level: u32) -> &[ModeId] {
        self.levels.get(&level).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct eigen-levels inside shell `k`, ascending.
    pub fn shell_levels(&self, k: ShellKey) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .shell_modes(k)
            .iter()
            .map(|&id| self.modes[id].level)
            .collect();
        out.dedup();
        out
    }

    /// Largest spherical-harmonic degree retained (sphere), or largest `|n|∞` (torus).
    pub fn max_degree(&self) -> u32 {
        self.modes
            .iter()
            .map(|m| match m.label {
                ModeLabel::Sphere { l, .. } => l,
                ModeLabel::Torus { n, .. } => n[0].unsigned_abs().max(n[1].unsigned_abs()),
            })
            .max()
            .unwrap_or(0)
    }

    /// The shell `k ∈ λ₁ + ℕ₀` with `s ∈ [k, k+1)`.
    pub fn shell_of(&self, s: f64) -> Result<ShellKey> {
        shell_of(self.config.kind, s)
    }
}

/// The shell `k ∈ λ₁ + ℕ₀` with `s ∈ [k, k+1)` on the given manifold.
pub fn shell_of(kind: ManifoldKind, s: f64) -> Result<ShellKey> {
    if s.is_nan() || s < 0.0 {
        return Err(Error::Domain(format!("negative eigenvalue {s}")));
    }
    if s == 0.0 {
        return Err(Error::Domain(
            "s = 0 is the harmonic/constant frequency and has no shell".into(),
        ));
    }
    let l1 = kind.lambda1();
    if s < l1 {
        return Err(Error::Domain(format!(
            "s = {s} lies below λ₁ = {l1}; no shell"
        )));
    }
    Ok(ShellKey((s - l1).floor() as u32))
}
