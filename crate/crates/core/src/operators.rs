//! Spectral operators of the vorticity formulation.
//!
//! Fields are dense coefficient vectors over the modes of one spectrum table.
//! Velocities are split as `U = 𝒫_H U + curl ψ` with `ψ = (−Δ)⁻¹ω`; on the torus
//! the harmonic basis is the pair of unit constant fields `∂_x, ∂_y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{LaplacianVariant, ManifoldConfig, ModeId, ShellKey, SpectrumTable, TableId};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    table: TableId,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(table: &SpectrumTable) -> Self {
        SpectralField {
            table: table.id(),
            coeffs: vec![0.0; table.len()],
        }
    }

    pub fn from_coeffs(table: &SpectrumTable, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != table.len() {
            return Err(Error::Assembly(format!(
                "{} coefficients for a table of {} modes",
                coeffs.len(),
                table.len()
            )));
        }
        Ok(SpectralField {
            table: table.id(),
            coeffs,
        })
    }

    /// A single unit eigenmode.
    pub fn unit(table: &SpectrumTable, id: ModeId) -> Self {
        let mut f = Self::zeros(table);
        f.coeffs[id] = 1.0;
        f
    }

    /// Build from `(mode_id, coefficient)` pairs; unlisted modes are zero.
    pub fn from_pairs(table: &SpectrumTable, pairs: &[(ModeId, f64)]) -> Result<Self> {
        let mut f = Self::zeros(table);
        for &(id, c) in pairs {
            if id >= table.len() {
                return Err(Error::Assembly(format!("mode id {id} is not retained")));
            }
            f.coeffs[id] = c;
        }
        Ok(f)
    }

    /// `(mode_id, coefficient)` pairs for every retained mode.
    pub fn to_pairs(&self) -> Vec<(ModeId, f64)> {
        self.coeffs.iter().copied().enumerate().collect()
    }

    pub fn table_id(&self) -> TableId {
        self.table
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn get(&self, id: ModeId) -> f64 {
        self.coeffs[id]
    }

    /// True when `π₀f = 0`.
    pub fn is_mean_zero(&self) -> bool {
        self.coeffs[0] == 0.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, a: f64) -> Self {
        SpectralField {
            table: self.table,
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.same_table(other.table)?;
        Ok(SpectralField {
            table: self.table,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub(crate) fn same_table(&self, table: TableId) -> Result<()> {
        if self.table != table {
            return Err(Error::Assembly("field belongs to a different spectrum table".into()));
        }
        Ok(())
    }
}

impl Serialize for SpectralField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

/// Deserialized `(mode_id, coefficient)` list, to be bound to a table with [`FieldPairs::bind`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldPairs(pub Vec<(ModeId, f64)>);

impl FieldPairs {
    pub fn bind(&self, table: &SpectrumTable) -> Result<SpectralField> {
        SpectralField::from_pairs(table, &self.0)
    }
}

/// `U = Σ_h harmonic[h] H_h + curl ψ`, stored with its vorticity `ω = −Δψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityRepr {
    pub harmonic: Vec<f64>,
    pub stream: SpectralField,
}

fn check_table(table: &SpectrumTable, f: &SpectralField) -> Result<()> {
    f.same_table(table.id())
}

/// `P_k f`: keep only the modes of shell `k` (an unknown shell gives the zero field).
pub fn shell_project(table: &SpectrumTable, f: &SpectralField, k: ShellKey) -> Result<SpectralField> {
    check_table(table, f)?;
    let mut out = SpectralField::zeros(table);
    for &id in table.shell_modes(k) {
        out.coeffs[id] = f.coeffs[id];
    }
    Ok(out)
}

/// `‖P_k f‖₂`.
pub fn shell_norm(table: &SpectrumTable, f: &SpectralField, k: ShellKey) -> f64 {
    table
        .shell_modes(k)
        .iter()
        .map(|&id| f.coeffs[id] * f.coeffs[id])
        .sum::<f64>()
        .sqrt()
}

/// `π_s f` for the exact eigen-level `level` (`|n|²` on the torus, `l` on the sphere).
pub fn eigenspace_project(table: &SpectrumTable, f: &SpectralField, level: u32) -> Result<SpectralField> {
    check_table(table, f)?;
    let mut out = SpectralField::zeros(table);
    for &id in table.level_modes(level) {
        out.coeffs[id] = f.coeffs[id];
    }
    Ok(out)
}

/// `(−Δ)⁻¹ f`, defined on mean-zero fields.
pub fn inverse_laplacian(table: &SpectrumTable, f: &SpectralField) -> Result<SpectralField> {
    check_table(table, f)?;
    if f.coeffs[0] != 0.0 {
        return Err(Error::Domain(format!(
            "inverse Laplacian of a field with constant component {}",
            f.coeffs[0]
        )));
    }
    let mut out = SpectralField::zeros(table);
    for m in &table.modes()[1..] {
        out.coeffs[m.id] = f.coeffs[m.id] / m.eigenvalue_sq();
    }
    Ok(out)
}

/// `−Δ f`.
pub fn neg_laplacian(table: &SpectrumTable, f: &SpectralField) -> Result<SpectralField> {
    check_table(table, f)?;
    let mut out = SpectralField::zeros(table);
    for m in table.modes() {
        out.coeffs[m.id] = f.coeffs[m.id] * m.eigenvalue_sq();
    }
    Ok(out)
}

/// The divergence-free velocity with vorticity `ω` and harmonic part `harmonic`.
pub fn velocity_from_vorticity(
    table: &SpectrumTable,
    omega: &SpectralField,
    harmonic: &[f64],
) -> Result<VelocityRepr> {
    let b1 = table.kind().harmonic_dim();
    if harmonic.len() != b1 {
        return Err(Error::Dimension {
            expected: b1,
            got: harmonic.len(),
        });
    }
    let stream = inverse_laplacian(table, omega)?;
    Ok(VelocityRepr {
        harmonic: harmonic.to_vec(),
        stream,
    })
}

/// `⋆d♭U = −Δψ`.
pub fn vorticity_of(table: &SpectrumTable, u: &VelocityRepr) -> Result<SpectralField> {
    neg_laplacian(table, &u.stream)
}

/// `‖U‖₂² = ‖𝒫_H U‖² + Σ ω_i² / s_i²`.
pub fn velocity_energy(table: &SpectrumTable, omega: &SpectralField, harmonic: &[f64]) -> f64 {
    let h: f64 = harmonic.iter().map(|a| a * a).sum();
    let w: f64 = table.modes()[1..]
        .iter()
        .map(|m| omega.coeffs[m.id] * omega.coeffs[m.id] / m.eigenvalue_sq())
        .sum();
    h + w
}

/// Per-mode symbol of `⋆dΔ_M♭ curl(−Δ)⁻¹`: `−s² + c` with `c` the Ricci shift.
pub fn viscous_symbol(config: &ManifoldConfig, eigenvalue_sq: f64) -> f64 {
    -eigenvalue_sq + config.ricci_shift()
}

/// `⋆dΔ_M♭U = Δω + cω` for `U` with vorticity `ω`.
///
/// Harmonic fields do not contribute: `Δ_H` annihilates them and on the
/// torus the curvature term vanishes.
pub fn viscous_term(
    table: &SpectrumTable,
    omega: &SpectralField,
    variant: LaplacianVariant,
) -> Result<SpectralField> {
    check_table(table, omega)?;
    if !omega.is_mean_zero() {
        return Err(Error::Domain("viscous term of a vorticity with nonzero mean".into()));
    }
    let config = ManifoldConfig {
        variant,
        ..*table.config()
    };
    let mut out = SpectralField::zeros(table);
    for m in &table.modes()[1..] {
        out.coeffs[m.id] = viscous_symbol(&config, m.eigenvalue_sq()) * omega.coeffs[m.id];
    }
    Ok(out)
}

/// `𝒫_H Δ_M U` on the harmonic basis.
///
/// On the flat torus `Δ_H` kills the harmonic part, `𝒫_H` kills the curl part
/// and `Ric = 0`, so every variant gives zero. The sphere has no harmonic sector.
pub fn harmonic_viscous_term(
    table: &SpectrumTable,
    u: &VelocityRepr,
    _variant: LaplacianVariant,
) -> Result<Vec<f64>> {
    let b1 = table.kind().harmonic_dim();
    if b1 == 0 {
        return Err(Error::Dimension { expected: 2, got: 0 });
    }
    if u.harmonic.len() != b1 {
        return Err(Error::Dimension {
            expected: b1,
            got: u.harmonic.len(),
        });
    }
    Ok(vec![0.0; b1])
}

/// `‖π₀ f‖₂ + (Σ_k k^{2m} ‖P_k f‖₂²)^{1/2}`.
pub fn sobolev_norm(table: &SpectrumTable, f: &SpectralField, m: u32) -> f64 {
    let mut acc = 0.0;
    for (&k, ids) in table.shells() {
        let kv = table.shell_value(k);
        let sq: f64 = ids.iter().map(|&id| f.coeffs[id] * f.coeffs[id]).sum();
        acc += kv.powi(2 * m as i32) * sq;
    }
    f.coeffs[0].abs() + acc.sqrt()
}

/// `‖U‖_{H¹} = ‖𝒫_H U‖₂ + (Σ_k k² ‖P_k U‖₂²)^{1/2}` for the velocity of `ω`.
///
/// `‖P_k curl ψ‖² = Σ_{i∈k} s_i² ψ_i² = Σ_{i∈k} ω_i² / s_i²`.
pub fn velocity_h1_norm(table: &SpectrumTable, omega: &SpectralField, harmonic: &[f64]) -> f64 {
    let h = harmonic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut acc = 0.0;
    for (&k, ids) in table.shells() {
        let kv = table.shell_value(k);
        let sq: f64 = ids
            .iter()
            .map(|&id| omega.coeffs[id] * omega.coeffs[id] / table.mode(id).eigenvalue_sq())
            .sum();
        acc += kv * kv * sq;
    }
    h + acc.sqrt()
}

/// Constant of the chain `‖U‖₂ ≤ max(1, 1/λ₁)(‖𝒫_H U‖₂ + ‖ω‖₂)`.
pub fn poincare_constant(table: &SpectrumTable) -> f64 {
    (1.0 / table.lambda1()).max(1.0)
}
