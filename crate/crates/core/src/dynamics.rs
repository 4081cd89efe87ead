//! Truncated Galerkin vorticity flow.
//!
//! The state is `(ω_Z, 𝒫_H U_Z)` and the system is
//!
//! ```text
//! ∂_t ω   = −P_Z (J(ψ, ω) + ⟨𝒫_H U, ∇ω⟩) + ν P_Z (Δ + c) ω,   ψ = (−Δ)⁻¹ω
//! ∂_t 𝒫_H U = −𝒫_H ∇_U U + ν 𝒫_H Δ_M U
//! ```
//!
//! On the flat torus both terms of the harmonic equation vanish identically
//! (`∫ (U·∇)U_h = ∫ div(U U_h) = 0` and `Δ_M` preserves the Hodge splitting
//! with `Ric = 0`), so the harmonic velocity is constant in time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{velocity_energy, FieldPairs, SpectralField};
use crate::spectrum::{ManifoldConfig, ManifoldKind, ModeLabel, Parity, ShellKey, SpectrumTable};
use crate::triads::TriadTensor;

/// Coefficients above this magnitude (or NaN) abort a run.
pub const BLOW_UP_THRESHOLD: f64 = 1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEuler,
    IntegratingFactorRk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imex_euler" => Ok(Scheme::ImexEuler),
            "integrating_factor_rk4" | "if_rk4" => Ok(Scheme::IntegratingFactorRk4),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ImexEuler => "imex_euler",
            Scheme::IntegratingFactorRk4 => "integrating_factor_rk4",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifold: ManifoldConfig,
    /// Active shells `Z`; `None` selects every shell below the cutoff.
    pub shells: Option<Vec<ShellKey>>,
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Steps between monitor records (the final state is always recorded).
    pub monitor_every: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.manifold.validate()?;
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be finite and ≥ 0, got {}", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("final time must be ≥ 0, got {}", self.t_end)));
        }
        if self.monitor_every == 0 {
            return Err(Error::Config("monitor cadence must be at least one step".into()));
        }
        if let Some(z) = &self.shells {
            if z.is_empty() {
                return Err(Error::Config("empty shell selection".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub shells: Vec<ShellKey>,
    pub omega: SpectralField,
    pub harmonic: Vec<f64>,
}

/// JSON form of a [`GalerkinState`]; binary64 values round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub manifold: ManifoldConfig,
    pub t: f64,
    pub shells: Vec<u32>,
    pub omega: FieldPairs,
    pub harmonic: Vec<f64>,
}

impl GalerkinState {
    pub fn snapshot(&self, table: &SpectrumTable) -> Snapshot {
        Snapshot {
            manifold: *table.config(),
            t: self.t,
            shells: self.shells.iter().map(|k| k.0).collect(),
            omega: FieldPairs(self.omega.to_pairs()),
            harmonic: self.harmonic.clone(),
        }
    }

    pub fn from_snapshot(table: &SpectrumTable, snap: &Snapshot) -> Result<Self> {
        if snap.manifold != *table.config() {
            return Err(Error::Config("snapshot was taken on a different manifold configuration".into()));
        }
        let state = GalerkinState {
            t: snap.t,
            shells: snap.shells.iter().map(|&k| ShellKey(k)).collect(),
            omega: snap.omega.bind(table)?,
            harmonic: snap.harmonic.clone(),
        };
        state.validate(table)?;
        Ok(state)
    }

    /// Check the support, mean-zero and harmonic-dimension invariants.
    pub fn validate(&self, table: &SpectrumTable) -> Result<()> {
        self.omega.same_table(table.id())?;
        let b1 = table.kind().harmonic_dim();
        if self.harmonic.len() != b1 {
            return Err(Error::Dimension {
                expected: b1,
                got: self.harmonic.len(),
            });
        }
        if !self.omega.is_mean_zero() {
            return Err(Error::Domain("vorticity has a nonzero mean".into()));
        }
        let active = active_mask(table, &self.shells);
        for (id, &c) in self.omega.coeffs().iter().enumerate() {
            if c != 0.0 && !active[id] {
                return Err(Error::Domain(format!("vorticity has support on mode {id} outside Z")));
            }
        }
        Ok(())
    }
}

fn active_mask(table: &SpectrumTable, shells: &[ShellKey]) -> Vec<bool> {
    let mut mask = vec![false; table.len()];
    for &k in shells {
        for &id in table.shell_modes(k) {
            mask[id] = true;
        }
    }
    mask
}

/// Resolve the active shell set of a run.
pub fn resolve_shells(table: &SpectrumTable, selection: Option<&[ShellKey]>) -> Result<Vec<ShellKey>> {
    match selection {
        None => Ok(table.shell_keys().collect()),
        Some(z) => {
            let mut z = z.to_vec();
            z.sort();
            z.dedup();
            for k in &z {
                if table.shell_modes(*k).is_empty() {
                    return Err(Error::Config(format!("shell {k} holds no retained modes")));
                }
            }
            Ok(z)
        }
    }
}

/// Time derivative of the state.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    pub omega: Vec<f64>,
    pub harmonic: Vec<f64>,
}

/// Precomputed pieces of the Galerkin system for one configuration.
pub struct GalerkinSystem<'a> {
    table: &'a SpectrumTable,
    triads: &'a TriadTensor,
    config: RunConfig,
    shells: Vec<ShellKey>,
    active: Vec<bool>,
    /// Per-mode linear rate `ν(−s² + c)` (zero off `Z`).
    linear: Vec<f64>,
    inv_s2: Vec<f64>,
}

impl<'a> GalerkinSystem<'a> {
    pub fn new(table: &'a SpectrumTable, triads: &'a TriadTensor, config: RunConfig) -> Result<Self> {
        if config.manifold.kind != table.kind() || config.manifold.cutoff != table.config().cutoff {
            return Err(Error::Config("run configuration does not match the spectrum table".into()));
        }
        if triads.table_id() != table.id() {
            return Err(Error::Assembly(
                "triad tensor does not cover the active cutoff".into(),
            ));
        }
        let shells = resolve_shells(table, config.shells.as_deref())?;
        let active = active_mask(table, &shells);
        let c = config.manifold.ricci_shift();
        let linear = table
            .modes()
            .iter()
            .map(|m| if active[m.id] { config.nu * (-m.eigenvalue_sq() + c) } else { 0.0 })
            .collect();
        let inv_s2 = table
            .modes()
            .iter()
            .map(|m| if m.eigenvalue_sq() > 0.0 { 1.0 / m.eigenvalue_sq() } else { 0.0 })
            .collect();
        Ok(GalerkinSystem {
            table,
            triads,
            config,
            shells,
            active,
            linear,
            inv_s2,
        })
    }

    pub fn table(&self) -> &SpectrumTable {
        self.table
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn shells(&self) -> &[ShellKey] {
        &self.shells
    }

    /// Per-mode linear rates `ν(−s² + c)` on `Z`.
    pub fn linear_rates(&self) -> &[f64] {
        &self.linear
    }

    /// A zero state on this system's shells.
    pub fn zero_state(&self) -> GalerkinState {
        GalerkinState {
            t: 0.0,
            shells: self.shells.clone(),
            omega: SpectralField::zeros(self.table),
            harmonic: vec![0.0; self.table.kind().harmonic_dim()],
        }
    }

    /// `−P_Z ∇_U ω` in coefficients.
    pub fn nonlinear(&self, omega: &[f64], harmonic: &[f64]) -> Vec<f64> {
        let psi: Vec<f64> = omega.iter().zip(&self.inv_s2).map(|(w, s)| w * s).collect();
        let mut adv = vec![0.0; omega.len()];
        let id = self.table.id();
        self.triads
            .add_jacobian(id, &psi, omega, &mut adv)
            .expect("system validated the tensor");
        if !harmonic.is_empty() {
            self.triads
                .add_harmonic_transport(id, harmonic, omega, &mut adv)
                .expect("system validated the tensor");
        }
        adv.iter()
            .zip(&self.active)
            .map(|(a, &on)| if on { -a } else { 0.0 })
            .collect()
    }

    /// Full right-hand side.
    pub fn rhs(&self, state: &GalerkinState) -> Result<Derivative> {
        state.omega.same_table(self.table.id())?;
        let w = state.omega.coeffs();
        let mut d = self.nonlinear(w, &state.harmonic);
        for ((di, l), wi) in d.iter_mut().zip(&self.linear).zip(w) {
            *di += l * wi;
        }
        Ok(Derivative {
            omega: d,
            harmonic: vec![0.0; state.harmonic.len()],
        })
    }

    /// Advance by `h` (no-op for `h = 0`).
    pub fn advance(&self, state: &GalerkinState, h: f64) -> GalerkinState {
        if h == 0.0 {
            return state.clone();
        }
        let w = state.omega.coeffs();
        let a = &state.harmonic;
        let next: Vec<f64> = match self.config.scheme {
            Scheme::ImexEuler => {
                let n = self.nonlinear(w, a);
                w.iter()
                    .zip(&n)
                    .zip(&self.linear)
                    .map(|((wi, ni), l)| (wi + h * ni) / (1.0 - h * l))
                    .collect()
            }
            Scheme::IntegratingFactorRk4 => {
                let e_half: Vec<f64> = self.linear.iter().map(|l| (0.5 * h * l).exp()).collect();
                let e_full: Vec<f64> = self.linear.iter().map(|l| (h * l).exp()).collect();
                let k1 = self.nonlinear(w, a);
                let s2: Vec<f64> = (0..w.len()).map(|i| e_half[i] * (w[i] + 0.5 * h * k1[i])).collect();
                let k2 = self.nonlinear(&s2, a);
                let s3: Vec<f64> = (0..w.len()).map(|i| e_half[i] * w[i] + 0.5 * h * k2[i]).collect();
                let k3 = self.nonlinear(&s3, a);
                let s4: Vec<f64> = (0..w.len()).map(|i| e_full[i] * w[i] + h * e_half[i] * k3[i]).collect();
                let k4 = self.nonlinear(&s4, a);
                (0..w.len())
                    .map(|i| {
                        e_full[i] * w[i]
                            + h / 6.0 * (e_full[i] * k1[i] + 2.0 * e_half[i] * (k2[i] + k3[i]) + k4[i])
                    })
                    .collect()
            }
        };
        GalerkinState {
            t: state.t + h,
            shells: state.shells.clone(),
            omega: SpectralField::from_coeffs(self.table, next).expect("length preserved"),
            harmonic: state.harmonic.clone(),
        }
    }

    /// One step of size `config.dt`.
    pub fn step(&self, state: &GalerkinState) -> GalerkinState {
        self.advance(state, self.config.dt)
    }

    /// Gronwall constant of the enstrophy envelope.
    pub fn enstrophy_constant(&self) -> f64 {
        enstrophy_constant(self.table, &self.config.manifold)
    }

    /// Integrate to `t_end`, recording monitors every `monitor_every` steps.
    pub fn run(&self, initial: &GalerkinState) -> std::result::Result<Trajectory, Box<RunFailure>> {
        let fail = |error: Error, records: Vec<MonitorRecord>, state: GalerkinState| {
            Box::new(RunFailure {
                error,
                partial: Trajectory {
                    records,
                    final_state: state,
                    steps: 0,
                },
            })
        };
        if let Err(e) = self.config.validate().and_then(|_| initial.validate(self.table)) {
            return Err(fail(e, Vec::new(), initial.clone()));
        }
        if initial.shells != self.shells {
            return Err(fail(
                Error::Config("initial state uses a different shell selection".into()),
                Vec::new(),
                initial.clone(),
            ));
        }
        let reference = Reference::new(self.table, initial, self.config.nu, self.enstrophy_constant());
        let mut records = vec![diagnostics(self.table, initial, Some(&reference))];
        let t0 = initial.t;
        let dt = self.config.dt;
        let total = self.config.t_end;
        let n_steps = ((total / dt) - 1e-9).ceil().max(0.0) as u64;
        let mut state = initial.clone();
        for n in 0..n_steps {
            let t_now = (n as f64 * dt).min(total);
            let t_next = ((n + 1) as f64 * dt).min(total);
            let mut next = self.advance(&state, t_next - t_now);
            next.t = t0 + t_next;
            if let Some(reason) = blow_up_reason(next.omega.coeffs()) {
                let err = Error::BlowUp {
                    step: n + 1,
                    t: next.t,
                    reason,
                };
                let mut partial = fail(err, records, state);
                partial.partial.steps = n;
                return Err(partial);
            }
            state = next;
            if (n + 1) % self.config.monitor_every == 0 || n + 1 == n_steps {
                records.push(diagnostics(self.table, &state, Some(&reference)));
            }
        }
        Ok(Trajectory {
            records,
            final_state: state,
            steps: n_steps,
        })
    }
}

fn blow_up_reason(c: &[f64]) -> Option<String> {
    for (i, v) in c.iter().enumerate() {
        if v.is_nan() {
            return Some(format!("NaN in mode {i}"));
        }
        if v.abs() > BLOW_UP_THRESHOLD {
            return Some(format!("|ω_{i}| = {v:e} exceeds {BLOW_UP_THRESHOLD:e}"));
        }
    }
    None
}

/// `C = 2 c max(1, 1/λ₁)`: from `½ d/dt ‖ω‖² ≤ ν c ‖ω‖²` and the Poincaré chain.
pub fn enstrophy_constant(table: &SpectrumTable, manifold: &ManifoldConfig) -> f64 {
    2.0 * manifold.ricci_shift() * (1.0 / table.lambda1()).max(1.0)
}

/// Initial-time data for the monitor residuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub velocity_norm: f64,
    pub vorticity_norm: f64,
    pub nu: f64,
    pub c: f64,
    pub t0: f64,
}

impl Reference {
    pub fn new(table: &SpectrumTable, initial: &GalerkinState, nu: f64, c: f64) -> Self {
        Reference {
            velocity_norm: velocity_energy(table, &initial.omega, &initial.harmonic).sqrt(),
            vorticity_norm: initial.omega.l2_norm(),
            nu,
            c,
            t0: initial.t,
        }
    }

    /// `(‖ω(0)‖ + ‖U(0)‖) e^{νC(t−t₀)}`.
    pub fn enstrophy_envelope(&self, t: f64) -> f64 {
        (self.vorticity_norm + self.velocity_norm) * (self.nu * self.c * (t - self.t0)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub t: f64,
    /// `‖U‖₂²`.
    pub energy: f64,
    /// `‖ω‖₂²`.
    pub enstrophy: f64,
    pub shell_norms: Vec<(ShellKey, f64)>,
    /// `max(0, ‖U(t)‖₂ − ‖U(0)‖₂)`.
    pub energy_residual: f64,
    /// `max(0, ‖ω(t)‖₂ − (‖ω(0)‖₂ + ‖U(0)‖₂) e^{νCt})`.
    pub enstrophy_residual: f64,
}

/// Monitor quantities of `state`; residuals are zero without a reference.
pub fn diagnostics(table: &SpectrumTable, state: &GalerkinState, reference: Option<&Reference>) -> MonitorRecord {
    let energy = velocity_energy(table, &state.omega, &state.harmonic);
    let c = state.omega.coeffs();
    let enstrophy: f64 = c.iter().map(|x| x * x).sum();
    let shell_norms = state
        .shells
        .iter()
        .map(|&k| {
            let sq: f64 = table.shell_modes(k).iter().map(|&i| c[i] * c[i]).sum();
            (k, sq.sqrt())
        })
        .collect();
    let (energy_residual, enstrophy_residual) = match reference {
        Some(r) => (
            (energy.sqrt() - r.velocity_norm).max(0.0),
            (enstrophy.sqrt() - r.enstrophy_envelope(state.t)).max(0.0),
        ),
        None => (0.0, 0.0),
    };
    MonitorRecord {
        t: state.t,
        energy,
        enstrophy,
        shell_norms,
        energy_residual,
        enstrophy_residual,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<MonitorRecord>,
    pub final_state: GalerkinState,
    pub steps: u64,
}

#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    /// Records up to the last good step, with that step's state.
    pub partial: Trajectory,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} monitor records kept)", self.error, self.partial.records.len())
    }
}

impl std::error::Error for RunFailure {}

/// Initial vorticity recipes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    /// `amplitude · e_mode`.
    Mode { mode: usize, amplitude: f64 },
    /// Gaussian coefficients weighted by `s^{−slope}` on `Z`, scaled to `‖ω‖₂ = amplitude`;
    /// torus harmonic part Gaussian with norm `harmonic_amplitude`.
    Random {
        seed: u64,
        amplitude: f64,
        slope: f64,
        harmonic_amplitude: f64,
    },
    /// Torus cellular flow `ψ ∝ sin 2πx sin 2πy`, scaled to `‖ω‖₂ = amplitude`.
    TaylorGreen { amplitude: f64 },
}

impl InitialCondition {
    pub fn build(&self, table: &SpectrumTable, shells: &[ShellKey]) -> Result<GalerkinState> {
        let b1 = table.kind().harmonic_dim();
        let mut state = GalerkinState {
            t: 0.0,
            shells: shells.to_vec(),
            omega: SpectralField::zeros(table),
            harmonic: vec![0.0; b1],
        };
        let active = active_mask(table, shells);
        match *self {
            InitialCondition::Zero => {}
            InitialCondition::Mode { mode, amplitude } => {
                if mode >= table.len() || !active[mode] {
                    return Err(Error::Config(format!("mode {mode} is not an active mode")));
                }
                state.omega.coeffs_mut()[mode] = amplitude;
            }
            InitialCondition::Random {
                seed,
                amplitude,
                slope,
                harmonic_amplitude,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut raw = vec![0.0; table.len()];
                for m in table.modes() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    if active[m.id] {
                        raw[m.id] = g * m.eigenvalue.powf(-slope);
                    }
                }
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for x in raw.iter_mut() {
                        *x *= amplitude / norm;
                    }
                }
                state.omega = SpectralField::from_coeffs(table, raw)?;
                if b1 > 0 {
                    let h: Vec<f64> = (0..b1).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let hn = h.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                    state.harmonic = h.iter().map(|x| x * harmonic_amplitude / hn).collect();
                }
            }
            InitialCondition::TaylorGreen { amplitude } => {
                if table.kind() != ManifoldKind::Torus {
                    return Err(Error::Config("Taylor-Green data is defined on the torus".into()));
                }
                let a = table.lookup(ModeLabel::Torus { n: [1, -1], parity: Parity::Cos });
                let b = table.lookup(ModeLabel::Torus { n: [1, 1], parity: Parity::Cos });
                let (Some(a), Some(b)) = (a, b) else {
                    return Err(Error::Config("cutoff does not retain |n| = √2 modes".into()));
                };
                if !active[a] {
                    return Err(Error::Config("Taylor-Green shell is not active".into()));
                }
                // sin 2πx sin 2πy = (√2cos2π(x−y) − √2cos2π(x+y)) / (2√2)
                let c = amplitude / std::f64::consts::SQRT_2;
                state.omega.coeffs_mut()[a] = c;
                state.omega.coeffs_mut()[b] = -c;
            }
        }
        state.validate(table)?;
        Ok(state)
    }
}
