//! Acceptance criteria, one pass/fail line each. Runs without the libtest harness
//! so the lines are always printed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use surfns::dynamics::{
    enstrophy_constant, GalerkinState, GalerkinSystem, InitialCondition, MonitorRecord, RunConfig, Scheme, Trajectory,
};
use surfns::estimates::{appendix_batch, bilinear_fit, bilinear_sweep, fourier_trick_batch, BilinearConfig, PairSelection};
use surfns::operators::{velocity_energy, SpectralField};
use surfns::spectrum::{
    build_spectrum, LaplacianVariant, ManifoldConfig, ManifoldKind, ModeLabel, Parity, ShellKey, SpectrumTable,
};
use surfns::transform::Transform;
use surfns::trapping::{
    convective_pairs, decay_fit, domination_sweep, e_star, margins_from_norms, power_law_state, ConvectiveEngine,
    TrappingEnvelope,
};
use surfns::triads::build_triads;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn table(kind: ManifoldKind, variant: LaplacianVariant, cutoff: f64) -> SpectrumTable {
    build_spectrum(ManifoldConfig::new(kind, variant, cutoff)).expect("valid manifold")
}

fn config(t: &SpectrumTable, nu: f64, dt: f64, t_end: f64, scheme: Scheme, monitor_every: u64) -> RunConfig {
    RunConfig {
        manifold: *t.config(),
        shells: None,
        nu,
        dt,
        t_end,
        scheme,
        monitor_every,
    }
}

fn run(t: &SpectrumTable, cfg: RunConfig, init: impl FnOnce(&[ShellKey]) -> GalerkinState) -> Trajectory {
    let tr = build_triads(t);
    let sys = GalerkinSystem::new(t, &tr, cfg).expect("valid run");
    let s0 = init(sys.shells());
    sys.run(&s0).expect("run completes")
}

fn c1_exact_diffusion() -> Outcome {
    let start = Instant::now();
    let t = table(ManifoldKind::Torus, LaplacianVariant::Hodge, 2.0 * PI * 1.2);
    let id = t.lookup(ModeLabel::Torus { n: [1, 0], parity: Parity::Cos }).expect("mode present");
    let traj = run(&t, config(&t, 0.01, 1e-3, 0.1, Scheme::IntegratingFactorRk4, 100), |z| {
        InitialCondition::Mode { mode: id, amplitude: 1.0 }.build(&t, z).unwrap()
    });
    let ratio = traj.final_state.omega.get(id);
    let exact = (-0.01 * 4.0 * PI * PI * 0.1f64).exp();
    let rel = (ratio / exact - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(rel < 1e-6 && secs < 1.0, format!("relative error {rel:.3e}, runtime {secs:.3} s"))
}

fn c2_killing_stationarity() -> Outcome {
    let t = table(ManifoldKind::Sphere, LaplacianVariant::Deformation, 6.0);
    let id = t.lookup(ModeLabel::Sphere { l: 1, m: 0 }).expect("mode present");
    let traj = run(&t, config(&t, 1.0, 1e-2, 1.0, Scheme::IntegratingFactorRk4, 10), |z| {
        InitialCondition::Mode { mode: id, amplitude: 1.0 }.build(&t, z).unwrap()
    });
    let s0 = SpectralField::unit(&t, id);
    let change = traj
        .final_state
        .omega
        .coeffs()
        .iter()
        .zip(s0.coeffs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(change < 1e-10, format!("max coefficient change {change:.3e}"))
}

/// Seeded random viscous runs shared by criteria 3 and 4.
struct RandomRuns {
    torus: Vec<Vec<MonitorRecord>>,
    sphere: Vec<Vec<MonitorRecord>>,
}

fn random_runs() -> RandomRuns {
    let mut out = RandomRuns {
        torus: Vec::new(),
        sphere: Vec::new(),
    };
    for (kind, variant, cutoff) in [
        (ManifoldKind::Torus, LaplacianVariant::Hodge, 40.0),
        (ManifoldKind::Sphere, LaplacianVariant::Deformation, 20.5),
    ] {
        let t = table(kind, variant, cutoff);
        let tr = build_triads(&t);
        let sys = GalerkinSystem::new(&t, &tr, config(&t, 0.01, 1e-3, 0.5, Scheme::IntegratingFactorRk4, 10)).unwrap();
        for seed in 0..20u64 {
            let s0 = InitialCondition::Random {
                seed,
                amplitude: 2.0,
                slope: 1.0,
                harmonic_amplitude: 0.5,
            }
            .build(&t, sys.shells())
            .unwrap();
            let records = sys.run(&s0).expect("run completes").records;
            match kind {
                ManifoldKind::Torus => out.torus.push(records),
                ManifoldKind::Sphere => out.sphere.push(records),
            }
        }
    }
    out
}

fn c3_energy_inequality(runs: &RandomRuns) -> Outcome {
    let worst = runs
        .torus
        .iter()
        .chain(&runs.sphere)
        .flatten()
        .map(|r| r.energy_residual)
        .fold(0.0, f64::max);
    let records: usize = runs.torus.iter().chain(&runs.sphere).map(Vec::len).sum();
    outcome(
        worst <= 1e-8,
        format!("{} runs, {records} records, max energy residual {worst:.3e}", runs.torus.len() + runs.sphere.len()),
    )
}

fn c4_enstrophy(runs: &RandomRuns) -> Outcome {
    let mut rise: f64 = 0.0;
    for recs in &runs.torus {
        for w in recs.windows(2) {
            rise = rise.max(w[1].enstrophy - w[0].enstrophy);
        }
    }
    let gronwall = runs.sphere.iter().flatten().map(|r| r.enstrophy_residual).fold(0.0, f64::max);
    let c = enstrophy_constant(
        &table(ManifoldKind::Sphere, LaplacianVariant::Deformation, 20.5),
        &ManifoldConfig::new(ManifoldKind::Sphere, LaplacianVariant::Deformation, 20.5),
    );
    outcome(
        rise <= 1e-8 && gronwall <= 1e-8,
        format!("torus max enstrophy rise {rise:.3e}, sphere Gronwall excess {gronwall:.3e} (C = {c})"),
    )
}

fn energy_drift(t: &SpectrumTable, dt: f64) -> (f64, f64) {
    let traj = run(t, config(t, 0.0, dt, 0.1, Scheme::IntegratingFactorRk4, 1), |z| {
        InitialCondition::Random {
            seed: 5,
            amplitude: 20.0,
            slope: 0.0,
            harmonic_amplitude: 2.0,
        }
        .build(t, z)
        .unwrap()
    });
    let e0 = traj.records[0].energy;
    let total = traj.records.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max);
    let per_step = traj.records.windows(2).map(|w| (w[1].energy - w[0].energy).abs()).fold(0.0, f64::max);
    (total, per_step)
}

fn c5_inviscid_conservation() -> Outcome {
    let t = table(ManifoldKind::Torus, LaplacianVariant::Hodge, 4.0 * PI);
    let (total_a, step_a) = energy_drift(&t, 1e-3);
    let (total_b, step_b) = energy_drift(&t, 5e-4);
    let (total_c, _) = energy_drift(&t, 1e-4);
    let step_ratio = step_a / step_b;
    let total_ratio = total_a / total_b;
    outcome(
        step_ratio >= 16.0 && total_c < 1e-9,
        format!(
            "per-step drift ratio {step_ratio:.2} (accumulated drift ratio {total_ratio:.2}), drift at dt=1e-4 {total_c:.3e}"
        ),
    )
}

/// Degrees of the shells on the sphere: shell `n` holds degree `n + 1`.
fn degree(k: ShellKey) -> i64 {
    k.0 as i64 + 1
}

fn triangle(l: i64, l1: i64, l2: i64) -> bool {
    (l1 - l2).abs() <= l && l <= l1 + l2
}

fn c6_triangle_selection() -> Outcome {
    let start = Instant::now();
    let t = table(ManifoldKind::Sphere, LaplacianVariant::Hodge, 20.5);
    let shells: Vec<ShellKey> = t.shell_keys().collect();
    assert_eq!(t.max_degree(), 20);
    let tr = Transform::new(&t, 3 * 20 + 2).unwrap();

    // route 1: convective pair norms of a random state with unit norm per shell
    let state = power_law_state(&t, &shells, 1.0, 0.0, 11).unwrap();
    let pairs = convective_pairs(&t, &state.omega, &shells, &shells, ConvectiveEngine::Transform(&tr)).unwrap();
    let (mut conv_off, mut conv_allowed_min, mut conv_excluded) = (0.0f64, f64::INFINITY, 0usize);
    for (&k, terms) in &pairs {
        for p in terms {
            let (l, l1, l2) = (degree(k), degree(p.l1), degree(p.l2));
            if !triangle(l, l1, l2) {
                conv_off = conv_off.max(p.norm);
            } else if l1 != l2 && (l + l1 + l2) % 2 == 1 {
                conv_allowed_min = conv_allowed_min.min(p.norm);
            } else {
                // parity (odd total degree) or the identical-shell pair
                conv_excluded += 1;
                conv_off = conv_off.max(p.norm);
            }
        }
    }

    // route 2: trilinear integrals of random shell fields and of zonal harmonics on the grid
    let grids: BTreeMap<i64, Vec<f64>> = shells
        .iter()
        .map(|&k| {
            let mut f = SpectralField::zeros(&t);
            for &i in t.shell_modes(k) {
                f.coeffs_mut()[i] = state.omega.get(i);
            }
            (degree(k), tr.synth(f.coeffs()))
        })
        .collect();
    let zonal: BTreeMap<i64, Vec<f64>> = (1..=20i64)
        .map(|l| {
            let id = t.lookup(ModeLabel::Sphere { l: l as u32, m: 0 }).unwrap();
            (l, tr.synth(SpectralField::unit(&t, id).coeffs()))
        })
        .collect();
    let tri = |g: &BTreeMap<i64, Vec<f64>>, l: i64, l1: i64, l2: i64| {
        let (a, b, c) = (&g[&l], &g[&l1], &g[&l2]);
        let p: Vec<f64> = (0..a.len()).map(|i| a[i] * b[i] * c[i]).collect();
        tr.integrate(&p)
    };
    let (mut tri_off, mut zonal_min, mut zonal_excluded, mut off_count) = (0.0f64, f64::INFINITY, 0usize, 0usize);
    for l in 1..=20 {
        for l1 in 1..=20 {
            for l2 in 1..=20 {
                if !triangle(l, l1, l2) {
                    off_count += 1;
                    tri_off = tri_off.max(tri(&grids, l, l1, l2).abs()).max(tri(&zonal, l, l1, l2).abs());
                } else if (l + l1 + l2) % 2 == 0 {
                    zonal_min = zonal_min.min(tri(&zonal, l, l1, l2).abs());
                } else {
                    zonal_excluded += 1;
                    tri_off = tri_off.max(tri(&zonal, l, l1, l2).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        conv_off <= 1e-10 && tri_off <= 1e-10 && conv_allowed_min > 1e-8 && zonal_min > 1e-8 && secs < 300.0,
        format!(
            "{off_count} off-triangle triples: max convective {conv_off:.3e}, max trilinear {tri_off:.3e}; \
             allowed min convective {conv_allowed_min:.3e} ({conv_excluded} pairs excluded by selection), \
             zonal min {zonal_min:.3e} ({zonal_excluded} excluded by parity); runtime {secs:.1} s"
        ),
    )
}

fn c7_bilinear_scaling() -> Outcome {
    let t = table(ManifoldKind::Sphere, LaplacianVariant::Hodge, 41.0);
    // shells 3..=39 hold degrees 4..=40
    let shells: Vec<ShellKey> = (3..=39).map(ShellKey).collect();
    let cfg = BilinearConfig {
        l1: shells.clone(),
        l2: shells,
        pairs: PairSelection::Equal,
        a: 0,
        b: 0,
        c: 0,
        trials: 8,
        structured: true,
        seed: 1,
        quad_degree: None,
    };
    let fit = bilinear_fit(&bilinear_sweep(&t, &cfg).unwrap()).unwrap();
    outcome(
        (0.15..=0.35).contains(&fit.raw_slope),
        format!("{} cells, log-log slope {:.4}", fit.cells, fit.raw_slope),
    )
}

fn c8_viscous_domination() -> Outcome {
    let t = table(ManifoldKind::Sphere, LaplacianVariant::Deformation, 44.0);
    let shells: Vec<ShellKey> = t.shell_keys().collect();
    let state = power_law_state(&t, &shells, 1.0, 3.0, 8).unwrap();
    let k0 = t.lambda1() + 10.0;
    let w = state.omega.l2_norm();
    let u = velocity_energy(&t, &state.omega, &state.harmonic).sqrt();
    let tr = Transform::new(&t, 3 * t.max_degree() as usize + 2).unwrap();
    // the ten shells strictly beyond K0
    let ks: Vec<ShellKey> = (11..21).map(ShellKey).collect();
    let mut detail = Vec::new();
    let mut pass = true;
    for nu in [0.1, 1.0] {
        let c = enstrophy_constant(&t, t.config());
        let env = TrappingEnvelope::new(3.0, 1.0, k0, e_star(w, u, nu, c, 0.0), t.lambda1()).unwrap();
        let reports = domination_sweep(&t, &state, &ks, &env, nu, ConvectiveEngine::Transform(&tr)).unwrap();
        let fit = decay_fit(&reports, 3.0, 0.3).unwrap();
        let dominated = reports.iter().all(|r| r.dominated);
        pass &= dominated && fit.slope <= -0.95 && fit.passes;
        detail.push(format!("nu={nu}: slope {:.3}, dominated at all k: {dominated}", fit.slope));
    }
    outcome(pass, detail.join("; "))
}

fn c9_trapping_preservation() -> Outcome {
    let t = table(ManifoldKind::Sphere, LaplacianVariant::Deformation, 20.5);
    let tr = build_triads(&t);
    let (nu, t_end, r) = (0.1, 1.0, 2.0);
    let sys = GalerkinSystem::new(&t, &tr, config(&t, nu, 1e-3, t_end, Scheme::IntegratingFactorRk4, 10)).unwrap();
    let a0 = 1.0;
    let s0 = power_law_state(&t, sys.shells(), a0, r, 9).unwrap();
    let w = s0.omega.l2_norm();
    let u = velocity_energy(&t, &s0.omega, &s0.harmonic).sqrt();
    let es = e_star(w, u, nu, sys.enstrophy_constant(), t_end);
    let env = TrappingEnvelope::new(r, a0, t.lambda1() + 10.0, es, t.lambda1()).unwrap();
    let traj = sys.run(&s0).unwrap();
    let initial = margins_from_norms(&t, &traj.records[0].shell_norms, &env);
    let initial_fraction = initial.iter().map(|m| m.margin / m.bound).fold(f64::INFINITY, f64::min);
    let min_margin = traj
        .records
        .iter()
        .flat_map(|rec| margins_from_norms(&t, &rec.shell_norms, &env))
        .map(|m| m.margin)
        .fold(f64::INFINITY, f64::min);
    outcome(
        initial_fraction >= 0.5 && min_margin > 0.0,
        format!(
            "initial relative margin {initial_fraction:.4}, {} records, min margin {min_margin:.3e}",
            traj.records.len()
        ),
    )
}

fn c10_appendix_identity() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (kind, cutoff, seed) in [(ManifoldKind::Sphere, 20.5, 10), (ManifoldKind::Torus, 40.0, 10)] {
        let t = table(kind, LaplacianVariant::Hodge, cutoff);
        let rows = appendix_batch(&t, 100, seed).unwrap();
        let worst = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
        pass &= rows.len() == 100 && worst <= 1e-9;
        detail.push(format!("{}: max relative residual {worst:.3e}", kind.name()));
    }
    outcome(pass, detail.join("; "))
}

fn c11_fourier_trick() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (kind, cutoff, seed) in [(ManifoldKind::Sphere, 20.5, 11), (ManifoldKind::Torus, 40.0, 11)] {
        let t = table(kind, LaplacianVariant::Hodge, cutoff);
        let cases = fourier_trick_batch(&t, 50, seed, None).unwrap();
        let worst = cases
            .iter()
            .map(|c| c.result.residual.max(c.result.projection_residual))
            .fold(0.0, f64::max);
        let multi = cases.iter().filter(|c| c.result.eigenvalues > 1).count();
        pass &= cases.len() == 50 && worst <= 1e-12;
        detail.push(format!("{}: max residual {worst:.3e} ({multi} multi-eigenvalue shells)", kind.name()));
    }
    outcome(pass, detail.join("; "))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
        }
    }
}

/// Output files with the manifest reduced to its resolved configuration.
fn outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files);
    let manifest = String::from_utf8(files.remove(Path::new("manifest.txt")).expect("manifest written")).unwrap();
    let body = manifest.split_once("\n\n").expect("manifest header").1;
    files.insert(PathBuf::from("manifest.txt"), body.as_bytes().to_vec());
    files
}

fn surfns(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_surfns"))
        .args(args)
        .env_remove("SURFNS_CACHE_DIR")
        .status()
        .expect("binary runs")
        .success()
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c12.ini");
    fs::write(
        &cfg,
        "[manifest]\nseed = 12\n\n[manifold]\nkind = sphere\nvariant = deformation\ncutoff = 16\n\n\
         [run]\nnu = 0.05\ndt = 0.002\nt_end = 0.2\nscheme = if_rk4\nmonitor_every = 10\n\n\
         [initial]\nkind = random\namplitude = 1.0\nslope = 1.0\nharmonic_amplitude = 0.0\n\n\
         [trap]\nr = 2\na0 = 1\nk0 = lambda1+10\nshells = 11..=14\nengine = transform\nslack = 0.3\n\n\
         [bilinear]\nl1 = 2..=8\npairs = upper\na = 0\nb = 0\nc = 0\ntrials = 3\n\n\
         [fourier]\ncases = 10\n\n[appendix]\ntriples = 10\n",
    )
    .unwrap();
    let mut mismatches = Vec::new();
    let mut ok = true;
    for cmd in ["trap", "estimates"] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        let c = dir.path().join(format!("{cmd}-c"));
        ok &= surfns(&[cmd, "--quiet", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
        let manifest = a.join("manifest.txt");
        ok &= surfns(&[cmd, "--quiet", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
        let manifest = b.join("manifest.txt");
        ok &= surfns(&[cmd, "--quiet", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]);
        let (fa, fb, fc) = (outputs(&a), outputs(&b), outputs(&c));
        for (name, bytes) in &fa {
            if fb.get(name) != Some(bytes) || fc.get(name) != Some(bytes) {
                mismatches.push(format!("{cmd}/{}", name.display()));
            }
        }
        ok &= fa.len() == fb.len() && fa.len() == fc.len() && fa.len() > 3;
    }
    outcome(
        ok && mismatches.is_empty(),
        if mismatches.is_empty() {
            "trap and estimates outputs byte-identical across manifest re-runs".into()
        } else {
            format!("differing files: {}", mismatches.join(", "))
        },
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    // libtest flags (e.g. --nocapture, filters) are accepted and ignored
    let started = Instant::now();
    let runs = random_runs();
    let criteria: Vec<(&str, Check)> = vec![
        ("exact diffusion oracle", Box::new(c1_exact_diffusion)),
        ("Killing stationarity", Box::new(c2_killing_stationarity)),
        ("energy inequality", Box::new(|| c3_energy_inequality(&runs))),
        ("enstrophy monotonicity and Gronwall envelope", Box::new(|| c4_enstrophy(&runs))),
        ("inviscid conservation", Box::new(c5_inviscid_conservation)),
        ("sphere triangle selection", Box::new(c6_triangle_selection)),
        ("bilinear scaling", Box::new(c7_bilinear_scaling)),
        ("viscous domination decay", Box::new(c8_viscous_domination)),
        ("trapping preservation", Box::new(c9_trapping_preservation)),
        ("base identity", Box::new(c10_appendix_identity)),
        ("modulation identities", Box::new(c11_fourier_trick)),
        ("determinism", Box::new(c12_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        failed += (!o.pass) as usize;
        println!(
            "criterion {:>2} {:<45} {} [{:.1} s] {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
