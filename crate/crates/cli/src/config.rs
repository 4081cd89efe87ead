//! Line-based `key = value` configuration with `[section]` headers.
//!
//! Every physical parameter must be given explicitly; only I/O settings,
//! seeds and monitor cadence have defaults. A parsed [`Config`] writes back
//! to the same format with every value resolved, which is what the run
//! manifest records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use surfns::dynamics::{RunConfig, Scheme};
use surfns::estimates::PairSelection;
use surfns::spectrum::{LaplacianVariant, ManifoldConfig, ManifoldKind, ShellKey};
use surfns::{Error, Result};

const SECTIONS: &[&str] = &[
    "manifest", "manifold", "run", "initial", "trap", "bilinear", "trilinear", "fourier", "appendix", "export",
];

/// Raw `section → key → (value, line)` map.
#[derive(Debug, Default)]
struct Ini {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

fn parse_ini(text: &str) -> Result<Ini> {
    let mut ini = Ini::default();
    let mut current: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let lineno = n + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(Error::Config(format!("line {lineno}: unknown section [{name}]")));
            }
            if ini.sections.contains_key(&name) {
                return Err(Error::Config(format!("line {lineno}: section [{name}] repeated")));
            }
            ini.sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {lineno}: expected `key = value`, got `{line}`")));
        };
        let Some(section) = &current else {
            return Err(Error::Config(format!("line {lineno}: key outside of any section")));
        };
        let key = key.trim().to_string();
        let entries = ini.sections.get_mut(section).expect("section inserted");
        if entries.contains_key(&key) {
            return Err(Error::Config(format!("line {lineno}: key `{key}` repeated in [{section}]")));
        }
        entries.insert(key, (value.trim().to_string(), lineno));
    }
    Ok(ini)
}

/// Typed access to one section; unknown keys are reported by [`Section::finish`].
struct Section {
    name: &'static str,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| {
                Error::Config(format!("line {line}: [{}] {key} = `{v}`: {e}", self.name))
            }),
        }
    }

    fn req<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::Config(format!("[{}] requires `{key}`", self.name)))
    }

    fn req_with<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        match self.take(key) {
            None => Err(Error::Config(format!("[{}] requires `{key}`", self.name))),
            Some((v, line)) => parse(&v).map_err(|e| Error::Config(format!("line {line}: [{}] {key}: {e}", self.name))),
        }
    }

    fn opt_with<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
        if self.entries.contains_key(key) {
            self.req_with(key, parse).map(Some)
        } else {
            Ok(None)
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key `{key}` in [{}]", self.name)));
        }
        Ok(())
    }
}

/// Shell offsets as `a..=b`, `a..b` or a comma list; returned sorted without repeats.
pub fn parse_shells(s: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let range = if let Some((a, b)) = part.split_once("..=") {
            parse_u32(a)?..parse_u32(b)?.saturating_add(1)
        } else if let Some((a, b)) = part.split_once("..") {
            parse_u32(a)?..parse_u32(b)?
        } else {
            let k = parse_u32(part)?;
            k..k + 1
        };
        if range.is_empty() {
            return Err(Error::Config(format!("empty shell range `{part}`")));
        }
        out.extend(range);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty shell list `{s}`")));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn parse_u32(s: &str) -> Result<u32> {
    s.trim().parse().map_err(|_| Error::Config(format!("`{s}` is not a shell offset")))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("`{p}` is not a number"))))
        .collect()
}

fn parse_u32_triple(s: &str) -> Result<[u32; 3]> {
    let v: Vec<u32> = s.split(',').map(parse_u32).collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::Config(format!("`{s}` must list three integers")))
}

/// Compact form of a shell list: contiguous runs become `a..=b`.
pub fn format_shells(shells: &[u32]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < shells.len() {
        let mut j = i;
        while j + 1 < shells.len() && shells[j + 1] == shells[j] + 1 {
            j += 1;
        }
        if j > i {
            parts.push(format!("{}..={}", shells[i], shells[j]));
        } else {
            parts.push(shells[i].to_string());
        }
        i = j + 1;
    }
    parts.join(",")
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// A frequency given as a number or relative to `λ₁` (`lambda1+10`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frequency {
    Value(f64),
    Lambda1Plus(f64),
}

impl Frequency {
    pub fn resolve(self, lambda1: f64) -> f64 {
        match self {
            Frequency::Value(v) => v,
            Frequency::Lambda1Plus(d) => lambda1 + d,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("lambda1") {
            let rest = rest.trim();
            if rest.is_empty() {
                return Ok(Frequency::Lambda1Plus(0.0));
            }
            let d = rest
                .strip_prefix('+')
                .ok_or_else(|| Error::Config(format!("expected `lambda1+<number>`, got `{s}`")))?;
            return d
                .trim()
                .parse()
                .map(Frequency::Lambda1Plus)
                .map_err(|_| Error::Config(format!("`{d}` is not a number")));
        }
        s.parse().map(Frequency::Value).map_err(|_| Error::Config(format!("`{s}` is not a frequency")))
    }

    fn format(self) -> String {
        match self {
            Frequency::Value(v) => fmt_f64(v),
            Frequency::Lambda1Plus(d) => format!("lambda1+{}", fmt_f64(d)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub monitor_every: u64,
    pub shells: Option<Vec<u32>>,
}

impl RunSection {
    pub fn run_config(&self, manifold: ManifoldConfig) -> RunConfig {
        RunConfig {
            manifold,
            shells: self.shells.as_ref().map(|z| z.iter().map(|&k| ShellKey(k)).collect()),
            nu: self.nu,
            dt: self.dt,
            t_end: self.t_end,
            scheme: self.scheme,
            monitor_every: self.monitor_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialSpec {
    Zero,
    Mode { mode: usize, amplitude: f64 },
    Random { seed: u64, amplitude: f64, slope: f64, harmonic_amplitude: f64 },
    TaylorGreen { amplitude: f64 },
    /// `‖P_l ω‖₂ = amplitude / l^r` on every active shell.
    PowerLaw { seed: u64, amplitude: f64, r: f64 },
    /// On the trapping envelope of `[trap]` at every active shell.
    Envelope { seed: u64 },
    Snapshot { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineChoice {
    Triads,
    Transform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrapSection {
    pub r: f64,
    pub a0: f64,
    pub k0: Frequency,
    /// Computed from the initial state and `[run]` when absent.
    pub e_star: Option<f64>,
    /// Required without `[run]`; must agree with it otherwise.
    pub nu: Option<f64>,
    pub shells: Vec<u32>,
    pub engine: EngineChoice,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearSection {
    pub l1: Vec<u32>,
    pub l2: Vec<u32>,
    pub pairs: PairSelection,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub trials: usize,
    pub structured: bool,
    pub seed: u64,
    pub quad_degree: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrilinearSection {
    pub l2: u32,
    pub l3: u32,
    pub k_values: Vec<f64>,
    pub a: [u32; 3],
    pub b: [u32; 3],
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSection {
    pub cases: usize,
    pub seed: u64,
    /// Fixed modulation; drawn uniformly in `[0, 1)` per case when absent.
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppendixSection {
    pub triples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportSection {
    pub snapshot: PathBuf,
    pub degree: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub manifold: ManifoldConfig,
    pub run: Option<RunSection>,
    pub initial: Option<InitialSpec>,
    pub trap: Option<TrapSection>,
    pub bilinear: Option<BilinearSection>,
    pub trilinear: Option<TrilinearSection>,
    pub fourier: Option<FourierSection>,
    pub appendix: Option<AppendixSection>,
    pub export: Option<ExportSection>,
    /// Seed used for every section without its own `seed`.
    pub seed: u64,
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    s.parse()
}

fn parse_pairs(s: &str) -> Result<PairSelection> {
    match s {
        "equal" => Ok(PairSelection::Equal),
        "upper" => Ok(PairSelection::Upper),
        "all" => Ok(PairSelection::All),
        other => Err(Error::Config(format!("unknown pair selection `{other}` (equal|upper|all)"))),
    }
}

fn parse_engine(s: &str) -> Result<EngineChoice> {
    match s {
        "triads" => Ok(EngineChoice::Triads),
        "transform" => Ok(EngineChoice::Transform),
        other => Err(Error::Config(format!("unknown engine `{other}` (triads|transform)"))),
    }
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl Config {
    /// Parse `text`; relative paths resolve against `base`. `seed_override` beats the manifest seed.
    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Config> {
        let ini = parse_ini(text)?;
        let mut sections = ini.sections;
        let mut section = |name: &'static str| {
            sections.remove(name).map(|entries| Section { name, entries })
        };

        let mut seed = 0u64;
        if let Some(mut m) = section("manifest") {
            if let Some(s) = m.opt::<u64>("seed")? {
                seed = s;
            }
            // provenance keys written by the tool itself
            for key in ["command", "config", "out", "version", "created_unix"] {
                m.take(key);
            }
            m.finish()?;
        }
        if let Some(s) = seed_override {
            seed = s;
        }

        let mut m = section("manifold").ok_or_else(|| Error::Config("missing [manifold] section".into()))?;
        let manifold = ManifoldConfig::new(
            m.req::<ManifoldKind>("kind")?,
            m.req::<LaplacianVariant>("variant")?,
            m.req("cutoff")?,
        );
        m.finish()?;
        manifold.validate()?;

        let run = match section("run") {
            None => None,
            Some(mut s) => {
                let r = RunSection {
                    nu: s.req("nu")?,
                    dt: s.req("dt")?,
                    t_end: s.req("t_end")?,
                    scheme: s.req_with("scheme", parse_scheme)?,
                    monitor_every: s.opt("monitor_every")?.unwrap_or(1),
                    shells: s.opt_with("shells", parse_shells)?,
                };
                s.finish()?;
                Some(r)
            }
        };

        let initial = match section("initial") {
            None => None,
            Some(mut s) => {
                let kind: String = s.req("kind")?;
                let spec = match kind.as_str() {
                    "zero" => InitialSpec::Zero,
                    "mode" => InitialSpec::Mode {
                        mode: s.req("mode")?,
                        amplitude: s.req("amplitude")?,
                    },
                    "random" => InitialSpec::Random {
                        seed: s.opt("seed")?.unwrap_or(seed),
                        amplitude: s.req("amplitude")?,
                        slope: s.req("slope")?,
                        harmonic_amplitude: s.req("harmonic_amplitude")?,
                    },
                    "taylor_green" => InitialSpec::TaylorGreen {
                        amplitude: s.req("amplitude")?,
                    },
                    "power_law" => InitialSpec::PowerLaw {
                        seed: s.opt("seed")?.unwrap_or(seed),
                        amplitude: s.req("amplitude")?,
                        r: s.req("r")?,
                    },
                    "envelope" => InitialSpec::Envelope {
                        seed: s.opt("seed")?.unwrap_or(seed),
                    },
                    "snapshot" => InitialSpec::Snapshot {
                        path: resolve_path(base, &s.req::<String>("path")?),
                    },
                    other => {
                        return Err(Error::Config(format!(
                            "unknown initial kind `{other}` (zero|mode|random|taylor_green|power_law|envelope|snapshot)"
                        )))
                    }
                };
                s.finish()?;
                Some(spec)
            }
        };

        let trap = match section("trap") {
            None => None,
            Some(mut s) => {
                let t = TrapSection {
                    r: s.req("r")?,
                    a0: s.req("a0")?,
                    k0: s.req_with("k0", Frequency::parse)?,
                    e_star: s.opt("e_star")?,
                    nu: s.opt("nu")?,
                    shells: s.req_with("shells", parse_shells)?,
                    engine: s.req_with("engine", parse_engine)?,
                    slack: s.req("slack")?,
                };
                s.finish()?;
                Some(t)
            }
        };

        let bilinear = match section("bilinear") {
            None => None,
            Some(mut s) => {
                let l1 = s.req_with("l1", parse_shells)?;
                let b = BilinearSection {
                    l2: s.opt_with("l2", parse_shells)?.unwrap_or_else(|| l1.clone()),
                    l1,
                    pairs: s.req_with("pairs", parse_pairs)?,
                    a: s.req("a")?,
                    b: s.req("b")?,
                    c: s.req("c")?,
                    trials: s.req("trials")?,
                    structured: s.opt("structured")?.unwrap_or(false),
                    seed: s.opt("seed")?.unwrap_or(seed),
                    quad_degree: s.opt("quad_degree")?,
                };
                s.finish()?;
                Some(b)
            }
        };

        let trilinear = match section("trilinear") {
            None => None,
            Some(mut s) => {
                let t = TrilinearSection {
                    l2: s.req("l2")?,
                    l3: s.req("l3")?,
                    k_values: s.req_with("k_values", parse_f64_list)?,
                    a: s.req_with("a", parse_u32_triple)?,
                    b: s.req_with("b", parse_u32_triple)?,
                    trials: s.req("trials")?,
                    seed: s.opt("seed")?.unwrap_or(seed),
                };
                s.finish()?;
                Some(t)
            }
        };

        let fourier = match section("fourier") {
            None => None,
            Some(mut s) => {
                let f = FourierSection {
                    cases: s.req("cases")?,
                    seed: s.opt("seed")?.unwrap_or(seed),
                    theta: s.opt("theta")?,
                };
                s.finish()?;
                Some(f)
            }
        };

        let appendix = match section("appendix") {
            None => None,
            Some(mut s) => {
                let a = AppendixSection {
                    triples: s.req("triples")?,
                    seed: s.opt("seed")?.unwrap_or(seed),
                };
                s.finish()?;
                Some(a)
            }
        };

        let export = match section("export") {
            None => None,
            Some(mut s) => {
                let e = ExportSection {
                    snapshot: resolve_path(base, &s.req::<String>("snapshot")?),
                    degree: s.opt("degree")?,
                };
                s.finish()?;
                Some(e)
            }
        };

        Ok(Config {
            manifold,
            run,
            initial,
            trap,
            bilinear,
            trilinear,
            fourier,
            appendix,
            export,
            seed,
        })
    }

    /// Every section with resolved values, in the input format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.manifold;
        let _ = writeln!(out, "[manifold]\nkind = {}\nvariant = {}\ncutoff = {}", m.kind.name(), m.variant.name(), fmt_f64(m.cutoff));
        if let Some(r) = &self.run {
            let _ = writeln!(
                out,
                "\n[run]\nnu = {}\ndt = {}\nt_end = {}\nscheme = {}\nmonitor_every = {}",
                fmt_f64(r.nu),
                fmt_f64(r.dt),
                fmt_f64(r.t_end),
                r.scheme.name(),
                r.monitor_every
            );
            if let Some(z) = &r.shells {
                let _ = writeln!(out, "shells = {}", format_shells(z));
            }
        }
        if let Some(i) = &self.initial {
            out.push_str("\n[initial]\n");
            let _ = match i {
                InitialSpec::Zero => writeln!(out, "kind = zero"),
                InitialSpec::Mode { mode, amplitude } => {
                    writeln!(out, "kind = mode\nmode = {mode}\namplitude = {}", fmt_f64(*amplitude))
                }
                InitialSpec::Random {
                    seed,
                    amplitude,
                    slope,
                    harmonic_amplitude,
                } => writeln!(
                    out,
                    "kind = random\nseed = {seed}\namplitude = {}\nslope = {}\nharmonic_amplitude = {}",
                    fmt_f64(*amplitude),
                    fmt_f64(*slope),
                    fmt_f64(*harmonic_amplitude)
                ),
                InitialSpec::TaylorGreen { amplitude } => {
                    writeln!(out, "kind = taylor_green\namplitude = {}", fmt_f64(*amplitude))
                }
                InitialSpec::PowerLaw { seed, amplitude, r } => writeln!(
                    out,
                    "kind = power_law\nseed = {seed}\namplitude = {}\nr = {}",
                    fmt_f64(*amplitude),
                    fmt_f64(*r)
                ),
                InitialSpec::Envelope { seed } => writeln!(out, "kind = envelope\nseed = {seed}"),
                InitialSpec::Snapshot { path } => writeln!(out, "kind = snapshot\npath = {}", path.display()),
            };
        }
        if let Some(t) = &self.trap {
            let _ = writeln!(
                out,
                "\n[trap]\nr = {}\na0 = {}\nk0 = {}\nshells = {}\nengine = {}\nslack = {}",
                fmt_f64(t.r),
                fmt_f64(t.a0),
                t.k0.format(),
                format_shells(&t.shells),
                match t.engine {
                    EngineChoice::Triads => "triads",
                    EngineChoice::Transform => "transform",
                },
                fmt_f64(t.slack)
            );
            if let Some(e) = t.e_star {
                let _ = writeln!(out, "e_star = {}", fmt_f64(e));
            }
            if let Some(nu) = t.nu {
                let _ = writeln!(out, "nu = {}", fmt_f64(nu));
            }
        }
        if let Some(b) = &self.bilinear {
            let _ = writeln!(
                out,
                "\n[bilinear]\nl1 = {}\nl2 = {}\npairs = {}\na = {}\nb = {}\nc = {}\ntrials = {}\nstructured = {}\nseed = {}",
                format_shells(&b.l1),
                format_shells(&b.l2),
                match b.pairs {
                    PairSelection::Equal => "equal",
                    PairSelection::Upper => "upper",
                    PairSelection::All => "all",
                },
                b.a,
                b.b,
                b.c,
                b.trials,
                b.structured,
                b.seed
            );
            if let Some(d) = b.quad_degree {
                let _ = writeln!(out, "quad_degree = {d}");
            }
        }
        if let Some(t) = &self.trilinear {
            let ks: Vec<String> = t.k_values.iter().map(|&k| fmt_f64(k)).collect();
            let _ = writeln!(
                out,
                "\n[trilinear]\nl2 = {}\nl3 = {}\nk_values = {}\na = {},{},{}\nb = {},{},{}\ntrials = {}\nseed = {}",
                t.l2,
                t.l3,
                ks.join(","),
                t.a[0],
                t.a[1],
                t.a[2],
                t.b[0],
                t.b[1],
                t.b[2],
                t.trials,
                t.seed
            );
        }
        if let Some(f) = &self.fourier {
            let _ = writeln!(out, "\n[fourier]\ncases = {}\nseed = {}", f.cases, f.seed);
            if let Some(th) = f.theta {
                let _ = writeln!(out, "theta = {}", fmt_f64(th));
            }
        }
        if let Some(a) = &self.appendix {
            let _ = writeln!(out, "\n[appendix]\ntriples = {}\nseed = {}", a.triples, a.seed);
        }
        if let Some(e) = &self.export {
            let _ = writeln!(out, "\n[export]\nsnapshot = {}", e.snapshot.display());
            if let Some(d) = e.degree {
                let _ = writeln!(out, "degree = {d}");
            }
        }
        out
    }
}
