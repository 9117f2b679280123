//! Experiment descriptions in a line-oriented INI dialect.
//!
//! Four sections describe a run: `[law]` (reproduction point process),
//! `[characteristic]` (scoring rule), `[run]` (horizon, replicates, seed,
//! tolerances), and the optional `[output]` (directory and file prefix).
//! Parsing reports *all* problems at once, each with its line number, so a
//! config can be repaired in one pass.

use std::fmt;
use std::path::PathBuf;

use cmj::characteristics::Characteristic;
use cmj::harness::ExperimentSettings;
use cmj::laws::{LifetimeDist, ReproductionLaw};

/// One problem found while parsing; `line` is 1-based where known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub law: ReproductionLaw,
    pub characteristic: Characteristic,
    pub horizon: f64,
    pub delta: Option<f64>,
    pub replicates: u64,
    pub seed: u64,
    pub cap: Option<u64>,
    pub condition_on_survival: bool,
    /// `verify` passes the variance check iff |ratio − 1| ≤ this.
    pub variance_tol: f64,
    /// `verify` passes a normality check iff its p-value exceeds this.
    pub ks_alpha: f64,
    pub directory: PathBuf,
    pub prefix: String,
    /// Parsed key/value pairs in file order, for the output header echo.
    entries: Vec<(String, String)>,
}

impl ExperimentConfig {
    /// Replicate/seed/δ/cap settings for the Monte Carlo harness.
    pub fn settings(&self) -> ExperimentSettings {
        let mut settings = ExperimentSettings::new(self.replicates, self.seed);
        settings.delta = self.delta;
        settings.cap = self.cap;
        settings.condition_on_survival = self.condition_on_survival;
        settings
    }

    /// Applies the `CMJ_SEED` override, keeping the echo consistent.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        for (key, value) in &mut self.entries {
            if key == "run.seed" {
                *value = seed.to_string();
            }
        }
    }

    /// The canonical one-line restatement of the configuration that every
    /// output file embeds, so results stay self-describing.
    pub fn echo(&self) -> String {
        self.entries
            .iter()
            .map(|(key, value)| format!("{key}={value}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

struct RawEntry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

/// Splits the text into section-tagged key/value entries, then builds and
/// validates each section. Returns either the config or every error found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut entries: Vec<RawEntry> = Vec::new();
    let mut section_lines: Vec<(String, usize)> = Vec::new();
    let mut current: Option<String> = None;

    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                errors.push(ConfigError::at(line, format!("malformed section header `{trimmed}`")));
                current = None;
                continue;
            };
            let name = name.trim().to_ascii_lowercase();
            if !matches!(name.as_str(), "law" | "characteristic" | "run" | "output") {
                errors.push(ConfigError::at(line, format!("unknown section `[{name}]`")));
                current = None;
                continue;
            }
            if section_lines.iter().any(|(existing, _)| *existing == name) {
                errors.push(ConfigError::at(line, format!("section `[{name}]` appears twice")));
            }
            section_lines.push((name.clone(), line));
            current = Some(name);
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            errors.push(ConfigError::at(line, format!("expected `key = value`, got `{trimmed}`")));
            continue;
        };
        let Some(section) = current.clone() else {
            errors.push(ConfigError::at(line, "key outside of any section"));
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if entries.iter().any(|e| e.section == section && e.key == key) {
            errors.push(ConfigError::at(line, format!("duplicate key `{key}` in [{section}]")));
            continue;
        }
        entries.push(RawEntry { section, key, value, line });
    }

    let section_line = |name: &str| section_lines.iter().find(|(s, _)| s == name).map(|&(_, l)| l);
    for required in ["law", "characteristic", "run"] {
        if section_line(required).is_none() {
            errors.push(ConfigError::global(format!("missing required section [{required}]")));
        }
    }

    let law = section_line("law").and_then(|line| {
        build_law(&Section::new("law", line, &entries), &mut errors)
    });
    let characteristic = section_line("characteristic").and_then(|line| {
        build_characteristic(&Section::new("characteristic", line, &entries), &mut errors)
    });
    let run = section_line("run").and_then(|line| {
        build_run(&Section::new("run", line, &entries), &mut errors)
    });
    let output_line = section_line("output");
    let output = build_output(
        &Section::new("output", output_line.unwrap_or(0), &entries),
        output_line.is_some(),
        &mut errors,
    );

    if !errors.is_empty() {
        return Err(errors);
    }
    let (law, characteristic, run) = (law.unwrap(), characteristic.unwrap(), run.unwrap());
    let echo_entries = entries
        .iter()
        .map(|e| (format!("{}.{}", e.section, e.key), e.value.clone()))
        .collect();
    Ok(ExperimentConfig {
        law,
        characteristic,
        horizon: run.horizon,
        delta: run.delta,
        replicates: run.replicates,
        seed: run.seed,
        cap: run.cap,
        condition_on_survival: run.condition_on_survival,
        variance_tol: run.variance_tol,
        ks_alpha: run.ks_alpha,
        directory: output.0,
        prefix: output.1,
        entries: echo_entries,
    })
}

/// Keyed access to one section's entries, with consumption tracking so
/// leftovers can be reported as unknown keys.
struct Section<'a> {
    name: &'a str,
    header_line: usize,
    entries: Vec<&'a RawEntry>,
    consumed: std::cell::RefCell<Vec<bool>>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, header_line: usize, entries: &'a [RawEntry]) -> Self {
        let entries: Vec<&RawEntry> = entries.iter().filter(|e| e.section == name).collect();
        let consumed = std::cell::RefCell::new(vec![false; entries.len()]);
        Self { name, header_line, entries, consumed }
    }

    fn take(&self, key: &str) -> Option<(&'a str, usize)> {
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.key == key {
                self.consumed.borrow_mut()[i] = true;
                return Some((entry.value.as_str(), entry.line));
            }
        }
        None
    }

    fn require(&self, key: &str, errors: &mut Vec<ConfigError>) -> Option<(&'a str, usize)> {
        let found = self.take(key);
        if found.is_none() {
            errors.push(ConfigError::at(
                self.header_line,
                format!("[{}] is missing the required key `{key}`", self.name),
            ));
        }
        found
    }

    fn finish(&self, errors: &mut Vec<ConfigError>) {
        for (i, entry) in self.entries.iter().enumerate() {
            if !self.consumed.borrow()[i] {
                errors.push(ConfigError::at(
                    entry.line,
                    format!("unknown key `{}` in [{}]", entry.key, self.name),
                ));
            }
        }
    }
}

fn parse_f64(value: &str, line: usize, key: &str, errors: &mut Vec<ConfigError>) -> Option<f64> {
    match value.parse::<f64>() {
        Ok(x) if x.is_finite() => Some(x),
        _ => {
            errors.push(ConfigError::at(line, format!("`{key}` must be a finite number, got `{value}`")));
            None
        }
    }
}

fn parse_u64(value: &str, line: usize, key: &str, errors: &mut Vec<ConfigError>) -> Option<u64> {
    match value.parse::<u64>() {
        Ok(x) => Some(x),
        Err(_) => {
            errors.push(ConfigError::at(line, format!("`{key}` must be a non-negative integer, got `{value}`")));
            None
        }
    }
}

fn parse_bool(value: &str, line: usize, key: &str, errors: &mut Vec<ConfigError>) -> Option<bool> {
    match value {
        "true" => Some(true),
        "false" => Some(false),
        _ => {
            errors.push(ConfigError::at(line, format!("`{key}` must be `true` or `false`, got `{value}`")));
            None
        }
    }
}

/// "1:0.5,3:0.5" → [(1, 0.5), (3, 0.5)]; used by both pmf and atoms keys.
fn parse_pairs(value: &str, line: usize, key: &str, errors: &mut Vec<ConfigError>) -> Option<Vec<(u32, f64)>> {
    let mut pairs = Vec::new();
    for piece in value.split(',') {
        let Some((left, right)) = piece.split_once(':') else {
            errors.push(ConfigError::at(
                line,
                format!("`{key}` entries look like `value:weight`, got `{piece}`"),
            ));
            return None;
        };
        let Ok(v) = left.trim().parse::<u32>() else {
            errors.push(ConfigError::at(line, format!("`{key}`: `{left}` is not an integer")));
            return None;
        };
        let Ok(w) = right.trim().parse::<f64>() else {
            errors.push(ConfigError::at(line, format!("`{key}`: `{right}` is not a number")));
            return None;
        };
        pairs.push((v, w));
    }
    Some(pairs)
}

fn build_law(section: &Section, errors: &mut Vec<ConfigError>) -> Option<ReproductionLaw> {
    let kind = section.require("kind", errors);
    let law = match kind {
        Some((kind_value, kind_line)) => match kind_value {
            "galton_watson" => section.require("pmf", errors).and_then(|(value, line)| {
                let pmf = parse_pairs(value, line, "pmf", errors)?;
                attach(ReproductionLaw::galton_watson(pmf), line, errors)
            }),
            "lattice_atoms" => {
                let deterministic = section
                    .take("deterministic")
                    .and_then(|(v, l)| parse_bool(v, l, "deterministic", errors))
                    .unwrap_or(false);
                section.require("atoms", errors).and_then(|(value, line)| {
                    let atoms = parse_pairs(value, line, "atoms", errors)?;
                    attach(ReproductionLaw::lattice_atoms(atoms, deterministic), line, errors)
                })
            }
            "epidemic_gamma" => {
                let a = section.require("a", errors).and_then(|(v, l)| {
                    let a = parse_f64(v, l, "a", errors)?;
                    range(a > 0.0, a, l, "shape `a` must be positive", errors)
                });
                let b = section.require("b", errors).and_then(|(v, l)| {
                    let b = parse_f64(v, l, "b", errors)?;
                    range(b > 0.0, b, l, "rate `b` must be positive", errors)
                });
                let r0 = section.require("r0", errors).and_then(|(v, l)| {
                    let r0 = parse_f64(v, l, "r0", errors)?;
                    range(r0 > 1.0, r0, l, "R0 must exceed 1", errors)
                });
                match (a, b, r0) {
                    (Some(a), Some(b), Some(r0)) => {
                        attach(ReproductionLaw::epidemic_gamma(a, b, r0), section.header_line, errors)
                    }
                    _ => None,
                }
            }
            "poisson_lifetime" => {
                let rate = section.require("birth_rate", errors).and_then(|(v, l)| {
                    let rate = parse_f64(v, l, "birth_rate", errors)?;
                    range(rate > 0.0, rate, l, "birth_rate must be positive", errors)
                });
                let lifetime = section.require("lifetime", errors).and_then(|(v, l)| {
                    parse_lifetime(v, l, errors)
                });
                match (rate, lifetime) {
                    (Some(rate), Some(lifetime)) => attach(
                        ReproductionLaw::poisson_lifetime(rate, lifetime),
                        section.header_line,
                        errors,
                    ),
                    _ => None,
                }
            }
            "fragmentation" => section.require("parts", errors).and_then(|(value, line)| {
                let parts = parse_u64(value, line, "parts", errors)?;
                attach(ReproductionLaw::fragmentation(parts as u32), line, errors)
            }),
            other => {
                errors.push(ConfigError::at(
                    kind_line,
                    format!(
                        "unknown law kind `{other}` (expected galton_watson, lattice_atoms, \
                         epidemic_gamma, poisson_lifetime, or fragmentation)"
                    ),
                ));
                None
            }
        },
        None => None,
    };
    section.finish(errors);
    law
}

/// "exponential:1.0", "deterministic:2.0", or "uniform:0.5,1.5".
fn parse_lifetime(value: &str, line: usize, errors: &mut Vec<ConfigError>) -> Option<LifetimeDist> {
    let Some((kind, params)) = value.split_once(':') else {
        errors.push(ConfigError::at(
            line,
            format!("`lifetime` looks like `kind:params`, got `{value}`"),
        ));
        return None;
    };
    match kind.trim() {
        "exponential" => {
            let rate = parse_f64(params, line, "lifetime", errors)?;
            Some(LifetimeDist::Exponential { rate })
        }
        "deterministic" => {
            let v = parse_f64(params, line, "lifetime", errors)?;
            Some(LifetimeDist::Deterministic { value: v })
        }
        "uniform" => {
            let Some((lo, hi)) = params.split_once(',') else {
                errors.push(ConfigError::at(line, "`lifetime` uniform needs `uniform:lo,hi`"));
                return None;
            };
            let lo = parse_f64(lo, line, "lifetime", errors)?;
            let hi = parse_f64(hi, line, "lifetime", errors)?;
            Some(LifetimeDist::Uniform { lo, hi })
        }
        other => {
            errors.push(ConfigError::at(
                line,
                format!("unknown lifetime kind `{other}` (expected exponential, deterministic, or uniform)"),
            ));
            None
        }
    }
}

fn build_characteristic(section: &Section, errors: &mut Vec<ConfigError>) -> Option<Characteristic> {
    let characteristic = match section.require("kind", errors) {
        Some(("generation_counter", _)) => Some(Characteristic::GenerationCounter),
        Some(("born_counter", _)) => Some(Characteristic::BornCounter),
        Some(("alive", _)) => Some(Characteristic::Alive),
        Some(("window", _)) => section.require("width", errors).and_then(|(value, line)| {
            let width = parse_f64(value, line, "width", errors)?;
            attach(Characteristic::window(width), line, errors)
        }),
        Some((other, line)) => {
            errors.push(ConfigError::at(
                line,
                format!(
                    "unknown characteristic kind `{other}` (expected generation_counter, \
                     born_counter, alive, or window)"
                ),
            ));
            None
        }
        None => None,
    };
    section.finish(errors);
    characteristic
}

struct RunSection {
    horizon: f64,
    delta: Option<f64>,
    replicates: u64,
    seed: u64,
    cap: Option<u64>,
    condition_on_survival: bool,
    variance_tol: f64,
    ks_alpha: f64,
}

fn build_run(section: &Section, errors: &mut Vec<ConfigError>) -> Option<RunSection> {
    let horizon = section.require("horizon", errors).and_then(|(v, l)| {
        let t = parse_f64(v, l, "horizon", errors)?;
        range(t > 0.0, t, l, "horizon must be positive", errors)
    });
    let delta = section.take("delta").and_then(|(v, l)| {
        let d = parse_f64(v, l, "delta", errors)?;
        let d = range(d > 0.0, d, l, "delta must be positive", errors)?;
        if let Some(t) = horizon {
            if t < d {
                errors.push(ConfigError::at(
                    l,
                    format!("horizon {t} is shorter than delta {d}; the look-ahead would dominate the run"),
                ));
                return None;
            }
        }
        Some(d)
    });
    let replicates = section.require("replicates", errors).and_then(|(v, l)| {
        let n = parse_u64(v, l, "replicates", errors)?;
        range(n >= 1, n, l, "replicates must be at least 1", errors)
    });
    let seed = section.require("seed", errors).and_then(|(v, l)| parse_u64(v, l, "seed", errors));
    let cap = section.take("cap").and_then(|(v, l)| {
        let c = parse_u64(v, l, "cap", errors)?;
        range(c >= 1, c, l, "cap must be at least 1", errors)
    });
    let condition_on_survival = section
        .take("condition_on_survival")
        .and_then(|(v, l)| parse_bool(v, l, "condition_on_survival", errors))
        .unwrap_or(false);
    let variance_tol = section
        .take("variance_tol")
        .and_then(|(v, l)| {
            let tol = parse_f64(v, l, "variance_tol", errors)?;
            range(tol > 0.0, tol, l, "variance_tol must be positive", errors)
        })
        .unwrap_or(0.15);
    let ks_alpha = section
        .take("ks_alpha")
        .and_then(|(v, l)| {
            let alpha = parse_f64(v, l, "ks_alpha", errors)?;
            range((0.0..1.0).contains(&alpha) && alpha > 0.0, alpha, l, "ks_alpha must lie in (0, 1)", errors)
        })
        .unwrap_or(0.01);
    section.finish(errors);
    Some(RunSection {
        horizon: horizon?,
        delta,
        replicates: replicates?,
        seed: seed?,
        cap,
        condition_on_survival,
        variance_tol,
        ks_alpha,
    })
}

fn build_output(
    section: &Section,
    present: bool,
    errors: &mut Vec<ConfigError>,
) -> (PathBuf, String) {
    if !present {
        return (PathBuf::from("."), "cmj".to_string());
    }
    let directory = section
        .take("directory")
        .map(|(v, _)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("."));
    let prefix = section
        .take("prefix")
        .map(|(v, l)| {
            if v.is_empty() || v.contains(['/', '\\']) {
                errors.push(ConfigError::at(l, format!("prefix must be a bare file stem, got `{v}`")));
                "cmj".to_string()
            } else {
                v.to_string()
            }
        })
        .unwrap_or_else(|| "cmj".to_string());
    section.finish(errors);
    (directory, prefix)
}

fn range<T>(ok: bool, value: T, line: usize, message: &str, errors: &mut Vec<ConfigError>) -> Option<T> {
    if ok {
        Some(value)
    } else {
        errors.push(ConfigError::at(line, message.to_string()));
        None
    }
}

/// Attaches a library constructor's own validation message to a config line.
fn attach<T>(result: cmj::Result<T>, line: usize, errors: &mut Vec<ConfigError>) -> Option<T> {
    match result {
        Ok(value) => Some(value),
        Err(e) => {
            let message = match e {
                cmj::Error::Config(m) => m,
                other => other.to_string(),
            };
            errors.push(ConfigError::at(line, message));
            None
        }
    }
}
