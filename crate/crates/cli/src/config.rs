//! Run configuration: defaults, config-file parsing, flag overrides, and
//! the resolved-config JSON echo.
//!
//! Meshes, delays and the horizon are exact rationals (`"1/256"`), so grid
//! alignment is checked in integer arithmetic with no binary-decimal drift.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Exact nonnegative rational with i64 parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

impl Rational {
    pub fn parse(text: &str) -> Result<Rational, String> {
        let (num, den) = match text.split_once('/') {
            Some((a, b)) => (
                a.trim().parse::<i64>().map_err(|e| format!("bad numerator '{a}': {e}"))?,
                b.trim().parse::<i64>().map_err(|e| format!("bad denominator '{b}': {e}"))?,
            ),
            None => (
                text.trim().parse::<i64>().map_err(|e| format!("bad rational '{text}': {e}"))?,
                1,
            ),
        };
        if den <= 0 || num < 0 {
            return Err(format!("rational '{text}' must be nonnegative with positive denominator"));
        }
        Ok(Rational { num, den })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    /// `self / mesh` when it is an exact nonnegative integer.
    pub fn cells(self, mesh: Rational) -> Result<usize, String> {
        // (num/den) / (mn/md) = num·md / (den·mn)
        let top = self.num as i128 * mesh.den as i128;
        let bot = self.den as i128 * mesh.num as i128;
        if bot == 0 || top % bot != 0 {
            return Err(format!("{self} is not an integer multiple of the mesh {mesh}"));
        }
        Ok((top / bot) as usize)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Fbm,
    Sincos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    Onestep,
    Picard,
    Both,
}

/// Fully resolved run configuration; serialised as the config echo.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub hurst: f64,
    pub state_dim: usize,
    pub driver_dim: usize,
    pub mesh: Rational,
    pub horizon: Rational,
    pub delays: Vec<Rational>,
    pub kappa: f64,
    pub gamma: f64,
    pub sigma_model: String,
    pub seed: u64,
    pub trials: u64,
    pub method: String,
    pub mode: SolveMode,
    pub driver: DriverKind,
    pub suite: String,
    pub levels: usize,
    pub min_order: f64,
    pub eps: Vec<f64>,
    pub perturb: String,
    pub xi_amplitude: f64,
    pub out_dir: PathBuf,
}

const KNOWN_KEYS: &[&str] = &[
    "config", "hurst", "state-dim", "driver-dim", "mesh", "horizon", "delays", "kappa", "gamma",
    "sigma", "seed", "trials", "method", "mode", "driver", "suite", "levels", "min-order", "eps",
    "perturb", "xi-amplitude", "out",
];

/// Parse `--key value` pairs; every flag takes exactly one value.
pub fn parse_flags(args: &[String]) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut key = arg
            .strip_prefix("--")
            .ok_or_else(|| format!("expected --flag, got '{arg}'"))?;
        if key == "H" {
            key = "hurst";
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(format!("unknown flag '--{key}'"));
        }
        let value = it.next().ok_or_else(|| format!("flag '--{key}' needs a value"))?;
        map.insert(key.to_string(), value.clone());
    }
    Ok(map)
}

/// `key = value` lines, `#` comments; keys as in the flag names.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        let key = k.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(format!("line {}: unknown key '{key}'", lineno + 1));
        }
        map.insert(key.to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    /// Defaults, overlaid by the config file (if any), overlaid by flags.
    pub fn resolve(command: &str, flags: &BTreeMap<String, String>) -> Result<RunConfig, String> {
        let mut merged: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            merged.extend(parse_config_file(Path::new(path))?);
        }
        for (k, v) in flags {
            if k != "config" {
                merged.insert(k.clone(), v.clone());
            }
        }
        let get = |key: &str| merged.get(key).map(String::as_str);

        let hurst: f64 = parse_or(get("hurst"), 0.45)?;
        let gamma: f64 = parse_or(get("gamma"), hurst - 0.05)?;
        let kappa: f64 = parse_or(get("kappa"), 1.0 / 3.0 + 0.55 * (gamma - 1.0 / 3.0))?;
        let mesh = Rational::parse(get("mesh").unwrap_or("1/256"))?;
        let horizon = Rational::parse(get("horizon").unwrap_or("1"))?;
        let delays = match get("delays") {
            Some("none") | Some("") => Vec::new(),
            Some(list) => list
                .split(',')
                .map(Rational::parse)
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![Rational { num: 1, den: 4 }],
        };
        let eps = match get("eps") {
            Some(list) => list
                .split(',')
                .map(|e| e.trim().parse::<f64>().map_err(|err| format!("bad eps '{e}': {err}")))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![1e-1, 1e-2, 1e-3],
        };
        let method = get("method").unwrap_or("cholesky").to_string();
        if method != "cholesky" && method != "circulant" {
            return Err(format!("unknown method '{method}' (cholesky | circulant)"));
        }
        let mode = match get("mode").unwrap_or("onestep") {
            "onestep" => SolveMode::Onestep,
            "picard" => SolveMode::Picard,
            "both" => SolveMode::Both,
            other => return Err(format!("unknown mode '{other}' (onestep | picard | both)")),
        };
        let driver = match get("driver").unwrap_or("fbm") {
            "fbm" => DriverKind::Fbm,
            "sincos" => DriverKind::Sincos,
            other => return Err(format!("unknown driver '{other}' (fbm | sincos)")),
        };
        let out_dir = match get("out") {
            Some(dir) => PathBuf::from(dir),
            None => match std::env::var_os("ROUGH_DELAY_OUT") {
                Some(root) => PathBuf::from(root),
                None => PathBuf::from("rough-delay-out"),
            },
        };
        // corrected sums decay at full order on smooth drivers but only at
        // the slow rough-path rate on fBm; the acceptance default follows
        let min_order_default = match driver {
            DriverKind::Sincos => 1.0,
            DriverKind::Fbm => 0.1,
        };
        let config = RunConfig {
            command: command.to_string(),
            hurst,
            state_dim: parse_or(get("state-dim"), 2usize)?,
            driver_dim: parse_or(get("driver-dim"), 2usize)?,
            mesh,
            horizon,
            delays,
            kappa,
            gamma,
            sigma_model: get("sigma").unwrap_or("sine").to_string(),
            seed: parse_or(get("seed"), 42u64)?,
            trials: parse_or(get("trials"), 1024u64)?,
            method,
            mode,
            driver,
            suite: get("suite").unwrap_or("all").to_string(),
            levels: parse_or(get("levels"), 6usize)?,
            min_order: parse_or(get("min-order"), min_order_default)?,
            eps,
            perturb: get("perturb").unwrap_or("both").to_string(),
            xi_amplitude: parse_or(get("xi-amplitude"), 0.25f64)?,
            out_dir,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.hurst > 1.0 / 3.0 && self.hurst < 1.0) {
            return Err(format!("hurst must lie in (1/3, 1), got {}", self.hurst));
        }
        if !(self.kappa > 1.0 / 3.0 && self.kappa < self.gamma && self.gamma < self.hurst) {
            return Err(format!(
                "need 1/3 < kappa < gamma < hurst, got kappa {} gamma {} hurst {}",
                self.kappa, self.gamma, self.hurst
            ));
        }
        if self.mesh.is_zero() {
            return Err("mesh must be positive".into());
        }
        if self.horizon.is_zero() {
            return Err("horizon must be positive".into());
        }
        self.horizon.cells(self.mesh)?;
        let mut prev = 0usize;
        for r in &self.delays {
            let cells = r.cells(self.mesh)?;
            if cells == 0 {
                return Err(format!("delay {r} must be positive"));
            }
            if cells <= prev && prev != 0 {
                return Err("delays must be strictly increasing".into());
            }
            prev = cells;
        }
        if !rough_delay::controlled::SIGMA_MODELS.contains(&self.sigma_model.as_str()) {
            return Err(format!(
                "unknown sigma model '{}' (registered: {})",
                self.sigma_model,
                rough_delay::controlled::SIGMA_MODELS.join(", ")
            ));
        }
        if self.driver == DriverKind::Sincos && self.driver_dim != 2 {
            return Err("the sincos driver is two-dimensional".into());
        }
        match self.perturb.as_str() {
            "both" | "driver" | "xi" => {}
            other => return Err(format!("unknown perturb target '{other}' (both | driver | xi)")),
        }
        Ok(())
    }

    pub fn horizon_cells(&self) -> usize {
        self.horizon.cells(self.mesh).expect("validated")
    }

    pub fn delay_cells(&self) -> Vec<usize> {
        self.delays.iter().map(|r| r.cells(self.mesh).expect("validated")).collect()
    }

    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

fn parse_or<T: std::str::FromStr>(value: Option<&str>, default: T) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    match value {
        None => Ok(default),
        Some(text) => text
            .parse::<T>()
            .map_err(|e| format!("cannot parse '{text}': {e}")),
    }
}
