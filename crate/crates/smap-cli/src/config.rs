//! Run configurations. Each subcommand resolves its configuration as
//! defaults, then an optional JSON document, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use smap_core::modulation_ode::LawKind;

use crate::CliError;

/// Initial `a₀`: a fixed number, or the shooting solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum A0 {
    Shoot,
    Fixed(f64),
}

impl FromStr for A0 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "shoot" {
            return Ok(A0::Shoot);
        }
        s.parse().map(A0::Fixed).map_err(|_| format!("expected a number or \"shoot\", got {s:?}"))
    }
}

impl fmt::Display for A0 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            A0::Shoot => f.write_str("shoot"),
            A0::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for A0 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            A0::Shoot => s.serialize_str("shoot"),
            A0::Fixed(x) => s.serialize_f64(*x),
        }
    }
}

impl<'de> Deserialize<'de> for A0 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(A0::Fixed(x)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    Leading,
    Refined,
}

impl From<Law> for LawKind {
    fn from(l: Law) -> Self {
        match l {
            Law::Leading => LawKind::Leading,
            Law::Refined => LawKind::Refined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Hardy,
    Coercivity,
    #[value(alias = "appendixc")]
    Jbound,
    Flux,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesConfig {
    pub b: f64,
    pub a: f64,
    pub b_star: f64,
    pub grid_n: usize,
    pub y_min: f64,
    /// `None` selects `4B₁`.
    pub y_max: Option<f64>,
    pub m: f64,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        ProfilesConfig { b: 1e-3, a: 0.0, b_star: 1e-2, grid_n: 5000, y_min: 1e-4, y_max: None, m: 50.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub b0: f64,
    pub a0: f64,
    pub law: Law,
    pub s_end: f64,
    pub rtol: f64,
    /// Stop at the first sign change of `b`.
    pub stop_on_escape: bool,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig { b0: 1e-2, a0: 0.0, law: Law::Refined, s_end: 1e6, rtol: 1e-10, stop_on_escape: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootConfig {
    pub b0: f64,
    pub law: Law,
    pub horizon_b_ratio: f64,
    pub b_star: f64,
    /// Horizon of the continued trajectory used for the blow-up fit.
    pub s_end: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig { b0: 1e-2, law: Law::Refined, horizon_b_ratio: 100.0, b_star: 0.1, s_end: 1e12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveRunConfig {
    pub b0: f64,
    pub a0: A0,
    pub law: Law,
    pub horizon_b_ratio: f64,
    pub grid_n: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub t_end: f64,
    pub lambda_min: f64,
    pub dt_factor: f64,
    pub extract_every: usize,
    pub snapshot_every: usize,
}

impl Default for EvolveRunConfig {
    fn default() -> Self {
        EvolveRunConfig {
            b0: 0.05,
            a0: A0::Shoot,
            law: Law::Refined,
            horizon_b_ratio: 100.0,
            grid_n: 1200,
            r_min: 1e-3,
            r_max: 200.0,
            t_end: 60.0,
            lambda_min: 0.05,
            dt_factor: 0.02,
            extract_every: 10,
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeRunConfig {
    /// Snapshot CSV to decompose; without it a field is synthesized.
    pub snapshot: Option<PathBuf>,
    pub lambda: f64,
    pub theta: f64,
    pub a: f64,
    pub b: f64,
    pub guess_lambda: f64,
    pub guess_theta: f64,
    pub guess_a: f64,
    pub guess_b: f64,
    /// Largest `b` the localization scale must accommodate.
    pub b_max: f64,
    pub grid_n: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for DecomposeRunConfig {
    fn default() -> Self {
        DecomposeRunConfig {
            snapshot: None,
            lambda: 1.0,
            theta: 0.0,
            a: 0.0,
            b: 0.03,
            guess_lambda: 1.0,
            guess_theta: 0.0,
            guess_a: 0.0,
            guess_b: 0.04,
            b_max: 0.05,
            grid_n: 1200,
            r_min: 1e-3,
            r_max: 200.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub suite: Suite,
    pub seed: u64,
    pub samples: usize,
    pub grid_n: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub m: f64,
    pub coercivity_n: usize,
    /// `b` for the flux identities.
    pub b: f64,
    pub flux_grid_n: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            suite: Suite::All,
            seed: 7,
            samples: 64,
            grid_n: 800,
            y_min: 1e-3,
            y_max: 200.0,
            m: 50.0,
            coercivity_n: 600,
            b: 1e-4,
            flux_grid_n: 5000,
        }
    }
}

fn overlay(base: &mut Value, top: Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            b.insert(k, v);
        }
    }
}

/// Defaults, then the JSON document at `file`, then the flags that were given.
pub fn resolve<C, F>(file: Option<&Path>, flags: &F) -> Result<C, CliError>
where
    C: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = serde_json::to_value(C::default()).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !doc.is_object() {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        }
        overlay(&mut merged, doc);
    }
    overlay(&mut merged, serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?);
    serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        b: Option<f64>,
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = std::env::temp_dir().join(format!("smap-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"b": 2e-3, "grid_n": 100}"#).unwrap();
        let c: ProfilesConfig = resolve(Some(&path), &Flags { b: Some(5e-4) }).unwrap();
        assert_eq!((c.b, c.grid_n, c.a), (5e-4, 100, 0.0));
        let c: ProfilesConfig = resolve(Some(&path), &Flags { b: None }).unwrap();
        assert_eq!(c.b, 2e-3);
        std::fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        assert!(resolve::<ProfilesConfig, _>(Some(&path), &Flags { b: None }).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn a0_reads_numbers_and_keyword() {
        assert_eq!("shoot".parse::<A0>().unwrap(), A0::Shoot);
        assert_eq!("-1e-3".parse::<A0>().unwrap(), A0::Fixed(-1e-3));
        assert!("fast".parse::<A0>().is_err());
        let v: A0 = serde_json::from_str("0.25").unwrap();
        assert_eq!(v, A0::Fixed(0.25));
        assert_eq!(serde_json::to_string(&A0::Shoot).unwrap(), "\"shoot\"");
    }
}
