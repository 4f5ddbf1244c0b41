//! Layered parameter resolution: command-line flag, then config file, then
//! provenance inherited from an input artifact, then the built-in default.
//! Every resolved value is recorded so outputs can echo the full config.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    inherited: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got `{line}`", i + 1)))?;
        map.insert(normalize(k), v.trim().to_string());
    }
    Ok(map)
}

impl Resolver {
    pub fn new(config_file: Option<&Path>) -> Result<Self, CliError> {
        let file = match config_file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))?;
                parse_key_values(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Resolver { file, ..Default::default() })
    }

    /// Adds values inherited from an upstream artifact, below the config file.
    pub fn inherit(&mut self, values: BTreeMap<String, String>) {
        self.inherited = values.into_iter().map(|(k, v)| (normalize(&k), v)).collect();
    }

    fn lookup<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.file.get(key).or_else(|| self.inherited.get(key));
        raw.map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("invalid value `{s}` for {key}: {e}"))))
            .transpose()
    }

    /// Looks up a value without echoing it into the provenance (output paths).
    pub fn unrecorded<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.lookup(key)
    }

    /// Optional parameter; records it only when present.
    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.lookup(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| CliError::Usage(format!("missing required parameter --{key}")))
    }

    /// Uses the given seed or draws one from the clock and reports it on stderr.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.opt("seed", flag)? {
            return Ok(s);
        }
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        eprintln!("seed={nanos}");
        self.resolved.insert("seed".into(), nanos.to_string());
        Ok(nanos)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.resolved).expect("string map serializes")
    }
}

/// `on`/`off` switch accepting the usual spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            other => Err(format!("expected on or off, got `{other}`")),
        }
    }
}

impl Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

/// Refit cadence: a positive step count or `once`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadence(pub usize);

impl FromStr for Cadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("once") || s.eq_ignore_ascii_case("never") {
            return Ok(Cadence(calsel::risk::FIT_ONCE));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive integer or `once`, got `{s}`")),
            Ok(n) => Ok(Cadence(n)),
        }
    }
}

impl Display for Cadence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == calsel::risk::FIT_ONCE {
            f.write_str("once")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_inherited() {
        let mut r = Resolver {
            file: parse_key_values("window = 300\nalpha=0.01 # comment\n").unwrap(),
            ..Default::default()
        };
        r.inherit([("alpha".to_string(), "0.1".to_string()), ("tail".to_string(), "lower".to_string())].into());
        assert_eq!(r.get("window", Some(400usize), 500).unwrap(), 400);
        assert_eq!(r.get("alpha", None, 0.05).unwrap(), 0.01);
        assert_eq!(r.get::<String>("tail", None, "upper".into()).unwrap(), "lower");
        assert_eq!(r.get("m", None, 13usize).unwrap(), 13);
        assert_eq!(r.resolved()["window"], "400");
    }

    #[test]
    fn underscores_and_hyphens_match() {
        let mut r = Resolver { file: parse_key_values("burn_in=50").unwrap(), ..Default::default() };
        assert_eq!(r.get("burn-in", None, 200usize).unwrap(), 50);
    }

    #[test]
    fn bad_lines_and_values_are_usage_errors() {
        assert!(matches!(parse_key_values("nonsense"), Err(CliError::Usage(_))));
        let mut r = Resolver { file: parse_key_values("n=abc").unwrap(), ..Default::default() };
        assert!(matches!(r.get("n", None, 1usize), Err(CliError::Usage(_))));
        assert!(matches!(Resolver::default().require::<usize>("n", None), Err(CliError::Usage(_))));
    }

    #[test]
    fn value_types_round_trip() {
        assert_eq!("off".parse::<Switch>().unwrap(), Switch(false));
        assert_eq!("once".parse::<Cadence>().unwrap().to_string(), "once");
        assert!("0".parse::<Cadence>().is_err());
        let l: List<u8> = "1, 2,3".parse().unwrap();
        assert_eq!(l.0, vec![1, 2, 3]);
        assert_eq!(l.to_string(), "1,2,3");
    }
}
