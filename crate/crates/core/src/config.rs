//! Line-oriented run configuration: `key = value`, `#` comments, dotted keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{key}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("bad value `{value}` for `{key}`: {why}")]
    BadValue { key: String, value: String, why: String },
}

/// Every accepted key with its meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("net.variant", "dln | frg | galu | relu | soft-relu | soft-galu"),
    ("net.d", "depth: number of weighted layers"),
    ("net.w", "hidden width"),
    ("net.sigma", "init magnitude, or `auto` for the variant default"),
    ("net.beta", "soft gate sharpness"),
    ("net.epsilon", "soft gate ceiling offset"),
    ("net.mu", "fixed random gate rate"),
    ("net.train_gating", "train the soft-galu gating weights (true/false)"),
    ("data.kind", "experiment1 | experiment2 | gaussians | csv | mnist"),
    ("data.n", "number of examples for synthetic data"),
    ("data.d_in", "input dimension for gaussians / csv"),
    ("data.seed", "data seed, or `run` to follow each run seed"),
    ("data.path", "csv file"),
    ("data.images", "IDX image file"),
    ("data.labels", "IDX label file"),
    ("data.class_a", "digit mapped to -1"),
    ("data.class_b", "digit mapped to +1"),
    ("data.limit", "examples kept per digit"),
    ("data.test_fraction", "held-out fraction for gate-compare"),
    ("opt.kind", "sgd | rmsprop"),
    ("opt.alpha", "step size, or `auto` for alpha_factor / rho_max(K0)"),
    ("opt.alpha_factor", "numerator of the automatic step size"),
    ("opt.decay", "rmsprop decay"),
    ("opt.eps", "rmsprop stabilizer"),
    ("train.steps", "full-batch steps"),
    ("train.snapshot_every", "kernel snapshot cadence (0 = off)"),
    ("train.batch", "minibatch size (0 = full batch)"),
    ("sweep.depths", "comma-separated depths"),
    ("sweep.widths", "comma-separated widths"),
    ("nu.kernel", "ntk | gate | gate-normalized | feature"),
    ("conv.d_in", "signal length"),
    ("conv.kernel", "taps per conv layer"),
    ("conv.layers", "number of conv layers"),
    ("conv.sigma", "tap magnitude"),
    ("conv.gating", "ones | frg | galu"),
    ("conv.mu", "fixed random gate rate for conv"),
    ("conv.draws", "Monte Carlo draws per shift"),
    ("run.seeds", "seed list: `a..b` (half-open) or comma-separated"),
    ("run.format", "csv | csv+svg"),
    ("oracle.grid", "tiny | quick: network grid for oracle-check"),
];

/// Short forms accepted by `--set` and in files.
const ALIASES: &[(&str, &str)] = &[
    ("variant", "net.variant"),
    ("d", "net.d"),
    ("w", "net.w"),
    ("sigma", "net.sigma"),
    ("beta", "net.beta"),
    ("epsilon", "net.epsilon"),
    ("mu", "net.mu"),
    ("n", "data.n"),
    ("alpha", "opt.alpha"),
    ("steps", "train.steps"),
    ("depths", "sweep.depths"),
    ("widths", "sweep.widths"),
    ("seeds", "run.seeds"),
];

pub fn canonical_key(key: &str) -> Result<&'static str, ConfigError> {
    let key = key.trim();
    if let Some((_, full)) = ALIASES.iter().find(|(a, _)| *a == key) {
        return Ok(full);
    }
    KEYS.iter()
        .find(|(k, _)| *k == key)
        .map(|(k, _)| *k)
        .ok_or_else(|| ConfigError::UnknownKey { key: key.into(), line: None })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let k = canonical_key(key)?;
        self.values.insert(k, value.into().trim().to_string());
        Ok(())
    }

    /// `KEY=VALUE` as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k, v)
    }

    /// Applies every line of a config file on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = canonical_key(k).map_err(|_| ConfigError::UnknownKey { key: k.trim().into(), line: Some(i + 1) })?;
            self.values.insert(k, v.trim().to_string());
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k, v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        canonical_key(key).ok().and_then(|k| self.values.get(k)).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            value: String::new(),
            why: "missing".into(),
        })
    }

    fn parse_with<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.required(key)?;
        v.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), value: v.into(), why: e.to_string() })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse_with(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_with(key)?;
        if !v.is_finite() {
            return Err(ConfigError::BadValue { key: key.into(), value: v.to_string(), why: "not finite".into() });
        }
        Ok(v)
    }

    /// `None` when the value is `auto`.
    pub fn f64_or_auto(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None | Some("auto") => Ok(None),
            Some(_) => self.f64(key).map(Some),
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.required(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(ConfigError::BadValue { key: key.into(), value: v.into(), why: "expected true/false".into() }),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.required(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let v = self.required(key)?;
        let bad = |why: &str| ConfigError::BadValue { key: key.into(), value: v.into(), why: why.into() };
        let list: Vec<usize> = v
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<_, _>>()?;
        if list.is_empty() {
            return Err(bad("empty list"));
        }
        Ok(list)
    }

    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        let v = self.required("run.seeds")?;
        parse_seeds(v).map_err(|why| ConfigError::BadValue { key: "run.seeds".into(), value: v.into(), why })
    }

    /// `key = value` lines in key order, loadable with [`merge_text`](Self::merge_text).
    pub fn to_cfg(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (*k, v.as_str()))
    }
}

/// `a..b` (half-open) or a comma-separated list.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    let v = v.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        (a..b).collect()
    } else {
        v.split(',').map(|s| s.trim().parse().map_err(|e| format!("{e}"))).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let mut s = Settings::new();
        s.merge_text("# comment\nnet.d = 4\n\nnet.w = 10 # trailing\n").unwrap();
        s.set_assignment("d=8").unwrap();
        assert_eq!(s.usize("net.d").unwrap(), 8);
        assert_eq!(s.usize("w").unwrap(), 10);
        let mut back = Settings::new();
        back.merge_text(&s.to_cfg()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn errors() {
        let mut s = Settings::new();
        assert_eq!(
            s.merge_text("net.d = 2\nbogus = 1\n"),
            Err(ConfigError::UnknownKey { key: "bogus".into(), line: Some(2) })
        );
        assert_eq!(s.merge_text("just words"), Err(ConfigError::Syntax { line: 1 }));
        s.set("net.d", "two").unwrap();
        assert!(s.usize("net.d").is_err());
    }

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("5, 9").unwrap(), vec![5, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
