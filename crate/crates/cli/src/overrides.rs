//! Merge command-line flags into a TOML config before validation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evodiff_core::harness::{parse_config, ExperimentConfig, OUT_DIR_ENV};
use toml::{Table, Value};

use crate::{EvoArgs, FormulaArg, ProblemArgs, WeightArg, ZetaMapArg};

/// Flag values layered over an optional config file.
#[derive(Debug, Default)]
pub struct Overrides {
    entries: Vec<(&'static str, Value)>,
    /// Keys that are alternatives to each entry and must be dropped from the file.
    exclusive: Vec<&'static str>,
}

impl Overrides {
    pub fn set(&mut self, key: &'static str, value: impl Into<Value>) -> &mut Self {
        self.entries.push((key, value.into()));
        self
    }

    /// Set `key`, removing `other` from the config file if present.
    pub fn replace(&mut self, key: &'static str, other: &'static str, value: impl Into<Value>) -> &mut Self {
        self.exclusive.push(other);
        self.set(key, value)
    }

    pub fn list<T: Clone + Into<Value>>(&mut self, key: &'static str, other: &'static str, values: &[T]) -> &mut Self {
        if !values.is_empty() {
            let arr: Vec<Value> = values.iter().cloned().map(Into::into).collect();
            self.replace(key, other, Value::Array(arr));
        }
        self
    }
}

fn to_int(v: u64) -> Result<Value> {
    Ok(Value::Integer(i64::try_from(v).context("value too large")?))
}

fn problem_overrides(p: &ProblemArgs, o: &mut Overrides) -> Result<()> {
    if let Some(d) = &p.dist {
        o.set("dist", d.as_str());
    }
    if let Some(d) = p.dim {
        o.set("dim", to_int(d)?);
    }
    if let Some(s) = &p.schedule {
        o.set("schedule", s.as_str());
    }
    if let Some(g) = &p.grid {
        o.set("grid", g.as_str());
    }
    for (key, v) in [
        ("rho", p.rho),
        ("beta0", p.beta0),
        ("beta1", p.beta1),
        ("t_start", p.t_start),
        ("t_end", p.t_end),
    ] {
        if let Some(v) = v {
            o.set(key, v);
        }
    }
    Ok(())
}

fn evo_table(e: &EvoArgs) -> Table {
    let mut t = Table::new();
    if let Some(mu) = e.mu {
        t.insert("mu".into(), mu.into());
    }
    if let Some(r) = &e.r_strategy {
        t.insert("r_strategy".into(), r.as_str().into());
    }
    if let Some(b) = e.beta {
        t.insert("beta".into(), b.into());
    }
    if e.reuse_probe || e.fresh_probe {
        t.insert("reuse_probe".into(), e.reuse_probe.into());
    }
    if let Some(m) = e.zeta_map {
        let name = match m {
            ZetaMapArg::Plain => "plain",
            ZetaMapArg::Scaled => "sigma_scaled",
        };
        t.insert("zeta_map".into(), name.into());
    }
    let formula = |f: FormulaArg| match f {
        FormulaArg::Literal => "literal",
        FormulaArg::Analytic => "analytic",
    };
    if let Some(f) = e.zeta_formula {
        t.insert("zeta_formula".into(), formula(f).into());
    }
    if let Some(f) = e.eta_formula {
        t.insert("eta_formula".into(), formula(f).into());
    }
    if let Some(w) = e.weight {
        let name = match w {
            WeightArg::Balanced => "balanced",
            WeightArg::Literal => "literal",
        };
        t.insert("weight".into(), name.into());
    }
    t
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Build and validate the config for a subcommand.
pub fn load(problem: &ProblemArgs, evo: &EvoArgs, mut extra: Overrides) -> Result<ExperimentConfig> {
    problem_overrides(problem, &mut extra)?;
    let evo = evo_table(evo);
    let plain_file = extra.entries.is_empty() && evo.is_empty() && problem.components.is_none();
    if let (Some(path), true) = (&problem.config, plain_file) {
        // Validate the file text directly so error lines match the file.
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return parse_config(&text).with_context(|| format!("invalid config {}", path.display()));
    }
    let mut table = match &problem.config {
        Some(path) => read_table(path)?,
        None => Table::new(),
    };
    for key in &extra.exclusive {
        table.remove(*key);
    }
    for (key, value) in extra.entries {
        table.insert(key.into(), value);
    }
    if let Some(path) = &problem.components {
        let comps = read_table(path)?
            .remove("component")
            .with_context(|| format!("{} has no [[component]] tables", path.display()))?;
        table.insert("component".into(), comps);
        table.insert("dist".into(), "custom".into());
    }
    if !evo.is_empty() {
        for key in evo.keys() {
            table.remove(key);
        }
        match table.entry("evodiff").or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t.extend(evo),
            _ => bail!("`evodiff` in the config must be a table"),
        }
    }
    let text = toml::to_string(&table).context("serializing merged config")?;
    parse_config(&text)
        .map_err(|mut e| {
            // Lines of the merged text do not correspond to any file.
            for issue in &mut e.issues {
                issue.line = None;
            }
            e
        })
        .context("invalid configuration")
}

/// Relative output paths land under `EVODIFF_OUT_DIR` when it is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() && path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Write `body` to `path` (creating parent directories), or print it.
pub fn emit(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => {
            let p = output_path(p);
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}
