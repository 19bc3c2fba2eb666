use std::path::Path;

use anyhow::{anyhow, bail, Context};
use ghzsim::channels::ScenarioConfig;
use toml::{Table, Value};

use crate::UsageError;

/// Scenario file: one TOML table per scenario. A table may name a `base`
/// preset; its other keys override fields of that preset. Nested fields use
/// sub-tables or dotted keys (`pulse.area = 2.2`).
pub fn load_scenario(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> anyhow::Result<ScenarioConfig> {
    let scenario = match (file, preset) {
        (Some(path), name) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
            from_file_text(&text, name)?
        }
        (None, Some(name)) => ScenarioConfig::preset(name).map_err(usage)?,
        (None, None) => ScenarioConfig::inas_current(),
    };
    let scenario = apply_overrides(scenario, overrides)?;
    scenario.validate().map_err(usage)?;
    Ok(scenario)
}

pub fn apply_overrides(scenario: ScenarioConfig, overrides: &[String]) -> anyhow::Result<ScenarioConfig> {
    if overrides.is_empty() {
        return Ok(scenario);
    }
    let mut table = to_table(&scenario)?;
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(anyhow!("override '{o}' is not key=value")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    let s = from_table(table)?;
    s.validate().map_err(usage)?;
    Ok(s)
}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into().to_string()))
}

fn to_table(s: &ScenarioConfig) -> anyhow::Result<Table> {
    match Value::try_from(s)? {
        Value::Table(t) => Ok(t),
        _ => bail!("scenario did not serialize to a table"),
    }
}

fn from_table(t: Table) -> anyhow::Result<ScenarioConfig> {
    Value::Table(t).try_into().map_err(|e: toml::de::Error| usage(anyhow!("invalid scenario: {e}")))
}

fn from_file_text(text: &str, name: Option<&str>) -> anyhow::Result<ScenarioConfig> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| usage(anyhow!("config parse error: {e}")))?;
    let (key, body) = match name {
        Some(n) => (n.to_string(), doc.get(n).cloned()),
        None if doc.len() == 1 => {
            let (k, v) = doc.iter().next().unwrap();
            (k.clone(), Some(v.clone()))
        }
        None => return Err(usage(anyhow!("config defines several scenarios; pick one with --preset"))),
    };
    let Some(Value::Table(body)) = body else {
        // Not in the file: fall back to a built-in preset of that name.
        return ScenarioConfig::preset(&key).map_err(usage);
    };
    let base = match body.get("base") {
        Some(Value::String(b)) => ScenarioConfig::preset(b).map_err(usage)?,
        Some(_) => return Err(usage(anyhow!("'base' must be a preset name"))),
        None => ScenarioConfig::inas_current(),
    };
    let mut table = to_table(&base)?;
    table.insert("name".into(), Value::String(key));
    for (k, v) in body {
        if k == "base" {
            continue;
        }
        merge(&mut table, &k, v)?;
    }
    from_table(table)
}

fn merge(table: &mut Table, key: &str, value: Value) -> anyhow::Result<()> {
    match value {
        Value::Table(sub) => {
            for (k, v) in sub {
                merge(table, &format!("{key}.{k}"), v)?;
            }
            Ok(())
        }
        v => set_path(table, key, v),
    }
}

fn set_path(table: &mut Table, path: &str, value: Value) -> anyhow::Result<()> {
    let key = path.replace('-', "_");
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        cur = match cur.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => return Err(usage(anyhow!("unknown scenario field '{path}'"))),
        };
    }
    let Some(old) = cur.get(last) else {
        return Err(usage(anyhow!("unknown scenario field '{path}'")));
    };
    // Integers given for float fields are widened.
    let value = match (old, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        return Value::Integer(i);
    }
    if let Ok(f) = s.parse::<f64>() {
        return Value::Float(f);
    }
    if let Ok(b) = s.parse::<bool>() {
        return Value::Boolean(b);
    }
    Value::String(s.to_string())
}

pub fn scenario_toml(s: &ScenarioConfig) -> anyhow::Result<String> {
    let mut doc = Table::new();
    let mut body = to_table(s)?;
    body.remove("name");
    doc.insert(s.name.clone(), Value::Table(body));
    Ok(toml::to_string_pretty(&doc)?)
}
