use ergolab::scenario::Scenario;

/// Applies `key.path=value` assignments to a scenario. Values are read as
/// TOML literals, falling back to bare strings.
pub fn apply(scenario: &Scenario, assignments: &[String]) -> Result<Scenario, String> {
    if assignments.is_empty() {
        return Ok(scenario.clone());
    }
    let mut tree = toml::Value::try_from(scenario).map_err(|e| format!("cannot serialize scenario: {e}"))?;
    for a in assignments {
        let (key, raw) = a.split_once('=').ok_or_else(|| format!("override `{a}` is not key=value"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("override `{a}` has an empty key"));
        }
        let value = parse_value(raw.trim());
        set(&mut tree, key, value).map_err(|e| format!("override `{a}`: {e}"))?;
    }
    let text = toml::to_string(&tree).map_err(|e| e.to_string())?;
    toml::from_str(&text).map_err(|e| format!("overrides produce an invalid scenario: {e}"))
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| format!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split yields at least one part")
}
