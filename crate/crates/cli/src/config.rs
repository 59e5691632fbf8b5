//! Layered configuration: struct defaults, then a TOML (or JSON) file, then
//! `--set` overrides. Layers are merged as JSON trees so that every key,
//! including unset optional ones, can be validated and listed.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A configuration problem the user can fix; maps to exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Every leaf key of `v` in dotted form.
pub fn dotted_keys(v: &Value) -> Vec<String> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out.sort();
    out
}

fn unknown_key(key: &str, defaults: &Value) -> ConfigError {
    err(format!("unknown config key '{key}'; valid keys:\n  {}", dotted_keys(defaults).join("\n  ")))
}

/// Writes `value` at `key`, which must already exist in `defaults`.
fn set_path(tree: &mut Value, defaults: &Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (mut node, mut def) = (tree, defaults);
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let d = def.get(part).ok_or_else(|| unknown_key(key, defaults))?;
        if !last && !d.is_object() {
            return Err(unknown_key(key, defaults));
        }
        let obj = node.as_object_mut().ok_or_else(|| unknown_key(key, defaults))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        def = d;
    }
    unreachable!("split yields at least one part")
}

/// Merges `layer` into `tree` key by key.
fn merge(tree: &mut Value, defaults: &Value, layer: &Value, prefix: &str) -> Result<(), ConfigError> {
    let Value::Object(m) = layer else {
        return Err(err("config file must be a table at the top level"));
    };
    for (k, v) in m {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let nested_default = key.split('.').try_fold(defaults, |d, p| d.get(p));
        match (v, nested_default) {
            (Value::Object(_), Some(d)) if d.is_object() => merge(tree, defaults, v, &key)?,
            _ => set_path(tree, defaults, &key, v.clone())?,
        }
    }
    Ok(())
}

/// Parses the right-hand side of `--set key=value` as a TOML value, so
/// `3`, `0.5`, `true` and `[1, 2]` keep their types; anything else is a
/// string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|t| t.get("v").cloned())
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn read_file(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))
    } else {
        let t: toml::Table = toml::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(|e| err(e.to_string()))
    }
}

/// Resolves `T` from its defaults, an optional file and overrides.
pub fn resolve<T>(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<T, ConfigError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let defaults = serde_json::to_value(T::default()).map_err(|e| err(e.to_string()))?;
    let mut tree = defaults.clone();
    if let Some(path) = file {
        merge(&mut tree, &defaults, &read_file(path)?, "")?;
    }
    for (k, v) in overrides {
        set_path(&mut tree, &defaults, k, v.clone())?;
    }
    serde_json::from_value(tree).map_err(|e| err(format!("invalid config: {e}")))
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| err(format!("override '{s}' is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(err(format!("override '{s}' has an empty key")));
    }
    Ok((k.to_string(), parse_value(v.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        a: f64,
        b: Option<String>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        n: usize,
        xs: Vec<usize>,
        inner: Inner,
    }

    impl Default for Outer {
        fn default() -> Self {
            Self {
                n: 3,
                xs: vec![1, 2],
                inner: Inner::default(),
            }
        }
    }

    #[test]
    fn overrides_are_typed() {
        let o: Outer = resolve(
            None,
            &[parse_override("n=7").unwrap(), parse_override("xs=[4]").unwrap(), parse_override("inner.b=hello").unwrap()],
        )
        .unwrap();
        assert_eq!(o.n, 7);
        assert_eq!(o.xs, vec![4]);
        assert_eq!(o.inner.b.as_deref(), Some("hello"));
        assert_eq!(o.inner.a, 0.0);
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        let e = resolve::<Outer>(None, &[parse_override("inner.c=1").unwrap()]).unwrap_err();
        for k in ["inner.a", "inner.b", "n", "xs"] {
            assert!(e.0.contains(k), "{e}");
        }
        assert!(resolve::<Outer>(None, &[parse_override("n.x=1").unwrap()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "n = 5\n[inner]\na = 2.5\n").unwrap();
        let o: Outer = resolve(Some(&p), &[parse_override("n=6").unwrap()]).unwrap();
        assert_eq!((o.n, o.inner.a), (6, 2.5));
        std::fs::write(&p, "[inner]\nzzz = 1\n").unwrap();
        assert!(resolve::<Outer>(Some(&p), &[]).unwrap_err().0.contains("inner.zzz"));
    }

    #[test]
    fn wrong_types_are_config_errors() {
        assert!(resolve::<Outer>(None, &[parse_override("n=abc").unwrap()]).is_err());
        assert!(parse_override("novalue").is_err());
    }
}
