//! `key = value` config files overlaid onto serde structs.
//!
//! Keys are dotted field paths of the target's serialized form
//! (`model.width`, `optimizer.lr`). Values are typed by the field they
//! replace: numbers, `true`/`false`, comma-separated lists, and
//! `op:method` pairs for maps.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    /// Where it came from, for error messages.
    pub origin: String,
}

pub fn parse_settings(text: &str, origin: &str) -> Result<Vec<Setting>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("{origin}:{}: expected key = value", i + 1))?;
        out.push(Setting { key: k.trim().to_string(), value: v.trim().to_string(), origin: format!("{origin}:{}", i + 1) });
    }
    Ok(out)
}

pub fn read_settings(path: &Path) -> Result<Vec<Setting>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_settings(&text, &path.display().to_string())
}

/// Parses a `--set key=value` flag.
pub fn flag_setting(raw: &str) -> Result<Setting, String> {
    let (k, v) = raw.split_once('=').ok_or_else(|| format!("--set {raw}: expected key=value"))?;
    Ok(Setting { key: k.trim().to_string(), value: v.trim().to_string(), origin: format!("--set {raw}") })
}

fn typed(current: &Value, raw: &str) -> Result<Value, String> {
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| format!("expected true or false, got {raw:?}"))?),
        Value::Number(n) if n.is_f64() => {
            let x: f64 = raw.parse().map_err(|_| format!("expected a number, got {raw:?}"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| format!("{raw} is not finite"))?
        }
        Value::Number(_) => Value::Number(raw.parse::<u64>().map_err(|_| format!("expected an integer, got {raw:?}"))?.into()),
        Value::Array(_) => {
            Value::Array(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| Value::String(s.into())).collect())
        }
        Value::Object(_) => {
            let mut map = Map::new();
            for pair in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = pair.split_once(':').ok_or_else(|| format!("expected key:value pairs, got {pair:?}"))?;
                map.insert(k.trim().into(), Value::String(v.trim().into()));
            }
            Value::Object(map)
        }
        _ => Value::String(raw.into()),
    })
}

/// Applies `settings` in order onto `base` and deserializes the result.
/// Unknown keys and ill-typed values are errors naming the setting.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, settings: &[Setting]) -> Result<T, String> {
    let mut root = serde_json::to_value(base).expect("config serializes");
    for s in settings {
        let mut slot = &mut root;
        for part in s.key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| format!("{}: unknown key {:?}", s.origin, s.key))?;
        }
        if slot.is_object() && !s.key.contains('.') && !matches!(s.key.as_str(), "methods") {
            return Err(format!("{}: {:?} is a section; set its fields as {}.<field>", s.origin, s.key, s.key));
        }
        *slot = typed(slot, &s.value).map_err(|e| format!("{}: {e}", s.origin))?;
    }
    serde_json::from_value(root).map_err(|e| format!("invalid configuration: {e}"))
}

/// Every settable key of `base` with its current value.
pub fn keys_of<T: Serialize>(base: &T) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) if !prefix.ends_with("methods") => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            Value::String(s) => out.push((prefix.into(), s.clone())),
            Value::Array(items) => out.push((
                prefix.into(),
                items.iter().map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string())).collect::<Vec<_>>().join(","),
            )),
            Value::Object(m) => out.push((
                prefix.into(),
                m.iter().map(|(k, v)| format!("{k}:{}", v.as_str().unwrap_or_default())).collect::<Vec<_>>().join(","),
            )),
            other => out.push((prefix.into(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(base).expect("config serializes"), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use left_arith::dataset::SplitSpec;
    use left_arith::experiment::RunConfig;
    use left_arith::tracegen::{MethodVariant, OpKind};

    #[test]
    fn overlays_nested_and_typed_values() {
        let text = "# run\nepochs = 3\nmodel.width = 64\noptimizer.lr = 0.002\nmask_prompt = false\ntrain = a.jsonl, b.jsonl\nmethods = add:le-direct,mul:le-step\n";
        let run: RunConfig = overlay(&RunConfig::default(), &parse_settings(text, "f").unwrap()).unwrap();
        assert_eq!(run.epochs, 3);
        assert_eq!(run.model.width, 64);
        assert_eq!(run.optimizer.lr, 0.002);
        assert!(!run.mask_prompt);
        assert_eq!(run.train.len(), 2);
        assert_eq!(run.methods[&OpKind::Mul], MethodVariant::LE_STEP);
    }

    #[test]
    fn split_fields_and_errors() {
        let s = parse_settings("ops = add,mul\noperand_mode = equal\ndigit_hi = 6", "f").unwrap();
        let spec: SplitSpec = overlay(&SplitSpec::default(), &s).unwrap();
        assert_eq!(spec.ops, vec![OpKind::Add, OpKind::Mul]);
        assert_eq!(spec.digit_hi, 6);
        let bad = overlay(&SplitSpec::default(), &[flag_setting("nope=1").unwrap()]).unwrap_err();
        assert!(bad.contains("--set nope=1") && bad.contains("unknown key"));
        assert!(overlay(&SplitSpec::default(), &[flag_setting("seed=x").unwrap()]).is_err());
        assert!(parse_settings("novalue", "f").is_err());
    }

    #[test]
    fn keys_round_trip() {
        let run = RunConfig::default();
        let keys = keys_of(&run);
        assert!(keys.iter().any(|(k, _)| k == "optimizer.beta2"));
        let settings: Vec<Setting> =
            keys.iter().map(|(k, v)| Setting { key: k.clone(), value: v.clone(), origin: "keys".into() }).collect();
        assert_eq!(overlay(&run, &settings).unwrap(), run);
    }
}
