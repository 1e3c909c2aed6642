use std::fmt::Write;

use toml::Value;

use super::ExperimentSpec;

/// Experimental setting each key reproduces, where one exists.
fn mirrors(section: &str, key: &str) -> &'static str {
    match (section, key) {
        ("env", "vehicle_cpu") => "CPU cycle of vehicle F_i = 5e5",
        ("env", "rsu_cpu") => "CPU cycle of RSU F_R = 6e6",
        ("env", "mbs_cpu") => "CPU cycle of MBS F_MBS = 1e7",
        ("env", "rsu_bandwidth") => "Bandwidth of vehicle to RSU channel B_RSU = 2e8",
        ("env", "mbs_bandwidth") => "Bandwidth of vehicle to MBS channel B_MBS = 2e7",
        ("env", "transmit_power") => "vehicle transmit power 20 dBm",
        ("env", "task_sizes") => "task sizes {1, 1.5, 2} Mbit",
        ("env", "rho_range") => "linear constant rho in [100, 200]",
        ("train", "buffer_capacity") => "Experience replay buffer size = 2000",
        ("train", "gamma") => "Discount factor = 0.9",
        ("train", "learning_rate") => "Learning rate = 1e-4",
        ("train", "batch_size") => "Batch size = 64",
        ("train", "rms_decay") | ("train", "rms_epsilon") => "RMSProp optimizer",
        _ => "-",
    }
}

fn type_name(v: &Value) -> String {
    match v {
        Value::String(_) => "string".into(),
        Value::Integer(_) => "integer".into(),
        Value::Float(_) => "float".into(),
        Value::Boolean(_) => "bool".into(),
        Value::Datetime(_) => "datetime".into(),
        Value::Array(a) => match a.first() {
            Some(first) => format!("array of {}", type_name(first)),
            None => "array".into(),
        },
        Value::Table(_) => "table".into(),
    }
}

fn section(out: &mut String, name: &str, table: &toml::Table) {
    let _ = writeln!(out, "[{name}]");
    let mut nested = Vec::new();
    for (key, value) in table {
        if let Value::Table(t) = value {
            nested.push((format!("{name}.{key}"), t));
            continue;
        }
        let _ = writeln!(
            out,
            "  {key:<24} {:<18} {:<32} {}",
            type_name(value),
            value.to_string(),
            mirrors(name, key)
        );
    }
    for (n, t) in nested {
        let _ = writeln!(out);
        section(out, &n, t);
    }
}

/// Every config key with its type, default and the experimental setting it mirrors.
pub fn describe_config() -> String {
    let spec = ExperimentSpec::desk();
    let value = Value::try_from(&spec).expect("spec serializes");
    let Value::Table(root) = value else {
        unreachable!("spec serializes to a table")
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<26} {:<18} {:<32} mirrors", "key", "type", "default");
    let mut top = toml::Table::new();
    let mut sections = Vec::new();
    for (k, v) in root {
        match v {
            Value::Table(t) => sections.push((k, t)),
            other => {
                top.insert(k, other);
            }
        }
    }
    section(&mut out, "experiment", &top);
    let _ = writeln!(out, "  {:<24} {:<18} {:<32} -", "out_dir", "string", "(unset)");
    for (k, t) in sections {
        let _ = writeln!(out);
        section(&mut out, &k, &t);
    }
    out
}
