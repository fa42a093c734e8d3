//! Flat `key = value` configuration files. Keys mirror the training
//! configuration field names one to one; every malformed line is collected
//! so a bad file fails with a single complete report.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::objective::PoolMode;
use crate::trainer::TrainConfig;

/// Apply `text` on top of `base`. Blank lines and `#` comments are ignored;
/// unknown keys, duplicate keys, and unparseable values are all reported
/// together in one error. The merged configuration is validated before it
/// is returned.
pub fn parse_train_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    let mut problems: Vec<String> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let Some((k, v)) = line.split_once('=') else {
            problems.push(format!("line {lineno}: expected 'key = value', got '{line}'"));
            continue;
        };
        let key = k.trim();
        let val = v.trim();
        if !seen.insert(key.to_string()) {
            problems.push(format!("line {lineno}: duplicate key '{key}'"));
            continue;
        }
        let mut bad = |what: &str| {
            problems.push(format!("line {lineno}: {key} expects {what}, got '{val}'"));
        };
        match key {
            "learning_rate" => match val.parse() {
                Ok(x) => cfg.learning_rate = x,
                Err(_) => bad("a number"),
            },
            "lambda" => match val.parse() {
                Ok(x) => cfg.lambda = x,
                Err(_) => bad("a number"),
            },
            "lambda_cl" => match val.parse() {
                Ok(x) => cfg.lambda_cl = x,
                Err(_) => bad("a number"),
            },
            "tau" => match val.parse() {
                Ok(x) => cfg.tau = x,
                Err(_) => bad("a number"),
            },
            "embed_dim" => match val.parse() {
                Ok(x) => cfg.embed_dim = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "num_layers" => match val.parse() {
                Ok(x) => cfg.num_layers = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "num_neighbors" => match val.parse() {
                Ok(x) => cfg.num_neighbors = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "batch_size" => match val.parse() {
                Ok(x) => cfg.batch_size = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "max_epochs" => match val.parse() {
                Ok(x) => cfg.max_epochs = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "patience" => match val.parse() {
                Ok(x) => cfg.patience = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "seed" => match val.parse() {
                Ok(x) => cfg.seed = x,
                Err(_) => bad("a nonnegative integer"),
            },
            "pool" => match PoolMode::parse(val) {
                Ok(x) => cfg.pool = x,
                Err(_) => bad("in-batch or full-set"),
            },
            "use_projections" => match parse_bool(val) {
                Some(x) => cfg.use_projections = x,
                None => bad("true or false"),
            },
            "item_graph_normalize" => match parse_bool(val) {
                Some(x) => cfg.item_graph_normalize = x,
                None => bad("true or false"),
            },
            _ => problems.push(format!("line {lineno}: unknown key '{key}'")),
        }
    }

    if !problems.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} problem(s):\n  {}",
            problems.len(),
            problems.join("\n  ")
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Read a configuration file on top of the defaults.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text, TrainConfig::default()).map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Render a configuration in the same format [`parse_train_config`] reads.
pub fn render_config(cfg: &TrainConfig) -> String {
    format!(
        "learning_rate = {}\n\
         embed_dim = {}\n\
         num_layers = {}\n\
         num_neighbors = {}\n\
         lambda = {}\n\
         lambda_cl = {}\n\
         tau = {}\n\
         batch_size = {}\n\
         max_epochs = {}\n\
         patience = {}\n\
         seed = {}\n\
         pool = {}\n\
         use_projections = {}\n\
         item_graph_normalize = {}\n",
        cfg.learning_rate,
        cfg.embed_dim,
        cfg.num_layers,
        cfg.num_neighbors,
        cfg.lambda,
        cfg.lambda_cl,
        cfg.tau,
        cfg.batch_size,
        cfg.max_epochs,
        cfg.patience,
        cfg.seed,
        cfg.pool.tag(),
        cfg.use_projections,
        cfg.item_graph_normalize,
    )
}
