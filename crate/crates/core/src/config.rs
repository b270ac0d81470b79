//! Flat key=value config files. Every TrainConfig field has a key here;
//! the CLI mirrors the same namespace through repeatable `--set key=value`
//! flags, and the checkpoint directory can be overridden by environment
//! variable.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::Pattern;
use crate::train::TrainConfig;

pub const CHECKPOINT_DIR_ENV: &str = "FINPAINT_CHECKPOINT_DIR";

/// Parse `key = value` lines; '#' starts a comment, blanks are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key=value", ln + 1)));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad bool '{v}' for {key}"))),
    }
}

/// Apply one key to a TrainConfig. Unknown keys are errors, not warnings.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "gen.base_width" => cfg.gen.base_width = parse(key, v)?,
        "gen.n_down" => {
            cfg.gen.n_down = parse(key, v)?;
            cfg.gen.n_up = cfg.gen.n_down;
        }
        "gen.n_residual" => cfg.gen.n_residual = parse(key, v)?,
        "gen.ffc" => cfg.gen.ffc = parse_bool(key, v)?,
        "gen.ffc_ratio" => cfg.gen.ffc_ratio = parse(key, v)?,
        "gen.trunk_width" => {
            cfg.gen.trunk_width_override = if v == "auto" { None } else { Some(parse(key, v)?) }
        }
        "disc.n_layers" => cfg.disc.n_layers = parse(key, v)?,
        "disc.base_width" => cfg.disc.base_width = parse(key, v)?,
        "disc.kernel_size" => cfg.disc.kernel_size = parse(key, v)?,
        "weights.kappa" => cfg.weights.kappa = parse(key, v)?,
        "weights.alpha" => cfg.weights.alpha = parse(key, v)?,
        "weights.beta" => cfg.weights.beta = parse(key, v)?,
        "weights.gamma" => cfg.weights.gamma = parse(key, v)?,
        "texture.pattern" => cfg.texture.pattern = v.parse::<Pattern>()?,
        "texture.min_period" => cfg.texture.min_period = parse(key, v)?,
        "texture.max_period" => cfg.texture.max_period = parse(key, v)?,
        "texture.min_orientation" => cfg.texture.min_orientation = parse(key, v)?,
        "texture.max_orientation" => cfg.texture.max_orientation = parse(key, v)?,
        "texture.noise_amp" => cfg.texture.noise_amp = parse(key, v)?,
        "hrf.widths" => cfg.hrf.widths = parse_list(key, v)?,
        "hrf.dilations" => cfg.hrf.dilations = parse_list(key, v)?,
        "hrf.seed" => cfg.hrf.seed = parse(key, v)?,
        "mask_policy" => cfg.mask_policy = v.parse()?,
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "iterations" => cfg.iterations = parse(key, v)?,
        "crop" => cfg.crop = parse(key, v)?,
        "lr_g" => cfg.lr_g = parse(key, v)?,
        "lr_d" => cfg.lr_d = parse(key, v)?,
        "seed" => cfg.seed = parse(key, v)?,
        "data_seed" => cfg.data_seed = parse(key, v)?,
        "checkpoint_every" => cfg.checkpoint_every = parse(key, v)?,
        other => return Err(Error::Config(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

/// Defaults overlaid with the file contents.
pub fn train_config_from_text(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in parse_kv(text)? {
        apply_key(&mut cfg, &k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config_from_file(path: &Path) -> Result<TrainConfig> {
    train_config_from_text(&std::fs::read_to_string(path)?)
}

fn pattern_name(p: Pattern) -> &'static str {
    match p {
        Pattern::Stripes => "stripes",
        Pattern::Checkerboard => "checkerboard",
        Pattern::BrickGrid => "brick-grid",
        Pattern::Mixed => "mixed",
    }
}

fn list_string(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Full serialization; round-trips through `train_config_from_text`.
pub fn train_config_to_string(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("gen.base_width", cfg.gen.base_width.to_string());
    kv("gen.n_down", cfg.gen.n_down.to_string());
    kv("gen.n_residual", cfg.gen.n_residual.to_string());
    kv("gen.ffc", cfg.gen.ffc.to_string());
    kv("gen.ffc_ratio", cfg.gen.ffc_ratio.to_string());
    kv(
        "gen.trunk_width",
        cfg.gen
            .trunk_width_override
            .map_or("auto".to_string(), |w| w.to_string()),
    );
    kv("disc.n_layers", cfg.disc.n_layers.to_string());
    kv("disc.base_width", cfg.disc.base_width.to_string());
    kv("disc.kernel_size", cfg.disc.kernel_size.to_string());
    kv("weights.kappa", cfg.weights.kappa.to_string());
    kv("weights.alpha", cfg.weights.alpha.to_string());
    kv("weights.beta", cfg.weights.beta.to_string());
    kv("weights.gamma", cfg.weights.gamma.to_string());
    kv("texture.pattern", pattern_name(cfg.texture.pattern).to_string());
    kv("texture.min_period", cfg.texture.min_period.to_string());
    kv("texture.max_period", cfg.texture.max_period.to_string());
    kv("texture.min_orientation", cfg.texture.min_orientation.to_string());
    kv("texture.max_orientation", cfg.texture.max_orientation.to_string());
    kv("texture.noise_amp", cfg.texture.noise_amp.to_string());
    kv("hrf.widths", list_string(&cfg.hrf.widths));
    kv("hrf.dilations", list_string(&cfg.hrf.dilations));
    kv("hrf.seed", cfg.hrf.seed.to_string());
    kv("mask_policy", cfg.mask_policy.to_string());
    kv("batch_size", cfg.batch_size.to_string());
    kv("iterations", cfg.iterations.to_string());
    kv("crop", cfg.crop.to_string());
    kv("lr_g", cfg.lr_g.to_string());
    kv("lr_d", cfg.lr_d.to_string());
    kv("seed", cfg.seed.to_string());
    kv("data_seed", cfg.data_seed.to_string());
    kv("checkpoint_every", cfg.checkpoint_every.to_string());
    s
}
