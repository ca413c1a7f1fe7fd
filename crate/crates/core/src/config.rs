//! Flat `key = value` configuration files with one section per module:
//!
//! ```ini
//! [train]
//! game = ttt3
//! mode = visa_vis
//! profile = desk
//! total_games = 20000
//!
//! [net]
//! width = 128
//!
//! [search]
//! num_simulations = 25
//! root_noise = none
//! ```
//!
//! `game`, `mode` and `profile` select the defaults; every other key
//! overrides one field. Unknown sections and keys are errors.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::game::GameKind;
use crate::mcts::DirichletNoise;
use crate::training::{Mode, Profile, TrainConfig};

const SELECTORS: [&str; 3] = ["game", "mode", "profile"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Reads a config file; `overrides` are `section.key=value` strings applied last.
pub fn load_train_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_train_config(&text, overrides)
}

pub fn parse_train_config(text: &str, overrides: &[String]) -> Result<TrainConfig> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut pairs = Vec::new();
    for (section, props) in ini.iter() {
        for (key, value) in props.iter() {
            match section {
                Some(s) => pairs.push((format!("{s}.{key}"), value.to_string())),
                None => return Err(Error::Config(format!("key `{key}` must be inside a section"))),
            }
        }
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let k = k.trim();
        let k = if k.contains('.') { k.to_string() } else { format!("train.{k}") };
        pairs.push((k, v.trim().to_string()));
    }
    let selector = |name: &str| pairs.iter().rev().find(|(k, _)| k == &format!("train.{name}")).map(|(_, v)| v.clone());
    let game: GameKind = match selector("game") {
        Some(v) => parse("train.game", &v)?,
        None => return Err(Error::Config("missing required key `train.game`".into())),
    };
    let mode: Mode = selector("mode").map(|v| v.parse()).transpose()?.unwrap_or(Mode::Alphazero);
    let profile: Profile = selector("profile").map(|v| v.parse()).transpose()?.unwrap_or(Profile::Desk);
    let mut cfg = TrainConfig::new(game, mode, profile);
    for (key, value) in &pairs {
        if let Some(name) = key.strip_prefix("train.") {
            if SELECTORS.contains(&name) {
                continue;
            }
        }
        set_key(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "train.seed" => {
            let seed: u64 = parse(key, value)?;
            cfg.seed = seed;
            cfg.net.seed = seed;
        }
        "train.vis_epsilon" => cfg.vis_epsilon = parse(key, value)?,
        "train.vis_softmax_temp" => cfg.vis_softmax_temp = parse(key, value)?,
        "train.total_games" => cfg.total_games = parse(key, value)?,
        "train.batch_size" => cfg.batch_size = parse(key, value)?,
        "train.buffer_capacity" => cfg.buffer_capacity = parse(key, value)?,
        "train.train_steps_per_game" => cfg.train_steps_per_game = parse(key, value)?,
        "train.checkpoint_every" => cfg.checkpoint_every = parse(key, value)?,
        "train.snapshot_every" => cfg.snapshot_every = parse(key, value)?,
        "train.workers" => cfg.workers = parse(key, value)?,
        "net.width" => cfg.net.width = parse(key, value)?,
        "net.depth" => cfg.net.depth = parse(key, value)?,
        "net.l2_lambda" => cfg.net.l2_lambda = parse(key, value)?,
        "net.learning_rate" => cfg.net.learning_rate = parse(key, value)?,
        "net.momentum" => cfg.net.momentum = parse(key, value)?,
        "net.seed" => cfg.net.seed = parse(key, value)?,
        "search.num_simulations" => cfg.search.num_simulations = parse(key, value)?,
        "search.c_puct" => cfg.search.c_puct = parse(key, value)?,
        "search.temperature" => cfg.search.temperature = parse(key, value)?,
        "search.temperature_drop_ply" => cfg.search.temperature_drop_ply = parse(key, value)?,
        "search.root_noise" => match value.trim() {
            "none" | "off" => cfg.search.root_noise = None,
            "dirichlet" | "on" => {
                cfg.search.root_noise.get_or_insert(DirichletNoise::for_game(cfg.game));
            }
            other => return Err(Error::Config(format!("invalid value `{other}` for `{key}`"))),
        },
        "search.noise_alpha" => {
            cfg.search.root_noise.get_or_insert(DirichletNoise::for_game(cfg.game)).alpha = parse(key, value)?
        }
        "search.noise_fraction" => {
            cfg.search.root_noise.get_or_insert(DirichletNoise::for_game(cfg.game)).fraction = parse(key, value)?
        }
        other => return Err(Error::Config(format!("unknown key `{other}`"))),
    }
    Ok(())
}

/// Renders a config in the file format; parsing the result gives back `cfg`.
pub fn to_ini_string(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("[train]\ngame", cfg.game.to_string());
    line("mode", cfg.mode.to_string());
    line("seed", cfg.seed.to_string());
    line("vis_epsilon", cfg.vis_epsilon.to_string());
    line("vis_softmax_temp", cfg.vis_softmax_temp.to_string());
    line("total_games", cfg.total_games.to_string());
    line("batch_size", cfg.batch_size.to_string());
    line("buffer_capacity", cfg.buffer_capacity.to_string());
    line("train_steps_per_game", cfg.train_steps_per_game.to_string());
    line("checkpoint_every", cfg.checkpoint_every.to_string());
    line("snapshot_every", cfg.snapshot_every.to_string());
    line("workers", cfg.workers.to_string());
    line("\n[net]\nwidth", cfg.net.width.to_string());
    line("depth", cfg.net.depth.to_string());
    line("l2_lambda", cfg.net.l2_lambda.to_string());
    line("learning_rate", cfg.net.learning_rate.to_string());
    line("momentum", cfg.net.momentum.to_string());
    line("seed", cfg.net.seed.to_string());
    line("\n[search]\nnum_simulations", cfg.search.num_simulations.to_string());
    line("c_puct", cfg.search.c_puct.to_string());
    line("temperature", cfg.search.temperature.to_string());
    line("temperature_drop_ply", cfg.search.temperature_drop_ply.to_string());
    match cfg.search.root_noise {
        None => line("root_noise", "none".into()),
        Some(n) => {
            line("root_noise", "dirichlet".into());
            line("noise_alpha", n.alpha.to_string());
            line("noise_fraction", n.fraction.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selectors_pick_defaults_and_keys_override() {
        let cfg = parse_train_config("[train]\ngame = ttt4\nmode = visa_vis\ntotal_games = 123\n[net]\nwidth = 32\n", &[])
            .unwrap();
        assert_eq!(cfg.game, GameKind::Ttt4);
        assert_eq!(cfg.mode, Mode::VisaVis);
        assert_eq!(cfg.total_games, 123);
        assert_eq!(cfg.net.width, 32);
        assert_eq!(cfg.net.depth, 4);
        assert_eq!(cfg.batch_size, 128);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_train_config("[train]\ngame = ttt3\nlearning_rat = 0.1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("train.learning_rat"), "{err}");
        let err = parse_train_config("[trian]\ngame = ttt3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("trian.game") || err.to_string().contains("train.game"), "{err}");
        let err = parse_train_config("[train]\ngame = ttt3\ntotal_games = many\n", &[]).unwrap_err();
        assert!(err.to_string().contains("total_games"), "{err}");
    }

    #[test]
    fn overrides_apply_last() {
        let cfg = parse_train_config(
            "[train]\ngame = ttt3\nmode = alphazero\n",
            &["mode=vis_only".into(), "search.num_simulations=7".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::VisOnly);
        assert_eq!(cfg.search.num_simulations, 7);
        assert_eq!(cfg.net.seed, 9);
    }

    #[test]
    fn round_trip_through_text() {
        let mut cfg = TrainConfig::new(GameKind::Connect4, Mode::VisaOnly, Profile::Smoke).with_seed(4);
        cfg.search.root_noise = Some(DirichletNoise { alpha: 0.3, fraction: 0.2 });
        cfg.vis_epsilon = 0.25;
        let text = to_ini_string(&cfg);
        assert_eq!(parse_train_config(&text, &[]).unwrap(), cfg);
    }
}
