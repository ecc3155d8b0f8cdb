//! Run configuration: a flat key=value text format plus command-line
//! overrides, with a resolved dump that reloads to an identical config.

use crate::model::{ConvMode, HyperParams, WindowMode};
use crate::scalar::Scalar;
use crate::training::TrainConfig;
use crate::{Result, SpikeError};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig<S: Scalar> {
    pub hp: HyperParams<S>,
    pub train: TrainConfig<S>,
}

impl<S: Scalar> Default for RunConfig<S> {
    fn default() -> Self {
        RunConfig { hp: HyperParams::default(), train: TrainConfig { log: true, ..Default::default() } }
    }
}

fn bad<T>(key: &str, value: &str) -> Result<T> {
    Err(SpikeError::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().or_else(|_| bad(key, v))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().or_else(|_| bad(key, v))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => bad(key, v),
    }
}

impl<S: Scalar> RunConfig<S> {
    /// Applies a single `key=value` override. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "t" => self.hp.t = parse_usize(key, v)?,
            "n" => self.hp.n = parse_usize(key, v)?,
            "n_v" => self.hp.n_v = parse_usize(key, v)?,
            "n_s" => self.hp.n_s = parse_usize(key, v)?,
            "r" => self.hp.r = S::from_f64(parse_f64(key, v)?),
            "c" => self.hp.c = parse_usize(key, v)?,
            "c_prime" => self.hp.c_prime = parse_usize(key, v)?,
            "c_k" => self.hp.c_k = parse_usize(key, v)?,
            "c_v" => self.hp.c_v = parse_usize(key, v)?,
            "h" => self.hp.h = parse_usize(key, v)?,
            "m_blocks" => self.hp.m_blocks = parse_usize(key, v)?,
            "k_t" => self.hp.k_t = parse_usize(key, v)?,
            "window_mode" => {
                self.hp.window_mode = match v {
                    "past_only" => WindowMode::PastOnly,
                    "past_future" => WindowMode::PastFuture,
                    _ => return bad(key, v),
                }
            }
            "conv_mode" => {
                self.hp.conv_mode = match v {
                    "spatial" => ConvMode::Spatial,
                    "spatio_temporal" => ConvMode::SpatioTemporal,
                    _ => return bad(key, v),
                }
            }
            "lr" => self.train.lr = S::from_f64(parse_f64(key, v)?),
            "momentum" => self.train.momentum = S::from_f64(parse_f64(key, v)?),
            "batch_size" => self.train.batch_size = parse_usize(key, v)?,
            "epochs" => self.train.epochs = parse_usize(key, v)?,
            "seed" => self.train.seed = v.parse().or_else(|_| bad(key, v))?,
            "augment" => self.train.augment = parse_bool(key, v)?,
            "final_frame_only" => self.train.final_frame_only = parse_bool(key, v)?,
            "map_threshold_m" => self.train.map_threshold_m = parse_f64(key, v)?,
            // 0 means unlimited / disabled for the two optional knobs
            "max_steps" => {
                let n = parse_usize(key, v)?;
                self.train.max_steps = (n > 0).then_some(n);
            }
            "target_val_map" => {
                let x = parse_f64(key, v)?;
                self.train.target_val_map = (x > 0.0).then_some(x);
            }
            _ => return Err(SpikeError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Later lines override earlier ones.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SpikeError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| SpikeError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpikeError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Serializes every key so that reloading the dump reproduces this
    /// config exactly.
    pub fn dump(&self) -> String {
        let wm = match self.hp.window_mode {
            WindowMode::PastOnly => "past_only",
            WindowMode::PastFuture => "past_future",
        };
        let cm = match self.hp.conv_mode {
            ConvMode::Spatial => "spatial",
            ConvMode::SpatioTemporal => "spatio_temporal",
        };
        let mut out = String::new();
        let kv: Vec<(&str, String)> = vec![
            ("t", self.hp.t.to_string()),
            ("n", self.hp.n.to_string()),
            ("n_v", self.hp.n_v.to_string()),
            ("n_s", self.hp.n_s.to_string()),
            ("r", format!("{}", self.hp.r.as_f64())),
            ("c", self.hp.c.to_string()),
            ("c_prime", self.hp.c_prime.to_string()),
            ("c_k", self.hp.c_k.to_string()),
            ("c_v", self.hp.c_v.to_string()),
            ("h", self.hp.h.to_string()),
            ("m_blocks", self.hp.m_blocks.to_string()),
            ("k_t", self.hp.k_t.to_string()),
            ("window_mode", wm.to_string()),
            ("conv_mode", cm.to_string()),
            ("lr", format!("{}", self.train.lr.as_f64())),
            ("momentum", format!("{}", self.train.momentum.as_f64())),
            ("batch_size", self.train.batch_size.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("seed", self.train.seed.to_string()),
            ("augment", self.train.augment.to_string()),
            ("final_frame_only", self.train.final_frame_only.to_string()),
            ("map_threshold_m", format!("{}", self.train.map_threshold_m)),
            ("max_steps", self.train.max_steps.unwrap_or(0).to_string()),
            (
                "target_val_map",
                format!("{}", self.train.target_val_map.unwrap_or(0.0)),
            ),
        ];
        for (k, v) in kv {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_comments() {
        let mut cfg = RunConfig::<f32>::default();
        cfg.apply_text("# comment\n t = 5 \nlr=0.5\nconv_mode=spatio_temporal # inline\n")
            .unwrap();
        assert_eq!(cfg.hp.t, 5);
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.hp.conv_mode, ConvMode::SpatioTemporal);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        let mut cfg = RunConfig::<f32>::default();
        let err = cfg.apply_text("bogus_key=1\n").unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        let err = cfg.apply_text("t=notanumber\n").unwrap_err().to_string();
        assert!(err.contains("notanumber"), "{err}");
        let err = cfg.apply_text("just a line\n").unwrap_err().to_string();
        assert!(err.contains("key=value"), "{err}");
    }

    #[test]
    fn dump_round_trips() {
        let mut cfg = RunConfig::<f32>::default();
        cfg.apply_text("t=7\nn_v=64\nlr=0.003\naugment=true\nwindow_mode=past_future\nmax_steps=120\n")
            .unwrap();
        let dumped = cfg.dump();
        let mut back = RunConfig::<f32>::default();
        back.apply_text(&dumped).unwrap();
        assert_eq!(back.dump(), dumped);
        assert_eq!(back.hp.t, 7);
        assert_eq!(back.train.max_steps, Some(120));
        assert_eq!(back.hp.window_mode, WindowMode::PastFuture);
    }

    #[test]
    fn later_lines_override_earlier() {
        let mut cfg = RunConfig::<f32>::default();
        cfg.apply_text("seed=1\nseed=2\n").unwrap();
        assert_eq!(cfg.train.seed, 2);
    }
}
