use serde::{Deserialize, Serialize};

use crate::cvae::LatentConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::scenes::{AgentClass, SplitMethod, DEFAULT_DT};

/// Every knob of one experiment, stored as flat TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub kl_weight: f64,
    /// Past steps `T` before the prediction frame.
    pub history_steps: usize,
    /// Observed frames `n_I`, counting the prediction frame.
    pub observed_steps: usize,
    pub horizon_steps: usize,
    pub dt: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Frames between consecutive prediction frames of one agent.
    pub window_stride: usize,
    pub grad_clip: Option<f64>,
    pub num_modes: usize,
    pub hidden_dim: usize,
    pub edge_hidden_dim: usize,
    pub attention_dim: usize,
    pub future_dim: usize,
    pub latent_hidden: usize,
    pub decoder_hidden: usize,
    pub cell: String,
    pub vehicle_radius: f64,
    pub pedestrian_radius: f64,
    pub kde_samples: usize,
    pub horizons_s: Vec<f64>,
    pub split: SplitMethod,
    pub split_fractions: [f64; 3],
    pub critical_test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let lat = LatentConfig::default();
        Self {
            beta: 0.0,
            kl_weight: 1.0,
            history_steps: enc.history_steps,
            observed_steps: enc.history_steps + 1,
            horizon_steps: 8,
            dt: DEFAULT_DT,
            learning_rate: 0.005,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            window_stride: 8,
            grad_clip: None,
            num_modes: lat.num_modes,
            hidden_dim: enc.hidden_dim,
            edge_hidden_dim: enc.edge_hidden_dim,
            attention_dim: enc.attention_dim,
            future_dim: lat.future_dim,
            latent_hidden: lat.latent_hidden,
            decoder_hidden: lat.decoder_hidden,
            cell: enc.cell,
            vehicle_radius: 20.0,
            pedestrian_radius: 10.0,
            kde_samples: 200,
            horizons_s: vec![1.0, 2.0, 3.0, 4.0],
            split: SplitMethod::Random,
            split_fractions: [0.7, 0.1, 0.2],
            critical_test_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        self.model().validate()?;
        if self.observed_steps < 1 || self.observed_steps > self.history_steps + 1 {
            return Err(Error::config(
                "observed_steps",
                format!("must lie in 1..={} (history_steps + 1)", self.history_steps + 1),
            ));
        }
        if self.horizon_steps < 1 {
            return Err(Error::config("horizon_steps", "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be > 0"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be a finite value >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.window_stride < 1 {
            return Err(Error::config("window_stride", "must be >= 1"));
        }
        if self.num_modes > 8 {
            return Err(Error::config("num_modes", "exact enumeration supports at most 8 modes"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip", "must be > 0"));
            }
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must fit a signed 64-bit integer"));
        }
        if self.kde_samples < 1 {
            return Err(Error::config("kde_samples", "must be >= 1"));
        }
        for r in [self.vehicle_radius, self.pedestrian_radius] {
            if !(r >= 0.0) {
                return Err(Error::config("radius", "must be >= 0"));
            }
        }
        for &h in &self.horizons_s {
            let steps = crate::metrics::horizon_steps(h, self.dt)?;
            if steps > self.horizon_steps {
                return Err(Error::config(
                    "horizons_s",
                    format!("{h} s exceeds the trained horizon of {} steps", self.horizon_steps),
                ));
            }
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            beta: self.beta,
            kl_weight: self.kl_weight,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                history_steps: self.history_steps,
                hidden_dim: self.hidden_dim,
                edge_hidden_dim: self.edge_hidden_dim,
                attention_dim: self.attention_dim,
                cell: self.cell.clone(),
            },
            latent: LatentConfig {
                num_modes: self.num_modes,
                future_dim: self.future_dim,
                latent_hidden: self.latent_hidden,
                decoder_hidden: self.decoder_hidden,
            },
        }
    }

    pub fn radius(&self, class: AgentClass) -> f64 {
        match class {
            AgentClass::Vehicle => self.vehicle_radius,
            AgentClass::Pedestrian => self.pedestrian_radius,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    /// Replaces one key with `value`, parsed as a TOML value when possible
    /// and as a bare string otherwise.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        if !table.contains_key(key) && !Self::OPTIONAL_KEYS.contains(&key) {
            return Err(Error::config(key, "unknown configuration key"));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
        Ok(())
    }

    const OPTIONAL_KEYS: [&'static str; 1] = ["grad_clip"];
}
