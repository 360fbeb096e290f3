//! Run configuration: a flat JSON object holding the simulation fields plus
//! the optical-switch settings used by `refsignal`.

use std::f64::consts::PI;
use std::path::Path;

use rotor_lockin::reference::{EmissionFit, RefKind, SpotGeometry};
use rotor_lockin::sim::{NoiseKind, NoiseSpec, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

/// Top-level keys that belong to [`SwitchConfig`]; everything else is a
/// simulation field.
const SWITCH_KEYS: [&str; 5] = ["geometry", "f_rot", "samples_per_rev", "revolutions", "threshold"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionConfig {
    #[serde(rename = "A")]
    pub a: f64,
    pub k_per_deg: f64,
    pub c: f64,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            a: 4.113,
            k_per_deg: 0.0789,
            c: 4.227,
        }
    }
}

/// Spot geometry with angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub r0: f64,
    pub d: f64,
    #[serde(rename = "R0")]
    pub big_r0: f64,
    pub theta_gnd_deg: f64,
    pub emission: EmissionConfig,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            r0: 0.5,
            d: 2.0,
            big_r0: 6.0,
            theta_gnd_deg: 30.0,
            emission: EmissionConfig::default(),
        }
    }
}

impl GeometryConfig {
    pub fn to_geometry(self) -> SpotGeometry {
        SpotGeometry {
            r0: self.r0,
            d: self.d,
            big_r0: self.big_r0,
            theta_gnd: self.theta_gnd_deg.to_radians(),
            emission: EmissionFit {
                a: self.emission.a,
                k: self.emission.k_per_deg * 180.0 / PI,
                c: self.emission.c,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchConfig {
    pub geometry: GeometryConfig,
    /// Blade rotation frequency, Hz.
    pub f_rot: f64,
    pub samples_per_rev: usize,
    /// Period detection needs two falling edges, so at least three.
    pub revolutions: usize,
    /// Level used to detect falling edges of the reference.
    pub threshold: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            f_rot: 2500.0,
            samples_per_rev: 7200,
            revolutions: 3,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub switch: SwitchConfig,
}

/// Command-line overrides, applied after the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub noise: Option<NoiseKind>,
    pub ref_kind: Option<RefKind>,
}

fn field<T: DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })
}

impl RunConfig {
    /// Parses a config object, or the `config` member of a run manifest.
    pub fn from_json_str(text: &str) -> Result<(Self, bool), CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        if map.contains_key("subcommand") && map.contains_key("config") {
            match map.remove("config") {
                Some(Value::Object(inner)) => map = inner,
                _ => return Err(CliError::Config("manifest `config` must be an object".into())),
            }
        }
        let noise_given = map.contains_key("noise");
        let mut switch = Map::new();
        for key in SWITCH_KEYS {
            if let Some(v) = map.remove(key) {
                switch.insert(key.to_string(), v);
            }
        }
        let cfg = Self {
            sim: field(Value::Object(map))?,
            switch: field(Value::Object(switch))?,
        };
        Ok((cfg, noise_given))
    }

    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let (mut cfg, noise_given) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_json_str(&text).map_err(|e| match e {
                    CliError::Config(msg) => CliError::Config(format!("{}: {msg}", p.display())),
                    other => other,
                })?
            }
            None => (Self::default(), false),
        };
        cfg.apply(overrides, noise_given);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: Overrides, noise_given: bool) {
        if let Some(kind) = o.noise {
            if kind == NoiseKind::Sine && !noise_given {
                // the step defaults make no sense for a sinusoid
                self.sim.noise = NoiseSpec {
                    seed: self.sim.noise.seed,
                    ..NoiseSpec::sine_birefringence()
                };
            }
            self.sim.noise.kind = kind;
        }
        if let Some(seed) = o.seed {
            self.sim.noise.seed = seed;
        }
        if let Some(kind) = o.ref_kind {
            self.sim.ref_kind = kind;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.switch
            .geometry
            .to_geometry()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.switch;
        if !(s.f_rot.is_finite() && s.f_rot > 0.0) {
            return Err(CliError::Config(format!("f_rot must be positive, got {}", s.f_rot)));
        }
        if s.samples_per_rev < 8 || s.revolutions < 3 {
            return Err(CliError::Config(
                "samples_per_rev must be at least 8 and revolutions at least 3".into(),
            ));
        }
        if !s.threshold.is_finite() {
            return Err(CliError::Config("threshold must be finite".into()));
        }
        Ok(())
    }

    /// The flat object form, as accepted by [`RunConfig::from_json_str`].
    pub fn to_value(&self) -> Value {
        let mut map = match serde_json::to_value(&self.sim).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("SimConfig is a struct"),
        };
        if let Value::Object(sw) = serde_json::to_value(self.switch).expect("config serializes") {
            map.extend(sw);
        }
        Value::Object(map)
    }
}
