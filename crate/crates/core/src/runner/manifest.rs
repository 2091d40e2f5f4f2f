//! Declarative run manifests (TOML).
//!
//! ```toml
//! iterations_per_cell = 30
//! base_seed = 42
//! output = "runs/baseline.jsonl"
//!
//! [game]
//! num_rounds = 10
//!
//! [matrix]
//! senders = ["nash", "probe", "llm:gpt4o-mini"]
//! objectives = ["helpful", "profit_maximizing", "risk_seeking"]
//! strategies = ["direct"]
//! receiver_levels = [0.0, 0.5, 1.0]
//!
//! [providers.gpt4o-mini]
//! endpoint_url = "https://api.openai.com/v1/chat/completions"
//! model_id = "gpt-4o-mini"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::agents::SenderSpec;
use crate::game::GameConfig;
use crate::gateway::{default_key_env, mock_provider_named, Backend, MockOutcome, ProviderProfile};
use crate::money::Cents;
use crate::observation::ObservationToggles;
use crate::prompting::{Objective, ReasoningStrategy};

use super::matrix::{derive_seed, expand_matrix, TreatmentCell};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing manifest {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSection {
    #[serde(default = "default_endowment")]
    endowment: f64,
    #[serde(default = "default_multiplier")]
    multiplier: u32,
    #[serde(default = "default_rounds")]
    num_rounds: u32,
    #[serde(default = "default_granularity")]
    granularity: f64,
}

fn default_endowment() -> f64 {
    10.0
}
fn default_multiplier() -> u32 {
    3
}
fn default_rounds() -> u32 {
    10
}
fn default_granularity() -> f64 {
    0.01
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            endowment: default_endowment(),
            multiplier: default_multiplier(),
            num_rounds: default_rounds(),
            granularity: default_granularity(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSection {
    senders: Vec<String>,
    #[serde(default = "default_objectives")]
    objectives: Vec<Objective>,
    #[serde(default = "default_strategies")]
    strategies: Vec<ReasoningStrategy>,
    #[serde(default = "default_levels")]
    receiver_levels: Vec<f64>,
    #[serde(default = "default_toggles")]
    toggles: Vec<ObservationToggles>,
}

fn default_objectives() -> Vec<Objective> {
    Objective::ALL.to_vec()
}
fn default_strategies() -> Vec<ReasoningStrategy> {
    vec![ReasoningStrategy::Direct]
}
fn default_levels() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_toggles() -> Vec<ObservationToggles> {
    vec![ObservationToggles::default()]
}

/// Provider settings as written in the manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub endpoint_url: String,
    pub model_id: String,
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_rate")]
    pub rate_limit_per_minute: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
    pub api_key_env: Option<String>,
    /// Replies used under mock mode; replayed afresh for every game.
    pub mock_script: Option<Vec<MockOutcome>>,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_rate() -> u32 {
    60
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    30_000
}

impl ProviderConfig {
    fn apply(&self, name: &str, profile: &mut ProviderProfile) {
        profile.name = name.to_string();
        profile.endpoint_url = self.endpoint_url.clone();
        profile.model_id = self.model_id.clone();
        profile.temperature = self.temperature;
        profile.timeout = Duration::from_secs(self.timeout_secs);
        profile.max_retries = self.max_retries;
        profile.rate_limit_per_minute = self.rate_limit_per_minute;
        profile.backoff_base = Duration::from_millis(self.backoff_base_ms);
        profile.backoff_max = Duration::from_millis(self.backoff_max_ms);
        profile.api_key_env = self.api_key_env.clone().unwrap_or_else(|| default_key_env(name));
    }

    /// Profile talking to the configured HTTP endpoint.
    pub fn http_profile(&self, name: &str) -> ProviderProfile {
        let mut p = ProviderProfile::http(name, &self.endpoint_url, &self.model_id);
        self.apply(name, &mut p);
        p
    }

    /// Profile replaying `script` (or this provider's own mock script).
    pub fn mock_profile(&self, name: &str, fallback: Vec<MockOutcome>) -> ProviderProfile {
        let script = self.mock_script.clone().filter(|s| !s.is_empty()).unwrap_or(fallback);
        let mut p = mock_provider_named(name, script).expect("non-empty script");
        let backend: Backend = p.backend.clone();
        self.apply(name, &mut p);
        p.backend = backend;
        p
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default = "default_iterations")]
    iterations_per_cell: u32,
    #[serde(default)]
    base_seed: u64,
    output: Option<String>,
    templates_dir: Option<String>,
    #[serde(default)]
    game: GameSection,
    matrix: MatrixSection,
    #[serde(default)]
    providers: BTreeMap<String, ProviderConfig>,
}

fn default_iterations() -> u32 {
    30
}

/// The plan for a run: every cell, how often to play it, and where to write.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub cells: Vec<TreatmentCell>,
    pub iterations_per_cell: u32,
    pub base_seed: u64,
    pub game_config: GameConfig,
    pub output_path: PathBuf,
    pub templates_dir: Option<PathBuf>,
    pub providers: BTreeMap<String, ProviderConfig>,
}

impl RunManifest {
    pub const DEFAULT_OUTPUT: &'static str = "store.jsonl";

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ManifestError::Parse { message, .. } => {
                ManifestError::Parse { path: path.display().to_string(), message }
            }
            other => other,
        })
    }

    /// Parses manifest text; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ManifestError> {
        let file: ManifestFile = toml::from_str(text)
            .map_err(|e| ManifestError::Parse { path: "<inline>".into(), message: e.to_string() })?;
        let invalid = |m: String| ManifestError::Invalid(m);

        if file.iterations_per_cell < 1 {
            return Err(invalid("iterations_per_cell must be at least 1".into()));
        }
        let g = &file.game;
        if !(g.endowment.is_finite() && g.granularity.is_finite()) {
            return Err(invalid("game amounts must be finite".into()));
        }
        let game_config = GameConfig {
            endowment_per_round: Cents::from_dollars_f64(g.endowment),
            multiplier: g.multiplier,
            num_rounds: g.num_rounds,
            amount_granularity: Cents::from_dollars_f64(g.granularity),
        };
        game_config.validate().map_err(|e| invalid(e.to_string()))?;

        let senders = file
            .matrix
            .senders
            .iter()
            .map(|s| s.parse::<SenderSpec>().map_err(|e| invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        for s in &senders {
            match s {
                SenderSpec::Llm { profile } if !file.providers.contains_key(profile) => {
                    return Err(invalid(format!("sender '{s}' names undefined provider profile '{profile}'")));
                }
                SenderSpec::Probe { probe_amount }
                    if *probe_amount <= Cents::ZERO
                        || *probe_amount > game_config.endowment_per_round
                        || !probe_amount.is_multiple_of(game_config.amount_granularity) =>
                {
                    return Err(invalid(format!("sender '{s}': probe amount must be a positive grid amount within the endowment")));
                }
                SenderSpec::Constant { amount }
                    if *amount > game_config.endowment_per_round
                        || !amount.is_multiple_of(game_config.amount_granularity) =>
                {
                    return Err(invalid(format!("sender '{s}': amount must be a grid amount within the endowment")));
                }
                _ => {}
            }
        }
        for (name, p) in &file.providers {
            let profile = p.http_profile(name);
            if profile.rate_limit_per_minute == 0 {
                return Err(invalid(format!("provider '{name}': rate_limit_per_minute must be positive")));
            }
            if let Some(t) = p.temperature {
                if !(0.0..=2.0).contains(&t) {
                    return Err(invalid(format!("provider '{name}': temperature {t} out of range")));
                }
            }
        }

        let m = &file.matrix;
        let cells = expand_matrix(&m.objectives, &m.strategies, &m.receiver_levels, &m.toggles, &senders)
            .map_err(|e| invalid(e.to_string()))?;

        let manifest = RunManifest {
            cells,
            iterations_per_cell: file.iterations_per_cell,
            base_seed: file.base_seed,
            game_config,
            output_path: base_dir.join(file.output.as_deref().unwrap_or(Self::DEFAULT_OUTPUT)),
            templates_dir: file.templates_dir.map(|d| base_dir.join(d)),
            providers: file.providers,
        };
        manifest.check_seed_uniqueness()?;
        Ok(manifest)
    }

    /// Every (cell, iteration) pair with its derived seed, in execution order.
    pub fn pairs(&self) -> Vec<(usize, u32, u64)> {
        let mut out = Vec::with_capacity(self.cells.len() * self.iterations_per_cell as usize);
        for (ci, cell) in self.cells.iter().enumerate() {
            let key = cell.key();
            for it in 0..self.iterations_per_cell {
                out.push((ci, it, derive_seed(self.base_seed, &key, it)));
            }
        }
        out
    }

    pub fn total_games(&self) -> usize {
        self.cells.len() * self.iterations_per_cell as usize
    }

    fn check_seed_uniqueness(&self) -> Result<(), ManifestError> {
        let mut seen = std::collections::HashSet::new();
        for (ci, it, seed) in self.pairs() {
            if !seen.insert(seed) {
                return Err(ManifestError::Invalid(format!(
                    "derived seed collision at cell {} iteration {it}; change base_seed",
                    self.cells[ci].key()
                )));
            }
        }
        Ok(())
    }
}
