//! Configuration file handling.
//!
//! One TOML file configures everything: a `[cohort]` table for the
//! synthetic generator, an `[experiment]` table for the protocol, and
//! optional `[[phecodes]]` groupings for auxiliary tasks. Unknown keys
//! are rejected. Every key is documented in the README; most have the
//! usual defaults (6 epochs, 10 splits, the 2x5x2 grid, sizes 5/10/20).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use phenolab_core::cohort::{Code, GeneratorConfig, PhecodeGrouping, SignalBundle};
use phenolab_core::logreg::L1Config;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub cohort: CohortConfig,
    pub experiment: ExperimentConfig,
    /// Explicit auxiliary-task groupings (diagnosis codes only).
    #[serde(default)]
    pub phecodes: Vec<PhecodeDef>,
    /// Also offer every distinct ICD9 code in the cohort as a singleton
    /// grouping.
    #[serde(default = "default_true")]
    pub auto_phecodes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub patients: usize,
    #[serde(default)]
    pub codes: Vec<MarginalDef>,
    #[serde(default)]
    pub bundles: Vec<BundleDef>,
    #[serde(default)]
    pub noise_codes: u32,
    #[serde(default = "default_noise_lo")]
    pub noise_freq_lo: f64,
    #[serde(default = "default_noise_hi")]
    pub noise_freq_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalDef {
    pub code: String,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleCodeDef {
    pub code: String,
    #[serde(default = "default_count")]
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteDef {
    pub code: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDef {
    pub probability: f64,
    pub codes: Vec<BundleCodeDef>,
    #[serde(default)]
    pub satellites: Vec<SatelliteDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhecodeDef {
    pub name: String,
    pub codes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Definitions file, one rule per line; resolved relative to the
    /// config file.
    pub definitions: String,
    /// Name of the target phenotype within the definitions file.
    pub target: String,
    #[serde(default = "default_aux_low")]
    pub aux_low: f64,
    #[serde(default = "default_aux_high")]
    pub aux_high: f64,
    #[serde(default = "default_aux_sizes")]
    pub aux_sizes: Vec<usize>,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Redraw the auxiliary selection per split instead of fixing it
    /// across splits.
    #[serde(default)]
    pub aux_redraw_per_split: bool,
    #[serde(default)]
    pub lr_baseline: L1Settings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Settings {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_l1_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_l1_tolerance")]
    pub tolerance: f64,
}

impl Default for L1Settings {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
            max_iterations: default_l1_iterations(),
            tolerance: default_l1_tolerance(),
        }
    }
}

impl L1Settings {
    pub fn to_l1_config(&self) -> L1Config {
        L1Config {
            lambda_grid: self.lambdas.clone(),
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Stnn,
    Mtnn,
    Lr,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Stnn => "stnn",
            Family::Mtnn => "mtnn",
            Family::Lr => "lr",
        })
    }
}

impl FromStr for Family {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stnn" => Ok(Family::Stnn),
            "mtnn" => Ok(Family::Mtnn),
            "lr" => Ok(Family::Lr),
            other => bail!("unknown model family {other:?} (expected stnn, mtnn, or lr)"),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_count() -> u32 {
    1
}
fn default_noise_lo() -> f64 {
    0.002
}
fn default_noise_hi() -> f64 {
    0.05
}
fn default_aux_low() -> f64 {
    0.0008
}
fn default_aux_high() -> f64 {
    0.0295
}
fn default_aux_sizes() -> Vec<usize> {
    vec![5, 10, 20]
}
fn default_splits() -> usize {
    10
}
fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}
fn default_layers() -> Vec<usize> {
    vec![1, 2]
}
fn default_widths() -> Vec<usize> {
    vec![128, 256, 512, 1024, 2048]
}
fn default_learning_rates() -> Vec<f64> {
    vec![1e-4, 5e-5]
}
fn default_families() -> Vec<Family> {
    vec![Family::Stnn, Family::Mtnn, Family::Lr]
}
fn default_epochs() -> usize {
    6
}
fn default_batch_size() -> usize {
    256
}
fn default_lambdas() -> Vec<f64> {
    L1Config::default().lambda_grid
}
fn default_l1_iterations() -> usize {
    L1Config::default().max_iterations
}
fn default_l1_tolerance() -> f64 {
    L1Config::default().tolerance
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: AppConfig = toml::from_str(text).context("parsing config")?;
        config.experiment.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Path of the definitions file, resolved relative to the config.
    pub fn definitions_path(&self, config_path: &Path) -> PathBuf {
        let p = Path::new(&self.experiment.definitions);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn generator(&self, seed: u64) -> Result<GeneratorConfig> {
        let mut marginals = Vec::with_capacity(self.cohort.codes.len());
        for m in &self.cohort.codes {
            marginals.push((parse_code(&m.code)?, m.frequency));
        }
        let mut bundles = Vec::with_capacity(self.cohort.bundles.len());
        for b in &self.cohort.bundles {
            let codes = b
                .codes
                .iter()
                .map(|c| Ok((parse_code(&c.code)?, c.count)))
                .collect::<Result<Vec<_>>>()?;
            let satellites = b
                .satellites
                .iter()
                .map(|s| Ok((parse_code(&s.code)?, s.probability)))
                .collect::<Result<Vec<_>>>()?;
            bundles.push(SignalBundle { probability: b.probability, codes, satellites });
        }
        Ok(GeneratorConfig {
            n_patients: self.cohort.patients,
            marginals,
            bundles,
            noise_codes: self.cohort.noise_codes,
            noise_freq_lo: self.cohort.noise_freq_lo,
            noise_freq_hi: self.cohort.noise_freq_hi,
            seed,
        })
    }

    /// Explicit groupings from the config; members must be ICD9 codes.
    pub fn explicit_phecodes(&self) -> Result<Vec<PhecodeGrouping>> {
        let mut groupings = Vec::with_capacity(self.phecodes.len());
        for def in &self.phecodes {
            let mut members = std::collections::BTreeSet::new();
            for c in &def.codes {
                let code = parse_code(c)?;
                if code.namespace() != "ICD9" {
                    bail!("phecode grouping {} member {c} is not a diagnosis (ICD9) code", def.name);
                }
                members.insert(code);
            }
            groupings.push(PhecodeGrouping::new(def.name.clone(), members)?);
        }
        Ok(groupings)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.splits == 0 {
            bail!("splits must be positive");
        }
        if self.aux_sizes.is_empty() || !self.aux_sizes.windows(2).all(|w| w[0] < w[1]) {
            bail!("aux_sizes must be non-empty and ascending");
        }
        if self.layers.is_empty() || self.widths.is_empty() || self.learning_rates.is_empty() {
            bail!("the hyperparameter grid must be non-empty");
        }
        if self.layers.iter().any(|&l| l == 0 || l > 2) {
            bail!("layer counts must be 1 or 2");
        }
        if self.families.is_empty() {
            bail!("at least one model family is required");
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            bail!("split fractions must sum to 1, got {sum}");
        }
        Ok(())
    }

    /// Grid cells in a fixed enumeration order: layers, then width, then
    /// learning rate.
    pub fn grid(&self) -> Vec<(usize, usize, f64)> {
        let mut cells = Vec::new();
        for &layers in &self.layers {
            for &width in &self.widths {
                for &lr in &self.learning_rates {
                    cells.push((layers, width, lr));
                }
            }
        }
        cells
    }
}

fn parse_code(s: &str) -> Result<Code> {
    Code::new(s).map_err(|e| anyhow::anyhow!("{e}"))
}
