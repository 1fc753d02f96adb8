//! Synthetic cohort generation.
//!
//! Codes are drawn independently per marginal frequency; signal bundles
//! are then injected jointly so that conjunctive rule definitions remain
//! satisfiable at low target prevalences. One ChaCha stream per cohort,
//! consumed in a fixed field order, makes cohorts byte-identical per seed.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{Code, CohortError, PatientRecord, MAX_AGE};
use crate::math;
use crate::rng;

/// A set of codes injected together with one probability per patient.
///
/// `codes` are raised to at least the given counts when the bundle fires;
/// `satellites` are then added independently, each with its own
/// conditional probability, to create correlated—but not deterministic—
/// companion signals.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBundle {
    pub probability: f64,
    pub codes: Vec<(Code, u32)>,
    pub satellites: Vec<(Code, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    /// Explicit per-code marginal frequencies, all in (0, 1).
    pub marginals: Vec<(Code, f64)>,
    pub bundles: Vec<SignalBundle>,
    /// Number of filler codes named `N0000`, `N0001`, ... across the
    /// ICD9/CPT/RX namespaces.
    pub noise_codes: u32,
    /// Filler frequencies interpolate geometrically from lo to hi.
    pub noise_freq_lo: f64,
    pub noise_freq_hi: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.n_patients == 0 {
            return Err(CohortError::ZeroPatients);
        }
        for (code, f) in &self.marginals {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(CohortError::InvalidFrequency {
                    code: code.as_str().to_string(),
                    value: *f,
                });
            }
        }
        if self.noise_codes > 0 {
            for f in [self.noise_freq_lo, self.noise_freq_hi] {
                if !(f > 0.0 && f < 1.0) {
                    return Err(CohortError::InvalidFrequency {
                        code: "noise".to_string(),
                        value: f,
                    });
                }
            }
        }
        for b in &self.bundles {
            if !(b.probability > 0.0 && b.probability < 1.0) {
                return Err(CohortError::InvalidProbability(b.probability));
            }
            for (code, count) in &b.codes {
                if *count == 0 {
                    return Err(CohortError::ZeroCount(code.as_str().to_string()));
                }
            }
            for (_, p) in &b.satellites {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(CohortError::InvalidProbability(*p));
                }
            }
        }
        Ok(())
    }

    /// Filler code identifiers with their interpolated frequencies.
    pub fn noise_marginals(&self) -> Vec<(Code, f64)> {
        let namespaces = ["ICD9", "CPT", "RX"];
        (0..self.noise_codes)
            .map(|i| {
                let ns = namespaces[(i % 3) as usize];
                let code = Code::new(alloc::format!("{ns}:N{i:04}"))
                    .expect("generated identifier is valid");
                let t = if self.noise_codes <= 1 {
                    0.0
                } else {
                    i as f64 / (self.noise_codes - 1) as f64
                };
                let f = math::exp(
                    math::ln(self.noise_freq_lo)
                        + t * (math::ln(self.noise_freq_hi) - math::ln(self.noise_freq_lo)),
                );
                (code, f)
            })
            .collect()
    }
}

const GENDERS: [&str; 2] = ["F", "M"];
const RACES: [&str; 5] = ["R0", "R1", "R2", "R3", "R4"];
const ETHNICITIES: [&str; 3] = ["E0", "E1", "E2"];

/// Occurrence count for a present code: 1 plus a capped geometric tail.
fn draw_count(rng: &mut impl RngCore) -> u32 {
    let mut count = 1;
    while count < 10 && rng::uniform01(rng) < 0.35 {
        count += 1;
    }
    count
}

pub fn generate_cohort(config: &GeneratorConfig) -> Result<Vec<PatientRecord>, CohortError> {
    config.validate()?;
    let noise = config.noise_marginals();
    let mut rng = rng::seeded(config.seed);
    let mut cohort = Vec::with_capacity(config.n_patients);
    for id in 0..config.n_patients {
        let age = rng::below(&mut rng, u64::from(MAX_AGE) + 1) as u32;
        let gender = GENDERS[rng::below(&mut rng, GENDERS.len() as u64) as usize];
        let race = RACES[rng::below(&mut rng, RACES.len() as u64) as usize];
        let ethnicity = ETHNICITIES[rng::below(&mut rng, ETHNICITIES.len() as u64) as usize];
        let mut record = PatientRecord::new(id as u64, age, gender, race, ethnicity)?;
        for (code, f) in config.marginals.iter().chain(noise.iter()) {
            if rng::uniform01(&mut rng) < *f {
                let count = draw_count(&mut rng);
                record.add_occurrences(code.clone(), count)?;
            }
        }
        for bundle in &config.bundles {
            if rng::uniform01(&mut rng) < bundle.probability {
                for (code, count) in &bundle.codes {
                    record.ensure_at_least(code.clone(), *count)?;
                }
                for (code, p) in &bundle.satellites {
                    if rng::uniform01(&mut rng) < *p {
                        record.ensure_at_least(code.clone(), 1)?;
                    }
                }
            }
        }
        cohort.push(record);
    }
    Ok(cohort)
}
