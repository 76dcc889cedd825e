//! Synthetic corpora with planted word-trait signal.
//!
//! Every user draws from its own ChaCha8 stream: `ChaCha8Rng::seed_from_u64(seed)`
//! with `set_stream(user_index)`. Output is therefore identical regardless of
//! the order or thread on which users are generated. Token placement (which
//! background names are used) draws from stream `u64::MAX`.
//!
//! A user with `L` words gets, for each planted token present, `round(boost · L)`
//! copies (at least one); the rest of the text is background drawn from a
//! Zipf law over the background tokens. Trait values are linear in the
//! presence indicators plus Gaussian noise.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, LabelValue, Protected, UserRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedToken {
    pub token: String,
    pub trait_name: String,
    pub effect: f64,
}

/// Categorical label derived from a continuous trait by cutpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholded {
    pub name: String,
    pub source: String,
    /// Ascending; `classes.len() == cutpoints.len() + 1`.
    pub cutpoints: Vec<f64>,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordsPerUser {
    pub min: usize,
    pub max: usize,
}

impl Default for WordsPerUser {
    fn default() -> Self {
        WordsPerUser { min: 550, max: 750 }
    }
}

/// Marker tokens used more by one group, and optionally a group effect on
/// planted-token usage and on the traits themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedConfound {
    pub tokens: Vec<String>,
    pub female_fraction: f64,
    pub unknown_fraction: f64,
    pub token_rate_female: f64,
    pub token_rate_male: f64,
    /// Added to each positive-effect planted token's prevalence for women,
    /// subtracted for men (reversed for negative effects).
    pub prevalence_shift: f64,
    /// Added to every continuous trait for women, subtracted for men.
    pub trait_shift: f64,
    /// When nonzero, every trait and thresholded label also gets a
    /// `<name>_reported` copy shifted by this amount (up for women, down
    /// for men): a biased measurement of an unbiased ground truth.
    #[serde(default)]
    pub label_bias: f64,
}

pub const REPORTED_SUFFIX: &str = "_reported";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    /// Distinct tokens in the generated universe, planted and marker tokens included.
    pub vocab_size: usize,
    pub planted: Vec<PlantedToken>,
    /// Continuous traits to emit; traits named by planted tokens are added.
    pub traits: Vec<String>,
    pub thresholded: Vec<Thresholded>,
    pub noise_sd: f64,
    pub words_per_user: WordsPerUser,
    /// Chance that a user carries any given planted token.
    pub prevalence: f64,
    /// Copies of a present planted token as a fraction of the user's length.
    pub boost: f64,
    pub zipf_exponent: f64,
    pub protected_confound: Option<ProtectedConfound>,
    pub seed: u64,
}

impl SynthSpec {
    /// A single continuous trait with `effects.len()` planted tokens.
    pub fn regression(n_users: usize, vocab_size: usize, effects: &[f64], noise_sd: f64, seed: u64) -> Self {
        let planted = effects
            .iter()
            .enumerate()
            .map(|(i, &effect)| PlantedToken {
                token: format!("sig{i:03}"),
                trait_name: "score".into(),
                effect,
            })
            .collect();
        SynthSpec {
            n_users,
            vocab_size,
            planted,
            traits: vec!["score".into()],
            thresholded: Vec::new(),
            noise_sd,
            words_per_user: WordsPerUser::default(),
            prevalence: 0.1,
            boost: 0.001,
            zipf_exponent: 1.5,
            protected_confound: None,
            seed,
        }
    }

    fn trait_names(&self) -> Vec<String> {
        let mut names: BTreeSet<String> = self.traits.iter().cloned().collect();
        names.extend(self.planted.iter().map(|p| p.trait_name.clone()));
        names.into_iter().collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users == 0 {
            return bad("synth needs at least one user".into());
        }
        if self.words_per_user.min <= 500 || self.words_per_user.max < self.words_per_user.min {
            return bad(format!(
                "words per user must satisfy 500 < min <= max, got {:?}",
                self.words_per_user
            ));
        }
        let mut special: BTreeSet<&str> = BTreeSet::new();
        let markers = self.protected_confound.as_ref().map_or(&[][..], |c| &c.tokens[..]);
        for t in self.planted.iter().map(|p| p.token.as_str()).chain(markers.iter().map(String::as_str)) {
            if tokenize(t) != [t] {
                return bad(format!("token {t:?} is not a single lowercase alphanumeric token"));
            }
            if t.starts_with('w') && t.len() == 6 && t[1..].bytes().all(|b| b.is_ascii_digit()) {
                return bad(format!("token {t:?} collides with background names"));
            }
            if !special.insert(t) {
                return bad(format!("token {t:?} listed twice"));
            }
        }
        if special.len() >= self.vocab_size {
            return bad(format!(
                "{} planted/marker tokens leave no background in a vocabulary of {}",
                special.len(),
                self.vocab_size
            ));
        }
        if self.vocab_size - special.len() > 100_000 {
            return bad("background vocabulary limited to 100000 tokens".into());
        }
        if self.planted.iter().any(|p| !p.effect.is_finite()) {
            return bad("planted effects must be finite".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {} must be finite and non-negative", self.noise_sd));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) || !(self.boost > 0.0 && self.boost < 0.3) {
            return bad("prevalence must be in (0, 1) and boost in (0, 0.3)".into());
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf exponent must be positive".into());
        }
        let traits = self.trait_names();
        for t in &self.thresholded {
            if !traits.contains(&t.source) {
                return bad(format!("thresholded label {:?} has unknown source {:?}", t.name, t.source));
            }
            if t.classes.len() != t.cutpoints.len() + 1 || t.cutpoints.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("label {:?} needs ascending cutpoints and one more class", t.name));
            }
        }
        if let Some(c) = &self.protected_confound {
            let p = |x: f64| (0.0..=1.0).contains(&x);
            if !p(c.female_fraction) || !p(c.unknown_fraction) || c.female_fraction + c.unknown_fraction > 1.0 {
                return bad("group fractions must lie in [0, 1] and sum to at most 1".into());
            }
            if !p(c.token_rate_female) || !p(c.token_rate_male) {
                return bad("marker token rates must lie in [0, 1]".into());
            }
            if !(self.prevalence - c.prevalence_shift.abs() >= 0.0 && self.prevalence + c.prevalence_shift.abs() <= 1.0) {
                return bad("prevalence shift pushes a rate outside [0, 1]".into());
            }
            if !c.trait_shift.is_finite() || !c.label_bias.is_finite() {
                return bad("trait shift and label bias must be finite".into());
            }
        }
        Ok(())
    }
}

/// Ground truth written next to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub background_tokens: usize,
    /// Planted tokens grouped by trait.
    pub planted_by_trait: BTreeMap<String, Vec<String>>,
    pub marker_tokens: Vec<String>,
}

impl SynthTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cumulative Zipf weights `1 / rank^s`, normalised to end at 1.
fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n)
        .map(|r| {
            acc += (r as f64).powf(-s);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

fn user_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Plan<'a> {
    spec: &'a SynthSpec,
    background: Vec<String>,
    cdf: Vec<f64>,
    traits: Vec<String>,
}

impl Plan<'_> {
    fn user(&self, i: usize) -> UserRecord {
        let spec = self.spec;
        let mut rng = user_rng(spec.seed, i as u64);
        let len = rng.gen_range(spec.words_per_user.min..=spec.words_per_user.max);

        let group = spec.protected_confound.as_ref().map(|c| {
            let u: f64 = rng.gen();
            if u < c.female_fraction {
                Protected::Female
            } else if u < c.female_fraction + c.unknown_fraction {
                Protected::Unknown
            } else {
                Protected::Male
            }
        });
        let sign = match group {
            Some(Protected::Female) => 1.0,
            Some(Protected::Male) => -1.0,
            _ => 0.0,
        };

        let mut words: Vec<&str> = Vec::with_capacity(len);
        let copies = ((spec.boost * len as f64).round() as usize).max(1);
        let mut values: BTreeMap<&str, f64> = self.traits.iter().map(|t| (t.as_str(), 0.0)).collect();
        for p in &spec.planted {
            let shift = spec.protected_confound.as_ref().map_or(0.0, |c| c.prevalence_shift);
            let rate = spec.prevalence + sign * shift * p.effect.signum();
            if rng.gen::<f64>() < rate {
                words.extend(std::iter::repeat_n(p.token.as_str(), copies));
                *values.get_mut(p.trait_name.as_str()).expect("trait registered") += p.effect;
            }
        }
        if let Some(c) = &spec.protected_confound {
            let rate = match group {
                Some(Protected::Female) => c.token_rate_female,
                Some(Protected::Male) => c.token_rate_male,
                _ => 0.5 * (c.token_rate_female + c.token_rate_male),
            };
            for t in &c.tokens {
                if rng.gen::<f64>() < rate {
                    words.extend(std::iter::repeat_n(t.as_str(), copies));
                }
            }
            for v in values.values_mut() {
                *v += sign * c.trait_shift;
            }
        }
        while words.len() < len {
            let u: f64 = rng.gen();
            let r = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
            words.push(&self.background[r]);
        }
        words.shuffle(&mut rng);

        let bias = spec.protected_confound.as_ref().map_or(0.0, |c| c.label_bias);
        let mut labels = BTreeMap::new();
        for (name, v) in values {
            let noise: f64 = rng.sample(StandardNormal);
            let v = v + spec.noise_sd * noise;
            labels.insert(name.to_string(), LabelValue::Real(v));
            if bias != 0.0 {
                labels.insert(format!("{name}{REPORTED_SUFFIX}"), LabelValue::Real(v + sign * bias));
            }
        }
        let mut thresholded = Vec::new();
        for t in &spec.thresholded {
            thresholded.push((t.name.clone(), t.source.clone(), t));
            if bias != 0.0 {
                thresholded.push((format!("{}{REPORTED_SUFFIX}", t.name), format!("{}{REPORTED_SUFFIX}", t.source), t));
            }
        }
        for (name, source, t) in thresholded {
            let v = labels[&source].as_real().expect("continuous trait");
            let class = t.cutpoints.iter().filter(|&&c| c <= v).count();
            labels.insert(name, LabelValue::Category(t.classes[class].clone()));
        }
        UserRecord::new(format!("s{i:06}"), words.join(" "), labels, group)
    }
}

/// Generates `spec.n_users` records and the matching ground truth.
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Vec<UserRecord>, SynthTruth)> {
    spec.validate()?;
    let markers: Vec<String> = spec
        .protected_confound
        .as_ref()
        .map_or_else(Vec::new, |c| c.tokens.clone());
    let n_background = spec.vocab_size - spec.planted.len() - markers.len();

    // Zipf ranks are assigned to background names in a seeded order so that
    // frequency and lexicographic order are unrelated.
    let mut background: Vec<String> = (0..n_background).map(|i| format!("w{i:05}")).collect();
    background.shuffle(&mut user_rng(spec.seed, u64::MAX));

    let plan = Plan {
        spec,
        cdf: zipf_cdf(n_background, spec.zipf_exponent),
        background,
        traits: spec.trait_names(),
    };
    let records: Vec<UserRecord> = (0..spec.n_users).into_par_iter().map(|i| plan.user(i)).collect();

    let mut planted_by_trait: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in &spec.planted {
        planted_by_trait.entry(p.trait_name.clone()).or_default().push(p.token.clone());
    }
    let truth = SynthTruth {
        spec: spec.clone(),
        background_tokens: n_background,
        planted_by_trait,
        marker_tokens: markers,
    };
    Ok((records, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec::regression(60, 300, &[1.0, -1.0, 0.5], 0.1, 7)
    }

    #[test]
    fn deterministic_and_well_formed() {
        let (a, ta) = generate_corpus(&small()).unwrap();
        let (b, tb) = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.len(), 60);
        for r in &a {
            assert!(r.word_count > 500 && r.word_count <= 750);
            assert!(r.labels["score"].as_real().unwrap().is_finite());
        }
        let (c, _) = generate_corpus(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_trait_matches_planted_presence() {
        let spec = SynthSpec::regression(40, 200, &[1.0, 2.5], 0.0, 3);
        let (records, _) = generate_corpus(&spec).unwrap();
        for r in records {
            let toks = r.tokens();
            let has = |t: &str| toks.iter().any(|x| x == t);
            let expect = f64::from(u8::from(has("sig000"))) + 2.5 * f64::from(u8::from(has("sig001")));
            assert_eq!(r.labels["score"].as_real().unwrap(), expect);
        }
    }

    #[test]
    fn thresholds_and_confound() {
        let mut spec = small();
        spec.thresholded.push(Thresholded {
            name: "band".into(),
            source: "score".into(),
            cutpoints: vec![0.0, 0.75],
            classes: vec!["low".into(), "mid".into(), "high".into()],
        });
        spec.protected_confound = Some(ProtectedConfound {
            tokens: vec!["lipstick".into()],
            female_fraction: 0.5,
            unknown_fraction: 0.1,
            token_rate_female: 1.0,
            token_rate_male: 0.0,
            prevalence_shift: 0.0,
            trait_shift: 0.0,
            label_bias: 0.5,
        });
        let (records, truth) = generate_corpus(&spec).unwrap();
        assert_eq!(truth.marker_tokens, ["lipstick"]);
        for r in &records {
            let v = r.labels["score"].as_real().unwrap();
            let band = r.labels["band"].as_category();
            let want = if v < 0.0 { "low" } else if v < 0.75 { "mid" } else { "high" };
            assert_eq!(band, want);
            let shift = match r.protected {
                Some(Protected::Female) => 0.5,
                Some(Protected::Male) => -0.5,
                _ => 0.0,
            };
            assert_eq!(r.labels["score_reported"].as_real().unwrap(), v + shift);
            assert!(r.labels.contains_key("band_reported"));
            let has = r.tokens().iter().any(|t| t == "lipstick");
            match r.protected {
                Some(Protected::Female) => assert!(has),
                Some(Protected::Male) => assert!(!has),
                _ => {}
            }
        }
    }

    #[test]
    fn rejects_infeasible_specs() {
        let too_many = SynthSpec::regression(10, 3, &[1.0, 1.0, 1.0], 0.0, 1);
        assert!(matches!(generate_corpus(&too_many), Err(Error::Config(_))));
        let mut short = small();
        short.words_per_user = WordsPerUser { min: 500, max: 600 };
        assert!(generate_corpus(&short).is_err());
        let mut clash = small();
        clash.planted[0].token = "w00001".into();
        assert!(generate_corpus(&clash).is_err());
    }
}
