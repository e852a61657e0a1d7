//! Noise prediction `eps(x, c, t)`.
//!
//! The exact predictor works on class-conditional mixtures of diagonal
//! Gaussians. Under the forward map a component `N(mu, diag(s2))` diffuses to
//! `N(sqrt(ab) mu, diag(ab s2 + 1 - ab))`, so the noisy marginal stays a
//! mixture and its score is available in closed form:
//!
//! ```text
//! eps*(x, t) = -sqrt(1 - ab_t) * grad log p_t(x | c)
//!            =  sqrt(1 - ab_t) * sum_k r_k(x) (x - m_k) / v_k
//! ```
//!
//! with `r_k` the posterior responsibilities. The null condition uses the
//! class marginal weighted by `class_priors`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::schedule::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Class(u32),
    Null,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Class(c) => write!(f, "class:{c}"),
            Condition::Null => write!(f, "null"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixture {
    pub label: u32,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMixture {
    pub dimension: usize,
    pub class_priors: Vec<f64>,
    pub classes: Vec<ClassMixture>,
}

#[derive(Deserialize)]
struct MixtureFile {
    version: u32,
    #[serde(flatten)]
    mixture: LabeledMixture,
}

impl LabeledMixture {
    pub fn new(dimension: usize, class_priors: Vec<f64>, classes: Vec<ClassMixture>) -> Result<Self> {
        let m = LabeledMixture {
            dimension,
            class_priors,
            classes,
        };
        m.validate()?;
        Ok(m)
    }

    /// Parses the versioned TOML mixture format (`version = 1`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: MixtureFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<mixture>".into(),
            reason: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(Error::Mixture(format!(
                "unsupported mixture file version {}",
                file.version
            )));
        }
        file.mixture.validate()?;
        Ok(file.mixture)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Mixture("dimension must be at least 1".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Mixture("no classes".into()));
        }
        if self.class_priors.len() != self.classes.len() {
            return Err(Error::Mixture(format!(
                "{} class priors for {} classes",
                self.class_priors.len(),
                self.classes.len()
            )));
        }
        check_simplex(&self.class_priors, "class_priors")?;
        for (i, class) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|c| c.label == class.label) {
                return Err(Error::Mixture(format!("duplicate class label {}", class.label)));
            }
            if class.components.is_empty() {
                return Err(Error::Mixture(format!("class {} has no components", class.label)));
            }
            let weights: Vec<f64> = class.components.iter().map(|c| c.weight).collect();
            check_simplex(&weights, &format!("class {} weights", class.label))?;
            for comp in &class.components {
                if comp.mean.len() != self.dimension || comp.variances.len() != self.dimension {
                    return Err(Error::Mixture(format!(
                        "class {} component has wrong dimension (want {})",
                        class.label, self.dimension
                    )));
                }
                if comp.mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Mixture(format!(
                        "class {} has a non-finite mean",
                        class.label
                    )));
                }
                if comp.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Mixture(format!(
                        "class {} has a non-positive variance",
                        class.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.label)
    }

    pub fn class(&self, label: u32) -> Result<&ClassMixture> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .ok_or(Error::UnknownClass(label))
    }

    pub fn check_condition(&self, c: Condition) -> Result<()> {
        if let Condition::Class(label) = c {
            self.class(label)?;
        }
        Ok(())
    }

    /// `(log weight, component)` pairs making up `p(. | c)`.
    fn weighted_components(&self, c: Condition) -> Result<Vec<(f64, &Component)>> {
        match c {
            Condition::Class(label) => Ok(self
                .class(label)?
                .components
                .iter()
                .map(|k| (k.weight.ln(), k))
                .collect()),
            Condition::Null => Ok(self
                .classes
                .iter()
                .zip(&self.class_priors)
                .flat_map(|(class, prior)| class.components.iter().map(move |k| ((prior * k.weight).ln(), k)))
                .collect()),
        }
    }

    /// Every component mean with its class label.
    pub fn modes(&self) -> Vec<(u32, Latent)> {
        self.classes
            .iter()
            .flat_map(|class| {
                class
                    .components
                    .iter()
                    .map(move |k| (class.label, Latent(k.mean.clone())))
            })
            .collect()
    }

    /// Label and distance of the component mean closest to `x`.
    pub fn nearest_mode(&self, x: &Latent) -> (u32, f64) {
        self.modes()
            .into_iter()
            .map(|(label, m)| (label, x.distance(&m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("validated mixture has components")
    }

    /// Distance from `x` to the closest mean of class `label`.
    pub fn nearest_mode_in_class(&self, x: &Latent, label: u32) -> Result<f64> {
        Ok(self
            .class(label)?
            .components
            .iter()
            .map(|k| x.distance(&Latent(k.mean.clone())))
            .fold(f64::INFINITY, f64::min))
    }

    /// Draws `n` clean samples from `p(. | c)`.
    pub fn sample<R: Rng + ?Sized>(&self, c: Condition, n: usize, rng: &mut R) -> Result<Vec<Latent>> {
        let comps = self.weighted_components(c)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = comps.last().map(|(_, k)| *k).unwrap();
            for (lw, k) in &comps {
                acc += lw.exp();
                if u < acc {
                    chosen = k;
                    break;
                }
            }
            let values = chosen
                .mean
                .iter()
                .zip(&chosen.variances)
                .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(Latent(values));
        }
        Ok(out)
    }
}

fn check_simplex(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Mixture(format!("{what} must all be positive")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Mixture(format!("{what} sum to {sum}, not 1")));
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Diffused<'a> {
    log_weight: f64,
    comp: &'a Component,
}

impl Diffused<'_> {
    fn log_density(&self, x: &[f64], ab: f64) -> f64 {
        let sab = ab.sqrt();
        let mut acc = 0.0;
        for ((xi, mu), s2) in x.iter().zip(&self.comp.mean).zip(&self.comp.variances) {
            let v = ab * s2 + (1.0 - ab);
            let d = xi - sab * mu;
            acc += d * d / v + (LN_2PI + v.ln());
        }
        self.log_weight - 0.5 * acc
    }
}

/// `log p_t(x | c)` of the diffused mixture. `t = 0` gives the data density.
pub fn log_density(
    mixture: &LabeledMixture,
    schedule: &NoiseSchedule,
    x: &Latent,
    c: Condition,
    t: usize,
) -> Result<f64> {
    x.ensure_dim(mixture.dimension)?;
    let ab = schedule.alpha_bar(t)?;
    let terms: Vec<f64> = mixture
        .weighted_components(c)?
        .into_iter()
        .map(|(lw, comp)| Diffused { log_weight: lw, comp }.log_density(x.as_slice(), ab))
        .collect();
    Ok(log_sum_exp(&terms))
}

fn check_noisy_t(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    if t == 0 || t > schedule.train_steps() {
        return Err(Error::TimestepOutOfRange {
            t,
            min: 1,
            max: schedule.train_steps(),
        });
    }
    Ok(())
}

/// Closed-form noise prediction for the diffused mixture.
pub fn gmm_epsilon(
    mixture: &LabeledMixture,
    schedule: &NoiseSchedule,
    x: &Latent,
    c: Condition,
    t: usize,
) -> Result<Latent> {
    check_noisy_t(schedule, t)?;
    x.ensure_dim(mixture.dimension)?;
    let ab = schedule.alpha_bar(t)?;
    let sab = ab.sqrt();
    let comps = mixture.weighted_components(c)?;
    let xs = x.as_slice();

    let logs: Vec<f64> = comps
        .iter()
        .map(|(lw, comp)| {
            Diffused {
                log_weight: *lw,
                comp,
            }
            .log_density(xs, ab)
        })
        .collect();
    let norm = log_sum_exp(&logs);

    let mut acc = vec![0.0; mixture.dimension];
    for ((_, comp), lp) in comps.iter().zip(&logs) {
        let r = (lp - norm).exp();
        if r == 0.0 {
            continue;
        }
        for (j, a) in acc.iter_mut().enumerate() {
            let v = ab * comp.variances[j] + (1.0 - ab);
            *a += r * (xs[j] - sab * comp.mean[j]) / v;
        }
    }
    let k = (1.0 - ab).sqrt();
    let eps = Latent(acc.into_iter().map(|a| k * a).collect());
    eps.ensure_finite("gmm epsilon")?;
    Ok(eps)
}

/// Central-difference estimate of `-sqrt(1 - ab_t) grad log p_t(x | c)`.
pub fn finite_difference_epsilon(
    mixture: &LabeledMixture,
    schedule: &NoiseSchedule,
    x: &Latent,
    c: Condition,
    t: usize,
    h: f64,
) -> Result<Latent> {
    check_noisy_t(schedule, t)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("h", format!("step must be positive, got {h}")));
    }
    x.ensure_dim(mixture.dimension)?;
    let k = (1.0 - schedule.alpha_bar(t)?).sqrt();
    let mut probe = x.as_slice().to_vec();
    let mut out = Vec::with_capacity(probe.len());
    for j in 0..probe.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = log_density(mixture, schedule, &Latent(probe.clone()), c, t)?;
        probe[j] = orig - h;
        let down = log_density(mixture, schedule, &Latent(probe.clone()), c, t)?;
        probe[j] = orig;
        out.push(-k * (up - down) / (2.0 * h));
    }
    Ok(Latent(out))
}

/// An epsilon predictor `eps_theta(x, c, t)`.
pub trait Denoiser: Sync {
    fn dimension(&self) -> usize;

    fn epsilon(&self, x: &Latent, c: Condition, t: usize) -> Result<Latent>;
}

/// Exact predictor for a [`LabeledMixture`] under a fixed schedule.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    mixture: LabeledMixture,
    schedule: NoiseSchedule,
}

impl GmmDenoiser {
    pub fn new(mixture: LabeledMixture, schedule: NoiseSchedule) -> Self {
        GmmDenoiser { mixture, schedule }
    }

    pub fn mixture(&self) -> &LabeledMixture {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl Denoiser for GmmDenoiser {
    fn dimension(&self) -> usize {
        self.mixture.dimension
    }

    fn epsilon(&self, x: &Latent, c: Condition, t: usize) -> Result<Latent> {
        gmm_epsilon(&self.mixture, &self.schedule, x, c, t)
    }
}
