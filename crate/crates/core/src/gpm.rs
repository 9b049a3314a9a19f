//! Output privacy by one-shot parameter perturbation.
//!
//! A deployment adds `ξ ~ N(0, σ² I)` to the trained parameters exactly once
//! and answers every query with the perturbed network. Because the noise is
//! fixed at deployment time, repeated queries do not consume further budget;
//! a new deployment with a different seed is a new release.

use serde::{Deserialize, Serialize};

use crate::accounting::{self, rdp_confidence};
use crate::error::{Error, Result};
use crate::nn::{Classifier, ConfidenceVector, Input, Model, ModelSpec, ParamVector};
use crate::rng::{self, Stream};

/// What backs the sensitivity value in a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateBasis {
    /// Sampled sensitivity; holds with confidence `1 - gamma` over datasets.
    Sampled,
    /// Analytic smoothed-clipped SGD bound; standard DP.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomDpCertificate {
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: Option<f64>,
    pub n: Option<usize>,
    #[serde(rename = "S_bar")]
    pub s_bar: f64,
    pub sigma: f64,
    pub mu: f64,
    pub basis: CertificateBasis,
}

fn check_certificate_args(sensitivity: f64, sigma: f64, delta: f64) -> Result<()> {
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(Error::Domain(format!("sensitivity must be finite and >= 0, got {sensitivity}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

fn epsilon_for(sensitivity: f64, sigma: f64, delta: f64) -> Result<(f64, f64)> {
    let mu = sensitivity / sigma;
    if sensitivity == 0.0 {
        log::warn!("sensitivity is zero: the trainer ignores its data, certifying epsilon = 0");
        return Ok((mu, 0.0));
    }
    Ok((mu, accounting::gaussian_epsilon(mu, delta)?))
}

/// Random-DP certificate from a sampled sensitivity `s_bar` over `n` pairs.
pub fn gpm_certificate(s_bar: f64, n: usize, sigma: f64, delta: f64) -> Result<RandomDpCertificate> {
    check_certificate_args(s_bar, sigma, delta)?;
    let confidence = rdp_confidence(n)?;
    let (mu, epsilon) = epsilon_for(s_bar, sigma, delta)?;
    Ok(RandomDpCertificate {
        epsilon,
        delta,
        gamma: Some(confidence.gamma),
        n: Some(n),
        s_bar,
        sigma,
        mu,
        basis: CertificateBasis::Sampled,
    })
}

/// Standard-DP certificate from an analytic sensitivity bound.
pub fn analytic_certificate(bound: f64, sigma: f64, delta: f64) -> Result<RandomDpCertificate> {
    check_certificate_args(bound, sigma, delta)?;
    let (mu, epsilon) = epsilon_for(bound, sigma, delta)?;
    Ok(RandomDpCertificate {
        epsilon,
        delta,
        gamma: None,
        n: None,
        s_bar: bound,
        sigma,
        mu,
        basis: CertificateBasis::Analytic,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpmDeployment {
    base: Model,
    perturbed: Model,
    sigma: f64,
    seed: u64,
    certificate: Option<RandomDpCertificate>,
}

/// Perturbs `params` once. Draws come from the stream keyed `(seed, "gpm")`,
/// one standard normal per coordinate in parameter order.
pub fn gpm_deploy(spec: &ModelSpec, params: &ParamVector, sigma: f64, seed: u64) -> Result<GpmDeployment> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let base = Model::new(spec.clone(), params.clone())?;
    let perturbed = if sigma == 0.0 {
        base.clone()
    } else {
        let mut s = Stream::keyed(seed, &[rng::label("gpm")]);
        let values = params
            .as_slice()
            .iter()
            .map(|&v| v + sigma * s.gaussian())
            .collect();
        Model::new(spec.clone(), ParamVector::new(spec, values)?)?
    };
    Ok(GpmDeployment {
        base,
        perturbed,
        sigma,
        seed,
        certificate: None,
    })
}

impl GpmDeployment {
    pub fn with_certificate(mut self, certificate: RandomDpCertificate) -> Self {
        self.certificate = Some(certificate);
        self
    }

    pub fn certificate(&self) -> Option<&RandomDpCertificate> {
        self.certificate.as_ref()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    /// The released network.
    pub fn perturbed(&self) -> &Model {
        &self.perturbed
    }

    /// `θ̃ - θ`.
    pub fn noise(&self) -> Vec<f64> {
        self.perturbed
            .params
            .as_slice()
            .iter()
            .zip(self.base.params.as_slice())
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn respond(&self, queries: &[Input]) -> Result<Vec<ConfidenceVector>> {
        queries.iter().map(|q| self.perturbed.predict(q)).collect()
    }
}

impl Classifier for GpmDeployment {
    fn query(&self, input: &Input) -> Result<ConfidenceVector> {
        self.perturbed.predict(input)
    }

    fn num_classes(&self) -> usize {
        self.perturbed.spec.num_classes()
    }
}
