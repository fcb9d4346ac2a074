//! A single handle over every fitted model kind.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{CannModel, DdrModel, GammaMixture, Histogram, MdnModel};
use crate::dist::ContinuousDist;
use crate::drn::{DrnModel, RefinedDistribution};
use crate::error::Result;
use crate::glm::{GammaDist, GammaGlmModel};

/// Model families, in the order results are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Glm,
    Cann,
    Mdn,
    Ddr,
    Drn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Glm, Self::Cann, Self::Mdn, Self::Ddr, Self::Drn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Glm => "glm",
            Self::Cann => "cann",
            Self::Mdn => "mdn",
            Self::Ddr => "ddr",
            Self::Drn => "drn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model '{s}' (expected glm, cann, mdn, ddr or drn)"))
    }
}

/// Predictive distribution of any model kind.
#[derive(Debug, Clone)]
pub enum AnyDist {
    Gamma(GammaDist<f64>),
    Mixture(GammaMixture<f64>),
    Histogram(Histogram<f64>),
    Refined(RefinedDistribution<f64>),
}

macro_rules! delegate {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            AnyDist::Gamma($d) => $e,
            AnyDist::Mixture($d) => $e,
            AnyDist::Histogram($d) => $e,
            AnyDist::Refined($d) => $e,
        }
    };
}

impl ContinuousDist<f64> for AnyDist {
    fn pdf(&self, y: f64) -> f64 {
        delegate!(self, d => d.pdf(y))
    }

    fn cdf(&self, y: f64) -> f64 {
        delegate!(self, d => d.cdf(y))
    }

    fn quantile(&self, alpha: f64) -> Result<f64> {
        delegate!(self, d => d.quantile(alpha))
    }

    fn mean(&self) -> f64 {
        delegate!(self, d => d.mean())
    }

    fn crps(&self, y: f64) -> f64 {
        delegate!(self, d => d.crps(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum FittedModel {
    Glm(GammaGlmModel<f64>),
    Cann(CannModel<f64>),
    Mdn(MdnModel<f64>),
    Ddr(DdrModel<f64>),
    Drn(DrnModel<f64>),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Glm(_) => ModelKind::Glm,
            Self::Cann(_) => ModelKind::Cann,
            Self::Mdn(_) => ModelKind::Mdn,
            Self::Ddr(_) => ModelKind::Ddr,
            Self::Drn(_) => ModelKind::Drn,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<AnyDist> {
        Ok(match self {
            Self::Glm(m) => AnyDist::Gamma(m.conditional(x)?),
            Self::Cann(m) => AnyDist::Gamma(m.conditional(x)?),
            Self::Mdn(m) => AnyDist::Mixture(m.conditional(x)?),
            Self::Ddr(m) => AnyDist::Histogram(m.conditional(x)?),
            Self::Drn(m) => AnyDist::Refined(m.forward(x)?),
        })
    }

    /// Predictions for every row, in row order.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<AnyDist>> {
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.par_iter().map(|r| self.predict(r)).collect()
    }
}
