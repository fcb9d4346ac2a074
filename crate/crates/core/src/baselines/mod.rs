//! Competing distributional regression models.

mod cann;
mod ddr;
mod fit;
mod mdn;

pub use cann::{cann_loss, gamma_unit_deviance, CannModel, CannObjective, CREDIBILITY_BIAS};
pub use ddr::{DdrModel, DdrObjective, Histogram};
pub use fit::{fit_cann, fit_ddr, fit_mdn};
pub use mdn::{mdn_nll, GammaMixture, MdnModel, MdnObjective, Positive, MDN_COMPONENTS};
