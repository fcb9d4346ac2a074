//! The refinement network: baseline interval masses reweighted by a softmax
//! over network outputs, with the baseline kept in both tails.

mod fit;
mod masses;
mod model;
mod refined;

pub use masses::{adjustment_factors, baseline_masses, Adjustment, BaselineSummary, MASS_FLOOR};
pub(crate) use masses::softmax_pullback;
pub use fit::{fit_drn, summarize};
pub use model::DrnModel;
pub use refined::{ppc_transform, RefinedDistribution};
