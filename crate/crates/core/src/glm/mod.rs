mod fit;
mod gamma;

pub use fit::{fit_gamma_glm, GammaGlmModel, GlmFit, IRLS_MAX_ITER, IRLS_TOL};
pub use gamma::GammaDist;
