//! Autoregressive predictive models: an exact latent-class mixture and a
//! grid-based Gaussian-copula recursion.

mod copula;
mod em;
mod latent;
pub mod normal;

pub use copula::{hellinger, CopulaPredictor, Grid, GridDensity};
pub use em::{fit_em, fit_em_traced, EmConfig, EmFit};
pub use latent::{
    entropy, latent_uncertainty, martingale_check, posterior_from_history, posterior_update,
    posterior_update_soft, posterior_update_weighted, predict, replay_history, FitMetadata,
    LatentClassModel, PosteriorState, PredictiveDistribution,
};
