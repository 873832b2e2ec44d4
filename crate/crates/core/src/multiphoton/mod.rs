//! Multi-pair emission statistics: permanents, sampled time marginals P_n,
//! detection combinatorics and coincidence correction.

pub mod correction;
pub mod detection;
pub mod mcmc;
pub mod permanent;

pub use correction::{alpha_beta_opt, alpha_opt, coincidence_model, correct_p1, CoincidenceModel, CorrectionOrder, CorrectionResult};
pub use detection::{detection_probs, fit_efficiencies, rn_from_schmidt, rn_from_xi, Convention, DetectionProbabilities, PairNumberDistribution};
pub use mcmc::{marginal_pn, sample_joint, JointSamples, McmcConfig, PairTimeDistribution};
pub use permanent::{permanent, PERMANENT_CAP};
