//! Statistical kernels used for screening and association analysis.

pub mod association;
pub mod bvn;
pub mod entropy;
pub mod special;
pub mod welch;

pub use association::{polychoric, polyserial, AssociationKind, AssociationResult, ContingencyTable};
pub use bvn::{bvn_cdf, bvn_pdf};
pub use entropy::{entropy, info_gain, InfoGainResult};
pub use special::{normal_cdf, normal_quantile, student_t_sf};
pub use welch::{welch_t, WelchResult};
