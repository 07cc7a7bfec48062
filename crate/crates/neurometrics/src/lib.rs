//! Signal-level features of `C × T` recordings: Welch spectra and the band
//! summaries derived from them, covariance and coherence matrices, DFA
//! scaling exponents, and the distances used to compare feature values.

mod bands;
mod connectivity;
mod dfa;
mod distance;
mod error;
mod features;
mod spectral;

pub use bands::{band_features, integrate, one_over_f_exponent, BandFeatures, BANDS, SUMMARY_BAND};
pub use connectivity::{coherence_matrix, covariance_matrix, eig_entropy};
pub use dfa::{dfa_exponent, dfa_hurst};
pub use distance::{matrix_distance, psd_jsd};
pub use error::{MetricError, Result};
pub use features::{extract, Features, MetricKind, HEADLINE, ONE_OVER_F_BAND};
pub use spectral::{stft_frames, welch_psd, PsdEstimate, WelchConfig};
