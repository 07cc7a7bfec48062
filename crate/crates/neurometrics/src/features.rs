use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bands::{band_features, one_over_f_exponent, BandFeatures, SUMMARY_BAND};
use crate::connectivity::{coherence_matrix, covariance_matrix, eig_entropy};
use crate::dfa::dfa_hurst;
use crate::error::Result;
use crate::spectral::{welch_psd, PsdEstimate, WelchConfig};

pub const ONE_OVER_F_BAND: (f64, f64) = (3.0, 40.0);

/// Scalar features tracked over sliding windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    OneOverF,
    EigEntropy,
    PsdCentroid,
    AlphaRatio,
    DfaHurst,
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

/// The four features averaged into the mean out-of-envelope curve.
pub const HEADLINE: [MetricKind; 4] = [
    MetricKind::OneOverF,
    MetricKind::EigEntropy,
    MetricKind::PsdCentroid,
    MetricKind::AlphaRatio,
];

impl MetricKind {
    pub const ALL: [MetricKind; 10] = [
        MetricKind::OneOverF,
        MetricKind::EigEntropy,
        MetricKind::PsdCentroid,
        MetricKind::AlphaRatio,
        MetricKind::DfaHurst,
        MetricKind::Delta,
        MetricKind::Theta,
        MetricKind::Alpha,
        MetricKind::Beta,
        MetricKind::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::OneOverF => "one_over_f",
            MetricKind::EigEntropy => "eig_entropy",
            MetricKind::PsdCentroid => "psd_centroid",
            MetricKind::AlphaRatio => "alpha_ratio",
            MetricKind::DfaHurst => "dfa_hurst",
            MetricKind::Delta => "delta_power",
            MetricKind::Theta => "theta_power",
            MetricKind::Alpha => "alpha_power",
            MetricKind::Beta => "beta_power",
            MetricKind::Gamma => "gamma_power",
        }
    }
}

/// Every feature of one multichannel window.
#[derive(Clone, Debug)]
pub struct Features {
    pub psd: PsdEstimate,
    pub bands: BandFeatures,
    pub one_over_f: f64,
    pub eig_entropy: f64,
    pub dfa_hurst: f64,
    pub covariance: DMatrix<f64>,
    pub coherence: DMatrix<f64>,
}

impl Features {
    pub fn scalar(&self, m: MetricKind) -> f64 {
        match m {
            MetricKind::OneOverF => self.one_over_f,
            MetricKind::EigEntropy => self.eig_entropy,
            MetricKind::PsdCentroid => self.bands.centroid,
            MetricKind::AlphaRatio => self.bands.alpha_ratio,
            MetricKind::DfaHurst => self.dfa_hurst,
            MetricKind::Delta => self.bands.band_power[0],
            MetricKind::Theta => self.bands.band_power[1],
            MetricKind::Alpha => self.bands.band_power[2],
            MetricKind::Beta => self.bands.band_power[3],
            MetricKind::Gamma => self.bands.band_power[4],
        }
    }
}

pub fn extract(x: &[Vec<f64>], fs: f64, welch: &WelchConfig) -> Result<Features> {
    let psd = welch_psd(x, fs, welch)?;
    let mean = psd.channel_mean();
    let bands = band_features(&psd.freqs, &mean);
    let one_over_f = one_over_f_exponent(&psd.freqs, &mean, ONE_OVER_F_BAND.0, ONE_OVER_F_BAND.1)?;
    let covariance = covariance_matrix(x)?;
    let eig_entropy = eig_entropy(&covariance);
    let coherence = coherence_matrix(x, fs, welch, SUMMARY_BAND)?;
    let dfa_hurst = dfa_hurst(x, fs)?;
    Ok(Features {
        psd,
        bands,
        one_over_f,
        eig_entropy,
        dfa_hurst,
        covariance,
        coherence,
    })
}
