//! Quantize-map-and-forward relaying over the half-duplex Gaussian relay channel.
//!
//! The crate covers the whole link: the DBLAST-equivalent channel, LDPC codes
//! at the source and LDGM mapping codes at the relay, belief-propagation joint
//! decoding on the merged factor graph, density evolution for the joint
//! ensemble, information-theoretic rate thresholds, parallel BICM for
//! higher-order QAM, and a reproducible experiment harness.

pub mod bicm;
pub mod channel;
pub mod density_evolution;
pub mod ensembles;
mod error;
mod gf2;
pub mod harness;
pub mod joint_decoder;
pub mod quadrature;
pub mod rates;
pub mod rng;

pub use error::{Error, Result};

pub use bicm::{PbicmConfig, QamConstellation, SubchannelFrame};
pub use channel::{ChannelObservation, DblastEquivalent, MimoGains, RelayChannelParams};
pub use density_evolution::{DeState, LlrDensity, LlrGrid};
pub use harness::{ExperimentConfig, ResultRecord};
pub use ensembles::{DegreeProfile, LdgmCode, LdpcEncoder, QuantizerSpec, TannerGraph};
pub use joint_decoder::{DecoderConfig, JointFactorGraph, MessageState};
pub use rates::{RatePoint, SnrRelationship};

/// Hard bit values are stored one per byte, 0 or 1.
pub type Bit = u8;
