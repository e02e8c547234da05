//! Shared fixtures for the benchmarks.

use qmf_core::density_evolution::JointProfiles;
use qmf_core::ensembles::sample_graph;
use qmf_core::harness::{DESIGN_RELAY_PROFILE, DESIGN_SOURCE_PROFILE};
use qmf_core::joint_decoder::QuantizerLayer;
use qmf_core::rng::stream;
use qmf_core::{DegreeProfile, JointFactorGraph, LdgmCode};
use rand_distr::{Distribution, Normal};

pub fn design_profiles() -> JointProfiles {
    JointProfiles {
        source: DegreeProfile::parse(DESIGN_SOURCE_PROFILE).unwrap(),
        relay: DegreeProfile::parse(DESIGN_RELAY_PROFILE).unwrap(),
    }
}

/// Joint graph for the design profiles at source length `n_s`, with noisy
/// all-zero LLRs for the source-destination and relay-destination links.
pub fn joint_fixture(n_s: usize) -> (JointFactorGraph, Vec<f64>, Vec<f64>) {
    let p = design_profiles();
    let mut rng = stream(11, &[]);
    let ldpc = sample_graph(&p.source, n_s, &mut rng).unwrap();
    let n_r = n_s / 3;
    let ldgm = LdgmCode::sample(&p.relay, n_s - n_r, &mut rng).unwrap();
    let layer = QuantizerLayer::OneBit {
        p_f: vec![0.05; n_s - n_r],
    };
    let graph = JointFactorGraph::with_layer(&ldpc, &ldgm, layer, false).unwrap();
    // Consistent Gaussian LLRs, N(m, 2m).
    let llr = Normal::new(4.0, 8f64.sqrt()).unwrap();
    let sd = (0..n_s).map(|_| llr.sample(&mut rng)).collect();
    let rd = (0..ldgm.n_r()).map(|_| llr.sample(&mut rng)).collect();
    (graph, sd, rd)
}

