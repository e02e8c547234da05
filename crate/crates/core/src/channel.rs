//! Half-duplex binary-input Gaussian relay channel.
//!
//! Under DBLAST the destination sees two orthogonal links (source and relay)
//! plus the relay's own observation of the source. Two equivalent views are
//! supported: the closed-form two-antenna gains, and the single-antenna view
//! in which the next block's source signal inflates the relay link noise.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Bit, Error, Result};

/// Link SNRs, listening fraction and block lengths of one relay link.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayChannelParams {
    pub snr_sr: f64,
    pub snr_sd: f64,
    pub snr_rd: f64,
    pub f: f64,
    pub n_s: usize,
    pub n_r: usize,
    pub p_s: f64,
    pub p_r: f64,
}

impl RelayChannelParams {
    /// Builds the parameter set; `n_r` follows from the half-duplex constraint.
    pub fn new(snr_sr: f64, snr_sd: f64, snr_rd: f64, f: f64, n_s: usize) -> Result<Self> {
        for (name, v) in [("snr_sr", snr_sr), ("snr_sd", snr_sd), ("snr_rd", snr_rd)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("listening fraction {f} outside [0, 1]")));
        }
        Ok(RelayChannelParams {
            snr_sr,
            snr_sd,
            snr_rd,
            f,
            n_s,
            n_r: ((1.0 - f) * n_s as f64).round() as usize,
            p_s: 1.0,
            p_r: 1.0,
        })
    }

    /// Number of source symbols the relay listens to.
    pub fn listen_len(&self) -> usize {
        self.n_s - self.n_r
    }

    /// Equivalent unit-power links realizing the three SNRs.
    pub fn equivalent(&self) -> DblastEquivalent {
        DblastEquivalent {
            h_sd: (self.snr_sd / self.p_s).sqrt(),
            h_rd: (self.snr_rd / self.p_r).sqrt(),
            h_sr: (self.snr_sr / self.p_s).sqrt(),
            noise_var_sd: 1.0,
            noise_var_rd: 1.0,
            noise_var_sr: 1.0,
        }
    }
}

/// Physical gains with `m` receive antennas at the destination.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoGains {
    pub h1: Vec<Complex64>,
    pub h2: Vec<Complex64>,
    pub h_r: Complex64,
}

impl MimoGains {
    pub fn new(h1: Vec<Complex64>, h2: Vec<Complex64>, h_r: Complex64) -> Result<Self> {
        if h1.is_empty() || h1.len() != h2.len() {
            return Err(Error::LengthMismatch {
                what: "h2 (must match h1, m >= 1)",
                expected: h1.len().max(1),
                actual: h2.len(),
            });
        }
        Ok(MimoGains { h1, h2, h_r })
    }

    pub fn m(&self) -> usize {
        self.h1.len()
    }
}

/// Three orthogonal scalar links after DBLAST interference cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DblastEquivalent {
    pub h_sd: f64,
    pub h_rd: f64,
    pub h_sr: f64,
    pub noise_var_sd: f64,
    pub noise_var_rd: f64,
    pub noise_var_sr: f64,
}

impl DblastEquivalent {
    pub fn snr_sd(&self, p_s: f64) -> f64 {
        self.h_sd * self.h_sd * p_s / self.noise_var_sd
    }

    pub fn snr_rd(&self, p_r: f64) -> f64 {
        self.h_rd * self.h_rd * p_r / self.noise_var_rd
    }

    pub fn snr_sr(&self, p_s: f64) -> f64 {
        self.h_sr * self.h_sr * p_s / self.noise_var_sr
    }
}

/// Which equivalent-channel view to use when reducing physical gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EquivalentView {
    /// Closed-form projection gains for two receive antennas.
    #[default]
    TwoAntenna,
    /// Single antenna, source signal of the next block treated as noise.
    InflatedNoise,
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Equivalent gains for M = 2: h_rd shrinks the component of h2 parallel to
/// h1 by the MMSE factor of the interfering source signal.
pub fn dblast_equivalent_gains(g: &MimoGains, p_s: f64) -> Result<DblastEquivalent> {
    if g.m() != 2 {
        return Err(Error::UnsupportedDimension(g.m()));
    }
    if !(p_s >= 0.0) {
        return Err(Error::InvalidParameter(format!("source power {p_s} must be >= 0")));
    }
    let h1_sq = norm_sqr(&g.h1);
    // |<h1, h2>|² / ‖h1‖² is the squared norm of the parallel component.
    let par_sq = if h1_sq > 0.0 {
        let inner: Complex64 = g.h1.iter().zip(&g.h2).map(|(a, b)| a.conj() * b).sum();
        inner.norm_sqr() / h1_sq
    } else {
        0.0
    };
    let perp_sq = (norm_sqr(&g.h2) - par_sq).max(0.0);
    Ok(DblastEquivalent {
        h_sd: h1_sq.sqrt(),
        h_rd: (perp_sq + par_sq / (1.0 + p_s * h1_sq)).sqrt(),
        h_sr: g.h_r.norm(),
        noise_var_sd: 1.0,
        noise_var_rd: 1.0,
        noise_var_sr: 1.0,
    })
}

/// Noise variances (sd, rd, sr) of the single-antenna view.
pub fn equivalent_noise_variances(h1_mag: f64) -> (f64, f64, f64) {
    (1.0, 1.0 + h1_mag * h1_mag, 1.0)
}

/// Reduces physical gains to equivalent links according to `view`.
pub fn equivalent_links(g: &MimoGains, p_s: f64, view: EquivalentView) -> Result<DblastEquivalent> {
    match view {
        EquivalentView::TwoAntenna => dblast_equivalent_gains(g, p_s),
        EquivalentView::InflatedNoise => {
            let h1 = norm_sqr(&g.h1).sqrt();
            let (var_sd, var_rd, var_sr) = equivalent_noise_variances(h1);
            Ok(DblastEquivalent {
                h_sd: h1,
                h_rd: norm_sqr(&g.h2).sqrt(),
                h_sr: g.h_r.norm(),
                noise_var_sd: var_sd,
                noise_var_rd: var_rd,
                noise_var_sr: var_sr,
            })
        }
    }
}

/// Sufficient statistics at the destination and relay for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelObservation {
    pub llr_sd: Vec<f64>,
    pub llr_rd: Vec<f64>,
    pub llr_sr: Vec<f64>,
    pub y_sd: Vec<f64>,
    pub y_rd: Vec<f64>,
    pub y_sr: Vec<f64>,
}

/// Channel LLR of a BPSK symbol with amplitude `amp` seen through gain `h`.
#[inline]
pub fn bpsk_llr(y: f64, h: f64, amp: f64, noise_var: f64) -> f64 {
    2.0 * h * amp * y / noise_var
}

/// Maps bits to ±`amp` (0 → +amp).
pub fn bpsk_modulate(bits: &[Bit], amp: f64) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { amp } else { -amp }).collect()
}

fn awgn<R: Rng + ?Sized>(n: usize, var: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, var.sqrt()).expect("variance is finite and positive");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Sends one block over the three equivalent links.
///
/// The relay listens to the first `x_s.len() - x_r.len()` source symbols.
pub fn transmit_block<R: Rng + ?Sized>(
    x_s: &[f64],
    x_r: &[f64],
    p_s: f64,
    p_r: f64,
    eq: &DblastEquivalent,
    rng: &mut R,
) -> Result<ChannelObservation> {
    if x_r.len() > x_s.len() {
        return Err(Error::LengthMismatch {
            what: "relay block (must not exceed source block)",
            expected: x_s.len(),
            actual: x_r.len(),
        });
    }
    let listen = x_s.len() - x_r.len();
    let (amp_s, amp_r) = (p_s.sqrt(), p_r.sqrt());

    let z_sd = awgn(x_s.len(), eq.noise_var_sd, rng);
    let z_rd = awgn(x_r.len(), eq.noise_var_rd, rng);
    let z_sr = awgn(listen, eq.noise_var_sr, rng);

    let y_sd: Vec<f64> = x_s.iter().zip(&z_sd).map(|(x, z)| eq.h_sd * x + z).collect();
    let y_rd: Vec<f64> = x_r.iter().zip(&z_rd).map(|(x, z)| eq.h_rd * x + z).collect();
    let y_sr: Vec<f64> = x_s[..listen].iter().zip(&z_sr).map(|(x, z)| eq.h_sr * x + z).collect();

    Ok(ChannelObservation {
        llr_sd: y_sd.iter().map(|&y| bpsk_llr(y, eq.h_sd, amp_s, eq.noise_var_sd)).collect(),
        llr_rd: y_rd.iter().map(|&y| bpsk_llr(y, eq.h_rd, amp_r, eq.noise_var_rd)).collect(),
        llr_sr: y_sr.iter().map(|&y| bpsk_llr(y, eq.h_sr, amp_s, eq.noise_var_sr)).collect(),
        y_sd,
        y_rd,
        y_sr,
    })
}

/// Maps decoded relay bits back to transmitted symbols for cancellation.
pub trait Modulator {
    fn modulate(&self, bits: &[Bit]) -> Vec<f64>;
}

/// Antipodal signalling with a fixed amplitude.
#[derive(Debug, Clone, Copy)]
pub struct Bpsk {
    pub amplitude: f64,
}

impl Modulator for Bpsk {
    fn modulate(&self, bits: &[Bit]) -> Vec<f64> {
        bpsk_modulate(bits, self.amplitude)
    }
}

/// Removes the relay codeword from the received block: y − h2·x_R(b_R).
///
/// A wrong `decoded_br` is cancelled as given; the residual then carries
/// twice the relay amplitude at every wrong position.
pub fn sic_cancel(y_block: &[f64], decoded_br: &[Bit], h2: f64, modulator: &impl Modulator) -> Vec<f64> {
    let x_r = modulator.modulate(decoded_br);
    y_block
        .iter()
        .zip(x_r.iter().chain(std::iter::repeat(&0.0)))
        .map(|(y, x)| y - h2 * x)
        .collect()
}

/// Scalar DBLAST staircase: the relay forwards block k−1 during the
/// non-listening part of block k.
#[derive(Debug, Clone, Copy)]
pub struct Staircase {
    pub h1: f64,
    pub h2: f64,
    pub p_s: f64,
    pub p_r: f64,
    pub noise_var: f64,
}

impl Staircase {
    /// Received block k: h1·x_S[k] + h2·x_R[k−1] (on the trailing symbols) + z.
    pub fn receive<R: Rng + ?Sized>(&self, x_s: &[f64], x_r_prev: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>> {
        let z = awgn(x_s.len(), self.noise_var, rng);
        let mut y: Vec<f64> = x_s.iter().zip(&z).map(|(x, z)| self.h1 * x + z).collect();
        if let Some(x_r) = x_r_prev {
            if x_r.len() > x_s.len() {
                return Err(Error::LengthMismatch {
                    what: "relay block",
                    expected: x_s.len(),
                    actual: x_r.len(),
                });
            }
            let offset = x_s.len() - x_r.len();
            for (yi, xr) in y[offset..].iter_mut().zip(x_r) {
                *yi += self.h2 * xr;
            }
        }
        Ok(y)
    }

    /// Relay LLRs for block k−1 read from block k with the fresh source
    /// signal treated as Gaussian noise.
    pub fn relay_llrs(&self, y_next: &[f64], n_r: usize) -> Vec<f64> {
        let var = self.noise_var + self.h1 * self.h1 * self.p_s;
        let offset = y_next.len() - n_r;
        y_next[offset..]
            .iter()
            .map(|&y| bpsk_llr(y, self.h2, self.p_r.sqrt(), var))
            .collect()
    }

    /// Source LLRs from an interference-free residual.
    pub fn source_llrs(&self, residual: &[f64]) -> Vec<f64> {
        residual
            .iter()
            .map(|&y| bpsk_llr(y, self.h1, self.p_s.sqrt(), self.noise_var))
            .collect()
    }

    /// Cancels the relay codeword of block k−1 out of block k.
    pub fn cancel(&self, y_block: &[f64], decoded_br: &[Bit]) -> Vec<f64> {
        let offset = y_block.len() - decoded_br.len();
        let mut out = y_block.to_vec();
        let tail = sic_cancel(&y_block[offset..], decoded_br, self.h2, &Bpsk { amplitude: self.p_r.sqrt() });
        out[offset..].copy_from_slice(&tail);
        out
    }
}
