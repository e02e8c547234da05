//! Achievable-rate calculators for QMF, DF and AF relaying, with Gaussian or
//! Gray-mapped QAM (BICM) inputs.

use serde::{Deserialize, Serialize};

use crate::quadrature::{gauss_hermite_64, log_sum_exp};
use crate::{Error, RelayChannelParams, Result};

/// log2(1 + snr).
pub fn cap_gaussian(snr: f64) -> f64 {
    (1.0 + snr.max(0.0)).log2()
}

/// Unit-energy 2^n-PAM levels for one axis of a 2^{2n}-QAM (axis energy ½),
/// indexed by amplitude order, with their Gray labels.
pub(crate) fn pam_axis(n: usize) -> (Vec<f64>, Vec<usize>) {
    let m = 1usize << n;
    let raw: Vec<f64> = (0..m).map(|k| 2.0 * k as f64 - (m as f64 - 1.0)).collect();
    let energy: f64 = raw.iter().map(|x| x * x).sum::<f64>() / m as f64;
    let scale = (0.5 / energy).sqrt();
    let levels = raw.iter().map(|x| x * scale).collect();
    // Label 0 sits on the most positive level, as bit 0 maps to +1 in BPSK.
    let labels = (0..m).map(|k| (m - 1 - k) ^ ((m - 1 - k) >> 1)).collect();
    (levels, labels)
}

/// Σ over the n bits of one axis of I(B; Y), exact log-sum metric.
fn axis_bit_information(n: usize, noise_var: f64) -> f64 {
    let (levels, labels) = pam_axis(n);
    let m = levels.len();
    let gh = gauss_hermite_64();
    let std = noise_var.sqrt();
    let mut total = 0.0;
    for b in 0..n {
        let bit = |k: usize| (labels[k] >> (n - 1 - b)) & 1;
        let mut acc = 0.0;
        for k in 0..m {
            acc += gh.expect_normal(0.0, std, |z| {
                let y = levels[k] + z;
                let metric = |j: usize| -(y - levels[j]).powi(2) / (2.0 * noise_var);
                let same = log_sum_exp((0..m).filter(|&j| bit(j) == bit(k)).map(metric));
                let all = log_sum_exp((0..m).map(metric));
                (2.0f64.ln() + same - all) / 2.0f64.ln()
            });
        }
        total += acc / m as f64;
    }
    total
}

/// BICM capacity of Gray-mapped 2^{2n}-QAM at `snr` (bits per symbol).
pub fn cap_bicm(n: usize, snr: f64) -> f64 {
    assert!((1..=4).contains(&n), "modulation index must be in 1..=4");
    if snr <= 0.0 {
        return 0.0;
    }
    // Complex noise of variance 1/snr splits evenly over the two axes.
    2.0 * axis_bit_information(n, 1.0 / (2.0 * snr)).max(0.0)
}

/// Capacity under modulation index `n` (0 means Gaussian inputs).
pub fn capacity(n: usize, snr: f64) -> f64 {
    if n == 0 {
        cap_gaussian(snr)
    } else {
        cap_bicm(n, snr)
    }
}

/// The two cut terms of the QMF rate at listening fraction `f`.
pub fn qmf_terms(params: &RelayChannelParams, f: f64, n: usize) -> (f64, f64) {
    let c_sd = capacity(n, params.snr_sd);
    let t1 = (1.0 - f) * c_sd + f * capacity(n, params.snr_sr / 2.0 + params.snr_sd);
    let t2 = (1.0 - f) * capacity(n, params.snr_rd) + c_sd - f;
    (t1, t2)
}

/// QMF achievable rate with a vector Gaussian quantizer at the noise level.
pub fn qmf_rate(params: &RelayChannelParams, f: f64, n: usize) -> f64 {
    let (t1, t2) = qmf_terms(params, f, n);
    t1.min(t2).max(0.0)
}

/// Listening fraction balancing the two cut terms, by bisection. The
/// returned f is on the side where term 1 is still the minimum.
pub fn optimize_f(params: &RelayChannelParams, n: usize) -> (f64, f64) {
    let c_sd = capacity(n, params.snr_sd);
    let c_mix = capacity(n, params.snr_sr / 2.0 + params.snr_sd);
    let c_rd = capacity(n, params.snr_rd);
    let gap = |f: f64| {
        let t1 = (1.0 - f) * c_sd + f * c_mix;
        let t2 = (1.0 - f) * c_rd + c_sd - f;
        (t1 - t2, t1.min(t2))
    };
    if gap(0.0).0 >= 0.0 {
        return (0.0, gap(0.0).1.max(0.0));
    }
    if gap(1.0).0 <= 0.0 {
        return (1.0, gap(1.0).1.max(0.0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if gap(mid).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, gap(lo).1.max(0.0))
}

/// Decode-and-forward: max over f of min{f·C(SR), (1−f)·C(RD) + C(SD)}.
/// Returns (f, rate).
pub fn df_optimum(params: &RelayChannelParams, n: usize) -> (f64, f64) {
    let a = capacity(n, params.snr_sr);
    let b = capacity(n, params.snr_rd);
    let c = capacity(n, params.snr_sd);
    let value = |f: f64| (f * a).min((1.0 - f) * b + c);
    if a + b <= 0.0 {
        return (0.0, value(0.0));
    }
    let f = ((b + c) / (a + b)).clamp(0.0, 1.0);
    (f, value(f))
}

pub fn df_rate(params: &RelayChannelParams, n: usize) -> f64 {
    df_optimum(params, n).1
}

/// Amplify-and-forward with half the time spent listening.
pub fn af_rate(params: &RelayChannelParams, n: usize) -> f64 {
    let (sd, sr, rd) = (params.snr_sd, params.snr_sr, params.snr_rd);
    let eff = sd + sr * rd / (1.0 + sr + rd);
    0.5 * capacity(n, sd) + 0.5 * capacity(n, eff)
}

/// Relay link SNRs expressed as dB offsets from SNR_SD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRelationship {
    pub sr_offset_db: f64,
    pub rd_offset_db: f64,
}

impl Default for SnrRelationship {
    /// Source–relay link 10 dB stronger, relay–destination equal to direct.
    fn default() -> Self {
        SnrRelationship {
            sr_offset_db: 10.0,
            rd_offset_db: 0.0,
        }
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl SnrRelationship {
    /// Link parameters at SNR_SD = `snr_sd_db` (block lengths left at zero).
    pub fn params(&self, snr_sd_db: f64) -> RelayChannelParams {
        RelayChannelParams {
            snr_sr: db_to_lin(snr_sd_db + self.sr_offset_db),
            snr_sd: db_to_lin(snr_sd_db),
            snr_rd: db_to_lin(snr_sd_db + self.rd_offset_db),
            f: 0.0,
            n_s: 0,
            n_r: 0,
            p_s: 1.0,
            p_r: 1.0,
        }
    }
}

/// One row of a rate-curve table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub snr_sd_db: f64,
    pub n: usize,
    pub f_star: f64,
    pub rate_qmf: f64,
    pub rate_df: f64,
    pub rate_af: f64,
    pub rate_nocoop: f64,
}

pub fn rate_point(rel: &SnrRelationship, n: usize, snr_sd_db: f64) -> RatePoint {
    let p = rel.params(snr_sd_db);
    let (f_star, rate_qmf) = optimize_f(&p, n);
    RatePoint {
        snr_sd_db,
        n,
        f_star,
        rate_qmf,
        rate_df: df_rate(&p, n),
        rate_af: af_rate(&p, n),
        rate_nocoop: capacity(n, p.snr_sd),
    }
}

/// Optimized-f rates for every modulation index in `n_list` over the grid.
pub fn rate_curves(rel: &SnrRelationship, n_list: &[usize], snr_grid_db: &[f64]) -> Vec<RatePoint> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, f64)> = n_list
        .iter()
        .flat_map(|&n| snr_grid_db.iter().map(move |&s| (n, s)))
        .collect();
    jobs.par_iter().map(|&(n, s)| rate_point(rel, n, s)).collect()
}

/// Which relaying scheme a threshold refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Qmf,
    Df,
    Af,
    NoCoop,
}

/// Smallest SNR_SD (dB) at which `scheme` reaches `target` bits, by
/// bisection to 1e-4 dB inside [lo_db, hi_db].
pub fn threshold_db(rel: &SnrRelationship, n: usize, scheme: Scheme, target: f64, lo_db: f64, hi_db: f64) -> Result<f64> {
    let rate = |db: f64| {
        let p = rel.params(db);
        match scheme {
            Scheme::Qmf => optimize_f(&p, n).1,
            Scheme::Df => df_rate(&p, n),
            Scheme::Af => af_rate(&p, n),
            Scheme::NoCoop => capacity(n, p.snr_sd),
        }
    };
    let (r_lo, r_hi) = (rate(lo_db), rate(hi_db));
    if r_lo >= target || r_hi < target {
        return Err(Error::BracketNotFound {
            lo_db,
            hi_db,
            trace: format!("rate({lo_db}) = {r_lo:.6}, rate({hi_db}) = {r_hi:.6}, target {target}"),
        });
    }
    let (mut lo, mut hi) = (lo_db, hi_db);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
