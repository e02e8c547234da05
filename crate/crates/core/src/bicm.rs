//! Parallel bit-interleaved coded modulation over Gray-labelled square QAM.
//!
//! A frame carries L = 2n binary codewords of equal length N on N symbols.
//! Symbol t holds bit t of every codeword; which label position each
//! codeword occupies is drawn afresh per symbol (a seeded state
//! permutation), and every bit is XORed with a seeded dither so each
//! bit-level sub-channel is output-symmetric.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ensembles::LdgmCode;
use crate::quadrature::{log_sum_exp, normal_cdf};
use crate::rates::pam_axis;
use crate::rng::stream;
use crate::{Bit, Error, Result};

/// Square 2^{2n}-QAM with unit average energy. Labels carry 2n bits, MSB
/// first: the first n select the in-phase level, the last n quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    n: usize,
    /// Per-axis amplitudes indexed by the axis label.
    axis: Vec<f64>,
}

impl QamConstellation {
    pub fn new(n: usize) -> Result<Self> {
        if !(1..=4).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        let (levels, labels) = pam_axis(n);
        let mut axis = vec![0.0; levels.len()];
        for (a, l) in levels.iter().zip(labels) {
            axis[l] = *a;
        }
        Ok(QamConstellation { n, axis })
    }

    /// Bits per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.n
    }

    pub fn size(&self) -> usize {
        1 << (2 * self.n)
    }

    pub fn point(&self, label: usize) -> Complex64 {
        let mask = (1 << self.n) - 1;
        Complex64::new(self.axis[label >> self.n], self.axis[label & mask])
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.size()).map(|l| self.point(l)).collect()
    }

    /// Bit at label position `pos` (0 = MSB).
    pub fn bit(&self, label: usize, pos: usize) -> Bit {
        ((label >> (2 * self.n - 1 - pos)) & 1) as Bit
    }

    /// Per-axis amplitudes indexed by axis label.
    pub fn axis_levels(&self) -> &[f64] {
        &self.axis
    }

    /// Exact log-sum LLRs of the n bits carried by one axis.
    fn axis_llrs(&self, y: f64, gain: f64, sigma2: f64, out: &mut [f64]) {
        let n = self.n;
        let metric: Vec<f64> = self.axis.iter().map(|a| -(y - gain * a).powi(2) / (2.0 * sigma2)).collect();
        for (b, o) in out.iter_mut().enumerate().take(n) {
            let shift = n - 1 - b;
            let zero = log_sum_exp(metric.iter().enumerate().filter(|(l, _)| (l >> shift) & 1 == 0).map(|(_, m)| *m));
            let one = log_sum_exp(metric.iter().enumerate().filter(|(l, _)| (l >> shift) & 1 == 1).map(|(_, m)| *m));
            *o = zero - one;
        }
    }

    /// Exact bit LLRs (label order) of a received sample `y = gain·x + z`,
    /// z circular with total variance `noise_var`.
    pub fn bit_llrs(&self, y: Complex64, gain: f64, noise_var: f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.n];
        let s2 = noise_var / 2.0;
        let (i, q) = out.split_at_mut(self.n);
        self.axis_llrs(y.re, gain, s2, i);
        self.axis_llrs(y.im, gain, s2, q);
        out
    }

    /// Writes `n,label,bits,i,q` rows.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Csv {
            path: "<constellation>".into(),
            source: e,
        };
        wr.write_record(["n", "label", "bits", "i", "q"]).map_err(io)?;
        for l in 0..self.size() {
            let p = self.point(l);
            let bits: String = (0..2 * self.n).map(|b| if self.bit(l, b) == 1 { '1' } else { '0' }).collect();
            wr.write_record([
                self.n.to_string(),
                l.to_string(),
                bits,
                format!("{:.17e}", p.re),
                format!("{:.17e}", p.im),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| Error::io("<constellation>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// Modulation index and the seed of the state permutations and dithers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PbicmConfig {
    pub n: usize,
    pub seed: u64,
}

impl PbicmConfig {
    pub fn streams(&self) -> usize {
        2 * self.n
    }

    /// Draws the permutations and dithers of frame `frame` with `n_symbols`
    /// symbols.
    pub fn layout(&self, n_symbols: usize, frame: u64) -> PbicmLayout {
        let l = self.streams();
        let mut rng = stream(self.seed, &[frame]);
        let mut perm = Vec::with_capacity(n_symbols * l);
        let mut p: Vec<u8> = (0..l as u8).collect();
        for _ in 0..n_symbols {
            p.shuffle(&mut rng);
            perm.extend_from_slice(&p);
        }
        let dither = (0..l * n_symbols).map(|_| rng.random::<bool>() as Bit).collect();
        PbicmLayout {
            streams: l,
            n_symbols,
            perm,
            dither,
        }
    }
}

/// Realized state permutations and dithers of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbicmLayout {
    streams: usize,
    n_symbols: usize,
    perm: Vec<u8>,
    dither: Vec<Bit>,
}

impl PbicmLayout {
    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    /// Label position of codeword `l` at symbol `t`.
    pub fn position(&self, t: usize, l: usize) -> usize {
        self.perm[t * self.streams + l] as usize
    }

    pub fn dither(&self, l: usize, t: usize) -> Bit {
        self.dither[l * self.n_symbols + t]
    }
}

/// L equal-length streams, one per codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct SubchannelFrame<T> {
    streams: Vec<Vec<T>>,
}

impl<T: Clone> SubchannelFrame<T> {
    pub fn new(streams: Vec<Vec<T>>) -> Result<Self> {
        let len = streams.first().map_or(0, Vec::len);
        for s in &streams {
            if s.len() != len {
                return Err(Error::LengthMismatch {
                    what: "sub-channel stream",
                    expected: len,
                    actual: s.len(),
                });
            }
        }
        Ok(SubchannelFrame { streams })
    }

    /// Splits a flat buffer into `l` consecutive streams.
    pub fn from_flat(data: &[T], l: usize) -> Result<Self> {
        if l == 0 || !data.len().is_multiple_of(l) {
            return Err(Error::LengthMismatch {
                what: "flat frame (multiple of stream count)",
                expected: l * (data.len() / l.max(1) + 1),
                actual: data.len(),
            });
        }
        let len = data.len() / l;
        Ok(SubchannelFrame {
            streams: data.chunks(len.max(1)).map(<[T]>::to_vec).collect(),
        })
    }

    pub fn streams(&self) -> &[Vec<T>] {
        &self.streams
    }

    pub fn stream(&self, l: usize) -> &[T] {
        &self.streams[l]
    }

    pub fn count(&self) -> usize {
        self.streams.len()
    }

    /// Common stream length.
    pub fn len(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_flat(self) -> Vec<T> {
        self.streams.into_iter().flatten().collect()
    }
}

/// Maps a frame of bits to unit-energy symbols.
pub fn pbicm_modulate(frame: &SubchannelFrame<Bit>, cnst: &QamConstellation, layout: &PbicmLayout) -> Result<Vec<Complex64>> {
    let l = cnst.bits_per_symbol();
    if frame.count() != l {
        return Err(Error::LengthMismatch {
            what: "stream count",
            expected: l,
            actual: frame.count(),
        });
    }
    let n = frame.len();
    if layout.n_symbols() < n {
        return Err(Error::LengthMismatch {
            what: "layout symbols",
            expected: n,
            actual: layout.n_symbols(),
        });
    }
    Ok((0..n)
        .map(|t| {
            let mut label = 0usize;
            for s in 0..l {
                let bit = (frame.stream(s)[t] ^ layout.dither(s, t)) as usize;
                label |= bit << (l - 1 - layout.position(t, s));
            }
            cnst.point(label)
        })
        .collect())
}

/// Per-codeword exact LLRs of received symbols `y = gain·x + z`.
pub fn pbicm_demodulate(
    y: &[Complex64],
    gain: f64,
    noise_var: f64,
    cnst: &QamConstellation,
    layout: &PbicmLayout,
) -> Result<SubchannelFrame<f64>> {
    if layout.n_symbols() < y.len() {
        return Err(Error::LengthMismatch {
            what: "layout symbols",
            expected: y.len(),
            actual: layout.n_symbols(),
        });
    }
    let l = cnst.bits_per_symbol();
    let mut streams = vec![vec![0.0; y.len()]; l];
    for (t, &yt) in y.iter().enumerate() {
        let llr = cnst.bit_llrs(yt, gain, noise_var);
        for (s, st) in streams.iter_mut().enumerate() {
            let v = llr[layout.position(t, s)];
            st[t] = if layout.dither(s, t) == 1 { -v } else { v };
        }
    }
    Ok(SubchannelFrame { streams })
}

/// y = gain·x + z, z circular Gaussian of total variance `noise_var`.
pub fn awgn<R: Rng + ?Sized>(x: &[Complex64], gain: f64, noise_var: f64, rng: &mut R) -> Vec<Complex64> {
    let z = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("finite variance");
    x.iter()
        .map(|&s| s * gain + Complex64::new(z.sample(rng), z.sample(rng)))
        .collect()
}

/// What the relay produces for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayFrame {
    pub b_q: SubchannelFrame<Bit>,
    pub b_r: SubchannelFrame<Bit>,
    pub x_r: Vec<Complex64>,
}

/// Relay processing: demodulate the listened prefix, quantize each bit LLR
/// to its sign, LDGM-encode every stream, and modulate with the relay's own
/// layout.
pub fn relay_qmf_pbicm(
    y_sr: &[Complex64],
    gain: f64,
    noise_var: f64,
    cnst: &QamConstellation,
    layout_s: &PbicmLayout,
    ldgm: &LdgmCode,
    layout_r: &PbicmLayout,
) -> Result<RelayFrame> {
    let listen = ldgm.k_r();
    if y_sr.len() < listen {
        return Err(Error::LengthMismatch {
            what: "relay observations",
            expected: listen,
            actual: y_sr.len(),
        });
    }
    let llr = pbicm_demodulate(&y_sr[..listen], gain, noise_var, cnst, layout_s)?;
    let b_q = SubchannelFrame::new(
        llr.streams()
            .iter()
            .map(|s| s.iter().map(|&v| (v < 0.0) as Bit).collect())
            .collect(),
    )?;
    let b_r = SubchannelFrame::new(b_q.streams().iter().map(|s| ldgm.encode(s)).collect::<Result<_>>()?)?;
    let x_r = pbicm_modulate(&b_r, cnst, layout_r)?;
    Ok(RelayFrame { b_q, b_r, x_r })
}

fn axis_noise(snr: f64) -> f64 {
    1.0 / (2.0 * snr)
}

/// Sign changes of one axis bit LLR as a function of the received value.
fn llr_roots(cnst: &QamConstellation, b: usize, sigma2: f64) -> Vec<f64> {
    let n = cnst.n();
    let lev = cnst.axis_levels();
    let amax = lev.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let span = amax + 10.0 * sigma2.sqrt();
    let mut buf = vec![0.0; n];
    let mut llr = |y: f64| {
        cnst.axis_llrs(y, 1.0, sigma2, &mut buf);
        buf[b]
    };
    let steps = 20_000;
    let mut roots = Vec::new();
    let mut x0 = -span;
    let mut v0 = llr(x0);
    for i in 1..=steps {
        let x1 = -span + 2.0 * span * i as f64 / steps as f64;
        let v1 = llr(x1);
        if (v0 < 0.0) != (v1 < 0.0) {
            let (mut lo, mut hi, vlo) = (x0, x1, v0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if (llr(mid) < 0.0) == (vlo < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        v0 = v1;
    }
    roots
}

/// Probability that the sign of the exact LLR at label position `s`
/// disagrees with the transmitted bit, for unit-energy 2^{2n}-QAM at `snr`.
/// Obtained from the LLR's sign-change points and Gaussian tail integrals.
pub fn subchannel_pf(n: usize, s: usize, snr: f64) -> f64 {
    if snr <= 0.0 {
        return 0.5;
    }
    let cnst = QamConstellation::new(n).expect("n in 1..=4");
    let b = s % n;
    let sigma2 = axis_noise(snr);
    let sigma = sigma2.sqrt();
    let roots = llr_roots(&cnst, b, sigma2);
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(&roots);
    edges.push(f64::INFINITY);
    let mut buf = vec![0.0; n];
    let decide_one: Vec<bool> = edges
        .windows(2)
        .map(|w| {
            let probe = match (w[0].is_finite(), w[1].is_finite()) {
                (true, true) => 0.5 * (w[0] + w[1]),
                (false, true) => w[1] - 1.0,
                (true, false) => w[0] + 1.0,
                (false, false) => 0.0,
            };
            cnst.axis_llrs(probe, 1.0, sigma2, &mut buf);
            buf[b] < 0.0
        })
        .collect();
    let m = cnst.axis_levels().len();
    let mut err = 0.0;
    for (label, &a) in cnst.axis_levels().iter().enumerate() {
        let bit_one = (label >> (n - 1 - b)) & 1 == 1;
        for (w, &one) in edges.windows(2).zip(&decide_one) {
            if one != bit_one {
                err += normal_cdf((w[1] - a) / sigma) - normal_cdf((w[0] - a) / sigma);
            }
        }
    }
    err / m as f64
}

/// Largest crossover over the 2n label positions.
pub fn worst_subchannel_pf(n: usize, snr: f64) -> f64 {
    (0..n).map(|s| subchannel_pf(n, s, snr)).fold(0.0, f64::max)
}

/// Law of the true-bit-frame LLR at label position `s` as weighted points,
/// with a uniform dithered input and unit-energy constellation at `snr`.
pub fn position_llr_points(n: usize, s: usize, snr: f64) -> Vec<(f64, f64)> {
    if snr <= 0.0 {
        return vec![(0.0, 1.0)];
    }
    let cnst = QamConstellation::new(n).expect("n in 1..=4");
    let b = s % n;
    let sigma2 = axis_noise(snr);
    let sigma = sigma2.sqrt();
    let cells = 4000;
    let width = 16.0 * sigma / cells as f64;
    let m = cnst.axis_levels().len() as f64;
    let mut buf = vec![0.0; n];
    let mut out = Vec::with_capacity(cells * cnst.axis_levels().len());
    for (label, &a) in cnst.axis_levels().iter().enumerate() {
        let sign = if (label >> (n - 1 - b)) & 1 == 1 { -1.0 } else { 1.0 };
        for c in 0..cells {
            let z0 = -8.0 * sigma + c as f64 * width;
            let w = normal_cdf((z0 + width) / sigma) - normal_cdf(z0 / sigma);
            cnst.axis_llrs(a + z0 + width / 2.0, 1.0, sigma2, &mut buf);
            out.push((sign * buf[b], w / m));
        }
    }
    out
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let t = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += t;
        if t.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
