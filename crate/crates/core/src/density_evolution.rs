//! Discretized density evolution for the joint LDPC–LDGM ensemble.
//!
//! Densities live on a uniform LLR grid whose end points ±l_max absorb
//! saturated mass, plus ±∞ atoms for exactly known bits. Variable nodes
//! convolve through one large FFT per update; check nodes use a tabulated
//! pairwise box-plus on the grid; Q nodes map every grid point directly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ensembles::{ldgm_marginal_q, DegreeProfile};
use crate::quadrature::{gauss_hermite_64, normal_cdf, q_function};
use crate::rates::db_to_lin;
use crate::{Error, Result};

/// Uniform LLR grid: points kΔ for k in −K..=K, Δ = l_max/K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrGrid {
    pub half_bins: usize,
    pub l_max: f64,
}

impl Default for LlrGrid {
    fn default() -> Self {
        LlrGrid {
            half_bins: 2048,
            l_max: 30.0,
        }
    }
}

impl LlrGrid {
    pub fn new(half_bins: usize, l_max: f64) -> Self {
        assert!(half_bins >= 1 && l_max > 0.0);
        LlrGrid { half_bins, l_max }
    }

    pub fn delta(&self) -> f64 {
        self.l_max / self.half_bins as f64
    }

    /// Number of finite grid points.
    pub fn len(&self) -> usize {
        2 * self.half_bins + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// LLR value of array index `idx`.
    pub fn value(&self, idx: usize) -> f64 {
        (idx as f64 - self.half_bins as f64) * self.delta()
    }
}

/// Probability law of an LLR message on an [`LlrGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct LlrDensity {
    grid: LlrGrid,
    mass: Vec<f64>,
    pos_inf: f64,
    neg_inf: f64,
}

impl LlrDensity {
    pub fn zero(grid: LlrGrid) -> Self {
        LlrDensity {
            grid,
            mass: vec![0.0; grid.len()],
            pos_inf: 0.0,
            neg_inf: 0.0,
        }
    }

    fn deposit(&mut self, x: f64, w: f64) {
        if x == f64::INFINITY {
            self.pos_inf += w;
            return;
        }
        if x == f64::NEG_INFINITY {
            self.neg_inf += w;
            return;
        }
        let k = self.grid.half_bins as f64;
        let pos = (x / self.grid.delta() + k).clamp(0.0, 2.0 * k);
        if pos == 2.0 * k {
            self.mass[2 * self.grid.half_bins] += w;
            return;
        }
        let lo = pos.floor();
        let frac = pos - lo;
        let lo = lo as usize;
        self.mass[lo] += w * (1.0 - frac);
        self.mass[lo + 1] += w * frac;
    }

    /// Point mass at `x` (split linearly between neighbouring grid points).
    pub fn point_mass(grid: LlrGrid, x: f64) -> Self {
        let mut d = LlrDensity::zero(grid);
        d.deposit(x, 1.0);
        d
    }

    /// Bins weighted points, normalizing the total weight to one.
    pub fn from_weighted_points(grid: LlrGrid, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut d = LlrDensity::zero(grid);
        for (x, w) in points {
            d.deposit(x, w);
        }
        d.renormalize();
        d
    }

    /// N(mean, var) integrated over each grid cell; tails saturate into the
    /// end points ±l_max.
    pub fn gaussian(grid: LlrGrid, mean: f64, var: f64) -> Self {
        if var <= 0.0 {
            return LlrDensity::point_mass(grid, mean);
        }
        let std = var.sqrt();
        let delta = grid.delta();
        let cdf = |x: f64| normal_cdf((x - mean) / std);
        let mut d = LlrDensity::zero(grid);
        let mut prev = 0.0;
        for i in 0..grid.len() - 1 {
            let next = cdf(grid.value(i) + delta / 2.0);
            d.mass[i] = next - prev;
            prev = next;
        }
        d.mass[grid.len() - 1] = 1.0 - prev;
        d
    }

    pub fn grid(&self) -> &LlrGrid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn pos_inf(&self) -> f64 {
        self.pos_inf
    }

    pub fn neg_inf(&self) -> f64 {
        self.neg_inf
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.pos_inf + self.neg_inf
    }

    /// Rounding drift is multiplied by the node degrees on every iteration,
    /// so each update rescales to unit mass.
    fn renormalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            self.scale(1.0 / t);
        }
    }

    fn scale(&mut self, s: f64) {
        for m in &mut self.mass {
            *m *= s;
        }
        self.pos_inf *= s;
        self.neg_inf *= s;
    }

    /// Mean with the atoms placed at ±l_max.
    pub fn mean(&self) -> f64 {
        let finite: f64 = self.mass.iter().enumerate().map(|(i, m)| m * self.grid.value(i)).sum();
        finite + (self.pos_inf - self.neg_inf) * self.grid.l_max
    }

    /// Variance with the atoms placed at ±l_max.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let l = self.grid.l_max;
        let finite: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * (self.grid.value(i) - mu).powi(2))
            .sum();
        finite + self.pos_inf * (l - mu).powi(2) + self.neg_inf * (-l - mu).powi(2)
    }

    /// P(LLR < 0) + ½ P(LLR = 0).
    pub fn error_probability(&self) -> f64 {
        let k = self.grid.half_bins;
        self.neg_inf + self.mass[..k].iter().sum::<f64>() + 0.5 * self.mass[k]
    }

    /// E[tanh(L/2)].
    pub fn tanh_moment(&self) -> f64 {
        let finite: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, m)| m * (self.grid.value(i) / 2.0).tanh())
            .sum();
        finite + self.pos_inf - self.neg_inf
    }

    /// Law of −L.
    pub fn reflect(&self) -> Self {
        let mut mass = self.mass.clone();
        mass.reverse();
        LlrDensity {
            grid: self.grid,
            mass,
            pos_inf: self.neg_inf,
            neg_inf: self.pos_inf,
        }
    }

    /// Σ w·D over the components (weights need not be normalized).
    pub fn mixture(parts: &[(f64, &LlrDensity)]) -> Result<Self> {
        let grid = parts.first().ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?.1.grid;
        let mut out = LlrDensity::zero(grid);
        for &(w, d) in parts {
            if d.grid != grid {
                return Err(Error::GridMismatch);
            }
            for (o, m) in out.mass.iter_mut().zip(&d.mass) {
                *o += w * m;
            }
            out.pos_inf += w * d.pos_inf;
            out.neg_inf += w * d.neg_inf;
        }
        Ok(out)
    }

    /// Largest |D(−x) − e^{−x}·D(x)| relative to D(x) over grid points with
    /// D(x) above `floor` and x ≤ `x_max`.
    pub fn symmetry_defect(&self, x_max: f64, floor: f64) -> f64 {
        let k = self.grid.half_bins;
        let mut worst: f64 = 0.0;
        for j in 1..=k {
            let x = j as f64 * self.grid.delta();
            if x > x_max {
                break;
            }
            let p = self.mass[k + j];
            if p < floor {
                continue;
            }
            let n = self.mass[k - j];
            worst = worst.max((n - (-x).exp() * p).abs() / p);
        }
        worst
    }
}

/// Consistent Gaussian law N(2·snr, 4·snr) of BIAWGN channel LLRs.
pub fn channel_density_bpsk(grid: LlrGrid, snr: f64) -> LlrDensity {
    LlrDensity::gaussian(grid, 2.0 * snr, 4.0 * snr)
}

/// Relay-link LLR law when the relay bits are Bernoulli(q) and the LLRs are
/// read in the bit-0 frame.
pub fn relay_marginal_density(grid: LlrGrid, snr_rd: f64, q: f64) -> LlrDensity {
    let d0 = channel_density_bpsk(grid, snr_rd);
    if q == 0.0 {
        return d0;
    }
    LlrDensity::mixture(&[(1.0 - q, &d0), (q, &d0.reflect())]).expect("same grid")
}

/// Reference frame for the relay-side messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeFrame {
    /// Every message is read relative to its own true bit; the quantization
    /// error enters as a ±L dummy with weights (1−p_f, p_f), and the relay
    /// channel is the symmetric law.
    #[default]
    TrueBit,
    /// All messages read in the frame of the all-zero source word: the dummy
    /// is the point mass at L and the relay channel is the Bernoulli(q)
    /// mixture.
    AllZero,
}

type Plan = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

/// Reusable transforms and lookup tables for one grid.
pub struct DeEngine {
    grid: LlrGrid,
    /// Box-plus of magnitudes iΔ and jΔ (i ≤ j) as a fractional grid index,
    /// stored row-major over the upper triangle.
    boxplus_lo: Vec<u32>,
    boxplus_frac: Vec<f64>,
    row_start: Vec<usize>,
    plans: Mutex<HashMap<usize, Plan>>,
}

impl std::fmt::Debug for DeEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeEngine").field("grid", &self.grid).finish()
    }
}

/// 2·atanh(tanh(a/2)·tanh(b/2)) for a, b ≥ 0, without cancellation.
pub fn boxplus_magnitude(a: f64, b: f64) -> f64 {
    a.min(b) + (-(a + b)).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

/// One term of a variable-node mixture: weight times a product of powers.
pub struct VarTerm<'a> {
    pub weight: f64,
    pub factors: Vec<(&'a LlrDensity, u32)>,
}

const ROW_CHUNK: usize = 64;

impl DeEngine {
    pub fn new(grid: LlrGrid) -> Self {
        let k = grid.half_bins;
        let delta = grid.delta();
        let mut row_start = Vec::with_capacity(k + 1);
        let mut lo = Vec::with_capacity(k * (k + 1) / 2);
        let mut frac = Vec::with_capacity(k * (k + 1) / 2);
        for i in 1..=k {
            row_start.push(lo.len());
            for j in i..=k {
                let pos = (boxplus_magnitude(i as f64 * delta, j as f64 * delta) / delta).clamp(0.0, k as f64);
                let l = pos.floor().min((k - 1) as f64);
                lo.push(l as u32);
                frac.push(pos - l);
            }
        }
        row_start.push(lo.len());
        DeEngine {
            grid,
            boxplus_lo: lo,
            boxplus_frac: frac,
            row_start,
            plans: Mutex::new(HashMap::new()),
        }
    }

    pub fn grid(&self) -> &LlrGrid {
        &self.grid
    }

    fn plan(&self, n: usize) -> Plan {
        let mut plans = self.plans.lock().expect("plan cache poisoned");
        plans
            .entry(n)
            .or_insert_with(|| {
                let mut p = FftPlanner::new();
                (p.plan_fft_forward(n), p.plan_fft_inverse(n))
            })
            .clone()
    }

    fn check_grid(&self, d: &LlrDensity) -> Result<()> {
        if d.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Law of the sum of independent LLRs.
    pub fn var_convolve(&self, densities: &[&LlrDensity]) -> Result<LlrDensity> {
        if densities.is_empty() {
            return Ok(LlrDensity::point_mass(self.grid, 0.0));
        }
        self.var_mix(&[VarTerm {
            weight: 1.0,
            factors: densities.iter().map(|&d| (d, 1)).collect(),
        }])
    }

    /// Σ_t w_t · ⊗_f D_f^{⊗e_f}, evaluated in a single inverse FFT. Sums
    /// beyond ±l_max saturate into the end points; +∞ meeting −∞ gives 0.
    pub fn var_mix(&self, terms: &[VarTerm<'_>]) -> Result<LlrDensity> {
        let k = self.grid.half_bins;
        let mut uniq: Vec<&LlrDensity> = Vec::new();
        for t in terms {
            for &(d, _) in &t.factors {
                self.check_grid(d)?;
                if !uniq.iter().any(|u| std::ptr::eq(*u, d)) {
                    uniq.push(d);
                }
            }
        }
        let max_terms = terms
            .iter()
            .map(|t| t.factors.iter().map(|f| f.1 as usize).sum::<usize>())
            .max()
            .unwrap_or(0)
            .max(1);
        let n = (2 * max_terms * k + 1).next_power_of_two();
        let (fwd, inv) = self.plan(n);

        let spectra: Vec<Vec<Complex64>> = uniq
            .iter()
            .map(|d| {
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (i, &m) in d.mass.iter().enumerate() {
                    let off = i as isize - k as isize;
                    buf[off.rem_euclid(n as isize) as usize].re = m;
                }
                fwd.process(&mut buf);
                buf
            })
            .collect();

        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        let mut pos_inf = 0.0;
        let mut neg_inf = 0.0;
        let mut conflict = 0.0;
        for t in terms {
            let (mut a, mut ab, mut ac, mut tot) = (1.0f64, 1.0f64, 1.0f64, 1.0f64);
            for &(d, e) in &t.factors {
                let fin: f64 = d.mass.iter().sum();
                let e = e as i32;
                a *= fin.powi(e);
                ab *= (fin + d.pos_inf).powi(e);
                ac *= (fin + d.neg_inf).powi(e);
                tot *= (fin + d.pos_inf + d.neg_inf).powi(e);
            }
            pos_inf += t.weight * (ab - a);
            neg_inf += t.weight * (ac - a);
            conflict += t.weight * (tot - ab - ac + a);

            let idx: Vec<(usize, u32)> = t
                .factors
                .iter()
                .map(|&(d, e)| (uniq.iter().position(|u| std::ptr::eq(*u, d)).unwrap(), e))
                .collect();
            for (j, slot) in acc.iter_mut().enumerate() {
                let mut z = Complex64::new(t.weight, 0.0);
                for &(u, e) in &idx {
                    z *= spectra[u][j].powu(e);
                }
                *slot += z;
            }
        }
        inv.process(&mut acc);
        let scale = 1.0 / n as f64;
        let mut out = LlrDensity::zero(self.grid);
        for (r, z) in acc.iter().enumerate() {
            let v = (z.re * scale).max(0.0);
            if v == 0.0 {
                continue;
            }
            let off = if r <= n / 2 { r as isize } else { r as isize - n as isize };
            let idx = (off + k as isize).clamp(0, 2 * k as isize) as usize;
            out.mass[idx] += v;
        }
        out.pos_inf += pos_inf.max(0.0);
        out.neg_inf += neg_inf.max(0.0);
        out.mass[k] += conflict.max(0.0);
        out.renormalize();
        Ok(out)
    }

    /// Check-node combination of two independent LLRs.
    pub fn boxplus(&self, a: &LlrDensity, b: &LlrDensity) -> Result<LlrDensity> {
        use rayon::prelude::*;
        self.check_grid(a)?;
        self.check_grid(b)?;
        let k = self.grid.half_bins;
        let len = self.grid.len();
        let (az, bz) = (a.mass[k], b.mass[k]);
        let (ta, tb) = (a.total(), b.total());

        let rows: Vec<usize> = (1..=k).collect();
        let partials: Vec<Vec<f64>> = rows
            .par_chunks(ROW_CHUNK)
            .map(|chunk| {
                let mut out = vec![0.0; len];
                for &i in chunk {
                    let (ap, an) = (a.mass[k + i], a.mass[k - i]);
                    let (bpi, bni) = (b.mass[k + i], b.mass[k - i]);
                    let row = self.row_start[i - 1];
                    // Pairs (i, j) and (j, i) share the table entry for j ≥ i.
                    for j in i..=k {
                        let (bp, bn) = (b.mass[k + j], b.mass[k - j]);
                        let (apj, anj) = if j > i { (a.mass[k + j], a.mass[k - j]) } else { (0.0, 0.0) };
                        let same = ap * bp + an * bn + apj * bpi + anj * bni;
                        let diff = ap * bn + an * bp + apj * bni + anj * bpi;
                        if same == 0.0 && diff == 0.0 {
                            continue;
                        }
                        let t = row + (j - i);
                        let r = self.boxplus_lo[t] as usize;
                        let w = self.boxplus_frac[t];
                        out[k + r] += same * (1.0 - w);
                        out[k + r + 1] += same * w;
                        out[k - r] += diff * (1.0 - w);
                        out[k - r - 1] += diff * w;
                    }
                }
                out
            })
            .collect();
        let mut out = LlrDensity::zero(self.grid);
        for p in &partials {
            for (o, v) in out.mass.iter_mut().zip(p) {
                *o += v;
            }
        }
        out.mass[k] += az * tb + bz * (ta - az);
        // An infinite input passes the other one through with its sign.
        for (inf, other) in [(a, b), (b, a)] {
            for j in 1..=k {
                let (p, n) = (other.mass[k + j], other.mass[k - j]);
                out.mass[k + j] += inf.pos_inf * p + inf.neg_inf * n;
                out.mass[k - j] += inf.pos_inf * n + inf.neg_inf * p;
            }
        }
        out.pos_inf = a.pos_inf * b.pos_inf + a.neg_inf * b.neg_inf;
        out.neg_inf = a.pos_inf * b.neg_inf + a.neg_inf * b.pos_inf;
        out.renormalize();
        Ok(out)
    }

    fn boxplus_pow(&self, a: &LlrDensity, mut e: u32) -> Result<LlrDensity> {
        let mut result: Option<LlrDensity> = None;
        let mut base = a.clone();
        while e > 0 {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => self.boxplus(&r, &base)?,
                });
            }
            e >>= 1;
            if e > 0 {
                base = self.boxplus(&base, &base)?;
            }
        }
        Ok(result.unwrap_or_else(|| LlrDensity::point_mass(self.grid, f64::INFINITY)))
    }

    /// Check-node combination of independent inputs; with `scale` = 1−2p_f
    /// the result is further passed through the one-bit Q map.
    pub fn chk_combine(&self, densities: &[&LlrDensity], scale: Option<f64>) -> Result<LlrDensity> {
        let mut acc = LlrDensity::point_mass(self.grid, f64::INFINITY);
        for (i, d) in densities.iter().enumerate() {
            self.check_grid(d)?;
            acc = if i == 0 { (*d).clone() } else { self.boxplus(&acc, d)? };
        }
        Ok(match scale {
            Some(c) => self.q_map_scale(&acc, c, DeFrame::AllZero, 0.0),
            None => acc,
        })
    }

    /// Σ_j w_j · (base ⊞ src^{⊞e_j}).
    pub fn chk_mix(&self, base: Option<&LlrDensity>, src: &LlrDensity, weights: &[(u32, f64)]) -> Result<LlrDensity> {
        self.check_grid(src)?;
        let mut order: Vec<(u32, f64)> = weights.to_vec();
        order.sort_by_key(|w| w.0);
        let mut parts: Vec<(f64, LlrDensity)> = Vec::new();
        let mut cur: Option<(u32, LlrDensity)> = None;
        for (e, w) in order {
            let pw = match cur.take() {
                None => self.boxplus_pow(src, e)?,
                Some((pe, p)) if pe == e => p,
                Some((pe, p)) => self.boxplus(&p, &self.boxplus_pow(src, e - pe)?)?,
            };
            let term = match base {
                Some(b) => self.boxplus(b, &pw)?,
                None => pw.clone(),
            };
            parts.push((w, term));
            cur = Some((e, pw));
        }
        let refs: Vec<(f64, &LlrDensity)> = parts.iter().map(|(w, d)| (*w, d)).collect();
        LlrDensity::mixture(&refs)
    }

    fn q_map_scale(&self, src: &LlrDensity, c: f64, frame: DeFrame, p_f: f64) -> LlrDensity {
        let mut out = LlrDensity::zero(self.grid);
        let (keep, flip) = match frame {
            DeFrame::AllZero => (1.0, 0.0),
            DeFrame::TrueBit => (1.0 - p_f, p_f),
        };
        let mut put = |x: f64, m: f64| {
            if m == 0.0 {
                return;
            }
            let y = if x.is_infinite() {
                x.signum() * 2.0 * c.atanh()
            } else {
                2.0 * (c * (x / 2.0).tanh()).atanh()
            };
            out.deposit(y, keep * m);
            if flip > 0.0 {
                out.deposit(-y, flip * m);
            }
        };
        put(f64::INFINITY, src.pos_inf);
        put(f64::NEG_INFINITY, src.neg_inf);
        for (i, &m) in src.mass.iter().enumerate() {
            put(self.grid.value(i), m);
        }
        out
    }

    /// Output law of a one-bit Q node whose other input follows `src`.
    pub fn q_map(&self, src: &LlrDensity, p_f: f64, frame: DeFrame) -> LlrDensity {
        if p_f == 0.0 {
            return src.clone();
        }
        self.q_map_scale(src, 1.0 - 2.0 * p_f, frame, p_f)
    }
}

/// Per-position source and relay channel laws.
#[derive(Debug, Clone)]
pub struct PositionChannel {
    pub weight: f64,
    pub sd: LlrDensity,
    pub p_f: f64,
}

/// Everything a DE run needs from the physical layer at one operating point.
#[derive(Debug, Clone)]
pub struct ChannelDensities {
    pub positions: Vec<PositionChannel>,
    /// Symmetric relay–destination law (true-bit frame).
    pub rd: LlrDensity,
}

impl ChannelDensities {
    fn sd_mixture(&self) -> LlrDensity {
        if self.positions.len() == 1 {
            return self.positions[0].sd.clone();
        }
        let parts: Vec<(f64, &LlrDensity)> = self.positions.iter().map(|p| (p.weight, &p.sd)).collect();
        LlrDensity::mixture(&parts).expect("same grid")
    }

    fn mean_pf(&self) -> f64 {
        self.positions.iter().map(|p| p.weight * p.p_f).sum()
    }
}

/// Maps SNR_SD to the link laws.
pub trait ChannelModel: Sync {
    fn densities(&self, snr_sd_db: f64, grid: &LlrGrid) -> ChannelDensities;
    /// Relay listening fraction.
    fn listening_fraction(&self) -> f64;
    fn describe(&self) -> String;
}

/// Point-to-point BIAWGN; SNR_SD is the per-bit channel SNR.
#[derive(Debug, Clone, Copy, Default)]
pub struct BiawgnP2p;

impl ChannelModel for BiawgnP2p {
    fn densities(&self, snr_sd_db: f64, grid: &LlrGrid) -> ChannelDensities {
        ChannelDensities {
            positions: vec![PositionChannel {
                weight: 1.0,
                sd: channel_density_bpsk(*grid, db_to_lin(snr_sd_db)),
                p_f: 0.5,
            }],
            rd: LlrDensity::point_mass(*grid, 0.0),
        }
    }

    fn listening_fraction(&self) -> f64 {
        0.0
    }

    fn describe(&self) -> String {
        "biawgn-p2p".into()
    }
}

/// BPSK on all three links with SNRs tied to SNR_SD.
#[derive(Debug, Clone, Copy)]
pub struct BpskRelay {
    pub rel: crate::SnrRelationship,
    pub f: f64,
}

impl ChannelModel for BpskRelay {
    fn densities(&self, snr_sd_db: f64, grid: &LlrGrid) -> ChannelDensities {
        let p = self.rel.params(snr_sd_db);
        ChannelDensities {
            positions: vec![PositionChannel {
                weight: 1.0,
                sd: channel_density_bpsk(*grid, p.snr_sd),
                p_f: crate::ensembles::compute_pf(p.snr_sr),
            }],
            rd: channel_density_bpsk(*grid, p.snr_rd),
        }
    }

    fn listening_fraction(&self) -> f64 {
        self.f
    }

    fn describe(&self) -> String {
        format!("bpsk-relay f={} sr+{}dB rd+{}dB", self.f, self.rel.sr_offset_db, self.rel.rd_offset_db)
    }
}

/// How per-position quantizer crossovers enter the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PfMode {
    #[default]
    PerPosition,
    WorstCase,
}

/// Dithered Gray QAM on all links (bit-level sub-channels).
#[derive(Debug, Clone, Copy)]
pub struct PbicmRelay {
    pub rel: crate::SnrRelationship,
    pub n: usize,
    pub f: f64,
    pub pf_mode: PfMode,
}

impl ChannelModel for PbicmRelay {
    fn densities(&self, snr_sd_db: f64, grid: &LlrGrid) -> ChannelDensities {
        let p = self.rel.params(snr_sd_db);
        let n = self.n;
        let pfs: Vec<f64> = (0..n).map(|s| crate::bicm::subchannel_pf(n, s, p.snr_sr)).collect();
        let worst = pfs.iter().copied().fold(0.0, f64::max);
        let positions = (0..n)
            .map(|s| PositionChannel {
                weight: 1.0 / n as f64,
                sd: LlrDensity::from_weighted_points(*grid, crate::bicm::position_llr_points(n, s, p.snr_sd)),
                p_f: match self.pf_mode {
                    PfMode::PerPosition => pfs[s],
                    PfMode::WorstCase => worst,
                },
            })
            .collect();
        let rd_parts: Vec<LlrDensity> = (0..n)
            .map(|s| LlrDensity::from_weighted_points(*grid, crate::bicm::position_llr_points(n, s, p.snr_rd)))
            .collect();
        let refs: Vec<(f64, &LlrDensity)> = rd_parts.iter().map(|d| (1.0 / n as f64, d)).collect();
        ChannelDensities {
            positions,
            rd: LlrDensity::mixture(&refs).expect("same grid"),
        }
    }

    fn listening_fraction(&self) -> f64 {
        self.f
    }

    fn describe(&self) -> String {
        format!("pbicm n={} f={} pf={:?}", self.n, self.f, self.pf_mode)
    }
}

/// Source (LDPC) and relay (LDGM) ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProfiles {
    pub source: DegreeProfile,
    pub relay: DegreeProfile,
}

/// Evolving message laws of the joint ensemble.
#[derive(Debug, Clone)]
pub struct DeState {
    pub c_s_v_s: LlrDensity,
    pub c_r_v_q: LlrDensity,
    /// Q → V_S, one law per channel position.
    pub q_v_s: Vec<LlrDensity>,
    /// Q → V_Q, one law per channel position.
    pub q_v_q: Vec<LlrDensity>,
    pub v_s_c_s: LlrDensity,
    pub v_q_c_r: LlrDensity,
    pub iteration: usize,
    pub pe_s: f64,
    pub pe_q: f64,
}

impl DeState {
    /// All factor-to-variable messages start as erasures.
    pub fn initial(grid: LlrGrid, positions: usize) -> Self {
        let zero = LlrDensity::point_mass(grid, 0.0);
        DeState {
            c_s_v_s: zero.clone(),
            c_r_v_q: zero.clone(),
            q_v_s: vec![zero.clone(); positions],
            q_v_q: vec![zero.clone(); positions],
            v_s_c_s: zero.clone(),
            v_q_c_r: zero,
            iteration: 0,
            pe_s: 0.5,
            pe_q: 0.5,
        }
    }
}

fn lambda_terms<'a>(
    p: &[(usize, f64)],
    extra: &[&'a LlrDensity],
    msg: &'a LlrDensity,
    full: bool,
    scale: f64,
) -> Vec<VarTerm<'a>> {
    p.iter()
        .map(|&(d, w)| {
            let e = if full { d } else { d - 1 } as u32;
            let mut factors: Vec<(&LlrDensity, u32)> = extra.iter().map(|&x| (x, 1)).collect();
            if e > 0 {
                factors.push((msg, e));
            }
            VarTerm {
                weight: scale * w,
                factors,
            }
        })
        .collect()
}

fn rho_weights(rho: &[(usize, f64)]) -> Vec<(u32, f64)> {
    rho.iter().map(|&(d, w)| ((d - 1) as u32, w)).collect()
}

/// One full iteration of the joint recursions.
pub fn de_step_qmf(
    engine: &DeEngine,
    state: &DeState,
    profiles: &JointProfiles,
    f: f64,
    ch: &ChannelDensities,
    frame: DeFrame,
) -> Result<DeState> {
    let lam_s = &profiles.source.lambda;
    let lam_s_node = profiles.source.lambda_node_fractions();
    let lam_r = &profiles.relay.lambda;
    let lam_r_node = profiles.relay.lambda_node_fractions();
    let sd_mix = ch.sd_mixture();
    let single = ch.positions.len() == 1;

    // Channel combined with the Q message, per position, then mixed.
    let with_q: Vec<LlrDensity> = if f > 0.0 {
        ch.positions
            .iter()
            .zip(&state.q_v_s)
            .map(|(p, q)| engine.var_convolve(&[&p.sd, q]))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let with_q_mix = if f > 0.0 {
        if single {
            Some(with_q[0].clone())
        } else {
            let parts: Vec<(f64, &LlrDensity)> = ch.positions.iter().zip(&with_q).map(|(p, d)| (p.weight, d)).collect();
            Some(LlrDensity::mixture(&parts)?)
        }
    } else {
        None
    };

    // V_S → C_S.
    let mut terms = Vec::new();
    if let Some(wq) = &with_q_mix {
        terms.extend(lambda_terms(lam_s, &[wq], &state.c_s_v_s, false, f));
    }
    terms.extend(lambda_terms(lam_s, &[&sd_mix], &state.c_s_v_s, false, 1.0 - f));
    let v_s_c_s = engine.var_mix(&terms)?;

    // V_Q → C_R.
    let q_v_q_mix = if single {
        state.q_v_q[0].clone()
    } else {
        let parts: Vec<(f64, &LlrDensity)> = ch.positions.iter().zip(&state.q_v_q).map(|(p, d)| (p.weight, d)).collect();
        LlrDensity::mixture(&parts)?
    };
    let v_q_c_r = engine.var_mix(&lambda_terms(lam_r, &[&q_v_q_mix], &state.c_r_v_q, false, 1.0))?;

    // Messages into Q nodes use the full variable degree.
    let cs_all = engine.var_mix(&lambda_terms(&lam_s_node, &[], &state.c_s_v_s, true, 1.0))?;
    let v_q_q = engine.var_mix(&lambda_terms(&lam_r_node, &[], &state.c_r_v_q, true, 1.0))?;

    // Factor updates.
    let c_s_v_s = engine.chk_mix(None, &v_s_c_s, &rho_weights(&profiles.source.rho))?;
    let p_vr = match frame {
        DeFrame::TrueBit => ch.rd.clone(),
        DeFrame::AllZero => {
            let q = ldgm_marginal_q(&profiles.relay.rho, ch.mean_pf());
            LlrDensity::mixture(&[(1.0 - q, &ch.rd), (q, &ch.rd.reflect())])?
        }
    };
    let c_r_v_q = engine.chk_mix(Some(&p_vr), &v_q_c_r, &rho_weights(&profiles.relay.rho))?;
    let mut q_v_s = Vec::with_capacity(ch.positions.len());
    let mut q_v_q = Vec::with_capacity(ch.positions.len());
    for p in &ch.positions {
        q_v_s.push(engine.q_map(&v_q_q, p.p_f, frame));
        let v_s_q = engine.var_convolve(&[&p.sd, &cs_all])?;
        q_v_q.push(engine.q_map(&v_s_q, p.p_f, frame));
    }

    // Beliefs.
    let mut belief_terms = Vec::new();
    let new_with_q: Vec<LlrDensity> = if f > 0.0 {
        ch.positions
            .iter()
            .zip(&q_v_s)
            .map(|(p, q)| engine.var_convolve(&[&p.sd, q]))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let new_with_q_mix = if f > 0.0 {
        let parts: Vec<(f64, &LlrDensity)> = ch.positions.iter().zip(&new_with_q).map(|(p, d)| (p.weight, d)).collect();
        Some(LlrDensity::mixture(&parts)?)
    } else {
        None
    };
    if let Some(wq) = &new_with_q_mix {
        belief_terms.extend(lambda_terms(&lam_s_node, &[wq], &c_s_v_s, true, f));
    }
    belief_terms.extend(lambda_terms(&lam_s_node, &[&sd_mix], &c_s_v_s, true, 1.0 - f));
    let pe_s = engine.var_mix(&belief_terms)?.error_probability();

    let new_q_v_q_mix = {
        let parts: Vec<(f64, &LlrDensity)> = ch.positions.iter().zip(&q_v_q).map(|(p, d)| (p.weight, d)).collect();
        LlrDensity::mixture(&parts)?
    };
    let pe_q = if f > 0.0 {
        engine
            .var_mix(&lambda_terms(&lam_r_node, &[&new_q_v_q_mix], &c_r_v_q, true, 1.0))?
            .error_probability()
    } else {
        0.0
    };

    Ok(DeState {
        c_s_v_s,
        c_r_v_q,
        q_v_s,
        q_v_q,
        v_s_c_s,
        v_q_c_r,
        iteration: state.iteration + 1,
        pe_s,
        pe_q,
    })
}

/// Point-to-point LDPC density evolution state.
#[derive(Debug, Clone)]
pub struct P2pState {
    pub v_c: LlrDensity,
    pub c_v: LlrDensity,
    pub iteration: usize,
    pub pe: f64,
}

impl P2pState {
    pub fn initial(grid: LlrGrid) -> Self {
        let zero = LlrDensity::point_mass(grid, 0.0);
        P2pState {
            v_c: zero.clone(),
            c_v: zero,
            iteration: 0,
            pe: 0.5,
        }
    }
}

/// One iteration of standard LDPC density evolution.
pub fn de_step_p2p(engine: &DeEngine, state: &P2pState, profile: &DegreeProfile, channel: &LlrDensity) -> Result<P2pState> {
    let v_c = engine.var_mix(&lambda_terms(&profile.lambda, &[channel], &state.c_v, false, 1.0))?;
    let c_v = engine.chk_mix(None, &v_c, &rho_weights(&profile.rho))?;
    let node = profile.lambda_node_fractions();
    let pe = engine
        .var_mix(&lambda_terms(&node, &[channel], &c_v, true, 1.0))?
        .error_probability();
    Ok(P2pState {
        v_c,
        c_v,
        iteration: state.iteration + 1,
        pe,
    })
}

/// Engine settings for threshold searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    pub grid: LlrGrid,
    pub target_pe: f64,
    pub max_iters: usize,
    pub frame: DeFrame,
    /// Bisection resolution in dB.
    pub resolution_db: f64,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            grid: LlrGrid::default(),
            target_pe: 1e-6,
            max_iters: 1000,
            frame: DeFrame::TrueBit,
            resolution_db: 0.01,
        }
    }
}

/// Outcome of running DE at one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeRun {
    pub converged: bool,
    pub iterations: usize,
    pub pe_s: f64,
    pub pe_q: f64,
}

fn stalled(history: &[f64]) -> bool {
    const WINDOW: usize = 50;
    if history.len() <= WINDOW {
        return false;
    }
    let now = history[history.len() - 1];
    let then = history[history.len() - 1 - WINDOW];
    (then - now).abs() <= 1e-10 * then.abs().max(1e-300)
}

/// Runs the joint recursions at one SNR until both error probabilities
/// drop below the target, the iteration cap, or a fixed point.
pub fn de_run(
    engine: &DeEngine,
    profiles: &JointProfiles,
    model: &dyn ChannelModel,
    snr_sd_db: f64,
    cfg: &DeConfig,
) -> Result<DeRun> {
    let ch = model.densities(snr_sd_db, engine.grid());
    let f = model.listening_fraction();
    let mut state = DeState::initial(*engine.grid(), ch.positions.len());
    let mut history = Vec::new();
    let needs_q = f > 0.0 && cfg.frame == DeFrame::TrueBit;
    for _ in 0..cfg.max_iters {
        state = de_step_qmf(engine, &state, profiles, f, &ch, cfg.frame)?;
        let ok = state.pe_s < cfg.target_pe && (!needs_q || state.pe_q < cfg.target_pe);
        if ok {
            return Ok(DeRun {
                converged: true,
                iterations: state.iteration,
                pe_s: state.pe_s,
                pe_q: state.pe_q,
            });
        }
        history.push(state.pe_s.max(if needs_q { state.pe_q } else { 0.0 }));
        if stalled(&history) {
            break;
        }
    }
    Ok(DeRun {
        converged: false,
        iterations: state.iteration,
        pe_s: state.pe_s,
        pe_q: state.pe_q,
    })
}

/// Decoding threshold and its search record.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub snr_db: f64,
    pub evaluations: Vec<(f64, DeRun)>,
}

/// Generic bisection on a monotone success predicate.
pub fn bisect_threshold(
    lo_db: f64,
    hi_db: f64,
    resolution_db: f64,
    mut succeeds: impl FnMut(f64) -> Result<DeRun>,
) -> Result<Threshold> {
    let mut evals = Vec::new();
    let hi_run = succeeds(hi_db)?;
    evals.push((hi_db, hi_run));
    let lo_run = succeeds(lo_db)?;
    evals.push((lo_db, lo_run));
    if !hi_run.converged || lo_run.converged {
        let trace = evals
            .iter()
            .map(|(s, r)| format!("{s:.3}dB:{}(pe={:.3e})", if r.converged { "ok" } else { "fail" }, r.pe_s))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::BracketNotFound { lo_db, hi_db, trace });
    }
    let (mut lo, mut hi) = (lo_db, hi_db);
    while hi - lo > resolution_db {
        let mid = 0.5 * (lo + hi);
        let r = succeeds(mid)?;
        evals.push((mid, r));
        if r.converged {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Threshold { snr_db: hi, evaluations: evals })
}

/// Smallest SNR_SD (dB, to `cfg.resolution_db`) at which the joint DE
/// drives Pe(b_S) and Pe(b_Q) below the target.
pub fn de_threshold(
    profiles: &JointProfiles,
    model: &dyn ChannelModel,
    cfg: &DeConfig,
    lo_db: f64,
    hi_db: f64,
) -> Result<Threshold> {
    let engine = DeEngine::new(cfg.grid);
    bisect_threshold(lo_db, hi_db, cfg.resolution_db, |s| de_run(&engine, profiles, model, s, cfg))
}

/// Threshold of a point-to-point LDPC ensemble on the BIAWGN channel.
pub fn de_threshold_p2p(profile: &DegreeProfile, cfg: &DeConfig, lo_db: f64, hi_db: f64) -> Result<Threshold> {
    let engine = DeEngine::new(cfg.grid);
    bisect_threshold(lo_db, hi_db, cfg.resolution_db, |s| {
        let ch = channel_density_bpsk(cfg.grid, db_to_lin(s));
        let mut st = P2pState::initial(cfg.grid);
        let mut hist = Vec::new();
        for _ in 0..cfg.max_iters {
            st = de_step_p2p(&engine, &st, profile, &ch)?;
            if st.pe < cfg.target_pe {
                return Ok(DeRun {
                    converged: true,
                    iterations: st.iteration,
                    pe_s: st.pe,
                    pe_q: 0.0,
                });
            }
            hist.push(st.pe);
            if stalled(&hist) {
                break;
            }
        }
        Ok(DeRun {
            converged: false,
            iterations: st.iteration,
            pe_s: st.pe,
            pe_q: 0.0,
        })
    })
}

/// φ(m) = 1 − E[tanh(u/2)], u ~ N(m, 2m).
pub fn phi(m: f64) -> f64 {
    if m <= 0.0 {
        return 1.0;
    }
    if m <= 1.0 {
        // 1 − tanh(u/2) = 2/(1 + e^u), kept in this form to avoid cancellation.
        return gauss_hermite_64().expect_normal(m, (2.0 * m).sqrt(), |u| 2.0 / (1.0 + u.exp()));
    }
    let table = phi_table();
    let x = (m - 1.0) / PHI_STEP;
    if x >= (table.len() - 1) as f64 {
        return phi_integral(m);
    }
    // Four-point Lagrange interpolation of ln φ.
    let i0 = (x.floor() as usize).saturating_sub(1).min(table.len() - 4);
    let t = x - i0 as f64;
    let w = [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ];
    (0..4).map(|j| w[j] * table[i0 + j]).sum::<f64>().exp()
}

const PHI_STEP: f64 = 0.02;
const PHI_TABLE_MAX: f64 = 400.0;

fn phi_table() -> &'static [f64] {
    static TABLE: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ((PHI_TABLE_MAX - 1.0) / PHI_STEP).round() as usize;
        (0..=n).map(|k| phi_integral(1.0 + k as f64 * PHI_STEP).ln()).collect()
    })
}

/// φ(m) for m > 0 from the folded one-sided integral: by the consistency of
/// N(m, 2m), φ(m) = 2·N(0; −m, 2m)·∫₀^∞ 2/(1 + e^−v)·e^(−v/2 − v²/4m) dv.
fn phi_integral(m: f64) -> f64 {
    let g = |v: f64| 2.0 / (1.0 + (-v).exp()) * (-v / 2.0 - v * v / (4.0 * m)).exp();
    let (steps, h) = (800, 0.1);
    let mut acc = g(0.0) + g(steps as f64 * h);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    let integral = acc * h / 3.0;
    2.0 * (-m / 4.0).exp() / (4.0 * std::f64::consts::PI * m).sqrt() * integral
}

/// Inverse of φ on (0, 1].
pub fn phi_inv(y: f64) -> f64 {
    if y >= 1.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while phi(hi) > y {
        hi *= 2.0;
        if hi > 1e6 {
            return hi;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian-approximation channel description: per-position equivalent
/// means plus crossover, and the relay link's tanh moment.
#[derive(Debug, Clone)]
pub struct GaChannel {
    pub positions: Vec<(f64, f64, f64)>,
    pub rd_tanh: f64,
}

impl GaChannel {
    /// Matches every law's tanh moment with a consistent Gaussian.
    pub fn from_densities(ch: &ChannelDensities) -> Self {
        GaChannel {
            positions: ch
                .positions
                .iter()
                .map(|p| (p.weight, phi_inv(1.0 - p.sd.tanh_moment()), p.p_f))
                .collect(),
            rd_tanh: ch.rd.tanh_moment(),
        }
    }

    /// BIAWGN link at `snr`: mean 2·snr.
    pub fn p2p(snr: f64) -> Self {
        GaChannel {
            positions: vec![(1.0, 2.0 * snr, 0.5)],
            rd_tanh: 0.0,
        }
    }
}

/// Mean-parameter state of the Gaussian approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaState {
    pub m_c_s_v_s: f64,
    pub m_c_r_v_q: f64,
    pub m_q_v_s: Vec<f64>,
    pub m_q_v_q: Vec<f64>,
    pub iteration: usize,
    pub pe_s: f64,
    pub pe_q: f64,
}

impl GaState {
    pub fn initial(positions: usize) -> Self {
        GaState {
            m_c_s_v_s: 0.0,
            m_c_r_v_q: 0.0,
            m_q_v_s: vec![0.0; positions],
            m_q_v_q: vec![0.0; positions],
            iteration: 0,
            pe_s: 0.5,
            pe_q: 0.5,
        }
    }
}

fn ga_pe(m: f64) -> f64 {
    if m <= 0.0 {
        0.5
    } else {
        q_function((m / 2.0).sqrt())
    }
}

/// One iteration of the mean recursions mirroring [`de_step_qmf`].
pub fn de_gaussian_approx_step(state: &GaState, profiles: &JointProfiles, f: f64, ch: &GaChannel, frame: DeFrame) -> GaState {
    let lam_s = &profiles.source.lambda;
    let lam_s_node = profiles.source.lambda_node_fractions();
    let lam_r = &profiles.relay.lambda;
    let lam_r_node = profiles.relay.lambda_node_fractions();
    let q_factor = |p: f64| match frame {
        DeFrame::AllZero => 1.0 - 2.0 * p,
        DeFrame::TrueBit => (1.0 - 2.0 * p).powi(2),
    };

    // E[tanh] of the V_S → C_S mixture.
    let mut t_vs = 0.0;
    for (k, &(w, m0, _)) in ch.positions.iter().enumerate() {
        for &(d, l) in lam_s {
            let base = m0 + (d - 1) as f64 * state.m_c_s_v_s;
            t_vs += w * l * (f * (1.0 - phi(base + state.m_q_v_s[k])) + (1.0 - f) * (1.0 - phi(base)));
        }
    }
    let m_c_s_v_s = phi_inv(1.0 - profiles.source.rho.iter().map(|&(d, r)| r * t_vs.powi(d as i32 - 1)).sum::<f64>());

    let mut t_vq = 0.0;
    for (k, &(w, _, _)) in ch.positions.iter().enumerate() {
        for &(d, l) in lam_r {
            t_vq += w * l * (1.0 - phi(state.m_q_v_q[k] + (d - 1) as f64 * state.m_c_r_v_q));
        }
    }
    let rd_t = match frame {
        DeFrame::TrueBit => ch.rd_tanh,
        DeFrame::AllZero => {
            let pbar: f64 = ch.positions.iter().map(|p| p.0 * p.2).sum();
            (1.0 - 2.0 * ldgm_marginal_q(&profiles.relay.rho, pbar)) * ch.rd_tanh
        }
    };
    let m_c_r_v_q = phi_inv(
        1.0 - profiles
            .relay
            .rho
            .iter()
            .map(|&(d, r)| r * rd_t * t_vq.powi(d as i32 - 1))
            .sum::<f64>(),
    );

    let t_vqq: f64 = lam_r_node
        .iter()
        .map(|&(d, w)| w * (1.0 - phi(d as f64 * state.m_c_r_v_q)))
        .sum();
    let mut m_q_v_s = Vec::new();
    let mut m_q_v_q = Vec::new();
    for &(_, m0, p) in &ch.positions {
        m_q_v_s.push(phi_inv(1.0 - q_factor(p) * t_vqq));
        let t_vsq: f64 = lam_s_node
            .iter()
            .map(|&(d, w)| w * (1.0 - phi(m0 + d as f64 * state.m_c_s_v_s)))
            .sum();
        m_q_v_q.push(phi_inv(1.0 - q_factor(p) * t_vsq));
    }

    let mut pe_s = 0.0;
    for (k, &(w, m0, _)) in ch.positions.iter().enumerate() {
        for &(d, l) in &lam_s_node {
            let base = m0 + d as f64 * m_c_s_v_s;
            pe_s += w * l * (f * ga_pe(base + m_q_v_s[k]) + (1.0 - f) * ga_pe(base));
        }
    }
    let mut pe_q = 0.0;
    if f > 0.0 {
        for (k, &(w, _, _)) in ch.positions.iter().enumerate() {
            for &(d, l) in &lam_r_node {
                pe_q += w * l * ga_pe(m_q_v_q[k] + d as f64 * m_c_r_v_q);
            }
        }
    }
    GaState {
        m_c_s_v_s,
        m_c_r_v_q,
        m_q_v_s,
        m_q_v_q,
        iteration: state.iteration + 1,
        pe_s,
        pe_q,
    }
}

/// Does the Gaussian approximation converge at this operating point?
pub fn ga_converges(profiles: &JointProfiles, f: f64, ch: &GaChannel, frame: DeFrame, target: f64, max_iters: usize) -> bool {
    let needs_q = f > 0.0 && frame == DeFrame::TrueBit;
    let mut st = GaState::initial(ch.positions.len());
    let mut hist = Vec::new();
    for _ in 0..max_iters {
        st = de_gaussian_approx_step(&st, profiles, f, ch, frame);
        if st.pe_s < target && (!needs_q || st.pe_q < target) {
            return true;
        }
        hist.push(st.pe_s.max(if needs_q { st.pe_q } else { 0.0 }));
        if stalled(&hist) {
            return false;
        }
    }
    false
}

/// Gaussian-approximation threshold over `model`.
pub fn ga_threshold(
    profiles: &JointProfiles,
    model: &dyn ChannelModel,
    cfg: &DeConfig,
    lo_db: f64,
    hi_db: f64,
) -> Result<f64> {
    let f = model.listening_fraction();
    let grid = LlrGrid::new(512, cfg.grid.l_max);
    let t = bisect_threshold(lo_db, hi_db, cfg.resolution_db, |s| {
        let ch = GaChannel::from_densities(&model.densities(s, &grid));
        let ok = ga_converges(profiles, f, &ch, cfg.frame, cfg.target_pe, cfg.max_iters);
        Ok(DeRun {
            converged: ok,
            iterations: 0,
            pe_s: 0.0,
            pe_q: 0.0,
        })
    })?;
    Ok(t.snr_db)
}

/// Gaussian-approximation threshold of a point-to-point LDPC ensemble.
pub fn ga_threshold_p2p(profile: &DegreeProfile, cfg: &DeConfig, lo_db: f64, hi_db: f64) -> Result<f64> {
    let profiles = JointProfiles {
        source: profile.clone(),
        relay: DegreeProfile::regular(1, 1),
    };
    let t = bisect_threshold(lo_db, hi_db, cfg.resolution_db, |s| {
        let ok = ga_converges(&profiles, 0.0, &GaChannel::p2p(db_to_lin(s)), cfg.frame, cfg.target_pe, cfg.max_iters);
        Ok(DeRun {
            converged: ok,
            iterations: 0,
            pe_s: 0.0,
            pe_q: 0.0,
        })
    })?;
    Ok(t.snr_db)
}

/// Constraints of the degree-profile search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConstraints {
    pub target_rate: f64,
    pub max_lambda_degree: usize,
    /// Required K_R/N_R of the relay code.
    pub ldgm_ratio: f64,
    /// Candidate LDGM variable degrees (check degree = ratio · dv).
    pub ldgm_var_degrees: Vec<usize>,
    /// Starting λ_S; the search only accepts improvements over it.
    pub initial_lambda: Vec<(usize, f64)>,
    pub lo_db: f64,
    pub hi_db: f64,
    /// Coordinate-search rounds.
    pub rounds: usize,
}

/// Best profiles found and their thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub profiles: JointProfiles,
    pub ga_threshold_db: f64,
    pub de_threshold_db: Option<f64>,
}

/// Check profile concentrated on degrees k and k+1 giving `rate` with `lambda`.
pub fn concentrated_rho(lambda: &[(usize, f64)], rate: f64) -> Result<Vec<(usize, f64)>> {
    let int_l: f64 = lambda.iter().map(|&(d, c)| c / d as f64).sum();
    let int_r = (1.0 - rate) * int_l;
    if !(int_r > 0.0 && int_r <= 0.5) {
        return Err(Error::Infeasible(format!("rate {rate} needs ∫ρ = {int_r}")));
    }
    let k = (1.0 / int_r).floor() as usize;
    if k < 2 {
        return Ok(vec![(2, 1.0)]);
    }
    // a/k + (1−a)/(k+1) = int_r
    let a = (int_r - 1.0 / (k + 1) as f64) / (1.0 / k as f64 - 1.0 / (k + 1) as f64);
    let mut rho = Vec::new();
    if a > 1e-12 {
        rho.push((k, a.min(1.0)));
    }
    if a < 1.0 - 1e-12 {
        rho.push((k + 1, 1.0 - a));
    }
    Ok(rho)
}

fn normalize_lambda(l: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let s: f64 = l.iter().map(|t| t.1).sum();
    l.iter().filter(|t| t.1 > 0.0).map(|&(d, c)| (d, c / s)).collect()
}

/// Coordinate search over λ_S with concentrated ρ_S and regular LDGM
/// pairs, scored by the Gaussian approximation; optionally re-checked with
/// full density evolution.
pub fn profile_search(
    constraints: &SearchConstraints,
    model: &dyn ChannelModel,
    cfg: &DeConfig,
    verify_with_de: bool,
) -> Result<SearchResult> {
    let dmax = constraints.max_lambda_degree;
    if dmax < 2 || !(0.0..1.0).contains(&constraints.target_rate) {
        return Err(Error::Infeasible("need max degree ≥ 2 and rate in [0, 1)".into()));
    }
    let relays: Vec<DegreeProfile> = constraints
        .ldgm_var_degrees
        .iter()
        .filter_map(|&dv| {
            let dc = constraints.ldgm_ratio * dv as f64;
            ((dc - dc.round()).abs() < 1e-9 && dc >= 1.0).then(|| DegreeProfile::regular(dv, dc.round() as usize))
        })
        .collect();
    let relays = if model.listening_fraction() > 0.0 {
        if relays.is_empty() {
            return Err(Error::Infeasible(format!(
                "no LDGM variable degree gives an integer check degree at ratio {}",
                constraints.ldgm_ratio
            )));
        }
        relays
    } else {
        vec![DegreeProfile::regular(1, 1)]
    };

    let score = |lambda: &[(usize, f64)], relay: &DegreeProfile| -> Option<(f64, JointProfiles)> {
        let lambda = normalize_lambda(lambda);
        let rho = concentrated_rho(&lambda, constraints.target_rate).ok()?;
        let source = DegreeProfile::new(lambda, rho).ok()?;
        let p = JointProfiles {
            source,
            relay: relay.clone(),
        };
        let t = ga_threshold(&p, model, cfg, constraints.lo_db, constraints.hi_db).ok()?;
        Some((t, p))
    };

    let mut best: Option<(f64, JointProfiles)> = None;
    for relay in &relays {
        let mut lambda: Vec<(usize, f64)> = (2..=dmax)
            .map(|d| (d, constraints.initial_lambda.iter().find(|t| t.0 == d).map_or(0.0, |t| t.1)))
            .collect();
        let Some(mut cur) = score(&lambda, relay) else { continue };
        let mut step = 0.05;
        for _ in 0..constraints.rounds {
            let mut improved = false;
            for i in 0..lambda.len() {
                for j in 0..lambda.len() {
                    if i == j || lambda[i].1 < step {
                        continue;
                    }
                    let mut cand = lambda.clone();
                    cand[i].1 -= step;
                    cand[j].1 += step;
                    if let Some(s) = score(&cand, relay) {
                        if s.0 < cur.0 - 1e-12 {
                            cur = s;
                            lambda = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step /= 2.0;
                if step < 0.005 {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|b| cur.0 < b.0) {
            best = Some(cur);
        }
    }
    let (ga, profiles) = best.ok_or_else(|| Error::Infeasible("no candidate profile converged in the scan window".into()))?;
    let de = if verify_with_de {
        Some(de_threshold(&profiles, model, cfg, constraints.lo_db, constraints.hi_db)?.snr_db)
    } else {
        None
    };
    Ok(SearchResult {
        profiles,
        ga_threshold_db: ga,
        de_threshold_db: de,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_engine() -> DeEngine {
        DeEngine::new(LlrGrid::new(512, 30.0))
    }

    #[test]
    fn bpsk_density_moments() {
        let g = LlrGrid::default();
        let d0 = channel_density_bpsk(g, 0.0);
        assert_eq!(d0.masses()[g.half_bins], 1.0);
        let d = channel_density_bpsk(g, 1.0);
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!((d.mean() - 2.0).abs() < g.delta());
        assert!((d.variance() / 4.0 - 1.0).abs() < 0.02);
        assert!(d.symmetry_defect(10.0, 1e-10) < 1e-3);
    }

    #[test]
    fn relay_mixture_moments() {
        let g = LlrGrid::default();
        let base = channel_density_bpsk(g, 3.0);
        assert_eq!(relay_marginal_density(g, 3.0, 0.0), base);
        let half = relay_marginal_density(g, 3.0, 0.5);
        assert!(half.mean().abs() < 1e-9);
        let m = relay_marginal_density(g, 10.0, 0.489);
        assert!((m.mean() - (1.0 - 2.0 * 0.489) * 20.0).abs() < 0.02);
    }

    #[test]
    fn var_convolution_identities() {
        let e = small_engine();
        let g = *e.grid();
        let a = LlrDensity::point_mass(g, 1.0 * 30.0 / 512.0 * 10.0);
        let b = LlrDensity::point_mass(g, 30.0 / 512.0 * 7.0);
        let ab = e.var_convolve(&[&a, &b]).unwrap();
        let expect = LlrDensity::point_mass(g, 30.0 / 512.0 * 17.0);
        for (x, y) in ab.masses().iter().zip(expect.masses()) {
            assert!((x - y).abs() < 1e-12);
        }
        let d = channel_density_bpsk(g, 1.0);
        let d0 = e.var_convolve(&[&d, &LlrDensity::point_mass(g, 0.0)]).unwrap();
        for (x, y) in d0.masses().iter().zip(d.masses()) {
            assert!((x - y).abs() < 1e-12);
        }
        let dd = e.var_convolve(&[&d, &d]).unwrap();
        assert!((dd.total() - 1.0).abs() < 1e-9);
        assert!((dd.mean() - 4.0).abs() < 0.02 * 4.0);
        assert!((dd.variance() - 8.0).abs() < 0.02 * 8.0);
        assert!(dd.symmetry_defect(8.0, 1e-8) < 5e-3);
    }

    #[test]
    fn var_convolution_atoms() {
        let e = small_engine();
        let g = *e.grid();
        let inf = LlrDensity::point_mass(g, f64::INFINITY);
        let ninf = LlrDensity::point_mass(g, f64::NEG_INFINITY);
        let d = channel_density_bpsk(g, 1.0);
        assert!((e.var_convolve(&[&inf, &d]).unwrap().pos_inf() - 1.0).abs() < 1e-12);
        let c = e.var_convolve(&[&inf, &ninf]).unwrap();
        assert!((c.masses()[g.half_bins] - 1.0).abs() < 1e-12);
        let big = LlrDensity::point_mass(g, 20.0);
        let sat = e.var_convolve(&[&big, &big]).unwrap();
        assert!((sat.masses()[2 * g.half_bins] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn check_combine_identities() {
        let e = small_engine();
        let g = *e.grid();
        let d = channel_density_bpsk(g, 1.0);
        let inf = LlrDensity::point_mass(g, f64::INFINITY);
        let same = e.chk_combine(&[&d, &inf], None).unwrap();
        assert!((same.error_probability() - d.error_probability()).abs() < 1e-8);
        assert!((same.total() - 1.0).abs() < 1e-9);
        let zero = LlrDensity::point_mass(g, 0.0);
        let er = e.chk_combine(&[&d, &zero], None).unwrap();
        assert!((er.masses()[g.half_bins] - 1.0).abs() < 1e-9);
        let two = LlrDensity::point_mass(g, 2.0);
        let q = e.chk_combine(&[&two], Some(0.8)).unwrap();
        assert!((q.mean() - 1.4156).abs() < 0.01);
        let direct = e.q_map(&two, 0.1, DeFrame::AllZero);
        assert!((direct.mean() - 1.4155).abs() < 0.01);
    }

    #[test]
    fn check_combine_preserves_mass_and_symmetry() {
        let e = small_engine();
        let g = *e.grid();
        let d = channel_density_bpsk(g, 2.0);
        let out = e.chk_mix(None, &d, &[(5, 1.0)]).unwrap();
        assert!((out.total() - 1.0).abs() < 1e-9);
        assert!(out.symmetry_defect(4.0, 1e-6) < 0.05);
    }

    #[test]
    fn q_map_edge_cases() {
        let e = small_engine();
        let g = *e.grid();
        let d = channel_density_bpsk(g, 1.0);
        let none = e.q_map(&d, 0.5, DeFrame::TrueBit);
        assert!((none.masses()[g.half_bins] - 1.0).abs() < 1e-12);
        assert_eq!(e.q_map(&d, 0.0, DeFrame::TrueBit), d);
    }

    #[test]
    fn phi_is_consistent() {
        assert_eq!(phi(0.0), 1.0);
        for m in [0.5, 2.0, 9.9, 10.1, 30.0] {
            assert!((phi_inv(phi(m)) - m).abs() < 1e-6 * m.max(1.0));
        }
        assert!((phi(0.999_999_9) / phi(1.000_000_1) - 1.0).abs() < 1e-6);
        for m in [1.003, 2.5071, 17.77, 123.4567, 399.99] {
            assert!((phi(m) / phi_integral(m) - 1.0).abs() < 1e-9, "{m}");
        }
        // Brute-force integral over u at a point far in the tail.
        let m = 60.0f64;
        let sd = (2.0 * m).sqrt();
        let (a, n) = (-40.0, 200_000);
        let h = (m + 12.0 * sd - a) / n as f64;
        let brute: f64 = (0..n)
            .map(|i| {
                let u = a + (i as f64 + 0.5) * h;
                let pdf = (-(u - m).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                2.0 / (1.0 + u.exp()) * pdf * h
            })
            .sum();
        assert!((phi(m) / brute - 1.0).abs() < 1e-6);
        let big = 400.0f64;
        let asym = (std::f64::consts::PI / big).sqrt() * (-big / 4.0).exp();
        assert!((phi(big) / asym - 1.0).abs() < 0.01);
    }

    #[test]
    fn ga_zero_fixed_point_is_stationary() {
        let p = JointProfiles {
            source: DegreeProfile::regular(3, 6),
            relay: DegreeProfile::regular(5, 10),
        };
        let ch = GaChannel::p2p(0.0);
        let s = de_gaussian_approx_step(&GaState::initial(1), &p, 0.0, &ch, DeFrame::TrueBit);
        assert_eq!(s.m_c_s_v_s, 0.0);
        assert_eq!(s.pe_s, 0.5);
    }

    #[test]
    fn concentrated_rho_hits_rate() {
        let l = vec![(3, 1.0)];
        assert_eq!(concentrated_rho(&l, 0.5).unwrap(), vec![(6, 1.0)]);
        let l2 = vec![(2, 0.3), (3, 0.4), (8, 0.3)];
        let r = concentrated_rho(&l2, 0.9).unwrap();
        let p = DegreeProfile::new(l2, r).unwrap();
        assert!((p.design_rate() - 0.9).abs() < 1e-12);
    }
}
