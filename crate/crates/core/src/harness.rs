//! Experiment configuration, Monte Carlo BER campaigns, threshold and
//! rate-curve runs, and CSV output with provenance sidecars.
//!
//! A run is fully determined by its [`ExperimentConfig`]: every random
//! stream is derived from the master seed and the work item's coordinates,
//! and trials are reduced in index order, so the CSV does not depend on the
//! number of worker threads. Wall time goes to the `.meta` sidecar only.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bicm::{self, pbicm_demodulate, pbicm_modulate, relay_qmf_pbicm, subchannel_pf};
use crate::density_evolution::{
    de_threshold, de_threshold_p2p, profile_search, BpskRelay, ChannelModel, DeConfig, DeFrame, JointProfiles, LlrGrid,
    PbicmRelay, PfMode, SearchConstraints,
};
use crate::ensembles::{compute_pf, sample_graph, DegreeProfile, LdgmCode, LdpcEncoder, TannerGraph};
use crate::joint_decoder::{DecoderConfig, JointFactorGraph, QuantizerLayer};
use crate::rates::{rate_curves, RatePoint};
use crate::rng::{derive_seed, stream};
use crate::{Bit, Error, PbicmConfig, QamConstellation, Result, SnrRelationship, SubchannelFrame};

// Coordinates of the random streams below the master seed.
const GRAPH_STREAM: u64 = 1;
const TRIAL_STREAM: u64 = 2;
const LAYOUT_S_STREAM: u64 = 3;
const LAYOUT_R_STREAM: u64 = 4;

/// Source profile of the 5.4 bit/symbol 64-QAM design.
pub const DESIGN_SOURCE_PROFILE: &str = "\
lambda 2 0.28
lambda 3 0.32
lambda 4 0.28
lambda 7 0.12
lambda 8 0.0009
rho 29 0.04
rho 30 0.96
";

/// Relay LDGM profile of the same design (K_R/N_R = 2).
pub const DESIGN_RELAY_PROFILE: &str = "\
lambda 5 1.0
rho 10 1.0
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BerSweep,
    DeThreshold,
    RateCurves,
    ProfileSearch,
}

/// Link SNRs relative to SNR_SD and how the relay is operated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub sr_offset_db: f64,
    pub rd_offset_db: f64,
    /// Listening fraction; the relay code's K_R/(K_R+N_R) when absent.
    pub f: Option<f64>,
    /// Modulation index n of 2^{2n}-QAM; 0 selects BPSK.
    pub modulation: usize,
    pub pf_mode: PfMode,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let rel = SnrRelationship::default();
        ChannelSection {
            sr_offset_db: rel.sr_offset_db,
            rd_offset_db: rel.rd_offset_db,
            f: None,
            modulation: 3,
            pf_mode: PfMode::PerPosition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeSection {
    /// Profile files; the built-in design profiles when absent.
    pub source_profile: Option<PathBuf>,
    pub relay_profile: Option<PathBuf>,
    /// Source codeword length N_S (one codeword per sub-channel stream).
    pub block_length: usize,
    pub max_iters: usize,
    /// Draw fresh graphs for every trial instead of once per sweep.
    pub resample_graphs: bool,
}

impl Default for CodeSection {
    fn default() -> Self {
        CodeSection {
            source_profile: None,
            relay_profile: None,
            block_length: 10_000,
            max_iters: 100,
            resample_graphs: false,
        }
    }
}

/// SNR_SD grid: an explicit list, or an inclusive start/stop/step range.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub start_db: Option<f64>,
    pub stop_db: Option<f64>,
    pub step_db: Option<f64>,
    /// Modulation indices of the rate curves (0 = Gaussian inputs).
    pub modulations: Vec<usize>,
}

impl SweepSection {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !self.snr_db.is_empty() {
            return Ok(self.snr_db.clone());
        }
        match (self.start_db, self.stop_db, self.step_db) {
            (Some(a), Some(b), Some(h)) if h > 0.0 && b >= a => {
                let n = ((b - a) / h + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| a + i as f64 * h).collect())
            }
            (None, None, None) => Err(Error::Config("sweep needs `snr_db` or start/stop/step".into())),
            _ => Err(Error::Config("sweep range needs start ≤ stop and step > 0".into())),
        }
    }
}

/// Trial stopping rule: stop once `min_errors` b_S bit errors are seen
/// (after at least `min_trials`), or at `max_trials`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingSection {
    pub min_errors: u64,
    pub min_trials: u64,
    pub max_trials: u64,
}

impl Default for StoppingSection {
    fn default() -> Self {
        StoppingSection {
            min_errors: 100,
            min_trials: 1,
            max_trials: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeSection {
    pub half_bins: usize,
    pub l_max: f64,
    pub target_pe: f64,
    pub max_iters: usize,
    pub frame: DeFrame,
    pub resolution_db: f64,
    pub lo_db: f64,
    pub hi_db: f64,
    /// Threshold of the source code alone on the BIAWGN channel.
    pub point_to_point: bool,
}

impl Default for DeSection {
    fn default() -> Self {
        let d = DeConfig::default();
        DeSection {
            half_bins: d.grid.half_bins,
            l_max: d.grid.l_max,
            target_pe: d.target_pe,
            max_iters: d.max_iters,
            frame: d.frame,
            resolution_db: d.resolution_db,
            lo_db: 0.0,
            hi_db: 20.0,
            point_to_point: false,
        }
    }
}

impl DeSection {
    pub fn de_config(&self) -> DeConfig {
        DeConfig {
            grid: LlrGrid::new(self.half_bins, self.l_max),
            target_pe: self.target_pe,
            max_iters: self.max_iters,
            frame: self.frame,
            resolution_db: self.resolution_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub target_rate: f64,
    pub max_lambda_degree: usize,
    pub ldgm_ratio: f64,
    pub ldgm_var_degrees: Vec<usize>,
    pub rounds: usize,
    pub verify_with_de: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            target_rate: 0.9,
            max_lambda_degree: 8,
            ldgm_ratio: 2.0,
            ldgm_var_degrees: vec![3, 4, 5],
            rounds: 4,
            verify_with_de: false,
        }
    }
}

/// Everything that determines one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub code: CodeSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub stopping: StoppingSection,
    #[serde(default)]
    pub de: DeSection,
    #[serde(default)]
    pub search: SearchSection,
    /// Directory that relative profile paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_id() -> String {
    "experiment".into()
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            id: default_id(),
            seed: 0,
            output: None,
            channel: ChannelSection::default(),
            code: CodeSection::default(),
            sweep: SweepSection::default(),
            stopping: StoppingSection::default(),
            de: DeSection::default(),
            search: SearchSection::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stopping;
        if s.min_errors == 0 || s.min_trials == 0 || s.max_trials == 0 {
            return Err(Error::Config("stopping rules must be positive".into()));
        }
        if s.min_trials > s.max_trials {
            return Err(Error::Config("min_trials exceeds max_trials".into()));
        }
        if self.channel.modulation > 4 {
            return Err(Error::Config(format!("modulation index {} outside 0..=4", self.channel.modulation)));
        }
        if let Some(f) = self.channel.f {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("listening fraction {f} outside (0, 1)")));
            }
        }
        if self.code.block_length == 0 || self.code.max_iters == 0 {
            return Err(Error::Config("block_length and max_iters must be positive".into()));
        }
        for p in [&self.code.source_profile, &self.code.relay_profile].into_iter().flatten() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("profile file {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn relationship(&self) -> SnrRelationship {
        SnrRelationship {
            sr_offset_db: self.channel.sr_offset_db,
            rd_offset_db: self.channel.rd_offset_db,
        }
    }

    pub fn profiles(&self) -> Result<JointProfiles> {
        let load = |p: &Option<PathBuf>, builtin: &str| match p {
            Some(p) => DegreeProfile::load(self.resolve(p)),
            None => DegreeProfile::parse(builtin),
        };
        Ok(JointProfiles {
            source: load(&self.code.source_profile, DESIGN_SOURCE_PROFILE)?,
            relay: load(&self.code.relay_profile, DESIGN_RELAY_PROFILE)?,
        })
    }

    /// Listening fraction: configured, or the one matching the relay code rate.
    pub fn listening_fraction(&self, relay: &DegreeProfile) -> f64 {
        self.channel.f.unwrap_or_else(|| {
            let r = relay.ldgm_ratio();
            r / (1.0 + r)
        })
    }

    /// Short content hash of the run-defining fields (output path excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(&digest[..6])
    }
}

/// A CSV row type with a fixed column order.
pub trait Record: Serialize + DeserializeOwned {
    const COLUMNS: &'static [&'static str];
}

/// One BER point of a Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub snr_db: f64,
    pub ber_s: f64,
    pub ber_r: f64,
    pub fer: f64,
    pub trials: u64,
    pub codewords: u64,
    pub bit_errors_s: u64,
    pub bit_errors_r: u64,
    pub mean_iterations: f64,
    /// Not part of the CSV; reported in the sidecar.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl Record for ResultRecord {
    const COLUMNS: &'static [&'static str] = &[
        "experiment_id",
        "config_hash",
        "seed",
        "snr_db",
        "ber_s",
        "ber_r",
        "fer",
        "trials",
        "codewords",
        "bit_errors_s",
        "bit_errors_r",
        "mean_iterations",
    ];
}

/// A decoding threshold with the engine settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub f: f64,
    pub threshold_db: f64,
    pub half_bins: usize,
    pub l_max: f64,
    pub target_pe: f64,
    pub max_iters: usize,
    pub frame: DeFrame,
    pub evaluations: usize,
    pub iterations_at_threshold: usize,
}

impl Record for ThresholdRecord {
    const COLUMNS: &'static [&'static str] = &[
        "experiment_id",
        "config_hash",
        "seed",
        "model",
        "f",
        "threshold_db",
        "half_bins",
        "l_max",
        "target_pe",
        "max_iters",
        "frame",
        "evaluations",
        "iterations_at_threshold",
    ];
}

impl Record for RatePoint {
    const COLUMNS: &'static [&'static str] =
        &["snr_sd_db", "n", "f_star", "rate_qmf", "rate_df", "rate_af", "rate_nocoop"];
}

/// Outcome of a profile search, profiles inlined as `degree:fraction` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub design_rate: f64,
    pub ldgm_ratio: f64,
    pub ga_threshold_db: f64,
    pub de_threshold_db: Option<f64>,
    pub source_lambda: String,
    pub source_rho: String,
    pub relay_lambda: String,
    pub relay_rho: String,
}

impl Record for SearchRecord {
    const COLUMNS: &'static [&'static str] = &[
        "experiment_id",
        "config_hash",
        "seed",
        "design_rate",
        "ldgm_ratio",
        "ga_threshold_db",
        "de_threshold_db",
        "source_lambda",
        "source_rho",
        "relay_lambda",
        "relay_rho",
    ];
}

/// Writes a header and one row per record.
pub fn emit_csv<T: Record>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(T::COLUMNS).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(T::COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("{}: unexpected columns {:?}", path.display(), header)));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Sidecar written next to an output file: `<output>.meta`.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the full configuration plus run facts as TOML.
pub fn write_meta(cfg: &ExperimentConfig, output: &Path, facts: toml::Table) -> Result<()> {
    let path = meta_path(output);
    let mut run = toml::Table::new();
    run.insert("config_hash".into(), cfg.hash().into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.extend(facts);
    let mut root = toml::Table::new();
    root.insert("run".into(), run.into());
    root.insert(
        "config".into(),
        toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?,
    );
    let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Codes and dimensions shared by the trials of a sweep.
struct Codes {
    ldpc: TannerGraph,
    encoder: LdpcEncoder,
    ldgm: LdgmCode,
}

impl Codes {
    fn sample(profiles: &JointProfiles, n_s: usize, k_r: usize, seed: u64, path: &[u64]) -> Result<Self> {
        let mut rng = stream(seed, path);
        let ldpc = sample_graph(&profiles.source, n_s, &mut rng)?;
        let ldgm = LdgmCode::sample(&profiles.relay, k_r, &mut rng)?;
        let encoder = LdpcEncoder::new(&ldpc);
        Ok(Codes { ldpc, encoder, ldgm })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialOutcome {
    codewords: u64,
    frame_errors: u64,
    bits_s: u64,
    bits_r: u64,
    errors_s: u64,
    errors_r: u64,
    iterations: u64,
}

impl TrialOutcome {
    fn add(&mut self, o: &TrialOutcome) {
        self.codewords += o.codewords;
        self.frame_errors += o.frame_errors;
        self.bits_s += o.bits_s;
        self.bits_r += o.bits_r;
        self.errors_s += o.errors_s;
        self.errors_r += o.errors_r;
        self.iterations += o.iterations;
    }
}

/// Per-point link state.
struct Link {
    snr_sd: f64,
    snr_sr: f64,
    snr_rd: f64,
    /// Crossover per label position (one entry for BPSK).
    pf: Vec<f64>,
}

fn hamming(a: &[Bit], b: &[Bit]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn real_awgn<R: Rng + ?Sized>(x: &[f64], gain: f64, rng: &mut R) -> Vec<f64> {
    let z = Normal::new(0.0, 1.0).expect("unit variance");
    x.iter().map(|&s| gain * s + z.sample(rng)).collect()
}

struct BerRun<'a> {
    cfg: &'a ExperimentConfig,
    profiles: JointProfiles,
    n_s: usize,
    k_r: usize,
}

impl BerRun<'_> {
    fn trial(&self, codes: &Codes, link: &Link, point: u64, trial: u64) -> Result<TrialOutcome> {
        let cfg = self.cfg;
        let mut rng = stream(cfg.seed, &[TRIAL_STREAM, point, trial]);
        let n = cfg.channel.modulation;
        let streams = if n == 0 { 1 } else { 2 * n };
        let b_s: Vec<Vec<Bit>> = (0..streams)
            .map(|_| {
                let msg: Vec<Bit> = (0..codes.encoder.k()).map(|_| rng.random_range(0..2)).collect();
                codes.encoder.encode(&msg)
            })
            .collect::<Result<_>>()?;

        let (llr_sd, llr_rd, b_r, position): (SubchannelFrame<f64>, SubchannelFrame<f64>, SubchannelFrame<Bit>, Box<dyn Fn(usize, usize) -> usize>) =
            if n == 0 {
                let x: Vec<f64> = b_s[0].iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
                let (h_sd, h_sr, h_rd) = (link.snr_sd.sqrt(), link.snr_sr.sqrt(), link.snr_rd.sqrt());
                let y_sd = real_awgn(&x, h_sd, &mut rng);
                let y_sr = real_awgn(&x[..self.k_r], h_sr, &mut rng);
                let b_q: Vec<Bit> = y_sr.iter().map(|&y| (y < 0.0) as Bit).collect();
                let b_r = codes.ldgm.encode(&b_q)?;
                let x_r: Vec<f64> = b_r.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
                let y_rd = real_awgn(&x_r, h_rd, &mut rng);
                (
                    SubchannelFrame::new(vec![y_sd.iter().map(|&y| 2.0 * h_sd * y).collect()])?,
                    SubchannelFrame::new(vec![y_rd.iter().map(|&y| 2.0 * h_rd * y).collect()])?,
                    SubchannelFrame::new(vec![b_r])?,
                    Box::new(|_, _| 0),
                )
            } else {
                let cnst = QamConstellation::new(n)?;
                let frame = point << 32 | trial;
                let layout_s = PbicmConfig {
                    n,
                    seed: derive_seed(cfg.seed, &[LAYOUT_S_STREAM]),
                }
                .layout(self.n_s, frame);
                let layout_r = PbicmConfig {
                    n,
                    seed: derive_seed(cfg.seed, &[LAYOUT_R_STREAM]),
                }
                .layout(codes.ldgm.n_r(), frame);
                let x_s = pbicm_modulate(&SubchannelFrame::new(b_s.clone())?, &cnst, &layout_s)?;
                let (g_sd, g_sr, g_rd) = (link.snr_sd.sqrt(), link.snr_sr.sqrt(), link.snr_rd.sqrt());
                let y_sd = bicm::awgn(&x_s, g_sd, 1.0, &mut rng);
                let y_sr = bicm::awgn(&x_s[..self.k_r], g_sr, 1.0, &mut rng);
                let relay = relay_qmf_pbicm(&y_sr, g_sr, 1.0, &cnst, &layout_s, &codes.ldgm, &layout_r)?;
                let y_rd: Vec<Complex64> = bicm::awgn(&relay.x_r, g_rd, 1.0, &mut rng);
                (
                    pbicm_demodulate(&y_sd, g_sd, 1.0, &cnst, &layout_s)?,
                    pbicm_demodulate(&y_rd, g_rd, 1.0, &cnst, &layout_r)?,
                    relay.b_r,
                    Box::new(move |t, l| layout_s.position(t, l)),
                )
            };

        let worst = link.pf.iter().copied().fold(0.0, f64::max);
        let mut graph = JointFactorGraph::with_layer(
            &codes.ldpc,
            &codes.ldgm,
            QuantizerLayer::OneBit { p_f: vec![worst; self.k_r] },
            false,
        )?;
        let dec = DecoderConfig {
            max_iters: cfg.code.max_iters,
            ..Default::default()
        };
        let mut out = TrialOutcome::default();
        for l in 0..streams {
            if cfg.channel.pf_mode == PfMode::PerPosition {
                let pf: Vec<f64> = (0..self.k_r).map(|t| link.pf[position(t, l)]).collect();
                graph.set_crossovers(&pf)?;
            }
            let o = graph.decode(llr_sd.stream(l), llr_rd.stream(l), &dec)?;
            let es = hamming(&o.b_s, &b_s[l]);
            out.add(&TrialOutcome {
                codewords: 1,
                frame_errors: (es > 0) as u64,
                bits_s: self.n_s as u64,
                bits_r: b_r.stream(l).len() as u64,
                errors_s: es,
                errors_r: hamming(&o.b_r, b_r.stream(l)),
                iterations: o.iterations as u64,
            });
        }
        Ok(out)
    }
}

/// Monte Carlo BER of joint decoding over the configured SNR sweep.
pub fn run_ber_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let profiles = cfg.profiles()?;
    let f = cfg.listening_fraction(&profiles.relay);
    let n_s = cfg.code.block_length;
    let n_r_target = ((1.0 - f) * n_s as f64).round() as usize;
    let k_r = n_s - n_r_target;
    if k_r == 0 || n_r_target == 0 {
        return Err(Error::Config(format!("f = {f} leaves an empty phase at block length {n_s}")));
    }
    let run = BerRun { cfg, profiles, n_s, k_r };
    let shared = if cfg.code.resample_graphs {
        None
    } else {
        Some(Codes::sample(&run.profiles, n_s, k_r, cfg.seed, &[GRAPH_STREAM])?)
    };
    let rel = cfg.relationship();
    let hash = cfg.hash();
    let n = cfg.channel.modulation;
    let batch = (rayon::current_num_threads() * 2).max(2) as u64;
    let mut records = Vec::new();
    for (pi, &snr_db) in cfg.sweep.points()?.iter().enumerate() {
        let start = Instant::now();
        let p = rel.params(snr_db);
        let pf = if n == 0 {
            vec![compute_pf(p.snr_sr)]
        } else {
            (0..2 * n).map(|s| subchannel_pf(n, s, p.snr_sr)).collect()
        };
        let link = Link {
            snr_sd: p.snr_sd,
            snr_sr: p.snr_sr,
            snr_rd: p.snr_rd,
            pf,
        };
        let point = pi as u64;
        let mut total = TrialOutcome::default();
        let mut trials = 0u64;
        let stop = |t: u64, o: &TrialOutcome| {
            t >= cfg.stopping.max_trials || (t >= cfg.stopping.min_trials && o.errors_s >= cfg.stopping.min_errors)
        };
        'outer: while !stop(trials, &total) {
            let hi = (trials + batch).min(cfg.stopping.max_trials);
            let outcomes: Vec<Result<TrialOutcome>> = (trials..hi)
                .into_par_iter()
                .map(|t| match &shared {
                    Some(codes) => run.trial(codes, &link, point, t),
                    None => {
                        let codes = Codes::sample(&run.profiles, n_s, k_r, cfg.seed, &[GRAPH_STREAM, point, t])?;
                        run.trial(&codes, &link, point, t)
                    }
                })
                .collect();
            for o in outcomes {
                total.add(&o?);
                trials += 1;
                if stop(trials, &total) {
                    break 'outer;
                }
            }
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        records.push(ResultRecord {
            experiment_id: cfg.id.clone(),
            config_hash: hash.clone(),
            seed: cfg.seed,
            snr_db,
            ber_s: ratio(total.errors_s, total.bits_s),
            ber_r: ratio(total.errors_r, total.bits_r),
            fer: ratio(total.frame_errors, total.codewords),
            trials,
            codewords: total.codewords,
            bit_errors_s: total.errors_s,
            bit_errors_r: total.errors_r,
            mean_iterations: ratio(total.iterations, total.codewords),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

fn channel_model(cfg: &ExperimentConfig, f: f64) -> Box<dyn ChannelModel> {
    let rel = cfg.relationship();
    match cfg.channel.modulation {
        0 => Box::new(BpskRelay { rel, f }),
        n => Box::new(PbicmRelay {
            rel,
            n,
            f,
            pf_mode: cfg.channel.pf_mode,
        }),
    }
}

/// DE threshold of the configured ensemble and channel model.
pub fn run_de_threshold(cfg: &ExperimentConfig) -> Result<ThresholdRecord> {
    cfg.validate()?;
    let profiles = cfg.profiles()?;
    let de = cfg.de.de_config();
    let (model, f, th) = if cfg.de.point_to_point {
        let th = de_threshold_p2p(&profiles.source, &de, cfg.de.lo_db, cfg.de.hi_db)?;
        ("biawgn-p2p".to_string(), 0.0, th)
    } else {
        let f = cfg.listening_fraction(&profiles.relay);
        let model = channel_model(cfg, f);
        let th = de_threshold(&profiles, model.as_ref(), &de, cfg.de.lo_db, cfg.de.hi_db)?;
        (model.describe(), f, th)
    };
    let at = th
        .evaluations
        .iter()
        .find(|(s, _)| *s == th.snr_db)
        .map_or(0, |(_, r)| r.iterations);
    Ok(ThresholdRecord {
        experiment_id: cfg.id.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        model,
        f,
        threshold_db: th.snr_db,
        half_bins: de.grid.half_bins,
        l_max: de.grid.l_max,
        target_pe: de.target_pe,
        max_iters: de.max_iters,
        frame: de.frame,
        evaluations: th.evaluations.len(),
        iterations_at_threshold: at,
    })
}

/// Optimized-f QMF rates with DF/AF overlays for every configured modulation.
pub fn run_rate_curves(cfg: &ExperimentConfig) -> Result<Vec<RatePoint>> {
    let grid = cfg.sweep.points()?;
    let mods = if cfg.sweep.modulations.is_empty() {
        vec![0, 2, 3, 4]
    } else {
        cfg.sweep.modulations.clone()
    };
    if let Some(&bad) = mods.iter().find(|&&n| n > 4) {
        return Err(Error::Config(format!("modulation index {bad} outside 0..=4")));
    }
    Ok(rate_curves(&cfg.relationship(), &mods, &grid))
}

fn inline_side(side: &[(usize, f64)]) -> String {
    side.iter().map(|(d, c)| format!("{d}:{c}")).collect::<Vec<_>>().join(" ")
}

/// Source profile search under the configured channel, seeded with the
/// configured source λ.
pub fn run_profile_search(cfg: &ExperimentConfig) -> Result<SearchRecord> {
    cfg.validate()?;
    let start = cfg.profiles()?;
    let s = &cfg.search;
    let f = cfg.channel.f.unwrap_or(s.ldgm_ratio / (1.0 + s.ldgm_ratio));
    let model = channel_model(cfg, f);
    let constraints = SearchConstraints {
        target_rate: s.target_rate,
        max_lambda_degree: s.max_lambda_degree,
        ldgm_ratio: s.ldgm_ratio,
        ldgm_var_degrees: s.ldgm_var_degrees.clone(),
        initial_lambda: start.source.lambda.clone(),
        lo_db: cfg.de.lo_db,
        hi_db: cfg.de.hi_db,
        rounds: s.rounds,
    };
    let res = profile_search(&constraints, model.as_ref(), &cfg.de.de_config(), s.verify_with_de)?;
    let p = &res.profiles;
    Ok(SearchRecord {
        experiment_id: cfg.id.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        design_rate: p.source.design_rate(),
        ldgm_ratio: p.relay.ldgm_ratio(),
        ga_threshold_db: res.ga_threshold_db,
        de_threshold_db: res.de_threshold_db,
        source_lambda: inline_side(&p.source.lambda),
        source_rho: inline_side(&p.source.rho),
        relay_lambda: inline_side(&p.relay.lambda),
        relay_rho: inline_side(&p.relay.rho),
    })
}

/// Runs the configured experiment and writes its CSV and sidecar to `output`.
/// Returns the number of rows written.
pub fn run_experiment(cfg: &ExperimentConfig, output: &Path) -> Result<usize> {
    let start = Instant::now();
    let mut facts = toml::Table::new();
    facts.insert("threads".into(), (rayon::current_num_threads() as i64).into());
    let rows = match cfg.kind {
        ExperimentKind::BerSweep => {
            let recs = run_ber_sweep(cfg)?;
            emit_csv(&recs, output)?;
            let times: Vec<toml::Value> = recs.iter().map(|r| r.wall_time_s.into()).collect();
            facts.insert("point_wall_time_s".into(), times.into());
            recs.len()
        }
        ExperimentKind::DeThreshold => {
            emit_csv(&[run_de_threshold(cfg)?], output)?;
            1
        }
        ExperimentKind::RateCurves => {
            let rows = run_rate_curves(cfg)?;
            emit_csv(&rows, output)?;
            rows.len()
        }
        ExperimentKind::ProfileSearch => {
            emit_csv(&[run_profile_search(cfg)?], output)?;
            1
        }
    };
    facts.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    write_meta(cfg, output, facts)?;
    Ok(rows)
}
