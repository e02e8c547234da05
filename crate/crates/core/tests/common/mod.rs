//! Acceptance criteria shared by the acceptance runner and the regular
//! integration tests. Each check returns a verdict plus a one-line detail.
#![allow(dead_code)]

use std::fs;
use std::time::Instant;

use num_complex::Complex64;
use qmf_core::bicm::{ks_two_sample, pbicm_demodulate, pbicm_modulate, subchannel_pf};
use qmf_core::density_evolution::{
    de_step_p2p, de_step_qmf, de_threshold_p2p, BiawgnP2p, ChannelModel, DeConfig, DeEngine, DeFrame, DeState,
    JointProfiles, P2pState,
};
use qmf_core::ensembles::{compute_pf, ldgm_marginal_q, sample_graph};
use qmf_core::harness::*;
use qmf_core::joint_decoder::QuantizerLayer;
use qmf_core::rates::{af_rate, df_rate, optimize_f, threshold_db, Scheme};
use qmf_core::rng::stream;
use qmf_core::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Verdict { pass, detail }
    }
}

/// S→R link 10 dB above the direct link, R→D equal to it.
pub fn design_relationship() -> SnrRelationship {
    SnrRelationship {
        sr_offset_db: 10.0,
        rd_offset_db: 0.0,
    }
}

pub fn design_profiles() -> JointProfiles {
    JointProfiles {
        source: DegreeProfile::parse(DESIGN_SOURCE_PROFILE).unwrap(),
        relay: DegreeProfile::parse(DESIGN_RELAY_PROFILE).unwrap(),
    }
}

pub const DESIGN_RATE_BITS: f64 = 5.4;

fn qmf_point(n: usize) -> f64 {
    threshold_db(&design_relationship(), n, Scheme::Qmf, DESIGN_RATE_BITS, 5.0, 25.0).unwrap()
}

pub fn rate_reproduction() -> Verdict {
    let start = Instant::now();
    let s64 = qmf_point(3);
    let s256 = qmf_point(4);
    let secs = start.elapsed().as_secs_f64();
    let pass = (s64 - 14.18).abs() <= 0.1 && (s256 - 13.47).abs() <= 0.1 && secs < 60.0;
    Verdict::new(
        pass,
        format!("64-QAM {s64:.3} dB (14.18±0.1), 256-QAM {s256:.3} dB (13.47±0.1), {secs:.1} s"),
    )
}

pub fn listening_fraction() -> Verdict {
    let p = design_relationship().params(qmf_point(3));
    let (f, _) = optimize_f(&p, 3);
    let ratio = f / (1.0 - f);
    let pass = (f - 0.667).abs() <= 0.02 && (ratio - 2.0).abs() <= 0.1;
    Verdict::new(pass, format!("f* = {f:.4} (0.667±0.02), K_R/N_R = {ratio:.3} (2.0±0.1)"))
}

pub fn profile_consistency() -> Verdict {
    let p = design_profiles();
    let rate = p.source.design_rate();
    let ratio = p.relay.ldgm_ratio();
    let pass = (rate - 0.9).abs() <= 0.002 && ratio == 2.0;
    Verdict::new(pass, format!("design rate {rate:.5} (0.900±0.002), LDGM ratio {ratio}"))
}

/// Waterfall point of BP on one regular (3,6) graph: the lowest SNR on a
/// 0.05 dB grid at which `frames` frames give BER below 1e-4.
/// Lowest SNR (dB) at which `frames` all-zero frames of a sampled (3,6) code
/// of length `n` decode with BER < 1e-4: a 0.05 dB scan from `lo_db`, then
/// bisection of the last bracket down to `resolution_db`.
fn mc_waterfall_36(n: usize, iters: usize, frames: u64, lo_db: f64, hi_db: f64, resolution_db: f64) -> Option<f64> {
    let g = sample_graph(&DegreeProfile::regular(3, 6), n, &mut stream(36, &[0])).unwrap();
    let graph = JointFactorGraph::point_to_point(&g);
    let cfg = DecoderConfig {
        max_iters: iters,
        ..Default::default()
    };
    let budget = (1e-4 * (n as f64) * frames as f64) as usize;
    let z = Normal::new(0.0, 1.0).unwrap();
    let below = |db: f64| {
        let h = 10f64.powf(db / 20.0);
        let mut errors = 0;
        for t in 0..frames {
            // All-zero codeword: BP on a symmetric channel is codeword-independent.
            let mut rng = stream(36, &[1, (db * 1e4).round() as u64, t]);
            let llr: Vec<f64> = (0..n).map(|_| 2.0 * h * (h + z.sample(&mut rng))).collect();
            let out = graph.decode(&llr, &[], &cfg).unwrap();
            errors += out.b_s.iter().filter(|&&b| b == 1).count();
            if errors > budget {
                return false;
            }
        }
        true
    };
    let steps = ((hi_db - lo_db) / 0.05).round() as usize;
    let mut hi = (0..=steps).map(|i| lo_db + 0.05 * i as f64).find(|&db| below(db))?;
    let mut lo = hi - 0.05;
    while hi - lo > resolution_db {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
pub fn de_matches_monte_carlo() -> Verdict {
    let cfg = DeConfig {
        grid: LlrGrid::new(1024, 30.0),
        ..Default::default()
    };
    let de = de_threshold_p2p(&DegreeProfile::regular(3, 6), &cfg, 0.5, 2.0).unwrap().snr_db;
    let lo = ((de - 0.3) / 0.05).floor() * 0.05;
    let mc = mc_waterfall_36(100_000, 200, 20, lo, de + 0.5, 0.01);
    match mc {
        Some(mc) => Verdict::new(
            (mc - de).abs() <= 0.1,
            format!("DE {de:.3} dB, MC waterfall (n=1e5, 200 it, 20 frames, BER<1e-4) {mc:.3} dB"),
        ),
        None => Verdict::new(false, format!("DE {de:.3} dB, MC never reached BER<1e-4")),
    }
}

pub fn joint_waterfall() -> Verdict {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new(ExperimentKind::BerSweep);
    cfg.id = "joint-waterfall".into();
    cfg.seed = 2024;
    cfg.channel.modulation = 3;
    cfg.code.block_length = 10_002;
    let limit = 14.18 + 1.5;
    cfg.sweep.snr_db = vec![14.68, 15.18, limit];
    cfg.stopping = StoppingSection {
        min_errors: 100,
        min_trials: 10,
        max_trials: 30,
    };
    let recs = run_ber_sweep(&cfg).unwrap();
    let curve: Vec<String> = recs
        .iter()
        .map(|r| format!("{:.2} dB: {:.2e}/{:.2e} ({} frames)", r.snr_db, r.ber_s, r.ber_r, r.trials))
        .collect();
    let hit = recs.iter().find(|r| r.snr_db <= limit + 1e-9 && r.ber_s < 1e-4 && r.ber_r < 1e-4);
    Verdict::new(
        hit.is_some(),
        format!(
            "BER(b_S)/BER(b_R): {}; {:.0} s",
            curve.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// A random joint graph whose factor graph is a tree, with channel LLRs.
pub struct TreeInstance {
    pub ldpc: TannerGraph,
    pub ldgm: LdgmCode,
    pub p_f: Vec<f64>,
    pub llr_sd: Vec<f64>,
    pub llr_rd: Vec<f64>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

pub fn random_tree(seed: u64) -> TreeInstance {
    let mut rng = stream(seed, &[0]);
    loop {
        let n_s = rng.random_range(3..=8);
        let k_r = rng.random_range(1..=n_s.min(5));
        let n_r = rng.random_range(1..=3);
        let m_s = rng.random_range(1..=3);
        let pick = |rng: &mut qmf_core::rng::SimRng, n: usize, lo: usize, hi: usize| {
            let d = rng.random_range(lo..=hi.min(n));
            rand::seq::index::sample(rng, n, d).into_vec()
        };
        let s_edges: Vec<(usize, usize)> = (0..m_s)
            .flat_map(|c| pick(&mut rng, n_s, 2, 3).into_iter().map(move |v| (v, c)))
            .collect();
        let r_edges: Vec<(usize, usize)> = (0..n_r)
            .flat_map(|c| pick(&mut rng, k_r, 1, 3).into_iter().map(move |v| (v, c)))
            .collect();
        // Nodes: V_S, V_Q, V_R, C_S, C_R, Q.
        let (vq, vr, cs, cr, q) = (n_s, n_s + k_r, n_s + k_r + n_r, n_s + k_r + n_r + m_s, n_s + k_r + 2 * n_r + m_s);
        let mut links: Vec<(usize, usize)> = s_edges.iter().map(|&(v, c)| (v, cs + c)).collect();
        links.extend(r_edges.iter().map(|&(v, c)| (vq + v, cr + c)));
        links.extend((0..n_r).map(|c| (vr + c, cr + c)));
        links.extend((0..k_r).flat_map(|i| [(i, q + i), (vq + i, q + i)]));
        let mut parent: Vec<usize> = (0..q + k_r).collect();
        let acyclic = links.iter().all(|&(a, b)| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
            ra != rb
        });
        if !acyclic {
            continue;
        }
        let u = |rng: &mut qmf_core::rng::SimRng| rng.random_range(-3.0..3.0);
        return TreeInstance {
            ldpc: TannerGraph::from_edges(n_s, m_s, s_edges).unwrap(),
            ldgm: LdgmCode::new(TannerGraph::from_edges(k_r, n_r, r_edges).unwrap()),
            p_f: (0..k_r).map(|_| rng.random_range(0.02..0.4)).collect(),
            llr_sd: (0..n_s).map(|_| u(&mut rng)).collect(),
            llr_rd: (0..n_r).map(|_| u(&mut rng)).collect(),
        };
    }
}

/// Exact posterior LLRs of [V_S | V_Q | V_R] by enumeration.
pub fn brute_force_llrs(t: &TreeInstance) -> Vec<f64> {
    let (n_s, k_r, n_r) = (t.ldpc.n_var(), t.ldgm.k_r(), t.ldgm.n_r());
    let n = n_s + k_r;
    let mut p0 = vec![0.0; n + n_r];
    let mut p1 = vec![0.0; n + n_r];
    for x in 0u32..(1 << n) {
        let bit = |i: usize| ((x >> i) & 1) as u8;
        let b_s: Vec<Bit> = (0..n_s).map(bit).collect();
        if !t.ldpc.is_codeword(&b_s) {
            continue;
        }
        let b_q: Vec<Bit> = (0..k_r).map(|i| bit(n_s + i)).collect();
        let b_r = t.ldgm.encode(&b_q).unwrap();
        let mut logw = 0.0;
        let half = |l: f64, b: Bit| if b == 0 { l / 2.0 } else { -l / 2.0 };
        for i in 0..n_s {
            logw += half(t.llr_sd[i], b_s[i]);
        }
        for c in 0..n_r {
            logw += half(t.llr_rd[c], b_r[c]);
        }
        let mut w = logw.exp();
        for i in 0..k_r {
            w *= if b_s[i] == b_q[i] { 1.0 - t.p_f[i] } else { t.p_f[i] };
        }
        let all = b_s.iter().chain(&b_q).chain(&b_r);
        for (v, &b) in all.enumerate() {
            if b == 0 {
                p0[v] += w;
            } else {
                p1[v] += w;
            }
        }
    }
    p0.iter().zip(&p1).map(|(a, b)| (a / b).ln()).collect()
}

pub fn bp_llrs(t: &TreeInstance, explicit_dummy: bool) -> Vec<f64> {
    let g = JointFactorGraph::with_layer(
        &t.ldpc,
        &t.ldgm,
        QuantizerLayer::OneBit { p_f: t.p_f.clone() },
        explicit_dummy,
    )
    .unwrap();
    let ch = g.channel_vector(&t.llr_sd, &t.llr_rd).unwrap();
    let mut state = MessageState::new(&g);
    // Any tree is exact after as many iterations as it has nodes.
    for _ in 0..g.n_vars() + g.n_factors() {
        g.step(&mut state, &ch, 1e6);
    }
    let mut bel = g.beliefs(&state, &ch);
    bel.truncate(g.n_s() + g.k_r() + g.n_r());
    bel
}

pub fn tree_exactness(instances: u64) -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let t = random_tree(seed);
        let exact = brute_force_llrs(&t);
        for explicit in [false, true] {
            let bp = bp_llrs(&t, explicit);
            for (a, b) in bp.iter().zip(&exact) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Verdict::new(worst <= 1e-9, format!("{instances} trees, max |BP − exact| = {worst:.1e}"))
}

pub fn dummy_equivalence() -> Verdict {
    let mut rng = stream(5, &[0]);
    let ldpc = sample_graph(&DegreeProfile::regular(3, 6), 240, &mut rng).unwrap();
    let ldgm = LdgmCode::sample(&DegreeProfile::regular(4, 8), 160, &mut rng).unwrap();
    let p_f: Vec<f64> = (0..160).map(|_| rng.random_range(0.001..0.3)).collect();
    let sd: Vec<f64> = (0..240).map(|_| rng.random_range(-2.0..4.0)).collect();
    let rd: Vec<f64> = (0..ldgm.n_r()).map(|_| rng.random_range(-2.0..4.0)).collect();
    let build = |explicit| {
        JointFactorGraph::with_layer(&ldpc, &ldgm, QuantizerLayer::OneBit { p_f: p_f.clone() }, explicit).unwrap()
    };
    let (a, b) = (build(false), build(true));
    let (ca, cb) = (a.channel_vector(&sd, &rd).unwrap(), b.channel_vector(&sd, &rd).unwrap());
    let (mut sa, mut sb) = (MessageState::new(&a), MessageState::new(&b));
    let shared = a.n_vars();
    let iters = 50;
    let mut identical = true;
    for _ in 0..iters {
        a.step(&mut sa, &ca, 30.0);
        b.step(&mut sb, &cb, 30.0);
        let (ba, bb) = (a.beliefs(&sa, &ca), b.beliefs(&sb, &cb));
        identical &= ba.iter().zip(&bb[..shared]).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    Verdict::new(identical, format!("{iters} iterations on a loopy graph, beliefs bit-identical: {identical}"))
}

pub fn de_f_zero_is_p2p() -> Verdict {
    let engine = DeEngine::new(LlrGrid::new(512, 30.0));
    let profiles = design_profiles();
    let ch = BiawgnP2p.densities(6.0, engine.grid());
    let mut joint = DeState::initial(*engine.grid(), ch.positions.len());
    let mut p2p = P2pState::initial(*engine.grid());
    let mut same = true;
    let iters = 25;
    let eq = |a: &LlrDensity, b: &LlrDensity| {
        a.masses() == b.masses() && a.pos_inf() == b.pos_inf() && a.neg_inf() == b.neg_inf()
    };
    for _ in 0..iters {
        joint = de_step_qmf(&engine, &joint, &profiles, 0.0, &ch, DeFrame::TrueBit).unwrap();
        p2p = de_step_p2p(&engine, &p2p, &profiles.source, &ch.positions[0].sd).unwrap();
        same &= eq(&joint.v_s_c_s, &p2p.v_c) && eq(&joint.c_s_v_s, &p2p.c_v) && joint.pe_s == p2p.pe;
    }
    Verdict::new(same, format!("{iters} iterations, bin-for-bin equal: {same}, Pe {:.3e}", p2p.pe))
}

fn within_3_sigma(hits: u64, n: u64, p: f64) -> (bool, f64) {
    let est = hits as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    ((est - p).abs() <= 3.0 * sigma, (est - p) / sigma)
}

pub fn monte_carlo_oracles() -> Verdict {
    const N: u64 = 10_000_000;
    let mut notes = Vec::new();
    let mut pass = true;
    let z = Normal::new(0.0, 1.0).unwrap();
    for (k, snr) in [1.0f64, 4.0].into_iter().enumerate() {
        let mut rng = stream(11, &[k as u64]);
        let h = snr.sqrt();
        let hits = (0..N).filter(|_| h + z.sample(&mut rng) < 0.0).count() as u64;
        let (ok, dev) = within_3_sigma(hits, N, compute_pf(snr));
        pass &= ok;
        notes.push(format!("p_f(snr={snr}) {dev:+.2}σ"));
    }
    // LDGM output marginal, on a sampled code with a mixed check profile.
    let relay = DegreeProfile::normalized(vec![(3, 1.0)], vec![(2, 0.3), (5, 0.4), (9, 0.3)]).unwrap();
    let mut rng = stream(12, &[0]);
    let code = LdgmCode::sample(&relay, 30_000, &mut rng).unwrap();
    let p_f = 0.07;
    let (mut ones, mut total) = (0u64, 0u64);
    while total < N {
        let b_q: Vec<Bit> = (0..code.k_r()).map(|_| rng.random_bool(p_f) as Bit).collect();
        let b_r = code.encode(&b_q).unwrap();
        ones += b_r.iter().map(|&b| b as u64).sum::<u64>();
        total += b_r.len() as u64;
    }
    let (ok, dev) = within_3_sigma(ones, total, ldgm_marginal_q(&relay.rho, p_f));
    pass &= ok;
    notes.push(format!("q {dev:+.2}σ"));
    Verdict::new(pass, format!("10^7 samples each: {}", notes.join(", ")))
}

/// Post-dither LLRs per label position, split by the transmitted bit.
pub fn position_samples(n: usize, snr_db: f64, symbols: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let cnst = QamConstellation::new(n).unwrap();
    let layout = PbicmConfig { n, seed }.layout(symbols, 0);
    let mut rng = stream(seed, &[1]);
    let l = 2 * n;
    let bits = SubchannelFrame::new(
        (0..l)
            .map(|_| (0..symbols).map(|_| rng.random_range(0..2)).collect())
            .collect(),
    )
    .unwrap();
    let x = pbicm_modulate(&bits, &cnst, &layout).unwrap();
    let snr = 10f64.powf(snr_db / 10.0);
    let y: Vec<Complex64> = qmf_core::bicm::awgn(&x, snr.sqrt(), 1.0, &mut rng);
    let llr = pbicm_demodulate(&y, snr.sqrt(), 1.0, &cnst, &layout).unwrap();
    let mut out = vec![(Vec::new(), Vec::new()); l];
    for s in 0..l {
        for t in 0..symbols {
            let pos = layout.position(t, s);
            let v = llr.stream(s)[t];
            if bits.stream(s)[t] == 0 {
                out[pos].0.push(v);
            } else {
                out[pos].1.push(-v);
            }
        }
    }
    out
}

pub fn pbicm_symmetry() -> Verdict {
    let mut worst = 1.0f64;
    let mut pass = true;
    for n in 1..=4 {
        for (zero, one) in &position_samples(n, 6.0 * n as f64, 100_000, 40 + n as u64) {
            let (_, p) = ks_two_sample(zero, one);
            pass &= p > 0.01;
            worst = worst.min(p);
        }
    }
    Verdict::new(pass, format!("smallest KS p-value over n=1..4, all positions: {worst:.3}"))
}

pub fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("r36.txt"), "lambda 3 1.0\nrho 6 1.0\n").unwrap();
    let configs = [
        r#"
kind = "ber-sweep"
seed = 99
[channel]
modulation = 2
[code]
source_profile = "r36.txt"
block_length = 402
max_iters = 30
[sweep]
snr_db = [6.0, 8.0]
[stopping]
min_errors = 20
max_trials = 6
"#,
        r#"
kind = "rate-curves"
[sweep]
start_db = 0.0
stop_db = 20.0
step_db = 2.5
modulations = [0, 2, 3, 4]
"#,
        r#"
kind = "de-threshold"
[channel]
modulation = 1
[code]
source_profile = "r36.txt"
[de]
half_bins = 128
lo_db = -10.0
hi_db = 10.0
resolution_db = 0.1
"#,
        r#"
kind = "profile-search"
[de]
half_bins = 128
lo_db = 10.0
hi_db = 20.0
resolution_db = 0.05
[search]
rounds = 1
ldgm_var_degrees = [5]
"#,
    ];
    let mut kinds = Vec::new();
    let mut pass = true;
    for (i, text) in configs.iter().enumerate() {
        let cfg = ExperimentConfig::from_toml_str(text, dir.path()).unwrap();
        let run = |tag: &str| {
            let out = dir.path().join(format!("{i}-{tag}.csv"));
            run_experiment(&cfg, &out).unwrap();
            fs::read(out).unwrap()
        };
        let (a, b) = (run("a"), run("b"));
        pass &= a == b && !a.is_empty();
        kinds.push(format!("{:?}", cfg.kind));
    }
    Verdict::new(pass, format!("byte-identical reruns: {}", kinds.join(", ")))
}

pub fn baseline_ordering() -> Verdict {
    let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.5).collect();
    let (df_wins, af_wins) = baseline_margins(&grid);
    let gap = df_gap_db();
    let df_note = match (df_wins.first(), df_wins.last()) {
        (Some(a), Some(b)) => format!("DF above QMF on {a}..{b} dB"),
        _ => "QMF ≥ DF everywhere".to_string(),
    };
    Verdict::new(
        !af_wins && df_wins.is_empty() && (gap - 1.5).abs() <= 0.3,
        format!("0..30 dB: QMF ≥ AF everywhere: {}; {df_note}; DF − QMF at 5.4 bits = {gap:.3} dB (1.5±0.3)", !af_wins),
    )
}

/// Pointwise comparison on a grid, returning the SNRs where DF beats QMF and
/// whether AF ever does.
pub fn baseline_margins(grid_db: &[f64]) -> (Vec<f64>, bool) {
    let rel = design_relationship();
    let mut df_wins = Vec::new();
    let mut af_wins = false;
    for &db in grid_db {
        let p = rel.params(db);
        let q = optimize_f(&p, 3).1;
        af_wins |= q < af_rate(&p, 3) - 1e-9;
        if q < df_rate(&p, 3) - 1e-9 {
            df_wins.push(db);
        }
    }
    (df_wins, af_wins)
}

pub fn df_gap_db() -> f64 {
    threshold_db(&design_relationship(), 3, Scheme::Df, DESIGN_RATE_BITS, 5.0, 25.0).unwrap() - qmf_point(3)
}

/// Monte Carlo per-position crossover against the analytic value.
pub fn subchannel_pf_oracle(n: usize, snr_db: f64, symbols: usize) -> Vec<(f64, f64, f64)> {
    let samples = position_samples(n, snr_db, symbols, 77);
    let snr = 10f64.powf(snr_db / 10.0);
    samples
        .iter()
        .enumerate()
        .map(|(pos, (zero, one))| {
            let total = zero.len() + one.len();
            let wrong = zero.iter().chain(one).filter(|&&v| v < 0.0).count();
            let p = subchannel_pf(n, pos, snr);
            (wrong as f64 / total as f64, p, (p * (1.0 - p) / total as f64).sqrt())
        })
        .collect()
}
