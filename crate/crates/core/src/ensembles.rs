//! Degree profiles, random Tanner graphs, LDPC/LDGM encoders and the relay's
//! scalar quantizer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::gf2::{row_reduce, BitVec};
use crate::{Bit, Error, Result};

const SUM_TOL: f64 = 1e-9;

/// Edge-perspective degree profile. `lambda` holds (variable degree, edge
/// fraction) and `rho` holds (check degree, edge fraction); degree d is the
/// coefficient of x^(d-1).
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeProfile {
    pub lambda: Vec<(usize, f64)>,
    pub rho: Vec<(usize, f64)>,
}

fn check_side(name: &str, terms: &[(usize, f64)]) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::InvalidProfile(format!("{name} has no terms")));
    }
    for &(d, c) in terms {
        if d == 0 {
            return Err(Error::InvalidProfile(format!("{name} has a degree-0 term")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidProfile(format!("{name}_{d} = {c} outside [0, 1]")));
        }
    }
    let sum: f64 = terms.iter().map(|t| t.1).sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidProfile(format!("{name} coefficients sum to {sum}")));
    }
    Ok(())
}

fn merge_terms(terms: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut sorted = terms.to_vec();
    sorted.sort_by_key(|t| t.0);
    for (d, c) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == d => last.1 += c,
            _ => out.push((d, c)),
        }
    }
    out.retain(|t| t.1 > 0.0);
    out
}

fn integral(terms: &[(usize, f64)]) -> f64 {
    terms.iter().map(|&(d, c)| c / d as f64).sum()
}

fn node_fractions(terms: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let total = integral(terms);
    terms.iter().map(|&(d, c)| (d, c / d as f64 / total)).collect()
}

impl DegreeProfile {
    /// Validated profile; both sides must already sum to one.
    pub fn new(lambda: Vec<(usize, f64)>, rho: Vec<(usize, f64)>) -> Result<Self> {
        let p = DegreeProfile {
            lambda: merge_terms(&lambda),
            rho: merge_terms(&rho),
        };
        check_side("lambda", &p.lambda)?;
        check_side("rho", &p.rho)?;
        Ok(p)
    }

    /// Rescales each side to sum to one before validating.
    pub fn normalized(lambda: Vec<(usize, f64)>, rho: Vec<(usize, f64)>) -> Result<Self> {
        let scale = |t: Vec<(usize, f64)>| -> Result<Vec<(usize, f64)>> {
            let s: f64 = t.iter().map(|x| x.1).sum();
            if !(s > 0.0) || t.iter().any(|x| x.1 < 0.0) {
                return Err(Error::InvalidProfile("coefficients must be non-negative with positive sum".into()));
            }
            Ok(t.into_iter().map(|(d, c)| (d, c / s)).collect())
        };
        DegreeProfile::new(scale(lambda)?, scale(rho)?)
    }

    /// Regular profile with variable degree `dv` and check degree `dc`.
    pub fn regular(dv: usize, dc: usize) -> Self {
        DegreeProfile {
            lambda: vec![(dv, 1.0)],
            rho: vec![(dc, 1.0)],
        }
    }

    /// ∫₀¹ λ(x) dx.
    pub fn lambda_integral(&self) -> f64 {
        integral(&self.lambda)
    }

    /// ∫₀¹ ρ(x) dx.
    pub fn rho_integral(&self) -> f64 {
        integral(&self.rho)
    }

    /// Rate of the LDPC ensemble, 1 − ∫ρ/∫λ.
    pub fn design_rate(&self) -> f64 {
        1.0 - self.rho_integral() / self.lambda_integral()
    }

    /// Input-to-output ratio K_R/N_R of an LDGM ensemble. Each check is one
    /// output, so the ratio is (edges/avg var degree)/(edges/avg check degree).
    pub fn ldgm_ratio(&self) -> f64 {
        self.lambda_integral() / self.rho_integral()
    }

    /// Fraction of variable nodes having each degree.
    pub fn lambda_node_fractions(&self) -> Vec<(usize, f64)> {
        node_fractions(&self.lambda)
    }

    /// Fraction of check nodes having each degree.
    pub fn rho_node_fractions(&self) -> Vec<(usize, f64)> {
        node_fractions(&self.rho)
    }

    pub fn max_lambda_degree(&self) -> usize {
        self.lambda.iter().map(|t| t.0).max().unwrap_or(0)
    }

    pub fn max_rho_degree(&self) -> usize {
        self.rho.iter().map(|t| t.0).max().unwrap_or(0)
    }

    /// λ(x) = Σ λ_d x^(d−1).
    pub fn lambda_at(&self, x: f64) -> f64 {
        self.lambda.iter().map(|&(d, c)| c * x.powi(d as i32 - 1)).sum()
    }

    /// ρ(x) = Σ ρ_d x^(d−1).
    pub fn rho_at(&self, x: f64) -> f64 {
        self.rho.iter().map(|&(d, c)| c * x.powi(d as i32 - 1)).sum()
    }

    /// Parses `lambda <degree> <fraction>` / `rho <degree> <fraction>` lines;
    /// `#` starts a comment. Sides are normalized if they sum to within 1%.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lambda = Vec::new();
        let mut rho = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: format!("{msg}: {raw:?}"),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err("expected `side degree fraction`"));
            }
            let d: usize = fields[1].parse().map_err(|_| parse_err("bad degree"))?;
            let c: f64 = fields[2].parse().map_err(|_| parse_err("bad fraction"))?;
            match fields[0] {
                "lambda" => lambda.push((d, c)),
                "rho" => rho.push((d, c)),
                _ => return Err(parse_err("side must be `lambda` or `rho`")),
            }
        }
        for (name, side) in [("lambda", &lambda), ("rho", &rho)] {
            let s: f64 = side.iter().map(|t| t.1).sum();
            if (s - 1.0).abs() > 0.01 {
                return Err(Error::InvalidProfile(format!("{name} coefficients sum to {s}")));
            }
        }
        DegreeProfile::normalized(lambda, rho)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DegreeProfile::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &(d, c) in &self.lambda {
            let _ = writeln!(s, "lambda {d} {c}");
        }
        for &(d, c) in &self.rho {
            let _ = writeln!(s, "rho {d} {c}");
        }
        s
    }
}

/// Variable-node count vectors summing to `total`, near `total · ν_d`, ordered
/// by the largest edge-count deviation from λ_d · E.
fn variable_candidates(total: usize, lambda: &[(usize, f64)]) -> Vec<(f64, Vec<(usize, usize)>)> {
    let nu = node_fractions(lambda);
    let base: Vec<i64> = nu.iter().map(|t| (t.1 * total as f64).floor() as i64).collect();
    let mut out = Vec::new();
    let mut counts = vec![0i64; nu.len()];
    fn walk(
        k: usize,
        left: i64,
        base: &[i64],
        counts: &mut Vec<i64>,
        lambda: &[(usize, f64)],
        out: &mut Vec<(f64, Vec<(usize, usize)>)>,
    ) {
        if k == base.len() {
            if left != 0 {
                return;
            }
            let edges: i64 = lambda.iter().zip(counts.iter()).map(|(t, &c)| t.0 as i64 * c).sum();
            let cost = lambda
                .iter()
                .zip(counts.iter())
                .map(|(t, &c)| (t.0 as f64 * c as f64 - t.1 * edges as f64).abs())
                .fold(0.0, f64::max);
            let v = lambda.iter().zip(counts.iter()).map(|(t, &c)| (t.0, c as usize)).collect();
            out.push((cost, v));
            return;
        }
        for delta in -2..=3 {
            let c = base[k] + delta;
            if c < 0 || c > left {
                continue;
            }
            counts[k] = c;
            walk(k + 1, left - c, base, counts, lambda, out);
        }
    }
    walk(0, total as i64, &base, &mut counts, lambda, &mut out);
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Node counts per check degree with Σ d·m_d = `edges`, minimizing the
/// largest edge-count deviation from `edges · ρ_d`.
fn realize_edge_side(edges: usize, terms: &[(usize, f64)]) -> Option<Vec<(usize, usize)>> {
    const SPREAD: i64 = 3;
    let targets: Vec<f64> = terms.iter().map(|&(d, c)| edges as f64 * c / d as f64).collect();
    let base: Vec<i64> = targets.iter().map(|t| t.floor() as i64).collect();
    let base_sum: i64 = terms.iter().zip(&base).map(|(t, b)| t.0 as i64 * b).sum();
    let need = edges as i64 - base_sum;

    // best[sum] = (cost, offsets) over the degrees processed so far.
    let mut best: HashMap<i64, (f64, Vec<i64>)> = HashMap::from([(0, (0.0, Vec::new()))]);
    for (k, &(d, rho)) in terms.iter().enumerate() {
        let mut next: HashMap<i64, (f64, Vec<i64>)> = HashMap::new();
        let mut keys: Vec<i64> = best.keys().copied().collect();
        keys.sort_unstable();
        for s in keys {
            let (cost, offs) = &best[&s];
            for delta in -SPREAD..=SPREAD + 1 {
                let m = base[k] + delta;
                if m < 0 {
                    continue;
                }
                let dev = (d as f64 * m as f64 - edges as f64 * rho).abs();
                let c = cost.max(dev);
                let key = s + d as i64 * delta;
                let better = match next.get(&key) {
                    Some((old, _)) => c < *old,
                    None => true,
                };
                if better {
                    let mut o = offs.clone();
                    o.push(delta);
                    next.insert(key, (c, o));
                }
            }
        }
        best = next;
    }
    let (_, offs) = best.get(&need)?;
    Some(
        terms
            .iter()
            .zip(base.iter().zip(offs))
            .map(|(t, (b, o))| (t.0, (b + o) as usize))
            .filter(|t| t.1 > 0)
            .collect(),
    )
}

/// Integer node counts (variable side, check side) realizing `p` with
/// exactly `n_var` variable nodes.
pub fn realize_counts(p: &DegreeProfile, n_var: usize) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let attempt = |n: usize| -> Option<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        if n == 0 {
            return None;
        }
        variable_candidates(n, &p.lambda).into_iter().take(512).find_map(|(_, var)| {
            let edges: usize = var.iter().map(|&(d, c)| d * c).sum();
            let chk = realize_edge_side(edges, &p.rho)?;
            let within = |counts: &[(usize, usize)], terms: &[(usize, f64)], dmax: usize| {
                terms.iter().all(|&(d, c)| {
                    let got = counts.iter().find(|t| t.0 == d).map_or(0, |t| t.1) * d;
                    (got as f64 / edges as f64 - c).abs() <= dmax as f64 / edges as f64 + 1e-12
                })
            };
            let dmax = p.max_lambda_degree().max(p.max_rho_degree());
            let ok = within(&var, &p.lambda, dmax) && within(&chk, &p.rho, dmax);
            ok.then(|| (var.into_iter().filter(|t| t.1 > 0).collect(), chk))
        })
    };
    if let Some(r) = attempt(n_var) {
        return Ok(r);
    }
    let span = p.max_lambda_degree() * p.max_rho_degree() * 4 + 16;
    let nearest = (1..=span)
        .flat_map(|d| [n_var.checked_sub(d), Some(n_var + d)])
        .flatten()
        .find(|&n| attempt(n).is_some())
        .unwrap_or(0);
    Err(Error::NotRealizable {
        requested: n_var,
        nearest,
    })
}

/// Bipartite graph between variable nodes and check nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    n_var: usize,
    n_chk: usize,
    edges: Vec<(usize, usize)>,
    var_adj: Vec<Vec<usize>>,
    chk_adj: Vec<Vec<usize>>,
}

impl TannerGraph {
    /// Builds a graph from `(var, chk)` pairs; edges are kept sorted.
    pub fn from_edges(n_var: usize, n_chk: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("graph has parallel edges".into()));
        }
        let mut var_adj = vec![Vec::new(); n_var];
        let mut chk_adj = vec![Vec::new(); n_chk];
        for &(v, c) in &edges {
            if v >= n_var || c >= n_chk {
                return Err(Error::InvalidParameter(format!("edge ({v}, {c}) out of range")));
            }
            var_adj[v].push(c);
            chk_adj[c].push(v);
        }
        Ok(TannerGraph {
            n_var,
            n_chk,
            edges,
            var_adj,
            chk_adj,
        })
    }

    pub fn n_var(&self) -> usize {
        self.n_var
    }

    pub fn n_chk(&self) -> usize {
        self.n_chk
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Checks adjacent to variable `v`.
    pub fn var_neighbors(&self, v: usize) -> &[usize] {
        &self.var_adj[v]
    }

    /// Variables adjacent to check `c`.
    pub fn chk_neighbors(&self, c: usize) -> &[usize] {
        &self.chk_adj[c]
    }

    pub fn var_degrees(&self) -> Vec<usize> {
        self.var_adj.iter().map(Vec::len).collect()
    }

    pub fn chk_degrees(&self) -> Vec<usize> {
        self.chk_adj.iter().map(Vec::len).collect()
    }

    /// Edge-perspective profile actually present in the graph.
    pub fn realized_profile(&self) -> DegreeProfile {
        let side = |adj: &[Vec<usize>]| {
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for a in adj.iter().filter(|a| !a.is_empty()) {
                *counts.entry(a.len()).or_default() += a.len();
            }
            let e = self.edges.len().max(1) as f64;
            let mut t: Vec<(usize, f64)> = counts.into_iter().map(|(d, n)| (d, n as f64 / e)).collect();
            t.sort_by_key(|x| x.0);
            t
        };
        DegreeProfile {
            lambda: side(&self.var_adj),
            rho: side(&self.chk_adj),
        }
    }

    /// True when every check sums to zero over `word`.
    pub fn is_codeword(&self, word: &[Bit]) -> bool {
        word.len() == self.n_var && self.chk_adj.iter().all(|nb| nb.iter().fold(0u8, |a, &v| a ^ word[v]) == 0)
    }

    /// Number of unsatisfied checks.
    pub fn syndrome_weight(&self, word: &[Bit]) -> usize {
        self.chk_adj
            .iter()
            .filter(|nb| nb.iter().fold(0u8, |a, &v| a ^ word[v]) != 0)
            .count()
    }

    /// Edge list dump: a `# nodes <n_var> <n_chk>` header, then `var chk` per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# nodes {} {}\n", self.n_var, self.n_chk);
        for &(v, c) in &self.edges {
            let _ = writeln!(s, "{v} {c}");
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: format!("{msg}: {raw:?}"),
            };
            if let Some(rest) = line.strip_prefix('#') {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() == 3 && f[0] == "nodes" {
                    let a = f[1].parse().map_err(|_| err("bad node count"))?;
                    let b = f[2].parse().map_err(|_| err("bad node count"))?;
                    dims = Some((a, b));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(err("expected `var chk`"));
            }
            let v: usize = f[0].parse().map_err(|_| err("bad variable index"))?;
            let c: usize = f[1].parse().map_err(|_| err("bad check index"))?;
            edges.push((v, c));
        }
        let (n_var, n_chk) = dims.unwrap_or_else(|| {
            let nv = edges.iter().map(|e| e.0 + 1).max().unwrap_or(0);
            let nc = edges.iter().map(|e| e.1 + 1).max().unwrap_or(0);
            (nv, nc)
        });
        TannerGraph::from_edges(n_var, n_chk, edges)
    }
}

fn expand_degrees<R: Rng + ?Sized>(counts: &[(usize, usize)], rng: &mut R) -> Vec<usize> {
    let mut degs: Vec<usize> = counts.iter().flat_map(|&(d, n)| std::iter::repeat_n(d, n)).collect();
    degs.shuffle(rng);
    degs
}

fn stubs(degrees: &[usize]) -> Vec<usize> {
    degrees
        .iter()
        .enumerate()
        .flat_map(|(node, &d)| std::iter::repeat_n(node, d))
        .collect()
}

/// Replaces parallel edges by random endpoint swaps; false if the attempt cap is hit.
fn repair_parallel<R: Rng + ?Sized>(edges: &mut [(usize, usize)], rng: &mut R) -> bool {
    let mut count: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    for &e in edges.iter() {
        *count.entry(e).or_default() += 1;
    }
    let mut dups: Vec<usize> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, &e) in edges.iter().enumerate() {
        let s = seen.entry(e).or_default();
        *s += 1;
        if *s > 1 {
            dups.push(i);
        }
    }
    let cap = 100 * edges.len();
    let mut attempts = 0;
    while let Some(&i) = dups.last() {
        if attempts >= cap {
            return false;
        }
        attempts += 1;
        let j = rng.random_range(0..edges.len());
        let (v1, c1) = edges[i];
        let (v2, c2) = edges[j];
        if v1 == v2 || c1 == c2 {
            continue;
        }
        let (a, b) = ((v1, c2), (v2, c1));
        if count.contains_key(&a) || count.contains_key(&b) {
            continue;
        }
        for old in [(v1, c1), (v2, c2)] {
            let n = count.get_mut(&old).unwrap();
            *n -= 1;
            if *n == 0 {
                count.remove(&old);
            }
        }
        count.insert(a, 1);
        count.insert(b, 1);
        edges[i] = a;
        edges[j] = b;
        dups.pop();
    }
    true
}

/// Samples a simple graph from the ensemble with `n_var` variable nodes by
/// random stub matching.
pub fn sample_graph<R: Rng + ?Sized>(p: &DegreeProfile, n_var: usize, rng: &mut R) -> Result<TannerGraph> {
    let (var_counts, chk_counts) = realize_counts(p, n_var)?;
    let var_deg = expand_degrees(&var_counts, rng);
    let chk_deg = expand_degrees(&chk_counts, rng);
    let n_chk = chk_deg.len();
    let vs = stubs(&var_deg);
    let cs0 = stubs(&chk_deg);
    for _ in 0..20 {
        let mut cs = cs0.clone();
        cs.shuffle(rng);
        let mut edges: Vec<(usize, usize)> = vs.iter().copied().zip(cs).collect();
        if repair_parallel(&mut edges, rng) {
            return TannerGraph::from_edges(n_var, n_chk, edges);
        }
    }
    Err(Error::Infeasible(format!(
        "could not draw a graph without parallel edges at {n_var} variable nodes"
    )))
}

/// Systematic-style LDPC encoder built from a greedy approximate lower
/// triangulation of H with a dense solve for the leftover constraints.
#[derive(Debug, Clone)]
pub struct LdpcEncoder {
    n: usize,
    info_cols: Vec<usize>,
    gap: Vec<(usize, BitVec)>,
    schedule: Vec<(usize, usize)>,
    chk_adj: Vec<Vec<usize>>,
}

impl LdpcEncoder {
    pub fn new(graph: &TannerGraph) -> Self {
        let n = graph.n_var();
        let m = graph.n_chk();
        let mut assigned = vec![false; n];
        let mut open: Vec<usize> = graph.chk_degrees();
        let mut done = vec![false; m];
        let mut ready: Vec<usize> = (0..m).filter(|&c| open[c] == 1).rev().collect();
        let mut free_cols: Vec<usize> = Vec::new();
        let mut schedule: Vec<(usize, usize)> = Vec::new();
        let mut leftover: Vec<usize> = (0..m).filter(|&c| open[c] == 0).collect();
        for &c in &leftover {
            done[c] = true;
        }

        let assign = |v: usize,
                          assigned: &mut [bool],
                          open: &mut [usize],
                          done: &mut [bool],
                          ready: &mut Vec<usize>,
                          leftover: &mut Vec<usize>| {
            assigned[v] = true;
            for &c in graph.var_neighbors(v) {
                open[c] -= 1;
                if done[c] {
                    continue;
                }
                if open[c] == 1 {
                    ready.push(c);
                } else if open[c] == 0 {
                    done[c] = true;
                    leftover.push(c);
                }
            }
        };

        loop {
            while let Some(c) = ready.pop() {
                if done[c] || open[c] != 1 {
                    continue;
                }
                let v = *graph.chk_neighbors(c).iter().find(|&&v| !assigned[v]).unwrap();
                done[c] = true;
                schedule.push((v, c));
                assign(v, &mut assigned, &mut open, &mut done, &mut ready, &mut leftover);
            }
            let stuck = (0..m).filter(|&c| !done[c] && open[c] >= 2).min_by_key(|&c| (open[c], c));
            match stuck {
                Some(c) => {
                    let cols: Vec<usize> = graph.chk_neighbors(c).iter().copied().filter(|&v| !assigned[v]).collect();
                    for &v in &cols[..cols.len() - 1] {
                        free_cols.push(v);
                        assign(v, &mut assigned, &mut open, &mut done, &mut ready, &mut leftover);
                    }
                }
                None => break,
            }
        }
        free_cols.extend((0..n).filter(|&v| !assigned[v]));

        // Express each leftover check over the free columns only.
        let mut free_index = vec![usize::MAX; n];
        for (i, &v) in free_cols.iter().enumerate() {
            free_index[v] = i;
        }
        let mut rows: Vec<BitVec> = leftover
            .iter()
            .map(|&c| {
                let mut full = BitVec::zeros(n);
                for &v in graph.chk_neighbors(c) {
                    full.flip(v);
                }
                for &(p, pc) in schedule.iter().rev() {
                    if full.get(p) {
                        for &v in graph.chk_neighbors(pc) {
                            full.flip(v);
                        }
                    }
                }
                let mut row = BitVec::zeros(free_cols.len());
                for (i, &v) in free_cols.iter().enumerate() {
                    if full.get(v) {
                        row.set(i, true);
                    }
                }
                row
            })
            .collect();
        let pivots = row_reduce(&mut rows, free_cols.len());
        let mut is_gap = vec![false; free_cols.len()];
        for &p in &pivots {
            is_gap[p] = true;
        }
        let info_free: Vec<usize> = (0..free_cols.len()).filter(|&i| !is_gap[i]).collect();
        let info_cols: Vec<usize> = info_free.iter().map(|&i| free_cols[i]).collect();
        let gap = pivots
            .iter()
            .zip(&rows)
            .map(|(&p, row)| {
                let mut dep = BitVec::zeros(info_cols.len());
                for (k, &i) in info_free.iter().enumerate() {
                    if row.get(i) {
                        dep.set(k, true);
                    }
                }
                (free_cols[p], dep)
            })
            .collect();

        LdpcEncoder {
            n,
            info_cols,
            gap,
            schedule,
            chk_adj: graph.chk_adj.clone(),
        }
    }

    /// Message length.
    pub fn k(&self) -> usize {
        self.info_cols.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// k/n; exceeds the design rate when H is rank deficient.
    pub fn effective_rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    /// Codeword positions carrying the message bits, in message order.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_cols
    }

    pub fn encode(&self, message: &[Bit]) -> Result<Vec<Bit>> {
        if message.len() != self.k() {
            return Err(Error::LengthMismatch {
                what: "LDPC message",
                expected: self.k(),
                actual: message.len(),
            });
        }
        let mut msg = BitVec::zeros(self.k());
        let mut word = vec![0u8; self.n];
        for (i, (&b, &col)) in message.iter().zip(&self.info_cols).enumerate() {
            msg.set(i, b & 1 == 1);
            word[col] = b & 1;
        }
        for (col, dep) in &self.gap {
            word[*col] = dep.dot(&msg) as u8;
        }
        for &(v, c) in &self.schedule {
            word[v] = self.chk_adj[c].iter().filter(|&&u| u != v).fold(0, |a, &u| a ^ word[u]);
        }
        Ok(word)
    }

    /// Reads the message back out of a codeword.
    pub fn extract_message(&self, word: &[Bit]) -> Vec<Bit> {
        self.info_cols.iter().map(|&c| word[c]).collect()
    }
}

/// One-shot encode; prefer [`LdpcEncoder`] when encoding many words.
pub fn ldpc_encode(graph: &TannerGraph, message: &[Bit]) -> Result<Vec<Bit>> {
    LdpcEncoder::new(graph).encode(message)
}

/// Low-density generator-matrix code: variables are the K_R input bits,
/// each check produces one of the N_R output bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdgmCode {
    pub graph: TannerGraph,
}

impl LdgmCode {
    pub fn new(graph: TannerGraph) -> Self {
        LdgmCode { graph }
    }

    /// Samples an LDGM code with `k_r` inputs from `p`.
    pub fn sample<R: Rng + ?Sized>(p: &DegreeProfile, k_r: usize, rng: &mut R) -> Result<Self> {
        Ok(LdgmCode {
            graph: sample_graph(p, k_r, rng)?,
        })
    }

    pub fn k_r(&self) -> usize {
        self.graph.n_var()
    }

    pub fn n_r(&self) -> usize {
        self.graph.n_chk()
    }

    pub fn encode(&self, b_q: &[Bit]) -> Result<Vec<Bit>> {
        if b_q.len() != self.k_r() {
            return Err(Error::LengthMismatch {
                what: "LDGM input",
                expected: self.k_r(),
                actual: b_q.len(),
            });
        }
        Ok((0..self.n_r())
            .map(|c| self.graph.chk_neighbors(c).iter().fold(0u8, |a, &v| a ^ b_q[v]))
            .collect())
    }
}

pub fn ldgm_encode(code: &LdgmCode, b_q: &[Bit]) -> Result<Vec<Bit>> {
    code.encode(b_q)
}

/// Crossover probability of one-bit sign quantization of BPSK at `snr_sr`.
pub fn compute_pf(snr_sr: f64) -> f64 {
    0.5 * libm::erfc((snr_sr.max(0.0) / 2.0).sqrt())
}

/// Probability that an output bit of the LDGM code is 1 when its inputs are
/// independent Bernoulli(p_f).
pub fn ldgm_marginal_q(rho_r: &[(usize, f64)], p_f: f64) -> f64 {
    let fr = node_fractions(rho_r);
    let a = 1.0 - 2.0 * p_f;
    fr.iter().map(|&(j, w)| w * (1.0 - a.powi(j as i32)) / 2.0).sum()
}

/// Relay scalar quantizer: LLR cell boundaries and the conditional table
/// g(u, v) = P(label u | source bit v).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    pub bits_per_observation: usize,
    /// Ascending LLR thresholds, 2^bits − 1 of them.
    pub boundaries: Vec<f64>,
    /// `table[u][v]`; column `v` sums to one.
    pub table: Vec<[f64; 2]>,
}

impl QuantizerSpec {
    /// Sign quantizer with crossover `p_f`.
    pub fn one_bit(p_f: f64) -> Self {
        QuantizerSpec {
            bits_per_observation: 1,
            boundaries: vec![0.0],
            table: vec![[1.0 - p_f, p_f], [p_f, 1.0 - p_f]],
        }
    }

    /// Multi-bit quantizer on BPSK LLRs at `snr`, labels from the table
    /// induced by the N(±2snr, 4snr) LLR law.
    pub fn for_bpsk(bits: usize, boundaries: Vec<f64>, snr: f64) -> Result<Self> {
        if bits == 0 || boundaries.len() != (1 << bits) - 1 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "{bits}-bit quantizer needs {} ascending boundaries",
                (1usize << bits).saturating_sub(1)
            )));
        }
        let cells = 1usize << bits;
        let mean = 2.0 * snr;
        let std = (4.0 * snr).sqrt();
        let cdf = |x: f64, m: f64| {
            if std == 0.0 {
                if x > m { 1.0 } else { 0.0 }
            } else {
                crate::quadrature::normal_cdf((x - m) / std)
            }
        };
        let mut table = vec![[0.0; 2]; cells];
        for cell in 0..cells {
            let lo = if cell == 0 { f64::NEG_INFINITY } else { boundaries[cell - 1] };
            let hi = if cell == cells - 1 { f64::INFINITY } else { boundaries[cell] };
            let label = cells - 1 - cell;
            for (v, m) in [(0, mean), (1, -mean)] {
                table[label][v] = cdf(hi, m) - cdf(lo, m);
            }
        }
        QuantizerSpec::from_table(bits, boundaries, table)
    }

    pub fn from_table(bits: usize, boundaries: Vec<f64>, table: Vec<[f64; 2]>) -> Result<Self> {
        if table.len() != 1 << bits {
            return Err(Error::InvalidParameter("table must have 2^bits rows".into()));
        }
        for v in 0..2 {
            let s: f64 = table.iter().map(|r| r[v]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("table column {v} sums to {s}")));
            }
        }
        Ok(QuantizerSpec {
            bits_per_observation: bits,
            boundaries,
            table,
        })
    }

    /// Label of one observation; the most positive cell is label 0.
    pub fn label(&self, llr: f64) -> usize {
        let cell = self.boundaries.iter().filter(|&&b| b <= llr).count();
        self.table.len() - 1 - cell
    }
}

/// Quantizes relay LLRs, emitting `bits_per_observation` bits per entry (MSB first).
pub fn scalar_quantize(llr_sr: &[f64], spec: &QuantizerSpec) -> Vec<Bit> {
    let b = spec.bits_per_observation;
    let mut out = Vec::with_capacity(llr_sr.len() * b);
    for &l in llr_sr {
        let u = spec.label(l);
        for k in (0..b).rev() {
            out.push(((u >> k) & 1) as Bit);
        }
    }
    out
}
