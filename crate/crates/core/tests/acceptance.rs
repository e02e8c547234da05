//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//!
//! `cargo test -p qmf-core --release --test acceptance` runs all of them;
//! criterion numbers after `--` select a subset.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use common::*;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("rate-formula reproduction", rate_reproduction),
        ("optimal listening fraction", listening_fraction),
        ("profile consistency", profile_consistency),
        ("DE engine vs Monte Carlo BP", de_matches_monte_carlo),
        ("joint-graph waterfall", joint_waterfall),
        ("exactness suite", exactness_suite),
        ("baseline ordering", baseline_ordering),
        ("PBICM output symmetry", pbicm_symmetry),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("{tag} [{id}] {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
        std::io::stdout().flush().ok();
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn exactness_suite() -> Verdict {
    let parts = [
        ("a", tree_exactness(300)),
        ("b", dummy_equivalence()),
        ("c", de_f_zero_is_p2p()),
        ("d", monte_carlo_oracles()),
    ];
    let pass = parts.iter().all(|(_, v)| v.pass);
    let detail = parts
        .iter()
        .map(|(k, v)| format!("({k}) {} {}", if v.pass { "ok" } else { "FAILED" }, v.detail))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { pass, detail }
}
