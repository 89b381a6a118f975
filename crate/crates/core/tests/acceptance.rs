//! Acceptance suite: runs the preset configs under `configs/` at full size
//! and prints one PASS/FAIL line per criterion. Exits nonzero if any fails.
//!
//! Built with `harness = false` so the criteria report in order, each with
//! the numbers behind the verdict.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spdelab::brackets::ns_condition;
use spdelab::experiments::{self, parse_override, ExperimentConfig, Outcome};

struct Suite {
    configs: PathBuf,
    out: tempfile::TempDir,
    runs: BTreeMap<String, Outcome>,
    lines: Vec<(bool, String)>,
}

impl Suite {
    fn new() -> Self {
        Suite {
            configs: Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs"),
            out: tempfile::tempdir().expect("temp dir"),
            runs: BTreeMap::new(),
            lines: Vec::new(),
        }
    }

    fn out_dir(&self, tag: &str) -> PathBuf {
        self.out.path().join(tag)
    }

    /// Runs a preset once and keeps its outcome for every criterion that
    /// reads it.
    fn preset(&mut self, name: &str) -> Result<&Outcome, String> {
        if !self.runs.contains_key(name) {
            let dir = self.out_dir(name);
            let o = vec![parse_override(&format!("out_dir = \"{}\"", dir.display()))
                .map_err(|e| e.to_string())?];
            let cfg = ExperimentConfig::load(&self.configs.join(format!("{name}.toml")), &o)
                .map_err(|e| format!("{name}: {e}"))?;
            let t = Instant::now();
            let rec = experiments::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
            eprintln!("  ran {name} in {:.1} s", t.elapsed().as_secs_f64());
            self.runs.insert(name.to_string(), rec.outcome);
        }
        Ok(&self.runs[name])
    }

    /// Collects the named assertions of the listed presets into one verdict.
    fn criterion(&mut self, title: &str, checks: &[(&str, &[&str])]) {
        self.criterion_with(title, checks, None);
    }

    /// As `criterion`, with one extra direct check folded into the verdict.
    fn criterion_with(
        &mut self,
        title: &str,
        checks: &[(&str, &[&str])],
        extra: Option<(bool, String)>,
    ) {
        let mut pass = true;
        let mut details = Vec::new();
        if let Some((ok, d)) = extra {
            pass &= ok;
            details.push(d);
        }
        for (preset, names) in checks {
            match self.preset(preset) {
                Ok(out) => {
                    for n in *names {
                        match out.assertion(n) {
                            Some(a) => {
                                pass &= a.pass;
                                details.push(format!("[{preset}/{n}] {}", a.detail));
                            }
                            None => {
                                pass = false;
                                details.push(format!("[{preset}/{n}] assertion missing"));
                            }
                        }
                    }
                }
                Err(e) => {
                    pass = false;
                    details.push(format!("[{preset}] error: {e}"));
                }
            }
        }
        self.record(pass, title, details.join("; "));
    }

    fn record(&mut self, pass: bool, title: &str, detail: String) {
        let line = format!("{} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn lattice_table() -> (bool, String) {
    let cases: [(&[(i32, i32)], (bool, bool)); 3] = [
        (&[(1, 0), (-1, 0), (1, 1), (-1, -1)], (true, true)),
        (&[(1, 0), (-1, 0), (0, 1), (0, -1)], (true, false)),
        (&[(2, 0), (-2, 0), (0, 2), (0, -2)], (false, false)),
    ];
    let mut pass = true;
    let mut out = Vec::new();
    for (z, want) in cases {
        match ns_condition(z) {
            Ok(c) => {
                let ok = (c.generates_z2, c.unequal_norms) == want;
                pass &= ok;
                out.push(format!(
                    "{z:?} -> ({}, {})",
                    c.generates_z2, c.unequal_norms
                ));
            }
            Err(e) => {
                pass = false;
                out.push(format!("{z:?} -> error {e}"));
            }
        }
    }
    (pass, format!("[ns_condition] {}", out.join("; ")))
}

/// Reruns a finished bundle from its manifest into a fresh directory and
/// compares every CSV byte for byte.
fn rerun_identical(suite: &Suite, name: &str) -> Result<String, String> {
    let first = suite.out_dir(name);
    let second = suite.out_dir(&format!("{name}-rerun"));
    let o = vec![
        parse_override(&format!("out_dir = \"{}\"", second.display()))
            .map_err(|e| e.to_string())?,
    ];
    let cfg = ExperimentConfig::load(&first.join(experiments::MANIFEST), &o)
        .map_err(|e| e.to_string())?;
    let rec = experiments::run(&cfg).map_err(|e| e.to_string())?;
    let mut n = 0;
    for f in &rec.manifest.files {
        let a = std::fs::read(first.join(&f.name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(&f.name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name}: {} differs", f.name));
        }
        n += 1;
    }
    Ok(format!("{name}: {n} CSV files identical"))
}

fn main() {
    let start = Instant::now();
    let mut s = Suite::new();

    s.criterion(
        "duality-first-order",
        &[
            (
                "rd-variation",
                &[
                    "duality-gap-halves",
                    "duality-linear-exact",
                    "duality-discrete-exact",
                ],
            ),
            (
                "ns-variation",
                &[
                    "duality-gap-halves",
                    "duality-linear-exact",
                    "duality-discrete-exact",
                ],
            ),
        ],
    );
    s.criterion(
        "representations-agree",
        &[
            ("malliavin-rd", &["representations-first-order"]),
            ("malliavin-ns-good", &["representations-first-order"]),
            ("ou-malliavin", &["representations-linear-exact"]),
        ],
    );
    s.criterion(
        "derivative-vs-finite-differences",
        &[(
            "rd-variation",
            &[
                "derivative-vs-finite-difference",
                "second-variation-vs-mixed-difference",
            ],
        )],
    );
    s.criterion(
        "linear-closed-forms",
        &[
            ("ou-simulate", &["ou-variance"]),
            ("ou-malliavin", &["linear-closed-form"]),
        ],
    );
    s.criterion_with(
        "bracket-spanning",
        &[
            (
                "brackets-ns-good",
                &["saturated", "full-rank", "lattice-condition"],
            ),
            (
                "brackets-ns-failing",
                &[
                    "saturated",
                    "rank-deficient",
                    "lattice-condition-fails",
                    "first-generation-vanishes",
                ],
            ),
        ],
        Some(lattice_table()),
    );
    s.criterion(
        "positivity-transfer",
        &[
            ("malliavin-rd", &["positive-on-subspace"]),
            ("malliavin-ns-good", &["positive-on-subspace"]),
            ("malliavin-ns-failing", &["degenerate-on-subspace"]),
        ],
    );
    s.criterion(
        "small-ball-trend",
        &[(
            "smallball-ns",
            &["replicas-finished", "monotone-in-eps", "tail-slope"],
        )],
    );
    s.criterion(
        "quadratic-variation",
        &[("qv", &["qv-matches-formula", "energy-identity"])],
    );
    s.criterion(
        "ito-decomposition",
        &[("qv", &["ito-identities", "martingale-mean-zero"])],
    );
    s.criterion(
        "pathwise-inclusions",
        &[("events", &["no-violations", "exercised"])],
    );
    s.criterion(
        "deterministic-lemmas",
        &[(
            "events",
            &[
                "lp-to-sup-no-counterexample",
                "integral-to-derivative-no-counterexample",
            ],
        )],
    );
    s.criterion(
        "assumption-audit",
        &[
            (
                "audit-rd",
                &[
                    "no-divergence",
                    "finite",
                    "monotone-in-p",
                    "stable-under-doubling",
                    "alpha-range",
                ],
            ),
            (
                "audit-ns",
                &[
                    "no-divergence",
                    "finite",
                    "monotone-in-p",
                    "stable-under-doubling",
                ],
            ),
        ],
    );

    let mut details = Vec::new();
    let mut pass = true;
    for name in ["brackets-ns-good", "ou-malliavin", "events", "audit-ns"] {
        match rerun_identical(&s, name) {
            Ok(d) => details.push(d),
            Err(e) => {
                pass = false;
                details.push(e);
            }
        }
    }
    s.record(pass, "reproducible-bundles", details.join("; "));

    let failed = s.lines.iter().filter(|l| !l.0).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        s.lines.len() - failed,
        s.lines.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
