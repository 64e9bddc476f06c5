//! Corpus configuration and the full verification run.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::Exponent;
use crate::error::{invalid, Error, Result};
use crate::graph::{build_domain, generate, Domain, Family, InfiniteFamily, VertexSubset, WeightedGraph};
use crate::harness::report::{sort_reports, BoundsReport, ReportHeader};
use crate::harness::verify::{verify_domain, verify_infinite, Suites, VerifyOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    /// `Ω = V`.
    Closed,
    /// One interior vertex, the middle one in id order.
    Single,
    /// A seeded random half of the vertices with connected closure.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiniteSpec {
    pub family: String,
    pub radii: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub p_grid: Vec<f64>,
    pub graphs: Vec<String>,
    pub domains: Vec<DomainKind>,
    pub infinite: Vec<InfiniteSpec>,
    pub restarts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let mut graphs: Vec<String> = Vec::new();
        graphs.extend((2..=6).map(|n| format!("path({n})")));
        graphs.extend((3..=6).map(|n| format!("cycle({n})")));
        graphs.extend((3..=5).map(|n| format!("complete({n})")));
        graphs.extend((4..=6).map(|n| format!("star({n})")));
        graphs.push("grid(2,3)".into());
        graphs.push("grid(3,3)".into());
        for (i, n) in [7, 8, 8, 9, 10].into_iter().enumerate() {
            graphs.push(format!("random({n},0.4,0.5,2,{},0.5,2)", i + 1));
        }
        CorpusConfig {
            seed: 42,
            p_grid: vec![1.2, 1.5, 2.0, 3.0, 4.0],
            graphs,
            domains: vec![DomainKind::Closed, DomainKind::Single, DomainKind::Split],
            infinite: vec![
                InfiniteSpec { family: "half-line".into(), radii: vec![2, 4, 8] },
                InfiniteSpec { family: "integer-line".into(), radii: vec![1, 2, 3, 4] },
                InfiniteSpec { family: "regular-tree(3)".into(), radii: vec![1, 2, 3] },
            ],
            restarts: 32,
        }
    }
}

impl CorpusConfig {
    pub fn parse(text: &str) -> Result<CorpusConfig> {
        let cfg: CorpusConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<CorpusConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply `PCAP_SEED` if set.
    pub fn with_env_seed(mut self) -> Result<CorpusConfig> {
        if let Ok(s) = std::env::var("PCAP_SEED") {
            self.seed = s.trim().parse().map_err(|_| Error::Config(format!("PCAP_SEED is not an integer: {s:?}")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for &p in &self.p_grid {
            Exponent::new(p).map_err(|e| Error::Config(format!("p_grid: {e}")))?;
        }
        for g in &self.graphs {
            Family::from_str(g).map_err(|e| Error::Config(format!("graphs: {g:?}: {e}")))?;
        }
        for s in &self.infinite {
            InfiniteFamily::from_str(&s.family).map_err(|e| Error::Config(format!("infinite: {:?}: {e}", s.family)))?;
            if s.radii.contains(&0) {
                return Err(Error::Config("infinite: radii must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn exponents(&self) -> Vec<Exponent> {
        self.p_grid.iter().map(|&p| Exponent::new(p).expect("validated")).collect()
    }

    /// Canonical serialization used for the header hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn header(&self) -> ReportHeader {
        ReportHeader::new(self.seed, &self.canonical())
    }
}

/// A corpus domain with its report id.
#[derive(Debug, Clone)]
pub struct CorpusDomain {
    pub id: String,
    pub domain: Domain,
}

fn stable_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn usable(d: &Domain) -> bool {
    d.graph().is_connected()
}

/// Domains of `kind` on `g`; empty when none qualifies.
pub fn make_domain(g: &WeightedGraph, name: &str, kind: DomainKind, seed: u64) -> Result<Option<CorpusDomain>> {
    let n = g.len();
    let found = match kind {
        DomainKind::Closed => Some(Domain::closed(g)?),
        DomainKind::Single => {
            if n < 2 {
                None
            } else {
                build_domain(g, &VertexSubset::new(vec![n / 2])).ok().filter(usable)
            }
        }
        DomainKind::Split => {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, name));
            let mut found = None;
            for _ in 0..100 {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let omega = VertexSubset::new(order[..n.div_ceil(2)].to_vec());
                if let Ok(d) = build_domain(g, &omega) {
                    if d.boundary_count() > 0 && usable(&d) {
                        found = Some(d);
                        break;
                    }
                }
            }
            found
        }
    };
    Ok(found.map(|domain| {
        let tag = match kind {
            DomainKind::Closed => "closed".to_string(),
            DomainKind::Single | DomainKind::Split => {
                let ids: Vec<&str> = domain.interior().iter().map(|x| domain.graph().id(x)).collect();
                format!("{}:{}", if kind == DomainKind::Single { "single" } else { "split" }, ids.join("+"))
            }
        };
        CorpusDomain { id: format!("{name}/{tag}"), domain }
    }))
}

/// Every configured domain, in configuration order.
pub fn corpus_domains(cfg: &CorpusConfig) -> Result<Vec<CorpusDomain>> {
    let mut out = Vec::new();
    for spec in &cfg.graphs {
        let family = Family::from_str(spec)?;
        let g = generate(&family)?;
        let name = family.to_string();
        for &kind in &cfg.domains {
            if let Some(d) = make_domain(&g, &name, kind, cfg.seed)? {
                out.push(d);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub suites: Suites,
    pub infinite: bool,
}

impl Selection {
    pub const ALL: Selection = Selection { suites: Suites::ALL, infinite: true };

    pub fn parse(s: &str) -> Result<Selection> {
        let none = Suites { dirichlet: false, neumann: false, steklov: false };
        Ok(match s {
            "all" => Selection::ALL,
            "dirichlet" => Selection { suites: Suites { dirichlet: true, ..none }, infinite: false },
            "neumann" => Selection { suites: Suites { neumann: true, ..none }, infinite: false },
            "steklov" => Selection { suites: Suites { steklov: true, ..none }, infinite: false },
            "infinite" => Selection { suites: none, infinite: true },
            other => return Err(invalid(format!("unknown suite {other:?}"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusRun {
    pub reports: Vec<BoundsReport>,
    /// Solver failures, as `(instance, message)`.
    pub errors: Vec<(String, String)>,
    /// Infinite families whose eigenvalue sequence failed to decrease.
    pub non_monotone: Vec<String>,
}

impl CorpusRun {
    pub fn all_pass(&self) -> bool {
        self.errors.is_empty() && self.non_monotone.is_empty() && self.reports.iter().all(|r| r.pass)
    }
}

enum Job<'a> {
    Domain(&'a CorpusDomain, Exponent),
    Infinite(InfiniteFamily, &'a [usize], Exponent),
}

pub fn run_corpus(cfg: &CorpusConfig, selection: Selection) -> Result<CorpusRun> {
    cfg.validate()?;
    let domains = corpus_domains(cfg)?;
    let mut opts = VerifyOptions::default();
    opts.eigen.seed = cfg.seed;
    opts.eigen.restarts = cfg.restarts;

    let mut jobs = Vec::new();
    for p in cfg.exponents() {
        for d in &domains {
            jobs.push(Job::Domain(d, p));
        }
        if selection.infinite {
            for s in &cfg.infinite {
                jobs.push(Job::Infinite(InfiniteFamily::from_str(&s.family)?, &s.radii, p));
            }
        }
    }
    type Outcome = (Vec<BoundsReport>, Option<(String, String)>, Option<String>);
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|job| match *job {
            Job::Domain(d, p) => match verify_domain(&d.domain, p, &d.id, &opts, selection.suites) {
                Ok(r) => (r, None, None),
                Err(e) => (Vec::new(), Some((format!("{} p={}", d.id, p.get()), e.to_string())), None),
            },
            Job::Infinite(family, radii, p) => match verify_infinite(family, p, radii, &opts) {
                Ok(r) => {
                    let bad = (!r.monotone).then(|| format!("{family} p={}", p.get()));
                    (r.reports, None, bad)
                }
                Err(e) => (Vec::new(), Some((format!("{family} p={}", p.get()), e.to_string())), None),
            },
        })
        .collect();
    let mut run = CorpusRun { reports: Vec::new(), errors: Vec::new(), non_monotone: Vec::new() };
    for (r, e, m) in outcomes {
        run.reports.extend(r);
        run.errors.extend(e);
        run.non_monotone.extend(m);
    }
    sort_reports(&mut run.reports);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_corpus_shape() {
        let cfg = CorpusConfig::default();
        cfg.validate().unwrap();
        let domains = corpus_domains(&cfg).unwrap();
        assert!(domains.len() >= 2 * cfg.graphs.len());
        for d in &domains {
            assert!(d.domain.graph().is_connected(), "{}", d.id);
            assert!(d.domain.len() <= 12, "{}", d.id);
        }
        let again = corpus_domains(&cfg).unwrap();
        let ids: Vec<_> = domains.iter().map(|d| &d.id).collect();
        assert_eq!(ids, again.iter().map(|d| &d.id).collect::<Vec<_>>());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(CorpusConfig::parse("p_grid = [0.5]"), Err(Error::Config(_))));
        assert!(matches!(CorpusConfig::parse("graphs = [\"path(\"]"), Err(Error::Config(_))));
        let e = CorpusConfig::parse("seed = 1\nbogus = 2").unwrap_err().to_string();
        assert!(e.contains("line 2") || e.contains("bogus"), "{e}");
        let empty = CorpusConfig::parse("graphs = []\ninfinite = []").unwrap();
        let run = run_corpus(&empty, Selection::ALL).unwrap();
        assert!(run.reports.is_empty() && run.all_pass());
    }
}
