//! Theorem verification over a corpus of graphs, with machine-readable reports.

mod corpus;
mod report;
mod verify;

pub use corpus::{corpus_domains, make_domain, run_corpus, CorpusConfig, CorpusDomain, CorpusRun, DomainKind, InfiniteSpec, Selection};
pub use report::{sort_reports, tolerance, write_reports, BoundsReport, ReportHeader, Theorem};
pub use verify::{verify_dirichlet, verify_domain, verify_infinite, verify_neumann, verify_steklov, InfiniteReport, Suites, VerifyOptions};
