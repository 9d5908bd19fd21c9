//! Static smell detection over deployment manifests.
//!
//! Everything here is derived from manifest declarations alone: who
//! publishes and subscribes which message kinds, who reads and writes which
//! frame stores, and how each service is addressed and versioned.

mod graph;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

pub use graph::{build_flow_graph, cyclic_components, FlowEdge, FlowGraph, Node};

use crate::orchestrator::Deployment;
use crate::services::is_valid_version_tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Smell {
    CyclicDependency,
    SelfMessage,
    SharedPersistency,
    HardCodedEndpoint,
    MissingVersionTag,
    MicroserviceGreedy,
}

impl Smell {
    pub const ALL: [Smell; 6] = [
        Smell::CyclicDependency,
        Smell::SelfMessage,
        Smell::SharedPersistency,
        Smell::HardCodedEndpoint,
        Smell::MissingVersionTag,
        Smell::MicroserviceGreedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Smell::CyclicDependency => "CYCLIC_DEPENDENCY",
            Smell::SelfMessage => "SELF_MESSAGE",
            Smell::SharedPersistency => "SHARED_PERSISTENCY",
            Smell::HardCodedEndpoint => "HARD_CODED_ENDPOINT",
            Smell::MissingVersionTag => "MISSING_VERSION_TAG",
            Smell::MicroserviceGreedy => "MICROSERVICE_GREEDY",
        }
    }
}

impl fmt::Display for Smell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub smell: Smell,
    pub severity: Severity,
    pub services: Vec<String>,
    pub evidence: String,
    /// Manifest lines cited by the evidence, ascending.
    pub lines: Vec<usize>,
}

impl Finding {
    fn new(smell: Smell, severity: Severity, services: Vec<String>, evidence: String, mut lines: Vec<usize>) -> Self {
        lines.sort_unstable();
        lines.dedup();
        Self {
            smell,
            severity,
            services,
            evidence,
            lines,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.lines.iter().map(|l| l.to_string()).collect();
        write!(
            f,
            "{} {} [{}] {} (lines {})",
            self.severity,
            self.smell,
            self.services.join(", "),
            self.evidence,
            lines.join(",")
        )
    }
}

fn cyclic_dependency(dep: &Deployment, g: &FlowGraph, out: &mut Vec<Finding>) {
    for comp in g.cycles() {
        let services: Vec<String> = comp
            .iter()
            .filter_map(|&n| match &g.nodes[n] {
                Node::Service(i) => Some(dep.services[*i].name.clone()),
                Node::Store(_) => None,
            })
            .collect();
        let inside = |n: usize| comp.contains(&n);
        let mut lines = Vec::new();
        let mut links = Vec::new();
        for e in g.edges.iter().filter(|e| inside(e.from) && inside(e.to)) {
            lines.extend([e.from_line, e.to_line]);
            links.push(format!("{} -{}-> {}", g.label(dep, e.from), e.via, g.label(dep, e.to)));
        }
        out.push(Finding::new(
            Smell::CyclicDependency,
            Severity::Error,
            services,
            format!("directed cycle: {}", links.join(", ")),
            lines,
        ));
    }
}

fn self_message(dep: &Deployment, out: &mut Vec<Finding>) {
    for s in &dep.services {
        for p in &s.publishes {
            if let Some(sub) = s.subscribes.iter().find(|x| x.value == p.value) {
                out.push(Finding::new(
                    Smell::SelfMessage,
                    Severity::Error,
                    vec![s.name.clone()],
                    format!(
                        "publishes {} (line {}) and subscribes it (line {})",
                        p.value, p.line, sub.line
                    ),
                    vec![p.line, sub.line],
                ));
            }
        }
    }
}

fn shared_persistency(dep: &Deployment, out: &mut Vec<Finding>) {
    #[derive(Default)]
    struct Use {
        writers: Vec<(String, u32, usize)>,
        readers: Vec<(String, u32, usize)>,
    }
    let mut stores: BTreeMap<&str, Use> = BTreeMap::new();
    for s in &dep.services {
        for w in &s.stores_written {
            stores
                .entry(&w.value)
                .or_default()
                .writers
                .push((s.name.clone(), s.replicas.value, w.line));
        }
        for r in &s.stores_read {
            stores
                .entry(&r.value)
                .or_default()
                .readers
                .push((s.name.clone(), s.replicas.value, r.line));
        }
    }
    let describe = |list: &[(String, u32, usize)]| -> String {
        list.iter()
            .map(|(n, r, l)| {
                if *r > 1 {
                    format!("{n} x{r} (line {l})")
                } else {
                    format!("{n} (line {l})")
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    for (store, u) in stores {
        let writers: u32 = u.writers.iter().map(|w| w.1).sum();
        let readers: u32 = u.readers.iter().map(|r| r.1).sum();
        if writers >= 2 {
            out.push(Finding::new(
                Smell::SharedPersistency,
                Severity::Error,
                u.writers.iter().map(|w| w.0.clone()).collect(),
                format!("store `{store}` has {writers} writers: {}", describe(&u.writers)),
                u.writers.iter().map(|w| w.2).collect(),
            ));
        } else if readers >= 2 && writers >= 1 && dep.store(store).is_none() {
            let mut services: Vec<String> = u.writers.iter().chain(&u.readers).map(|x| x.0.clone()).collect();
            services.dedup();
            out.push(Finding::new(
                Smell::SharedPersistency,
                Severity::Warning,
                services,
                format!(
                    "store `{store}` has {readers} readers ({}) and no declared lock discipline",
                    describe(&u.readers)
                ),
                u.writers.iter().chain(&u.readers).map(|x| x.2).collect(),
            ));
        }
    }
}

/// IPv4 literal followed by a port, e.g. `239.65.65.65:12175`.
fn endpoint_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:\d{1,3}\.){3}\d{1,3}:\d{1,5}\b").unwrap())
}

fn hard_coded_endpoint(dep: &Deployment, out: &mut Vec<Finding>) {
    for s in &dep.services {
        let hits: Vec<&str> = s
            .command
            .value
            .iter()
            .filter_map(|a| endpoint_pattern().find(a).map(|m| m.as_str()))
            .collect();
        if !hits.is_empty() {
            out.push(Finding::new(
                Smell::HardCodedEndpoint,
                Severity::Warning,
                vec![s.name.clone()],
                format!("cmd addresses {} directly instead of using --cid", hits.join(", ")),
                vec![s.command.line],
            ));
        }
    }
}

fn missing_version_tag(dep: &Deployment, out: &mut Vec<Finding>) {
    for s in &dep.services {
        let (evidence, line) = match &s.version_tag {
            None => ("no version tag declared".to_string(), s.line),
            Some(t) if !is_valid_version_tag(&t.value) => (
                format!(
                    "version `{}` is neither a commit hash nor v<major>[.<minor>...]",
                    t.value
                ),
                t.line,
            ),
            Some(_) => continue,
        };
        out.push(Finding::new(
            Smell::MissingVersionTag,
            Severity::Warning,
            vec![s.name.clone()],
            evidence,
            vec![line],
        ));
    }
}

fn microservice_greedy(dep: &Deployment, out: &mut Vec<Finding>) {
    for s in &dep.services {
        let consumed = s.publishes.iter().any(|p| {
            dep.services
                .iter()
                .any(|o| o.name != s.name && o.subscribes_kind(p.value))
        });
        if consumed || !s.stores_written.is_empty() || !s.external.is_empty() {
            continue;
        }
        let evidence = if s.publishes.is_empty() {
            "publishes nothing, writes no store and feeds no external sink".to_string()
        } else {
            let kinds: Vec<&str> = s.publishes.iter().map(|p| p.value.name()).collect();
            format!(
                "no other service subscribes to {} and it writes no store",
                kinds.join(", ")
            )
        };
        let mut lines = vec![s.line];
        lines.extend(s.publishes.iter().map(|p| p.line));
        out.push(Finding::new(
            Smell::MicroserviceGreedy,
            Severity::Warning,
            vec![s.name.clone()],
            evidence,
            lines,
        ));
    }
}

/// Run every detector. Findings are ordered by severity, then service,
/// then smell, then evidence.
pub fn check(dep: &Deployment) -> Vec<Finding> {
    let g = build_flow_graph(dep);
    let mut out = Vec::new();
    cyclic_dependency(dep, &g, &mut out);
    self_message(dep, &mut out);
    shared_persistency(dep, &mut out);
    hard_coded_endpoint(dep, &mut out);
    missing_version_tag(dep, &mut out);
    microservice_greedy(dep, &mut out);
    out.sort_by(|a, b| {
        a.severity
            .cmp(&b.severity)
            .then_with(|| a.services.first().cmp(&b.services.first()))
            .then_with(|| a.smell.cmp(&b.smell))
            .then_with(|| a.evidence.cmp(&b.evidence))
    });
    out
}

/// 0 when clean, 1 with warnings only, 2 with any error.
pub fn exit_code(findings: &[Finding]) -> i32 {
    if findings.iter().any(|f| f.severity == Severity::Error) {
        2
    } else if findings.is_empty() {
        0
    } else {
        1
    }
}

#[derive(Serialize)]
struct Summary {
    errors: usize,
    warnings: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    findings: &'a [Finding],
    summary: Summary,
}

pub fn to_json(findings: &[Finding]) -> String {
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    let report = Report {
        findings,
        summary: Summary {
            errors,
            warnings: findings.len() - errors,
        },
    };
    serde_json::to_string_pretty(&report).expect("findings serialize")
}

pub fn to_text(findings: &[Finding]) -> String {
    let mut s: String = findings.iter().map(|f| format!("{f}\n")).collect();
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    s.push_str(&format!(
        "{} error(s), {} warning(s)\n",
        errors,
        findings.len() - errors
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::parse_manifest;

    fn smells(text: &str) -> Vec<(Smell, Severity)> {
        check(&parse_manifest(text).unwrap())
            .into_iter()
            .map(|f| (f.smell, f.severity))
            .collect()
    }

    #[test]
    fn two_cycle() {
        let text = "service A\ncmd a\nversion v1\nsub CenterLine\npub ImageNotice\n\nservice B\ncmd b\nversion v1\nsub ImageNotice\npub CenterLine\n";
        let f = check(&parse_manifest(text).unwrap());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].smell, Smell::CyclicDependency);
        assert_eq!(f[0].services, ["A", "B"]);
        assert_eq!(f[0].lines, [4, 5, 10, 11]);
    }

    #[test]
    fn two_writers() {
        let text = "service cam1\ncmd c\nversion v1\nwrites cam0\nservice cam2\ncmd c\nversion v1\nwrites cam0\nservice det\ncmd d\nversion v1\nreads cam0\nexternal log\n";
        assert_eq!(smells(text), vec![(Smell::SharedPersistency, Severity::Error)]);
    }

    #[test]
    fn readers_without_lock() {
        let base = "service cam\ncmd c\nversion v1\nwrites cam0\nservice det\ncmd d\nversion v1\nreplicas 2\nreads cam0\nexternal log\n";
        assert_eq!(smells(base), vec![(Smell::SharedPersistency, Severity::Warning)]);
        assert!(smells(&format!("store cam0 lock seqlock\n{base}")).is_empty());
    }

    #[test]
    fn endpoint_and_version() {
        let text = "service a\ncmd a --peer 10.0.0.2:5000\nexternal x\n";
        let got = smells(text);
        assert!(got.contains(&(Smell::HardCodedEndpoint, Severity::Warning)));
        assert!(got.contains(&(Smell::MissingVersionTag, Severity::Warning)));
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&[]), 0);
        let w = Finding::new(
            Smell::MicroserviceGreedy,
            Severity::Warning,
            vec![],
            String::new(),
            vec![],
        );
        let e = Finding::new(Smell::SelfMessage, Severity::Error, vec![], String::new(), vec![]);
        assert_eq!(exit_code(std::slice::from_ref(&w)), 1);
        assert_eq!(exit_code(&[w, e]), 2);
    }

    #[test]
    fn json_shape() {
        let f = Finding::new(
            Smell::SelfMessage,
            Severity::Error,
            vec!["a".into()],
            "x".into(),
            vec![3, 2],
        );
        let v: serde_json::Value = serde_json::from_str(&to_json(&[f])).unwrap();
        assert_eq!(v["findings"][0]["smell"], "SELF_MESSAGE");
        assert_eq!(v["findings"][0]["severity"], "ERROR");
        assert_eq!(v["findings"][0]["lines"], serde_json::json!([2, 3]));
        assert_eq!(v["summary"]["errors"], 1);
    }
}
