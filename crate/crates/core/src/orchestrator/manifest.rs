use std::collections::HashMap;

use thiserror::Error;

use crate::bus::DEFAULT_CID;
use crate::messages::MessageKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown message kind `{name}`")]
    UnknownMessageKind { line: usize, name: String },
    #[error("line {line}: service `{name}` already declared on line {first}")]
    DuplicateServiceName { line: usize, name: String, first: usize },
}

/// A value together with the manifest line it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct At<T> {
    pub value: T,
    pub line: usize,
}

impl<T> At<T> {
    fn new(value: T, line: usize) -> Self {
        Self { value, line }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceManifest {
    pub name: String,
    /// Line of the `service` header.
    pub line: usize,
    /// Program followed by its arguments.
    pub command: At<Vec<String>>,
    pub replicas: At<u32>,
    pub version_tag: Option<At<String>>,
    pub publishes: Vec<At<MessageKind>>,
    pub subscribes: Vec<At<MessageKind>>,
    pub stores_written: Vec<At<String>>,
    pub stores_read: Vec<At<String>>,
    /// Sinks outside the bus (a CAN network, a file) the service feeds.
    pub external: Vec<At<String>>,
    /// Group override for this service.
    pub cid: Option<At<u8>>,
}

impl ServiceManifest {
    pub fn publishes_kind(&self, k: MessageKind) -> bool {
        self.publishes.iter().any(|p| p.value == k)
    }

    pub fn subscribes_kind(&self, k: MessageKind) -> bool {
        self.subscribes.iter().any(|p| p.value == k)
    }
}

/// A frame store declaration with its lock discipline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreDecl {
    pub name: String,
    pub lock: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub cid: u8,
    pub services: Vec<ServiceManifest>,
    pub stores: Vec<StoreDecl>,
}

impl Deployment {
    pub fn service(&self, name: &str) -> Option<&ServiceManifest> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn store(&self, name: &str) -> Option<&StoreDecl> {
        self.stores.iter().find(|s| s.name == name)
    }

    pub fn instance_count(&self) -> usize {
        self.services.iter().map(|s| s.replicas.value as usize).sum()
    }
}

pub const LOCK_DISCIPLINES: [&str; 2] = ["seqlock", "mutex"];

/// Split a command line on whitespace; double quotes group words.
fn split_command(text: &str, line: usize) -> Result<Vec<String>, ManifestError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut have = false;
    for c in text.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                have = true;
            }
            c if c.is_whitespace() && !in_quotes => {
                if have {
                    out.push(std::mem::take(&mut cur));
                    have = false;
                }
            }
            c => {
                cur.push(c);
                have = true;
            }
        }
    }
    if in_quotes {
        return Err(ManifestError::Syntax {
            line,
            msg: "unterminated quote".into(),
        });
    }
    if have {
        out.push(cur);
    }
    Ok(out)
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
}

struct Draft {
    name: String,
    line: usize,
    command: Option<At<Vec<String>>>,
    replicas: Option<At<u32>>,
    version_tag: Option<At<String>>,
    publishes: Vec<At<MessageKind>>,
    subscribes: Vec<At<MessageKind>>,
    stores_written: Vec<At<String>>,
    stores_read: Vec<At<String>>,
    external: Vec<At<String>>,
    cid: Option<At<u8>>,
}

impl Draft {
    fn finish(self) -> Result<ServiceManifest, ManifestError> {
        let command = self.command.ok_or_else(|| ManifestError::Syntax {
            line: self.line,
            msg: format!("service `{}` has no cmd", self.name),
        })?;
        Ok(ServiceManifest {
            name: self.name,
            line: self.line,
            command,
            replicas: self.replicas.unwrap_or(At::new(1, self.line)),
            version_tag: self.version_tag,
            publishes: self.publishes,
            subscribes: self.subscribes,
            stores_written: self.stores_written,
            stores_read: self.stores_read,
            external: self.external,
            cid: self.cid,
        })
    }
}

fn parse_cid(v: &str, line: usize) -> Result<u8, ManifestError> {
    v.parse::<u8>()
        .ok()
        .filter(|&c| c > 0)
        .ok_or_else(|| ManifestError::Syntax {
            line,
            msg: format!("cid must be 1..=255, got `{v}`"),
        })
}

fn kinds(words: &[&str], line: usize) -> Result<Vec<At<MessageKind>>, ManifestError> {
    words
        .iter()
        .map(|w| {
            w.parse::<MessageKind>()
                .map(|k| At::new(k, line))
                .map_err(|_| ManifestError::UnknownMessageKind {
                    line,
                    name: w.to_string(),
                })
        })
        .collect()
}

fn names(words: &[&str], line: usize, what: &str) -> Result<Vec<At<String>>, ManifestError> {
    words
        .iter()
        .map(|w| {
            if valid_ident(w) {
                Ok(At::new(w.to_string(), line))
            } else {
                Err(ManifestError::Syntax {
                    line,
                    msg: format!("invalid {what} name `{w}`"),
                })
            }
        })
        .collect()
}

/// Parse the line-oriented manifest format described in `docs/manifest.md`.
pub fn parse_manifest(text: &str) -> Result<Deployment, ManifestError> {
    let mut cid: Option<u8> = None;
    let mut services: Vec<ServiceManifest> = Vec::new();
    let mut stores: Vec<StoreDecl> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut current: Option<Draft> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, rest) = match content.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (content, ""),
        };
        let words: Vec<&str> = rest.split_whitespace().collect();
        let syntax = |msg: String| ManifestError::Syntax { line, msg };
        let need_values = |n: usize| -> Result<(), ManifestError> {
            if words.len() < n {
                return Err(syntax(format!("`{key}` needs a value")));
            }
            Ok(())
        };

        match key {
            "service" => {
                if words.len() != 1 || !valid_ident(words[0]) {
                    return Err(syntax("expected `service <name>`".into()));
                }
                if let Some(d) = current.take() {
                    services.push(d.finish()?);
                }
                let name = words[0].to_string();
                if let Some(&first) = seen.get(&name) {
                    return Err(ManifestError::DuplicateServiceName { line, name, first });
                }
                seen.insert(name.clone(), line);
                current = Some(Draft {
                    name,
                    line,
                    command: None,
                    replicas: None,
                    version_tag: None,
                    publishes: Vec::new(),
                    subscribes: Vec::new(),
                    stores_written: Vec::new(),
                    stores_read: Vec::new(),
                    external: Vec::new(),
                    cid: None,
                });
            }
            "store" => {
                // store <name> lock <discipline>
                if words.len() != 3 || words[1] != "lock" || !valid_ident(words[0]) {
                    return Err(syntax("expected `store <name> lock <discipline>`".into()));
                }
                if !LOCK_DISCIPLINES.contains(&words[2]) {
                    return Err(syntax(format!(
                        "unknown lock discipline `{}` (one of {})",
                        words[2],
                        LOCK_DISCIPLINES.join(", ")
                    )));
                }
                if stores.iter().any(|s| s.name == words[0]) {
                    return Err(syntax(format!("store `{}` declared twice", words[0])));
                }
                stores.push(StoreDecl {
                    name: words[0].to_string(),
                    lock: words[2].to_string(),
                    line,
                });
            }
            "cid" if current.is_none() => {
                if words.len() != 1 {
                    return Err(syntax("expected `cid <n>`".into()));
                }
                if cid.is_some() {
                    return Err(syntax("cid given twice".into()));
                }
                cid = Some(parse_cid(words[0], line)?);
            }
            _ => {
                let Some(d) = current.as_mut() else {
                    return Err(syntax(format!("`{key}` outside of a service block")));
                };
                match key {
                    "cmd" => {
                        if d.command.is_some() {
                            return Err(syntax("cmd given twice".into()));
                        }
                        let argv = split_command(rest, line)?;
                        if argv.is_empty() {
                            return Err(syntax("empty cmd".into()));
                        }
                        d.command = Some(At::new(argv, line));
                    }
                    "replicas" => {
                        need_values(1)?;
                        let n = words[0]
                            .parse::<u32>()
                            .ok()
                            .filter(|&n| n >= 1 && words.len() == 1)
                            .ok_or_else(|| syntax(format!("replicas must be a count >= 1, got `{rest}`")))?;
                        d.replicas = Some(At::new(n, line));
                    }
                    "version" => {
                        if words.len() != 1 {
                            return Err(syntax("expected `version <tag>`".into()));
                        }
                        d.version_tag = Some(At::new(words[0].to_string(), line));
                    }
                    "pub" => {
                        need_values(1)?;
                        d.publishes.extend(kinds(&words, line)?);
                    }
                    "sub" => {
                        need_values(1)?;
                        d.subscribes.extend(kinds(&words, line)?);
                    }
                    "writes" => {
                        need_values(1)?;
                        d.stores_written.extend(names(&words, line, "store")?);
                    }
                    "reads" => {
                        need_values(1)?;
                        d.stores_read.extend(names(&words, line, "store")?);
                    }
                    "external" => {
                        need_values(1)?;
                        d.external.extend(names(&words, line, "external sink")?);
                    }
                    "cid" => {
                        if words.len() != 1 {
                            return Err(syntax("expected `cid <n>`".into()));
                        }
                        d.cid = Some(At::new(parse_cid(words[0], line)?, line));
                    }
                    other => return Err(syntax(format!("unknown key `{other}`"))),
                }
            }
        }
    }
    if let Some(d) = current.take() {
        services.push(d.finish()?);
    }
    Ok(Deployment {
        cid: cid.unwrap_or(DEFAULT_CID),
        services,
        stores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal() {
        let d = parse_manifest("service cam\ncmd lanepipe-camera --fps 10\n").unwrap();
        assert_eq!(d.services.len(), 1);
        assert_eq!(d.services[0].replicas.value, 1);
        assert_eq!(d.services[0].command.value, ["lanepipe-camera", "--fps", "10"]);
        assert_eq!(d.cid, DEFAULT_CID);
    }

    #[test]
    fn duplicate_service() {
        let e = parse_manifest("service a\ncmd x\nservice a\ncmd y\n").unwrap_err();
        assert_eq!(
            e,
            ManifestError::DuplicateServiceName {
                line: 3,
                name: "a".into(),
                first: 1
            }
        );
    }

    #[test]
    fn unknown_kind() {
        let e = parse_manifest("service a\ncmd x\npub CenterLine Telemetry\n").unwrap_err();
        assert!(matches!(e, ManifestError::UnknownMessageKind { line: 3, ref name } if name == "Telemetry"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let cases = [
            ("cmd x\n", 1),
            ("service a\n\nreplicas 0\n", 3),
            ("service a\ncmd x\ncolor blue\n", 3),
            ("service a\n", 1),
            ("cid 300\n", 1),
            ("service a\ncmd \"unterminated\n", 2),
            ("store cam0 lock whatever\n", 1),
            ("service a b\n", 1),
        ];
        for (text, want) in cases {
            match parse_manifest(text) {
                Err(ManifestError::Syntax { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn full_block() {
        let text = "cid 70\nstore cam0 lock seqlock\n\nservice det   # comment\ncmd lanepipe-lanedet \"--label=a b\"\nreplicas 2\nversion v1.2\nsub ImageNotice\npub CenterLine DiagnosticState\nreads cam0\ncid 71\n";
        let d = parse_manifest(text).unwrap();
        assert_eq!(d.cid, 70);
        let s = &d.services[0];
        assert_eq!(s.command.value, ["lanepipe-lanedet", "--label=a b"]);
        assert_eq!(s.replicas, At::new(2, 6));
        assert_eq!(s.version_tag.as_ref().unwrap().value, "v1.2");
        assert_eq!(s.subscribes, vec![At::new(MessageKind::ImageNotice, 8)]);
        assert_eq!(s.publishes.len(), 2);
        assert_eq!(s.stores_read[0].value, "cam0");
        assert_eq!(s.cid.as_ref().unwrap().value, 71);
        assert_eq!(d.store("cam0").unwrap().lock, "seqlock");
        assert_eq!(d.instance_count(), 2);
    }
}
