//! Run manifests: the resolved command line, input digests and version,
//! written next to a command's outputs so the run can be repeated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "sanmt-manifest 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Working directory the command ran in; relative paths resolve here.
    pub cwd: PathBuf,
    /// Every flag with its resolved value, defaults included, in
    /// declaration order. Repeated flags appear once per value.
    pub args: Vec<(String, String)>,
    /// `(path, sha256)` of every file read.
    pub inputs: Vec<(PathBuf, String)>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\n");
        let _ = writeln!(out, "version {}", self.version);
        let _ = writeln!(out, "command {}", self.command);
        let _ = writeln!(out, "cwd {}", escape(&self.cwd.to_string_lossy()));
        for (k, v) in &self.args {
            let _ = writeln!(out, "arg {k}={}", escape(v));
        }
        for (p, d) in &self.inputs {
            let _ = writeln!(out, "input {d} {}", escape(&p.to_string_lossy()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |n: usize, msg: &str| Error::Parse {
            line: n + 1,
            token: 1,
            msg: msg.into(),
        };
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad(0, "not a run manifest")),
        }
        let mut m = RunManifest {
            version: String::new(),
            command: String::new(),
            cwd: PathBuf::new(),
            args: Vec::new(),
            inputs: Vec::new(),
        };
        for (n, line) in lines {
            let (tag, rest) = line.split_once(' ').ok_or_else(|| bad(n, "expected `<tag> <value>`"))?;
            match tag {
                "version" => m.version = rest.to_string(),
                "command" => m.command = rest.to_string(),
                "cwd" => m.cwd = PathBuf::from(unescape(rest)),
                "arg" => {
                    let (k, v) = rest.split_once('=').ok_or_else(|| bad(n, "expected arg key=value"))?;
                    m.args.push((k.to_string(), unescape(v)));
                }
                "input" => {
                    let (d, p) = rest.split_once(' ').ok_or_else(|| bad(n, "expected input <digest> <path>"))?;
                    m.inputs.push((PathBuf::from(unescape(p)), d.to_string()));
                }
                other => return Err(bad(n, &format!("unknown manifest entry {other:?}"))),
            }
        }
        if m.command.is_empty() {
            return Err(Error::Data("manifest names no command".into()));
        }
        Ok(m)
    }

    /// Checks that every recorded input still has its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, digest) in &self.inputs {
            let full = if path.is_absolute() { path.clone() } else { self.cwd.join(path) };
            let now = file_digest(&full)?;
            if &now != digest {
                return Err(Error::Data(format!(
                    "input {} changed since the run (sha256 {} recorded, {} now)",
                    full.display(),
                    digest,
                    now
                )));
            }
        }
        Ok(())
    }
}
