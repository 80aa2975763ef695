//! Recorded syscall traces: one `node_<id>.txt` per node holding
//! whitespace-separated syscall numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rac_core::risk::Symbol;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: byte {offset}: {token:?} is not a syscall number", file.display())]
    Parse {
        file: PathBuf,
        offset: usize,
        token: String,
    },
}

/// Parses one trace. On failure returns the byte offset and text of the
/// offending token.
pub fn parse_trace(text: &str) -> Result<Vec<Symbol>, (usize, String)> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    loop {
        let skip = rest.len() - rest.trim_start().len();
        offset += skip;
        rest = &rest[skip..];
        if rest.is_empty() {
            return Ok(out);
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let token = &rest[..end];
        out.push(token.parse().map_err(|_| (offset, token.to_owned()))?);
        offset += end;
        rest = &rest[end..];
    }
}

fn node_of(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("node_")?
        .strip_suffix(".txt")?
        .parse()
        .ok()
}

/// Every `node_<id>.txt` in `dir`, keyed by id. Other files are ignored.
pub fn load_traces(dir: &Path) -> Result<BTreeMap<u32, Vec<Symbol>>, TraceFileError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| TraceFileError::Io { path, source }
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        let Some(id) = node_of(&path) else { continue };
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let calls = parse_trace(&text).map_err(|(offset, token)| TraceFileError::Parse {
            file: path.clone(),
            offset,
            token,
        })?;
        out.insert(id, calls);
    }
    Ok(out)
}
