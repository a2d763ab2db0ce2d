//! Append-only JSON Lines record of accepted responses.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sentiscope_core::AnnotationResponse;

use crate::error::{Result, ServiceError};

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    len: u64,
}

impl Journal {
    /// Opens (creating if needed) the journal and returns every stored response.
    ///
    /// A final line without its newline is the remnant of an interrupted write:
    /// it is kept if it parses and cut off otherwise. Any other malformed line
    /// is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<AnnotationResponse>)> {
        let io = |source| ServiceError::Journal { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(io)?;

        let mut responses = Vec::new();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        let mut tail_fix = None;
        while offset < raw.len() {
            line_no += 1;
            let (line, next, complete) = match raw[offset..].iter().position(|&b| b == b'\n') {
                Some(p) => (&raw[offset..offset + p], offset + p + 1, true),
                None => (&raw[offset..], raw.len(), false),
            };
            let text = String::from_utf8_lossy(line);
            if !text.trim().is_empty() {
                match serde_json::from_str::<AnnotationResponse>(&text) {
                    Ok(r) => {
                        responses.push(r);
                        if !complete {
                            tail_fix = Some(TailFix::Terminate);
                        }
                    }
                    Err(_) if !complete => {
                        tracing::warn!(path = %path.display(), line = line_no, "dropping torn journal tail");
                        tail_fix = Some(TailFix::Truncate(offset as u64));
                    }
                    Err(e) => {
                        return Err(ServiceError::CorruptJournal {
                            path: path.to_path_buf(),
                            line: line_no,
                            reason: e.to_string(),
                        })
                    }
                }
            }
            offset = next;
        }

        let mut len = raw.len() as u64;
        match tail_fix {
            Some(TailFix::Terminate) => {
                file.write_all(b"\n").map_err(io)?;
                len += 1;
            }
            Some(TailFix::Truncate(at)) => {
                file.set_len(at).map_err(io)?;
                len = at;
            }
            None => {}
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                len,
            },
            responses,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it to disk. On failure the file is cut back to
    /// its previous length so no partial line survives.
    pub fn append(&mut self, response: &AnnotationResponse) -> Result<()> {
        let mut line = serde_json::to_vec(response).expect("responses serialize");
        line.push(b'\n');
        let written = self.file.write_all(&line).and_then(|()| self.file.sync_data());
        if let Err(source) = written {
            let _ = self.file.set_len(self.len);
            return Err(ServiceError::Journal {
                path: self.path.clone(),
                source,
            });
        }
        self.len += line.len() as u64;
        Ok(())
    }
}

enum TailFix {
    Terminate,
    Truncate(u64),
}
