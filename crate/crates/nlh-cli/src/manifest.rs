//! Run directories and the manifest recording what a command produced.
//!
//! Every artifact-writing command works inside one directory named
//! `<UTC timestamp>-<hash8>`, where the hash covers the command name and the
//! canonical form of the resolved config. `manifest.json` is written last
//! and only references files that exist.

use crate::Failure;
use nlhfem::io::write_atomic;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    config_path: String,
    content_hash: String,
    resolved_config: String,
    created: time::OffsetDateTime,
    outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    pub fn create(
        base: &Path,
        command: &'static str,
        config_path: &Path,
        canonical_config: &str,
    ) -> Result<RunDir, Failure> {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        h.update(canonical_config.as_bytes());
        let content_hash = hex(&h.finalize());

        let created = time::OffsetDateTime::now_utc();
        let stamp = format!(
            "{:04}{:02}{:02}T{:02}{:02}{:02}Z",
            created.year(),
            u8::from(created.month()),
            created.day(),
            created.hour(),
            created.minute(),
            created.second()
        );
        let mut root = base.join(format!("{stamp}-{}", &content_hash[..8]));
        // same config within the same second: suffix a counter
        let mut n = 1;
        while root.exists() {
            n += 1;
            root = base.join(format!("{stamp}-{}-{n}", &content_hash[..8]));
        }
        std::fs::create_dir_all(&root)
            .map_err(|e| crate::numerical(format!("cannot create {}: {e}", root.display())))?;
        Ok(RunDir {
            root,
            command,
            config_path: config_path.display().to_string(),
            content_hash,
            resolved_config: canonical_config.to_string(),
            created,
            outputs: Vec::new(),
        })
    }

    /// Write one artifact (atomically) and record it for the manifest.
    pub fn write(&mut self, name: &str, content: &str) -> Result<(), Failure> {
        write_atomic(&self.root.join(name), content)
            .map_err(|e| crate::numerical(format!("cannot write {name}: {e}")))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Write `manifest.json` and hand back the run directory path. Every
    /// referenced output is checked to exist.
    pub fn finish(self) -> Result<PathBuf, Failure> {
        for name in &self.outputs {
            if !self.root.join(name).is_file() {
                return Err(crate::numerical(format!(
                    "output {name} recorded but missing on disk"
                )));
            }
        }
        let created_utc = self
            .created
            .format(&time::format_description::well_known::Rfc3339)
            .unwrap_or_else(|_| self.created.unix_timestamp().to_string());
        let doc = serde_json::json!({
            "command": self.command,
            "created_utc": created_utc,
            "created_unix": self.created.unix_timestamp(),
            "config_path": self.config_path,
            "content_hash": self.content_hash,
            "resolved_config": self.resolved_config,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&doc).expect("manifest json") + "\n";
        write_atomic(&self.root.join("manifest.json"), &text)
            .map_err(|e| crate::numerical(format!("cannot write manifest.json: {e}")))?;
        Ok(self.root)
    }
}
