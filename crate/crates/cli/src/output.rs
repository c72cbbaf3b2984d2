use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

const LOCK_NAME: &str = ".cqed.lock";

/// Output directory held under a lock file for the lifetime of the value.
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Locked(lock.display().to_string()));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            root: root.to_path_buf(),
            lock,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes a CSV with the given header and rows.
    pub fn write_rows<R: Serialize>(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = R>,
    ) -> Result<(), CliError> {
        let w = self.create(name)?;
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        csv.write_record(header)?;
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn artifacts(&self) -> &[String] {
        &self.written
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
