//! Output files that are only kept when the whole command succeeds.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Tracks files written under one output directory. Each file is written
/// to a temporary name and renamed into place; if the set is dropped
/// without [`Outputs::commit`], every file and every directory it created
/// is removed again.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let mut out = Self {
            root: root.into(),
            files: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        };
        let root = out.root.clone();
        out.create_dirs(&root)?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn create_dirs(&mut self, dir: &Path) -> io::Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        for d in missing.into_iter().rev() {
            fs::create_dir(&d)?;
            self.dirs.push(d);
        }
        Ok(())
    }

    /// Write `rel` (relative to the root) through `f`.
    pub fn write<E>(
        &mut self,
        rel: impl AsRef<Path>,
        f: impl FnOnce(&mut dyn Write) -> Result<(), E>,
    ) -> anyhow::Result<PathBuf>
    where
        E: Into<anyhow::Error>,
    {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            self.create_dirs(parent)?;
        }
        let mut tmp = path.clone().into_os_string();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let result = (|| -> anyhow::Result<()> {
            let mut w = BufWriter::new(File::create(&tmp)?);
            f(&mut w).map_err(Into::into)?;
            w.flush()?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        if let Err(e) = fs::rename(&tmp, &path) {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: serde::Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> anyhow::Result<PathBuf> {
        self.write(rel, |w| -> anyhow::Result<()> {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("a/b");
        {
            let mut out = Outputs::new(&root).unwrap();
            out.write_json("c/x.json", &1).unwrap();
            assert!(root.join("c/x.json").exists());
        }
        assert!(!tmp.path().join("a").exists());
    }

    #[test]
    fn committed_outputs_stay() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(tmp.path()).unwrap();
        out.write_json("x.json", &[1, 2]).unwrap();
        assert_eq!(out.commit().len(), 1);
        assert_eq!(
            fs::read_to_string(tmp.path().join("x.json")).unwrap(),
            "[\n  1,\n  2\n]\n"
        );
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(tmp.path()).unwrap();
        let r = out.write("x.txt", |w| {
            w.write_all(b"half")?;
            Err(io::Error::other("boom"))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    }
}
