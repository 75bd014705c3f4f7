//! Report and CSV emission with atomic file replacement.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use conjlab_core::regularity::fmt17;
use serde::Serialize;

use crate::Failure;

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Files produced by one command, written together at the end.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        self.add(name, text + "\n");
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_str())
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        self.files
            .iter()
            .map(|(name, text)| {
                let p = dir.join(name);
                write_atomic(&p, text.as_bytes())
                    .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display())))?;
                Ok(p)
            })
            .collect()
    }
}

/// CSV builder with 17-significant-digit numbers.
pub struct Csv {
    text: String,
}

pub enum Cell<'a> {
    Num(f64),
    Int(usize),
    Text(&'a str),
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        Self {
            text: header.join(",") + "\n",
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        let parts: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::Num(v) => fmt17(*v),
                Cell::Int(n) => n.to_string(),
                Cell::Text(s) => s.to_string(),
            })
            .collect();
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// `prefix_0, ..., prefix_{n-1}`.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = std::env::temp_dir().join(format!("conjlab-out-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_numbers_round_trip() {
        let mut c = Csv::new(&["x".into(), "n".into()]);
        c.row(&[Cell::Num(0.1 + 0.2), Cell::Int(3)]);
        let text = c.finish();
        let field = text.lines().nth(1).unwrap().split(',').next().unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), 0.1 + 0.2);
    }
}
