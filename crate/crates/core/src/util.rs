use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// FNV-1a over 64-bit words; used to fingerprint discrete rendering decisions.
#[derive(Clone, Debug)]
pub struct GateHasher(u64);

impl Default for GateHasher {
    fn default() -> Self {
        GateHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl GateHasher {
    #[inline]
    pub fn write(&mut self, word: u64) {
        for b in word.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}
