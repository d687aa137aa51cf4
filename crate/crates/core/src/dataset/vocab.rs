use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved annotation label meaning "no perceptible difference".
pub const SIMILAR: &str = "Similar";

/// The 18 built-in descriptors, most frequent first.
pub const DEFAULT_DESCRIPTORS: [&str; 18] = [
    "Bright",
    "Thin",
    "Coarse",
    "Slim",
    "Low",
    "Pure",
    "Rich",
    "Magnetic",
    "Muddy",
    "Hoarse",
    "Round",
    "Flat",
    "Shrill",
    "Shriveled",
    "Muffled",
    "Soft",
    "Transparent",
    "Husky",
];

pub type DescriptorId = usize;

/// Ordered descriptor vocabulary with contiguous ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct DescriptorVocab {
    descriptors: Vec<String>,
    id_of: HashMap<String, DescriptorId>,
}

impl DescriptorVocab {
    pub fn new<S: AsRef<str>>(descriptors: &[S]) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::Data("descriptor vocabulary is empty".into()));
        }
        let mut id_of = HashMap::with_capacity(descriptors.len());
        let mut out = Vec::with_capacity(descriptors.len());
        for (i, d) in descriptors.iter().enumerate() {
            let d = d.as_ref().trim();
            if d.is_empty() || d.contains(['\t', ',']) {
                return Err(Error::Data(format!("invalid descriptor `{d}`")));
            }
            let key = d.to_lowercase();
            if key == SIMILAR.to_lowercase() {
                return Err(Error::Data(format!("`{SIMILAR}` is reserved")));
            }
            if id_of.insert(key, i).is_some() {
                return Err(Error::Data(format!("duplicate descriptor `{d}`")));
            }
            out.push(d.to_string());
        }
        Ok(Self {
            descriptors: out,
            id_of,
        })
    }

    pub fn builtin() -> Self {
        Self::new(&DEFAULT_DESCRIPTORS).expect("builtin vocabulary is valid")
    }

    /// One descriptor per line; blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let items: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::new(&items)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.descriptors.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Case-insensitive lookup.
    pub fn id(&self, descriptor: &str) -> Option<DescriptorId> {
        self.id_of.get(&descriptor.trim().to_lowercase()).copied()
    }

    pub fn name(&self, id: DescriptorId) -> Option<&str> {
        self.descriptors.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.descriptors
    }

    pub fn check(&self, id: DescriptorId) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "descriptor id {id} out of range (vocabulary size {})",
                self.len()
            )))
        }
    }
}

impl TryFrom<Vec<String>> for DescriptorVocab {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<DescriptorVocab> for Vec<String> {
    fn from(v: DescriptorVocab) -> Self {
        v.descriptors
    }
}
