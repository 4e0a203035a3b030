//! Generator classes and the caption attached to each of them.
//!
//! The builtin registry holds the eleven classes the detector is trained on:
//! five diffusion generators, five GAN generators and one real-image class.
//! Captions are stored lowercase without surrounding quotes.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::records::RecordTable;

/// Prompt prefix some caption styles prepend to every label.
pub const PROMPT_PREFIX: &str = "an image of a";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Diffusion,
    Gan,
    Real,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Diffusion => "diffusion",
            Family::Gan => "gan",
            Family::Real => "real",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diffusion" => Ok(Family::Diffusion),
            "gan" => Ok(Family::Gan),
            "real" => Ok(Family::Real),
            other => Err(Error::InvalidRegistry(format!("unknown family {other:?}"))),
        }
    }
}

/// Binary real/fake decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Fake,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Real => "real",
            Verdict::Fake => "fake",
        })
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "real" => Ok(Verdict::Real),
            "fake" => Ok(Verdict::Fake),
            other => Err(Error::Config(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Unvalidated class description, as found in a registry config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub abbreviation: String,
    pub name: String,
    pub family: Family,
    pub caption: String,
}

impl ClassSpec {
    pub fn new(abbreviation: &str, name: &str, family: Family, caption: &str) -> Self {
        Self {
            abbreviation: abbreviation.to_string(),
            name: name.to_string(),
            family,
            caption: caption.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorClass {
    pub class_id: usize,
    pub name: String,
    pub abbreviation: String,
    pub family: Family,
    pub caption: String,
}

impl GeneratorClass {
    pub fn is_fake(&self) -> bool {
        self.family != Family::Real
    }

    pub fn verdict(&self) -> Verdict {
        if self.is_fake() {
            Verdict::Fake
        } else {
            Verdict::Real
        }
    }
}

/// Ordered, immutable set of generator classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    classes: Vec<GeneratorClass>,
    prompt_prefix: bool,
    by_abbreviation: HashMap<String, usize>,
    by_caption: HashMap<String, usize>,
}

fn normalize_caption(raw: &str) -> String {
    let trimmed = raw
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '\u{201c}' | '\u{201d}'))
        .trim();
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn has_word(caption: &str, word: &str) -> bool {
    caption.split_whitespace().any(|w| w == word)
}

impl Registry {
    /// Validates and indexes `specs`; class ids follow input order.
    pub fn new(specs: Vec<ClassSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidRegistry("no classes".into()));
        }
        let mut classes = Vec::with_capacity(specs.len());
        let mut by_abbreviation = HashMap::new();
        let mut by_caption = HashMap::new();
        for (class_id, spec) in specs.into_iter().enumerate() {
            let abbreviation = spec.abbreviation.trim().to_string();
            if abbreviation.is_empty() || abbreviation.contains(char::is_whitespace) {
                return Err(Error::InvalidRegistry(format!(
                    "class {class_id}: abbreviation {:?} must be a single non-empty word",
                    spec.abbreviation
                )));
            }
            let caption = normalize_caption(&spec.caption);
            if caption.is_empty() {
                return Err(Error::InvalidRegistry(format!("class {abbreviation}: empty caption")));
            }
            let says_real = has_word(&caption, "real");
            if (spec.family == Family::Real) != says_real {
                return Err(Error::InvalidRegistry(format!(
                    "class {abbreviation}: family {} disagrees with caption {caption:?}",
                    spec.family
                )));
            }
            if spec.family != Family::Real && !has_word(&caption, "fake") {
                return Err(Error::InvalidRegistry(format!(
                    "class {abbreviation}: fake caption {caption:?} lacks the word \"fake\""
                )));
            }
            if by_abbreviation.insert(abbreviation.clone(), class_id).is_some() {
                return Err(Error::InvalidRegistry(format!(
                    "duplicate abbreviation {abbreviation:?}"
                )));
            }
            if by_caption.insert(caption.clone(), class_id).is_some() {
                return Err(Error::InvalidRegistry(format!("duplicate caption {caption:?}")));
            }
            classes.push(GeneratorClass {
                class_id,
                name: spec.name.trim().to_string(),
                abbreviation,
                family: spec.family,
                caption,
            });
        }
        let real = classes.iter().filter(|c| c.family == Family::Real).count();
        if real != 1 {
            return Err(Error::InvalidRegistry(format!(
                "expected exactly one real class, found {real}"
            )));
        }
        Ok(Self {
            classes,
            prompt_prefix: false,
            by_abbreviation,
            by_caption,
        })
    }

    /// Enables or disables the `"an image of a"` prompt prefix.
    pub fn with_prompt_prefix(mut self, enabled: bool) -> Self {
        self.prompt_prefix = enabled;
        self
    }

    pub fn prompt_prefix(&self) -> bool {
        self.prompt_prefix
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[GeneratorClass] {
        &self.classes
    }

    pub fn get(&self, class_id: usize) -> Result<&GeneratorClass> {
        self.classes.get(class_id).ok_or(Error::UnknownClassId(class_id))
    }

    pub fn caption_for(&self, class_id: usize) -> Result<&str> {
        Ok(&self.get(class_id)?.caption)
    }

    /// Text fed to the text encoder for `class_id`.
    pub fn prompt_for(&self, class_id: usize) -> Result<String> {
        let caption = self.caption_for(class_id)?;
        Ok(if self.prompt_prefix {
            format!("{PROMPT_PREFIX} {caption}")
        } else {
            caption.to_string()
        })
    }

    pub fn prompts(&self) -> Vec<String> {
        (0..self.len())
            .map(|id| self.prompt_for(id).expect("id in range"))
            .collect()
    }

    pub fn is_fake(&self, class_id: usize) -> Result<bool> {
        Ok(self.get(class_id)?.is_fake())
    }

    pub fn verdict(&self, class_id: usize) -> Result<Verdict> {
        Ok(self.get(class_id)?.verdict())
    }

    pub fn by_abbreviation(&self, abbreviation: &str) -> Result<&GeneratorClass> {
        self.by_abbreviation
            .get(abbreviation)
            .map(|&id| &self.classes[id])
            .ok_or_else(|| Error::UnknownClass(abbreviation.to_string()))
    }

    pub fn by_caption(&self, caption: &str) -> Result<&GeneratorClass> {
        self.by_caption
            .get(&normalize_caption(caption))
            .map(|&id| &self.classes[id])
            .ok_or_else(|| Error::UnknownClass(caption.to_string()))
    }

    pub fn real_class(&self) -> &GeneratorClass {
        self.classes
            .iter()
            .find(|c| c.family == Family::Real)
            .expect("validated registry has a real class")
    }

    pub fn specs(&self) -> Vec<ClassSpec> {
        self.classes
            .iter()
            .map(|c| ClassSpec {
                abbreviation: c.abbreviation.clone(),
                name: c.name.clone(),
                family: c.family,
                caption: c.caption.clone(),
            })
            .collect()
    }

    /// Hex SHA-256 over the class order, families and prompts.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (class, prompt) in self.classes.iter().zip(self.prompts()) {
            hasher.update(class.abbreviation.as_bytes());
            hasher.update(b"\t");
            hasher.update(class.family.to_string().as_bytes());
            hasher.update(b"\t");
            hasher.update(prompt.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_table(&self) -> RecordTable {
        let mut table = RecordTable::new(&["abbreviation", "name", "family", "caption"]);
        for c in &self.classes {
            table.push(vec![
                c.abbreviation.clone(),
                c.name.clone(),
                c.family.to_string(),
                c.caption.clone(),
            ]);
        }
        table
    }

    pub fn from_table(table: &RecordTable, source: &Path) -> Result<Self> {
        let abbreviation = table.column("abbreviation", source)?;
        let name = table.column("name", source)?;
        let family = table.column("family", source)?;
        let caption = table.column("caption", source)?;
        let mut specs = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let fam = row.fields[family]
                .parse::<Family>()
                .map_err(|e| Error::parse(source, row.line, e.to_string()))?;
            specs.push(ClassSpec {
                abbreviation: row.fields[abbreviation].clone(),
                name: row.fields[name].clone(),
                family: fam,
                caption: row.fields[caption].clone(),
            });
        }
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&RecordTable::read_path(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().write_path(path)
    }
}

/// The eleven generator classes with their captions.
pub fn builtin_registry() -> Registry {
    use Family::*;
    let specs = vec![
        ClassSpec::new(
            "ADM",
            "Ablated Diffusion",
            Diffusion,
            "\"a fake image from ablated diffusion\"",
        ),
        ClassSpec::new(
            "DDPM",
            "Probabilistic Denoising Diffusion",
            Diffusion,
            "\"a fake image from denoising diffusion\"",
        ),
        ClassSpec::new(
            "PNDM",
            "Pseudo Numerical Diffusion",
            Diffusion,
            "\"a fake image from psuedo numerical diffusion\"",
        ),
        ClassSpec::new(
            "IDDPM",
            "Improved Probabilistic Denoising Diffusion",
            Diffusion,
            "\"a fake image from improved denoising diffusion\"",
        ),
        ClassSpec::new(
            "LDM",
            "Latent Diffusion",
            Diffusion,
            "\"a fake image from latent diffusion\"",
        ),
        ClassSpec::new(
            "PjG",
            "ProjectedGAN",
            Gan,
            "\"a fake image from original ProjectedGAN\"",
        ),
        ClassSpec::new("SG", "StyleGAN", Gan, "\"a fake image from original StyleGan\""),
        ClassSpec::new("PG", "ProGAN", Gan, "a fake image from ProGAN"),
        ClassSpec::new(
            "DPjG",
            "Diff-ProjectedGAN",
            Gan,
            "\"a fake image from Diff-ProjectedGAN\"",
        ),
        ClassSpec::new("DSG", "Diff-StyleGAN2", Gan, "\"a fake image from Diff-StyleGAN2\""),
        ClassSpec::new("Real", "Real Image", Real, "\"a real image with no alterations\""),
    ];
    Registry::new(specs).expect("builtin registry is valid")
}
