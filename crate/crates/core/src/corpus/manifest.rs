use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "#apdraw-manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Photo,
    Drawing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleTag {
    Style1,
    Style2,
    Style3,
    Untagged,
}

impl StyleTag {
    pub const TAGGED: [StyleTag; 3] = [StyleTag::Style1, StyleTag::Style2, StyleTag::Style3];

    /// Index into a style vector, `None` for untagged drawings.
    pub fn index(self) -> Option<usize> {
        match self {
            StyleTag::Style1 => Some(0),
            StyleTag::Style2 => Some(1),
            StyleTag::Style3 => Some(2),
            StyleTag::Untagged => None,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::TAGGED.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StyleTag::Style1 => "style1",
            StyleTag::Style2 => "style2",
            StyleTag::Style3 => "style3",
            StyleTag::Untagged => "untagged",
        }
    }
}

impl fmt::Display for StyleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StyleTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "style1" => Ok(StyleTag::Style1),
            "style2" => Ok(StyleTag::Style2),
            "style3" => Ok(StyleTag::Style3),
            "untagged" => Ok(StyleTag::Untagged),
            other => Err(format!("unknown style tag `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthesized,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub kind: ImageKind,
    pub style_tag: Option<StyleTag>,
    pub origin: Origin,
}

impl ImageRecord {
    pub fn photo(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            kind: ImageKind::Photo,
            style_tag: None,
            origin: Origin::Real,
        }
    }

    pub fn drawing(id: impl Into<String>, path: impl Into<PathBuf>, tag: StyleTag) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            kind: ImageKind::Drawing,
            style_tag: Some(tag),
            origin: Origin::Real,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match self.kind {
            ImageKind::Photo if self.style_tag.is_some() => {
                Err("photos cannot carry a style tag".into())
            }
            ImageKind::Photo if self.origin == Origin::Synthesized => {
                Err("only drawings may be synthesized".into())
            }
            ImageKind::Drawing if self.style_tag.is_none() => {
                Err("drawings need a style tag (use `untagged`)".into())
            }
            _ => Ok(()),
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.id,
            self.path.display(),
            match self.kind {
                ImageKind::Photo => "photo",
                ImageKind::Drawing => "drawing",
            },
            self.style_tag.map(StyleTag::as_str).unwrap_or("-"),
            match self.origin {
                Origin::Real => "real",
                Origin::Synthesized => "synthesized",
            }
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ManifestCounts {
    pub photos: usize,
    pub drawings: usize,
    pub by_tag: BTreeMap<StyleTag, usize>,
}

/// An ordered list of records with unique ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ImageRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.check()
                .map_err(|m| Error::Validation(format!("record `{}`: {m}", r.id)))?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id `{}`", r.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn photos(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.kind == ImageKind::Photo)
    }

    pub fn drawings(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.kind == ImageKind::Drawing)
    }

    pub fn counts(&self) -> ManifestCounts {
        let mut c = ManifestCounts::default();
        for r in &self.records {
            match r.kind {
                ImageKind::Photo => c.photos += 1,
                ImageKind::Drawing => {
                    c.drawings += 1;
                    if let Some(tag) = r.style_tag {
                        *c.by_tag.entry(tag).or_default() += 1;
                    }
                }
            }
        }
        c
    }

    /// Parses manifest text. Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, source: &Path, base_dir: Option<&Path>) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            Some((_, h)) => {
                return Err(err(1, format!("expected header `{MANIFEST_HEADER}`, found `{h}`")))
            }
            None => return Err(err(1, "missing manifest header".into())),
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(
                    lineno,
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            let kind = match fields[2] {
                "photo" => ImageKind::Photo,
                "drawing" => ImageKind::Drawing,
                other => return Err(err(lineno, format!("unknown kind `{other}`"))),
            };
            let style_tag = match fields[3] {
                "-" | "" => None,
                t => Some(t.parse::<StyleTag>().map_err(|m| err(lineno, m))?),
            };
            let origin = match fields[4] {
                "real" => Origin::Real,
                "synthesized" => Origin::Synthesized,
                other => return Err(err(lineno, format!("unknown origin `{other}`"))),
            };
            let mut path = PathBuf::from(fields[1]);
            if let Some(base) = base_dir {
                if path.is_relative() {
                    path = base.join(path);
                }
            }
            let record = ImageRecord {
                id: fields[0].to_string(),
                path,
                kind,
                style_tag,
                origin,
            };
            if record.id.is_empty() {
                return Err(err(lineno, "empty id".into()));
            }
            record.check().map_err(|m| err(lineno, m))?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: duplicate id `{}`",
                    source.display(),
                    record.id
                )));
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a manifest file; relative image paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text, path, path.parent())
}
