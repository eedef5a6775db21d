//! Dataset manifests: loading, validation, split handling and
//! MOS-distribution-matched subsampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 5.0;

/// Column order of the labeled manifest table.
pub const MANIFEST_HEADER: [&str; 7] = [
    "utterance_id",
    "audio_path",
    "system_id",
    "system_type",
    "mos",
    "split",
    "num_raters",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SystemType {
    Bc,
    Espnet,
    Vcc,
    Natural,
    Other,
}

impl SystemType {
    pub const ALL: [SystemType; 5] = [
        SystemType::Bc,
        SystemType::Espnet,
        SystemType::Vcc,
        SystemType::Natural,
        SystemType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemType::Bc => "BC",
            SystemType::Espnet => "ESPNET",
            SystemType::Vcc => "VCC",
            SystemType::Natural => "NATURAL",
            SystemType::Other => "OTHER",
        }
    }

    /// Text-to-speech sources.
    pub fn tts() -> HashSet<SystemType> {
        [SystemType::Bc, SystemType::Espnet].into_iter().collect()
    }

    /// Voice-conversion sources.
    pub fn vc() -> HashSet<SystemType> {
        [SystemType::Vcc].into_iter().collect()
    }
}

impl fmt::Display for SystemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SystemType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown system_type `{s}` (expected BC, ESPNET, VCC, NATURAL or OTHER)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown split `{s}` (expected TRAIN, VAL or TEST)"))
    }
}

/// One labeled audio sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub system_id: String,
    pub system_type: SystemType,
    pub mos: f64,
    pub split: Split,
    pub num_raters: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub utterances: Vec<Utterance>,
    pub label_scale_note: String,
    /// Set when a filter produced an empty subset; such manifests are legal
    /// but consumers may want to report them.
    pub empty_subset: bool,
}

impl Manifest {
    /// Builds a validated manifest. Rejects empty input, out-of-range MOS
    /// and duplicate ids.
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let name = name.into();
        if utterances.is_empty() {
            return Err(Error::EmptyManifest(name));
        }
        let mut seen = HashSet::new();
        for (i, u) in utterances.iter().enumerate() {
            validate_mos(&name, i + 1, u.mos)?;
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(Error::Validation {
                    path: name.clone(),
                    row: i + 1,
                    field: "utterance_id".into(),
                    message: format!("duplicate utterance_id `{}`", u.utterance_id),
                });
            }
        }
        Ok(Self {
            name,
            utterances,
            label_scale_note: String::new(),
            empty_subset: false,
        })
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.label_scale_note = note.into();
        self
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, utterance_id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.utterance_id == utterance_id)
    }

    /// Index from utterance id to row.
    pub fn index(&self) -> BTreeMap<&str, &Utterance> {
        self.utterances
            .iter()
            .map(|u| (u.utterance_id.as_str(), u))
            .collect()
    }

    /// Rows of one split. Errors if the split is absent.
    pub fn split(&self, split: Split) -> Result<Manifest> {
        let utterances: Vec<_> = self
            .utterances
            .iter()
            .filter(|u| u.split == split)
            .cloned()
            .collect();
        if utterances.is_empty() {
            return Err(Error::MissingSplit {
                manifest: self.name.clone(),
                split: split.to_string(),
            });
        }
        Ok(Manifest {
            name: format!("{}:{}", self.name, split),
            utterances,
            label_scale_note: self.label_scale_note.clone(),
            empty_subset: false,
        })
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for u in &self.utterances {
            *counts.entry(u.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn mos_values(&self) -> Vec<f64> {
        self.utterances.iter().map(|u| u.mos).collect()
    }

    /// Writes the manifest in the canonical table format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        for u in &self.utterances {
            w.write_record([
                u.utterance_id.as_str(),
                &u.audio_path.to_string_lossy(),
                u.system_id.as_str(),
                u.system_type.as_str(),
                &u.mos.to_string(),
                u.split.as_str(),
                &u.num_raters.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

fn validate_mos(path: &str, row: usize, mos: f64) -> Result<()> {
    if !(MOS_MIN..=MOS_MAX).contains(&mos) {
        return Err(Error::Validation {
            path: path.to_string(),
            row,
            field: "mos".into(),
            message: format!("MOS {mos} outside [1, 5]"),
        });
    }
    Ok(())
}

/// Audio files without labels, used for autoencoder pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledManifest {
    pub name: String,
    pub audio_paths: Vec<PathBuf>,
}

impl UnlabeledManifest {
    pub fn new(name: impl Into<String>, audio_paths: Vec<PathBuf>) -> Result<Self> {
        let name = name.into();
        if audio_paths.is_empty() {
            return Err(Error::EmptyManifest(name));
        }
        Ok(Self { name, audio_paths })
    }
}

fn resolve(base: Option<&Path>, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

/// Loads and validates a labeled manifest. Relative audio paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let label = path.display().to_string();
    let base = path.parent();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut column = BTreeMap::new();
    for name in MANIFEST_HEADER {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| Error::Validation {
            path: label.clone(),
            row: 0,
            field: name.into(),
            message: "missing column".into(),
        })?;
        column.insert(name, idx);
    }

    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |name: &str| record.get(column[name]).unwrap_or("");
        let invalid = |name: &str, message: String| Error::Validation {
            path: label.clone(),
            row,
            field: name.into(),
            message,
        };

        let utterance_id = field("utterance_id").to_string();
        if utterance_id.is_empty() {
            return Err(invalid("utterance_id", "empty utterance_id".into()));
        }
        if !seen.insert(utterance_id.clone()) {
            return Err(invalid(
                "utterance_id",
                format!("duplicate utterance_id `{utterance_id}`"),
            ));
        }
        let system_type = field("system_type")
            .parse::<SystemType>()
            .map_err(|m| invalid("system_type", m))?;
        let split = field("split").parse::<Split>().map_err(|m| invalid("split", m))?;
        let mos = field("mos")
            .parse::<f64>()
            .map_err(|e| invalid("mos", format!("not a number: {e}")))?;
        validate_mos(&label, row, mos)?;
        let num_raters = match field("num_raters") {
            "" => None,
            s => match s.parse::<u32>() {
                Ok(n) if n > 0 => Some(n),
                _ => return Err(invalid("num_raters", format!("`{s}` is not a positive integer"))),
            },
        };
        utterances.push(Utterance {
            utterance_id,
            audio_path: resolve(base, field("audio_path")),
            system_id: field("system_id").to_string(),
            system_type,
            mos,
            split,
            num_raters,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| label.clone());
    if utterances.is_empty() {
        return Err(Error::EmptyManifest(name));
    }
    Ok(Manifest {
        name,
        utterances,
        label_scale_note: String::new(),
        empty_subset: false,
    })
}

pub fn load_unlabeled_manifest(path: &Path) -> Result<UnlabeledManifest> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let label = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let idx = reader
        .headers()?
        .iter()
        .position(|h| h == "audio_path")
        .ok_or_else(|| Error::Validation {
            path: label.clone(),
            row: 0,
            field: "audio_path".into(),
            message: "missing column".into(),
        })?;
    let mut paths = Vec::new();
    for record in reader.records() {
        let record = record?;
        paths.push(resolve(path.parent(), record.get(idx).unwrap_or("")));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(label);
    UnlabeledManifest::new(name, paths)
}

/// Index of the MOS histogram bin for `mos`, with bins of `bin_width`
/// starting at 1.0. MOS = 5 falls into the last bin.
pub fn mos_bin(mos: f64, bin_width: f64) -> usize {
    let n_bins = mos_bin_count(bin_width);
    let b = ((mos - MOS_MIN) / bin_width).floor();
    (b.max(0.0) as usize).min(n_bins - 1)
}

pub fn mos_bin_count(bin_width: f64) -> usize {
    (((MOS_MAX - MOS_MIN) / bin_width) - 1e-9).ceil().max(1.0) as usize
}

/// Largest-remainder apportionment of `target` seats over `populations`,
/// capped at each population. Returns the allocation and whether any cap
/// was hit.
pub fn largest_remainder(populations: &[usize], target: usize) -> (Vec<usize>, bool) {
    let total: usize = populations.iter().sum();
    let mut alloc = vec![0usize; populations.len()];
    if total == 0 || target == 0 {
        return (alloc, false);
    }
    let mut remainders = Vec::with_capacity(populations.len());
    for (i, &n) in populations.iter().enumerate() {
        let num = target as u128 * n as u128;
        alloc[i] = (num / total as u128) as usize;
        remainders.push((num % total as u128, i));
    }
    let mut left = target - alloc.iter().sum::<usize>();
    // Largest fractional remainder first, ties to the lower bin index.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }

    let mut capped = false;
    loop {
        let mut overflow = 0;
        for (a, &n) in alloc.iter_mut().zip(populations) {
            if *a > n {
                overflow += *a - n;
                *a = n;
                capped = true;
            }
        }
        if overflow == 0 {
            break;
        }
        // Hand the excess to bins with spare room, largest remainder first.
        for &(_, i) in remainders.iter().cycle().take(populations.len() * overflow.max(1)) {
            if overflow == 0 {
                break;
            }
            if alloc[i] < populations[i] {
                alloc[i] += 1;
                overflow -= 1;
            }
        }
    }
    (alloc, capped)
}

#[derive(Debug, Clone)]
pub struct SubsampleResult {
    pub manifest: Manifest,
    pub bin_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Draws exactly `target_size` utterances without replacement so that the
/// per-bin MOS proportions follow the source under largest-remainder
/// allocation. Row order of the source is preserved in the result.
pub fn subsample_matched(
    manifest: &Manifest,
    target_size: usize,
    bin_width: f64,
    seed: u64,
) -> Result<SubsampleResult> {
    if target_size == 0 {
        return Err(Error::InvalidArgument("target_size must be positive".into()));
    }
    if target_size > manifest.len() {
        return Err(Error::InvalidArgument(format!(
            "target_size {target_size} exceeds population {}",
            manifest.len()
        )));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!("bin_width must be positive, got {bin_width}")));
    }

    let n_bins = mos_bin_count(bin_width);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, u) in manifest.utterances.iter().enumerate() {
        members[mos_bin(u.mos, bin_width)].push(i);
    }
    let populations: Vec<usize> = members.iter().map(Vec::len).collect();
    let (alloc, capped) = largest_remainder(&populations, target_size);
    let mut warnings = Vec::new();
    if capped {
        warnings.push("a bin allocation exceeded its population; whole bin taken and remainder reallocated".to_string());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(target_size);
    for (bin, &k) in members.iter().zip(&alloc) {
        for pos in index::sample(&mut rng, bin.len(), k) {
            chosen.push(bin[pos]);
        }
    }
    chosen.sort_unstable();
    let utterances = chosen
        .into_iter()
        .map(|i| manifest.utterances[i].clone())
        .collect();
    Ok(SubsampleResult {
        manifest: Manifest {
            name: format!("{}:matched{}", manifest.name, target_size),
            utterances,
            label_scale_note: manifest.label_scale_note.clone(),
            empty_subset: false,
        },
        bin_counts: alloc,
        warnings,
    })
}

/// Keeps rows whose system type is in `types`. An empty result is returned
/// with `empty_subset` set.
pub fn filter_by_system_type(manifest: &Manifest, types: &HashSet<SystemType>) -> Result<Manifest> {
    if types.is_empty() {
        return Err(Error::InvalidArgument("system type set must be non-empty".into()));
    }
    let utterances: Vec<_> = manifest
        .utterances
        .iter()
        .filter(|u| types.contains(&u.system_type))
        .cloned()
        .collect();
    let mut names: Vec<_> = types.iter().map(|t| t.as_str()).collect();
    names.sort_unstable();
    Ok(Manifest {
        name: format!("{}:{}", manifest.name, names.join("+")),
        empty_subset: utterances.is_empty(),
        utterances,
        label_scale_note: manifest.label_scale_note.clone(),
    })
}
