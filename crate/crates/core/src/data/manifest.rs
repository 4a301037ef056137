//! Dataset bookkeeping: folder scanning, deterministic train/test splits
//! and the adaptation contract keeping target labels away from training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::fnv1a64;
use crate::types::DomainTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Field of view of the original acquisition; synthetic phantoms carry
/// their own tag. Detected from the id prefix (`3m_`, `6m_`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fov {
    ThreeMm,
    SixMm,
    Synth,
}

impl Fov {
    fn from_id(id: &str) -> Self {
        let lower = id.to_ascii_lowercase();
        if lower.starts_with("3m") {
            Fov::ThreeMm
        } else if lower.starts_with("6m") {
            Fov::SixMm
        } else {
            Fov::Synth
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fov::ThreeMm => "3M",
            Fov::SixMm => "6M",
            Fov::Synth => "SYNTH",
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    id: String,
    image_path: PathBuf,
    label_path: Option<PathBuf>,
    domain: DomainTag,
    fov: Fov,
}

/// A training-visible sample. Target-domain samples never expose a label
/// here, regardless of what exists on disk.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub id: String,
    pub image_path: PathBuf,
    pub label_path: Option<PathBuf>,
}

/// A test-split sample; labels are reached through the evaluation accessor.
#[derive(Clone, Debug)]
pub struct TestEntry {
    pub id: String,
    pub image_path: PathBuf,
}

/// Immutable view of one dataset folder with a deterministic split.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<Entry>,
    split: BTreeMap<String, Split>,
}

fn scan_domain(root: &Path, domain: DomainTag) -> Result<Vec<Entry>> {
    let dir = root.join(domain.as_str());
    let images_dir = dir.join("images");
    if !images_dir.is_dir() {
        return Err(Error::Layout(format!(
            "missing folder {} (expected root/{{source,target}}/images)",
            images_dir.display()
        )));
    }
    let labels_dir = dir.join("labels");
    let mut entries = Vec::new();
    for item in std::fs::read_dir(&images_dir)? {
        let path = item?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Layout(format!("unreadable file name {}", path.display())))?
            .to_string();
        let label = labels_dir.join(format!("{id}.png"));
        let label_path = label.is_file().then_some(label);
        if domain == DomainTag::Source && label_path.is_none() {
            return Err(Error::Label(format!(
                "source image {id} has no label in {}",
                labels_dir.display()
            )));
        }
        let fov = Fov::from_id(&id);
        entries.push(Entry { id, image_path: path, label_path, domain, fov });
    }
    if entries.is_empty() {
        return Err(Error::Layout(format!("no png images under {}", images_dir.display())));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(entries)
}

/// Scans `root/{source,target}/{images,labels}` and assigns a deterministic
/// split with exactly `test_count` test ids per domain.
pub fn load_manifest(root: &Path, split_seed: u64, test_count: usize) -> Result<DatasetManifest> {
    let mut entries = scan_domain(root, DomainTag::Source)?;
    entries.extend(scan_domain(root, DomainTag::Target)?);

    let mut split = BTreeMap::new();
    for domain in [DomainTag::Source, DomainTag::Target] {
        let mut ids: Vec<&str> = entries
            .iter()
            .filter(|e| e.domain == domain)
            .map(|e| e.id.as_str())
            .collect();
        if ids.len() <= test_count {
            return Err(Error::Layout(format!(
                "domain {domain} has {} images, cannot hold out {test_count} for testing",
                ids.len()
            )));
        }
        let mut seed_bytes = split_seed.to_le_bytes().to_vec();
        seed_bytes.extend_from_slice(domain.as_str().as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&seed_bytes));
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            split.insert(
                id.to_string(),
                if i < test_count { Split::Test } else { Split::Train },
            );
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), entries, split })
}

impl DatasetManifest {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, domain: DomainTag, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.domain == domain && self.split[&e.id] == split)
            .count()
    }

    /// Training-facing accessor. Source samples carry their label paths;
    /// target samples never do (the adaptation contract).
    pub fn train_entries(&self, domain: DomainTag) -> Vec<TrainSample> {
        self.entries
            .iter()
            .filter(|e| e.domain == domain && self.split[&e.id] == Split::Train)
            .map(|e| TrainSample {
                id: e.id.clone(),
                image_path: e.image_path.clone(),
                label_path: if domain == DomainTag::Source { e.label_path.clone() } else { None },
            })
            .collect()
    }

    pub fn test_entries(&self, domain: DomainTag) -> Vec<TestEntry> {
        self.entries
            .iter()
            .filter(|e| e.domain == domain && self.split[&e.id] == Split::Test)
            .map(|e| TestEntry { id: e.id.clone(), image_path: e.image_path.clone() })
            .collect()
    }

    /// Evaluation-only label accessor; works for any id with a label file.
    pub fn eval_label_path(&self, id: &str) -> Result<PathBuf> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .and_then(|e| e.label_path.clone())
            .ok_or_else(|| Error::Label(format!("no evaluation label for id {id}")))
    }

    /// Evaluation-only accessor exposing labeled train entries of a domain,
    /// used to fit reference baselines (e.g. a target-trained oracle). Not
    /// part of the adaptation training path.
    pub fn oracle_entries(&self, domain: DomainTag) -> Vec<TrainSample> {
        self.entries
            .iter()
            .filter(|e| e.domain == domain && self.split[&e.id] == Split::Train)
            .map(|e| TrainSample {
                id: e.id.clone(),
                image_path: e.image_path.clone(),
                label_path: e.label_path.clone(),
            })
            .collect()
    }

    /// Plain-text table: one row per entry with id, domain, split, fov and
    /// relative paths.
    pub fn write_table(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = String::from("id\tdomain\tsplit\tfov\timage\tlabel\n");
        for e in &self.entries {
            let rel = |p: &Path| {
                p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned()
            };
            let label = e.label_path.as_deref().map(rel).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.domain,
                self.split[&e.id].as_str(),
                e.fov.as_str(),
                rel(&e.image_path),
                label
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::preprocess::{save_gray, GrayImageF32};

    fn make_tree(n_src: usize, n_tgt: usize, target_labels: bool) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImageF32::constant(8, 8, 0.5);
        for i in 0..n_src {
            save_gray(&dir.path().join(format!("source/images/s{i:03}.png")), &img).unwrap();
            save_gray(&dir.path().join(format!("source/labels/s{i:03}.png")), &img).unwrap();
        }
        for i in 0..n_tgt {
            save_gray(&dir.path().join(format!("target/images/t{i:03}.png")), &img).unwrap();
            if target_labels {
                save_gray(&dir.path().join(format!("target/labels/t{i:03}.png")), &img).unwrap();
            }
        }
        dir
    }

    #[test]
    fn split_counts_match_request() {
        let dir = make_tree(12, 10, true);
        let m = load_manifest(dir.path(), 7, 3).unwrap();
        assert_eq!(m.count(DomainTag::Source, Split::Test), 3);
        assert_eq!(m.count(DomainTag::Source, Split::Train), 9);
        assert_eq!(m.count(DomainTag::Target, Split::Test), 3);
        assert_eq!(m.count(DomainTag::Target, Split::Train), 7);
    }

    #[test]
    fn same_seed_gives_identical_split() {
        let dir = make_tree(10, 10, true);
        let a = load_manifest(dir.path(), 11, 2).unwrap();
        let b = load_manifest(dir.path(), 11, 2).unwrap();
        for e in &a.entries {
            assert_eq!(a.split_of(&e.id), b.split_of(&e.id));
        }
        let c = load_manifest(dir.path(), 12, 2).unwrap();
        let moved = a
            .entries
            .iter()
            .filter(|e| a.split_of(&e.id) != c.split_of(&e.id))
            .count();
        assert!(moved > 0, "different seeds should usually move the split");
    }

    #[test]
    fn empty_folder_is_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("source/images")).unwrap();
        assert!(matches!(load_manifest(dir.path(), 0, 1), Err(Error::Layout(_))));
    }

    #[test]
    fn missing_domain_folder_is_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path(), 0, 1), Err(Error::Layout(_))));
    }

    #[test]
    fn source_without_label_is_label_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImageF32::constant(4, 4, 0.5);
        save_gray(&dir.path().join("source/images/a.png"), &img).unwrap();
        save_gray(&dir.path().join("target/images/b.png"), &img).unwrap();
        assert!(matches!(load_manifest(dir.path(), 0, 0), Err(Error::Label(_))));
    }

    #[test]
    fn oversized_test_count_is_layout_error() {
        let dir = make_tree(4, 4, true);
        assert!(matches!(load_manifest(dir.path(), 0, 4), Err(Error::Layout(_))));
    }

    #[test]
    fn target_train_labels_are_invisible_to_training() {
        let dir = make_tree(6, 6, true);
        let m = load_manifest(dir.path(), 3, 2).unwrap();
        for s in m.train_entries(DomainTag::Target) {
            assert!(s.label_path.is_none(), "target label leaked for {}", s.id);
        }
        // Source training samples keep their labels.
        for s in m.train_entries(DomainTag::Source) {
            assert!(s.label_path.is_some());
        }
        // The evaluation accessor still reaches the files.
        let t = m.test_entries(DomainTag::Target);
        assert!(m.eval_label_path(&t[0].id).is_ok());
        // The oracle accessor exposes target train labels explicitly.
        for s in m.oracle_entries(DomainTag::Target) {
            assert!(s.label_path.is_some());
        }
    }

    #[test]
    fn table_lists_every_entry() {
        let dir = make_tree(3, 2, false);
        let m = load_manifest(dir.path(), 1, 1).unwrap();
        let path = dir.path().join("manifest.txt");
        m.write_table(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.contains("SYNTH"));
        assert!(text.contains("source"));
    }
}
