//! CSV ingestion and emission for study corpora.
//!
//! Three manifests describe a study: `trials.csv`, `responses.csv`, and
//! `masks.csv`. Relative paths inside a manifest resolve against that
//! manifest's directory. Loading is strict — unknown headers, bad enums,
//! or inconsistent dimensions are errors, never repaired — and the loaded
//! corpus is canonically ordered, so row permutations load identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use xlab_core::study::{MaskRecord, ResponseRecord, StudyError, TrialSpec};
use xlab_core::{ClassRole, Condition, FloatGrid, StudyCorpus};

use crate::fgrid::{self, FgridError};

pub const TRIALS_HEADER: [&str; 5] = [
    "trial_id",
    "image_path",
    "truth_class",
    "foil_class",
    "ai_class",
];
pub const RESPONSES_HEADER: [&str; 5] = [
    "participant_id",
    "trial_id",
    "condition",
    "choice",
    "rt_seconds",
];
pub const MASKS_HEADER: [&str; 4] = ["participant_id", "trial_id", "target", "mask_path"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:1: header mismatch: expected {expected:?}, found {found:?}")]
    Header {
        path: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}:{line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Grid(#[from] FgridError),
    #[error("invalid corpus: {0}")]
    Study(#[from] StudyError),
    #[error("trial {trial_id}: image is {image_w}x{image_h} but mask from participant {participant_id} is {mask_w}x{mask_h}")]
    MaskImageMismatch {
        trial_id: String,
        participant_id: String,
        image_w: usize,
        image_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
}

fn open_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<fs::File>, CorpusError> {
    let shown = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|source| CorpusError::Csv {
            path: shown.clone(),
            source,
        })?
        .clone();
    if headers.iter().ne(expected.iter().copied()) {
        return Err(CorpusError::Header {
            path: shown,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: headers.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(reader)
}

fn row_err(path: &Path, record: &csv::StringRecord, message: String) -> CorpusError {
    CorpusError::Row {
        path: path.display().to_string(),
        line: record.position().map_or(0, |p| p.line()),
        message,
    }
}

fn read_rows(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>, CorpusError> {
    let mut reader = open_reader(path, expected)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(|source| CorpusError::Csv {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(rows)
}

/// Loads `trials.csv`. `image_path` entries are kept verbatim; resolve them
/// with [`resolve_relative`] against the manifest's directory.
pub fn load_trials(path: &Path) -> Result<Vec<TrialSpec>, CorpusError> {
    let mut out = Vec::new();
    for record in read_rows(path, &TRIALS_HEADER)? {
        let ai = record[4].to_string();
        let ai_class = ClassRole::parse(&ai)
            .ok_or_else(|| row_err(path, &record, format!("ai_class must be truth or foil, got {ai:?}")))?;
        out.push(TrialSpec {
            trial_id: record[0].to_string(),
            image_path: record[1].to_string(),
            truth_class: record[2].to_string(),
            foil_class: record[3].to_string(),
            ai_class,
        });
    }
    Ok(out)
}

/// Loads `responses.csv` rows in file order.
pub fn load_responses(path: &Path) -> Result<Vec<ResponseRecord>, CorpusError> {
    let mut out = Vec::new();
    for record in read_rows(path, &RESPONSES_HEADER)? {
        let condition = Condition::parse(&record[2]).ok_or_else(|| {
            row_err(
                path,
                &record,
                format!("condition must be control or explanation, got {:?}", &record[2]),
            )
        })?;
        let choice = ClassRole::parse(&record[3]).ok_or_else(|| {
            row_err(path, &record, format!("choice must be truth or foil, got {:?}", &record[3]))
        })?;
        let rt_seconds: f64 = record[4].parse().map_err(|_| {
            row_err(path, &record, format!("rt_seconds must be a number, got {:?}", &record[4]))
        })?;
        if !rt_seconds.is_finite() || rt_seconds < 0.0 {
            return Err(row_err(
                path,
                &record,
                format!("rt_seconds must be finite and >= 0, got {rt_seconds}"),
            ));
        }
        out.push(ResponseRecord {
            participant_id: record[0].to_string(),
            trial_id: record[1].to_string(),
            condition,
            choice,
            rt_seconds,
        });
    }
    Ok(out)
}

/// Resolves a manifest-relative path.
pub fn resolve_relative(manifest: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads `masks.csv` and every mask grid it references.
pub fn load_masks(path: &Path) -> Result<Vec<MaskRecord>, CorpusError> {
    let mut out = Vec::new();
    for record in read_rows(path, &MASKS_HEADER)? {
        let target = ClassRole::parse(&record[2]).ok_or_else(|| {
            row_err(path, &record, format!("target must be truth or foil, got {:?}", &record[2]))
        })?;
        let mask = fgrid::read_grid(resolve_relative(path, &record[3]))?;
        out.push(MaskRecord {
            participant_id: record[0].to_string(),
            trial_id: record[1].to_string(),
            target,
            mask,
        });
    }
    Ok(out)
}

/// A corpus together with the trial images its manifests reference.
#[derive(Debug, Clone)]
pub struct LoadedStudy {
    pub corpus: StudyCorpus,
    /// trial_id → image grid, loaded from `image_path`.
    pub images: BTreeMap<String, FloatGrid>,
}

/// Loads and cross-validates a full study: every response and mask must
/// reference a known trial, keys must be unique, and each mask must match
/// its trial image's spatial dimensions.
pub fn load_study(
    trials_path: &Path,
    responses_path: &Path,
    masks_path: &Path,
) -> Result<LoadedStudy, CorpusError> {
    let trials = load_trials(trials_path)?;
    let responses = load_responses(responses_path)?;
    let masks = load_masks(masks_path)?;

    let mut images = BTreeMap::new();
    for trial in &trials {
        let image = fgrid::read_grid(resolve_relative(trials_path, &trial.image_path))?;
        images.insert(trial.trial_id.clone(), image);
    }

    let corpus = StudyCorpus::new(trials, responses, masks)?;

    for m in corpus.masks() {
        let image = &images[&m.trial_id];
        if (m.mask.width(), m.mask.height()) != (image.width(), image.height()) {
            return Err(CorpusError::MaskImageMismatch {
                trial_id: m.trial_id.clone(),
                participant_id: m.participant_id.clone(),
                image_w: image.width(),
                image_h: image.height(),
                mask_w: m.mask.width(),
                mask_h: m.mask.height(),
            });
        }
    }
    Ok(LoadedStudy { corpus, images })
}

/// Conventional corpus directory layout used by the generator and the CLI.
pub struct CorpusLayout {
    pub root: PathBuf,
}

impl CorpusLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn trials_csv(&self) -> PathBuf {
        self.root.join("trials.csv")
    }

    pub fn responses_csv(&self) -> PathBuf {
        self.root.join("responses.csv")
    }

    pub fn masks_csv(&self) -> PathBuf {
        self.root.join("masks.csv")
    }

    pub fn image_entry(trial_id: &str) -> String {
        format!("images/{trial_id}.fgrid")
    }

    pub fn mask_entry(participant_id: &str, trial_id: &str, target: ClassRole) -> String {
        format!("masks/{participant_id}/{trial_id}.{}.fgrid", target.as_str())
    }

    pub fn saliency_path(&self, trial_id: &str, role: ClassRole) -> PathBuf {
        self.root
            .join("saliency")
            .join(format!("{trial_id}.{}.fgrid", role.as_str()))
    }

    pub fn template_path(&self, class: &str) -> PathBuf {
        self.root.join("templates").join(format!("{class}.fgrid"))
    }

    pub fn ground_truth_json(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn empirical_exact_csv(&self) -> PathBuf {
        self.root.join("empirical_exact.csv")
    }

    /// Loads the corpus via the conventional manifest names.
    pub fn load(&self) -> Result<LoadedStudy, CorpusError> {
        load_study(&self.trials_csv(), &self.responses_csv(), &self.masks_csv())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes `trials.csv` in trial order.
pub fn write_trials(trials: &[TrialSpec], path: &Path) -> Result<(), CorpusError> {
    let mut out = TRIALS_HEADER.join(",") + "\n";
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.trial_id,
            t.image_path,
            t.truth_class,
            t.foil_class,
            t.ai_class.as_str()
        ));
    }
    write_file(path, &out)
}

pub fn write_responses(responses: &[ResponseRecord], path: &Path) -> Result<(), CorpusError> {
    let mut out = RESPONSES_HEADER.join(",") + "\n";
    for r in responses {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.participant_id,
            r.trial_id,
            r.condition.as_str(),
            r.choice.as_str(),
            r.rt_seconds
        ));
    }
    write_file(path, &out)
}

/// Writes every mask grid under `masks/` plus the `masks.csv` manifest.
pub fn write_masks(masks: &[MaskRecord], manifest_path: &Path) -> Result<(), CorpusError> {
    let mut out = MASKS_HEADER.join(",") + "\n";
    for m in masks {
        let entry = CorpusLayout::mask_entry(&m.participant_id, &m.trial_id, m.target);
        let full = resolve_relative(manifest_path, &entry);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fgrid::write_grid(&m.mask, &full)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.participant_id,
            m.trial_id,
            m.target.as_str(),
            entry
        ));
    }
    write_file(manifest_path, &out)
}

/// Writes a `trial_id,value,n` proportion table (full float precision).
pub fn write_proportions(
    table: &BTreeMap<String, (f64, usize)>,
    path: &Path,
) -> Result<(), CorpusError> {
    let mut out = String::from("trial_id,value,n\n");
    for (trial_id, (value, n)) in table {
        out.push_str(&format!("{trial_id},{value},{n}\n"));
    }
    write_file(path, &out)
}

/// Reads a `trial_id,value,n` proportion table.
pub fn load_proportions(path: &Path) -> Result<BTreeMap<String, (f64, usize)>, CorpusError> {
    let mut out = BTreeMap::new();
    for record in read_rows(path, &["trial_id", "value", "n"])? {
        let value: f64 = record[1]
            .parse()
            .map_err(|_| row_err(path, &record, format!("value must be a number, got {:?}", &record[1])))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(row_err(path, &record, format!("value must lie in [0,1], got {value}")));
        }
        let n: usize = record[2]
            .parse()
            .map_err(|_| row_err(path, &record, format!("n must be an integer, got {:?}", &record[2])))?;
        if out.insert(record[0].to_string(), (value, n)).is_some() {
            return Err(row_err(path, &record, format!("duplicate trial_id {:?}", &record[0])));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use xlab_core::grid::FloatGrid;

    fn write_minimal_corpus(root: &Path) {
        let layout = CorpusLayout::new(root);
        fs::create_dir_all(root.join("images")).unwrap();
        let image = FloatGrid::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        fgrid::write_grid(&image, root.join("images/t0.fgrid")).unwrap();
        fs::write(
            layout.trials_csv(),
            "trial_id,image_path,truth_class,foil_class,ai_class\nt0,images/t0.fgrid,cat,dog,truth\n",
        )
        .unwrap();
        fs::write(
            layout.responses_csv(),
            "participant_id,trial_id,condition,choice,rt_seconds\np0,t0,control,truth,2.5\np1,t0,explanation,foil,3\n",
        )
        .unwrap();
        let mask = FloatGrid::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let mask_entry = CorpusLayout::mask_entry("p0", "t0", ClassRole::Truth);
        let mask_path = root.join(&mask_entry);
        fs::create_dir_all(mask_path.parent().unwrap()).unwrap();
        fgrid::write_grid(&mask, &mask_path).unwrap();
        fs::write(
            layout.masks_csv(),
            format!("participant_id,trial_id,target,mask_path\np0,t0,truth,{mask_entry}\n"),
        )
        .unwrap();
    }

    #[test]
    fn loads_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let loaded = CorpusLayout::new(dir.path()).load().unwrap();
        assert_eq!(loaded.corpus.trials().len(), 1);
        assert_eq!(loaded.corpus.responses().len(), 2);
        assert_eq!(loaded.corpus.masks().len(), 1);
        assert_eq!(loaded.images["t0"].width(), 2);
    }

    #[test]
    fn permuted_rows_load_identically() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let layout = CorpusLayout::new(dir.path());
        let first = layout.load().unwrap();
        fs::write(
            layout.responses_csv(),
            "participant_id,trial_id,condition,choice,rt_seconds\np1,t0,explanation,foil,3\np0,t0,control,truth,2.5\n",
        )
        .unwrap();
        let second = layout.load().unwrap();
        assert_eq!(first.corpus, second.corpus);
    }

    #[test]
    fn unknown_trial_in_response_errors_by_id() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let layout = CorpusLayout::new(dir.path());
        fs::write(
            layout.responses_csv(),
            "participant_id,trial_id,condition,choice,rt_seconds\np0,tX,control,truth,2.5\n",
        )
        .unwrap();
        let err = layout.load().unwrap_err().to_string();
        assert!(err.contains("tX"), "{err}");
    }

    #[test]
    fn bad_enum_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let layout = CorpusLayout::new(dir.path());
        fs::write(
            layout.responses_csv(),
            "participant_id,trial_id,condition,choice,rt_seconds\np0,t0,control,truth,2.5\np0,t0,maybe,truth,2.5\n",
        )
        .unwrap();
        match layout.load().unwrap_err() {
            CorpusError::Row { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("maybe"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn header_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let layout = CorpusLayout::new(dir.path());
        fs::write(layout.trials_csv(), "id,image,truth,foil,ai\n").unwrap();
        assert!(matches!(
            layout.load().unwrap_err(),
            CorpusError::Header { .. }
        ));
    }

    #[test]
    fn mask_image_dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let mask_path = dir.path().join(CorpusLayout::mask_entry("p0", "t0", ClassRole::Truth));
        let wrong = FloatGrid::new(3, 2, 1, vec![0.0; 6]).unwrap();
        fgrid::write_grid(&wrong, &mask_path).unwrap();
        assert!(matches!(
            CorpusLayout::new(dir.path()).load().unwrap_err(),
            CorpusError::MaskImageMismatch { .. }
        ));
    }

    #[test]
    fn empty_responses_is_a_warning_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal_corpus(dir.path());
        let layout = CorpusLayout::new(dir.path());
        fs::write(
            layout.responses_csv(),
            "participant_id,trial_id,condition,choice,rt_seconds\n",
        )
        .unwrap();
        let loaded = layout.load().unwrap();
        assert!(loaded.corpus.responses().is_empty());
    }

    #[test]
    fn writers_round_trip_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let trial = TrialSpec {
            trial_id: "t0".into(),
            image_path: CorpusLayout::image_entry("t0"),
            truth_class: "cat".into(),
            foil_class: "dog".into(),
            ai_class: ClassRole::Foil,
        };
        let image = FloatGrid::new(2, 1, 1, vec![0.5, 0.75]).unwrap();
        fs::create_dir_all(root.join("images")).unwrap();
        fgrid::write_grid(&image, root.join("images/t0.fgrid")).unwrap();
        let responses = vec![ResponseRecord {
            participant_id: "p0".into(),
            trial_id: "t0".into(),
            condition: Condition::Control,
            choice: ClassRole::Truth,
            rt_seconds: 2.25,
        }];
        let masks = vec![MaskRecord {
            participant_id: "p0".into(),
            trial_id: "t0".into(),
            target: ClassRole::Foil,
            mask: FloatGrid::new(2, 1, 1, vec![0.1, 0.9]).unwrap(),
        }];
        let layout = CorpusLayout::new(root);
        write_trials(&[trial.clone()], &layout.trials_csv()).unwrap();
        write_responses(&responses, &layout.responses_csv()).unwrap();
        write_masks(&masks, &layout.masks_csv()).unwrap();

        let loaded = layout.load().unwrap();
        assert_eq!(loaded.corpus.trials(), &[trial]);
        assert_eq!(loaded.corpus.responses(), responses.as_slice());
        assert_eq!(loaded.corpus.masks(), masks.as_slice());
    }

    #[test]
    fn proportions_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut table = BTreeMap::new();
        table.insert("t0".to_string(), (0.7317073170731707, 41));
        table.insert("t1".to_string(), (0.5, 46));
        write_proportions(&table, &path).unwrap();
        assert_eq!(load_proportions(&path).unwrap(), table);

        fs::write(&path, "trial_id,value,n\nt0,1.5,10\n").unwrap();
        assert!(load_proportions(&path).is_err());
        fs::write(&path, "trial_id,value,n\nt0,0.5,10\nt0,0.5,10\n").unwrap();
        assert!(load_proportions(&path).unwrap_err().to_string().contains("duplicate"));
    }
}
