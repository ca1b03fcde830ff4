//! Synthetic speech-plus-EEG corpus: generation, storage and loading.

mod decoder;
mod store;
mod synth;

pub use decoder::{identifiability, pearson, Identifiability, LinearDecoder};
pub use store::{read_array, write_array, StoredArray};
pub use synth::{envelope, synth_eeg, synth_speech, EegSynthConfig, Montage, SpeakerStyle, SpeechConfig};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{eeg_frames_for, mix_at_snr, preprocess_eeg, EegPreprocess, EegRecording, AUDIO_RATE, EEG_RATE};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const CORPUS_CONFIG: &str = "corpus.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Independent listening sessions; each has its own pair of stories.
    pub trials: usize,
    pub trial_seconds: f64,
    /// Example length range for train and validation, seconds.
    pub train_len_s: (f64, f64),
    pub test_len_s: (f64, f64),
    /// Every example length and offset is a multiple of this many samples.
    pub quantum: usize,
    pub speakers: [SpeakerStyle; 2],
    pub speech: SpeechConfig,
    pub eeg: EegSynthConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 200,
            val: 30,
            test: 30,
            trials: 4,
            trial_seconds: 160.0,
            train_len_s: (1.0, 10.0),
            test_len_s: (1.0, 15.0),
            quantum: 40,
            speakers: SpeakerStyle::pair(),
            speech: SpeechConfig::default(),
            eeg: EegSynthConfig::default(),
        }
    }
}

impl CorpusConfig {
    fn trial_samples(&self) -> usize {
        ((self.trial_seconds * AUDIO_RATE as f64) as usize / self.quantum) * self.quantum
    }

    /// Sample interval `[start, end)` of a split within every trial's timeline.
    pub fn region(&self, split: Split) -> (usize, usize) {
        let t = self.trial_samples();
        let q = self.quantum;
        let b1 = (t * 3 / 4) / q * q;
        let b2 = (t * 7 / 8) / q * q;
        match split {
            Split::Train => (0, b1),
            Split::Val => (b1, b2),
            Split::Test => (b2, t),
        }
    }

    fn len_range(&self, split: Split) -> (f64, f64) {
        match split {
            Split::Test => self.test_len_s,
            _ => self.train_len_s,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.quantum == 0 {
            return Err(Error::Config("corpus needs at least one trial and a positive quantum".into()));
        }
        for split in Split::ALL {
            let (lo, hi) = self.len_range(split);
            if !(1.0 <= lo && lo <= hi) {
                return Err(Error::Config(format!("{} length range ({lo}, {hi}) s is invalid", split.name())));
            }
            let (a, b) = self.region(split);
            let need = (hi * AUDIO_RATE as f64).ceil() as usize;
            if b - a < need {
                return Err(Error::Config(format!(
                    "{} region of {:.2} s cannot hold {hi} s examples; raise trial_seconds",
                    split.name(),
                    (b - a) as f64 / AUDIO_RATE as f64
                )));
            }
        }
        if self.eeg.g_att < 0.0 || self.eeg.g_dis < 0.0 || self.eeg.noise < 0.0 {
            return Err(Error::Config("EEG gains and noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where an example's audio sits in its trial's stories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub trial: usize,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn overlaps(&self, other: &Segment) -> bool {
        self.trial == other.trial && self.start < other.start + other.len && other.start < self.start + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub path: String,
    pub sha256: String,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub split: Split,
    /// Index of the attended speaker (the target).
    pub attended: usize,
    pub segment: Segment,
    pub samples: usize,
    pub eeg_frames: usize,
    pub snr_db: f64,
    pub mixture: ArrayRef,
    pub target: ArrayRef,
    pub interferer: ArrayRef,
    pub eeg: ArrayRef,
}

/// A loaded example; `mixture == target + interferer` elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub split: Split,
    pub attended: usize,
    pub segment: Segment,
    pub mixture: Vec<f32>,
    pub target: Vec<f32>,
    pub interferer: Vec<f32>,
    /// Preprocessed 128 Hz EEG aligned with the audio.
    pub eeg: EegRecording,
}

impl MixtureExample {
    pub fn seconds(&self) -> f64 {
        self.mixture.len() as f64 / AUDIO_RATE as f64
    }
}

/// Both stories and the preprocessed EEG of one trial.
struct Trial {
    stories: [Vec<f32>; 2],
    attended: usize,
    eeg: EegRecording,
}

fn build_trial(cfg: &CorpusConfig, montage: &Montage, index: usize) -> Result<Trial> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + index as u64);
    let secs = cfg.trial_samples() as f64 / AUDIO_RATE as f64;
    let a = synth_speech(secs, &cfg.speakers[0], &cfg.speech, &mut rng)?;
    let b = synth_speech(secs, &cfg.speakers[1], &cfg.speech, &mut rng)?;
    let attended = index % 2;
    let stories = [a, b];
    let raw = synth_eeg(&stories[attended], &stories[1 - attended], montage, &cfg.eeg, &mut rng)?;
    let pre = EegPreprocess {
        out_rate: EEG_RATE as f64,
        ..EegPreprocess::default()
    };
    let eeg = preprocess_eeg(&raw, &pre)?;
    Ok(Trial { stories, attended, eeg })
}

/// The corpus as held in memory before it is written.
struct Planned {
    record: ExampleRecord,
    example: MixtureExample,
}

fn plan_examples(cfg: &CorpusConfig, trials: &[Trial], rng: &mut ChaCha8Rng) -> Result<Vec<Planned>> {
    let q = cfg.quantum;
    let mut out = Vec::new();
    for split in Split::ALL {
        let (r0, r1) = cfg.region(split);
        let (lo, hi) = cfg.len_range(split);
        for i in 0..cfg.count(split) {
            let trial_idx = i % cfg.trials;
            let trial = &trials[trial_idx];
            let secs = rng.random_range(lo..=hi);
            let len = (((secs * AUDIO_RATE as f64) as usize) / q * q).min((r1 - r0) / q * q);
            let start = r0 + rng.random_range(0..=(r1 - r0 - len) / q) * q;
            let att = trial.attended;
            let target = trial.stories[att][start..start + len].to_vec();
            let raw_itf = &trial.stories[1 - att][start..start + len];
            let (mixture, interferer) = mix_at_snr(&target, raw_itf, 0.0)?;
            let eeg_start = eeg_frames_for(start);
            let eeg_frames = eeg_frames_for(len);
            let eeg = trial.eeg.slice_frames(eeg_start, eeg_frames)?;
            let id = format!("{}-{i:04}", split.name());
            let segment = Segment {
                trial: trial_idx,
                start,
                len,
            };
            let file = |kind: &str| ArrayRef {
                path: format!("arrays/{id}.{kind}.f32"),
                sha256: String::new(),
            };
            out.push(Planned {
                record: ExampleRecord {
                    id: id.clone(),
                    split,
                    attended: att,
                    segment,
                    samples: len,
                    eeg_frames,
                    snr_db: 0.0,
                    mixture: file("mix"),
                    target: file("tgt"),
                    interferer: file("itf"),
                    eeg: file("eeg"),
                },
                example: MixtureExample {
                    id,
                    split,
                    attended: att,
                    segment,
                    mixture,
                    target,
                    interferer,
                    eeg,
                },
            });
        }
    }
    Ok(out)
}

/// Generates the corpus under `root` and returns its manifest records.
///
/// The output is a pure function of `cfg`.
pub fn build_corpus(cfg: &CorpusConfig, root: &Path) -> Result<Vec<ExampleRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let montage = Montage::random(&cfg.eeg, &mut rng);
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| build_trial(cfg, &montage, t))
        .collect::<Result<Vec<_>>>()?;
    let planned = plan_examples(cfg, &trials, &mut rng)?;

    std::fs::create_dir_all(root.join("arrays")).map_err(|e| Error::io(root, e))?;
    let records = planned
        .into_par_iter()
        .map(|p| {
            let mut r = p.record;
            let ex = &p.example;
            let audio = AUDIO_RATE as f64;
            r.mixture.sha256 = write_array(&root.join(&r.mixture.path), audio, 1, &ex.mixture)?;
            r.target.sha256 = write_array(&root.join(&r.target.path), audio, 1, &ex.target)?;
            r.interferer.sha256 = write_array(&root.join(&r.interferer.path), audio, 1, &ex.interferer)?;
            r.eeg.sha256 = write_array(&root.join(&r.eeg.path), EEG_RATE as f64, ex.eeg.channels, &ex.eeg.data)?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;

    let cfg_text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let cfg_path = root.join(CORPUS_CONFIG);
    std::fs::write(&cfg_path, cfg_text).map_err(|e| Error::io(&cfg_path, e))?;
    write_manifest(&root.join(MANIFEST), &records)?;
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::data(&r.id, e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ExampleRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::data(format!("manifest line {}", i + 1), e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

/// Pairs of examples from different splits whose audio intervals overlap.
pub fn split_overlaps(records: &[ExampleRecord]) -> usize {
    let mut n = 0;
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if a.split != b.split && a.segment.overlaps(&b.segment) {
                n += 1;
            }
        }
    }
    n
}

/// An on-disk corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub config: CorpusConfig,
    pub records: Vec<ExampleRecord>,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let cfg_path = root.join(CORPUS_CONFIG);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
        let records = read_manifest(&root.join(MANIFEST))?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            records,
        })
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &ExampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load(&self, record: &ExampleRecord) -> Result<MixtureExample> {
        load_example(&self.root, record, self.config.eeg.channels)
    }

    /// Loads every example of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<MixtureExample>> {
        let recs: Vec<&ExampleRecord> = self.records(split).collect();
        recs.par_iter().map(|r| self.load(r)).collect()
    }
}

fn load_audio(root: &Path, r: &ExampleRecord, a: &ArrayRef) -> Result<Vec<f32>> {
    let arr = read_array(&root.join(&a.path), &r.id)?;
    check_ref(r, a, &arr)?;
    if arr.channels != 1 || arr.sample_rate != AUDIO_RATE as f64 || arr.frames != r.samples {
        return Err(Error::data(
            &r.id,
            format!(
                "{}: expected {} mono samples at {AUDIO_RATE} Hz, found {}×{} at {} Hz",
                a.path, r.samples, arr.channels, arr.frames, arr.sample_rate
            ),
        ));
    }
    Ok(arr.data)
}

fn check_ref(r: &ExampleRecord, a: &ArrayRef, arr: &StoredArray) -> Result<()> {
    if !a.sha256.is_empty() {
        let bytes: Vec<u8> = arr.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let digest = store::hex(&Sha256::digest(&bytes));
        if digest != a.sha256 {
            return Err(Error::data(&r.id, format!("{}: checksum differs from manifest", a.path)));
        }
    }
    Ok(())
}

/// Reads one example and checks it against the rate-ratio length contract.
pub fn load_example(root: &Path, r: &ExampleRecord, channels: usize) -> Result<MixtureExample> {
    let mixture = load_audio(root, r, &r.mixture)?;
    let target = load_audio(root, r, &r.target)?;
    let interferer = load_audio(root, r, &r.interferer)?;
    let arr = read_array(&root.join(&r.eeg.path), &r.id)?;
    check_ref(r, &r.eeg, &arr)?;
    let frames = eeg_frames_for(r.samples);
    if arr.sample_rate != EEG_RATE as f64 || arr.channels != channels || arr.frames != frames || r.eeg_frames != frames {
        return Err(Error::data(
            &r.id,
            format!(
                "{}: expected {channels}×{frames} EEG at {EEG_RATE} Hz, found {}×{} at {} Hz",
                r.eeg.path, arr.channels, arr.frames, arr.sample_rate
            ),
        ));
    }
    let eeg = EegRecording::new(arr.channels, arr.sample_rate, arr.data, true)?;
    Ok(MixtureExample {
        id: r.id.clone(),
        split: r.split,
        attended: r.attended,
        segment: r.segment,
        mixture,
        target,
        interferer,
        eeg,
    })
}
