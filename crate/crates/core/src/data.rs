//! Piano-roll datasets and their JSON representation.
//!
//! ```json
//! {"name": "jsb-chorales", "dim": 52,
//!  "splits": {"train": [[[0, 4, 7], [], [2]]], "valid": [...], "test": [...]}}
//! ```
//!
//! Each split is a list of sequences, each sequence a list of frames, each
//! frame a sorted list of distinct note indices in `[0, dim)`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::metrics::NoteMatrix;

/// Benchmark names and their piano-roll widths.
pub const BENCHMARKS: [(&str, usize); 4] = [
    ("piano-midi.de", 88),
    ("musedata", 82),
    ("jsb-chorales", 52),
    ("nottingham", 58),
];

fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Expected width when `name` refers to one of the four benchmarks.
pub fn benchmark_dim(name: &str) -> Option<usize> {
    let key = normalize_name(name);
    BENCHMARKS
        .iter()
        .find(|(n, _)| normalize_name(n) == key)
        .map(|&(_, d)| d)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PianoRollSequence {
    pub frames: Vec<Vec<u32>>,
}

impl PianoRollSequence {
    pub fn new(frames: Vec<Vec<u32>>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn from_notes(notes: &NoteMatrix) -> Self {
        Self {
            frames: (0..notes.rows())
                .map(|r| notes.active(r).into_iter().map(|i| i as u32).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<PianoRollSequence>,
    pub valid: Vec<PianoRollSequence>,
    pub test: Vec<PianoRollSequence>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Vec<PianoRollSequence>)> {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PianoRollDataset {
    pub name: String,
    pub dim: usize,
    pub splits: Splits,
}

impl PianoRollDataset {
    /// Checks note ranges, frame ordering and benchmark widths.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(EsnError::Data("dim must be positive".into()));
        }
        if let Some(expected) = benchmark_dim(&self.name) {
            if expected != self.dim {
                return Err(EsnError::Data(format!(
                    "dataset '{}' must be {expected}-dimensional, file declares {}",
                    self.name, self.dim
                )));
            }
        }
        for (split, seqs) in self.splits.iter() {
            for (s, seq) in seqs.iter().enumerate() {
                for (f, frame) in seq.frames.iter().enumerate() {
                    let at = || format!("{split}[{s}] frame {f}");
                    for (k, &note) in frame.iter().enumerate() {
                        if note as usize >= self.dim {
                            return Err(EsnError::Data(format!(
                                "{}: note {note} out of range for dim {}",
                                at(),
                                self.dim
                            )));
                        }
                        if k > 0 && frame[k - 1] >= note {
                            return Err(EsnError::Data(format!(
                                "{}: notes must be sorted and unique",
                                at()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Requires all three splits to be nonempty.
    pub fn require_splits(&self) -> Result<()> {
        for (split, seqs) in self.splits.iter() {
            if seqs.is_empty() {
                return Err(EsnError::Data(format!("split '{split}' is empty")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: PianoRollDataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn total_frames(&self, split: &[PianoRollSequence]) -> usize {
        split.iter().map(PianoRollSequence::len).sum()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PianoRollDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    PianoRollDataset::from_json(&text).map_err(|e| match e {
        EsnError::Parse(inner) => EsnError::Data(format!("{}: {inner}", path.display())),
        EsnError::Data(msg) => EsnError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_dense_frames(seq: &PianoRollSequence, dim: usize) -> NoteMatrix {
    let mut m = NoteMatrix::zeros(seq.len(), dim);
    for (t, frame) in seq.frames.iter().enumerate() {
        for &note in frame {
            m.set(t, note as usize, true);
        }
    }
    m
}

/// `(frames[0..T-1], frames[1..T])`. Sequences shorter than two frames
/// yield `None` and a warning.
pub fn next_step_pairs(seq: &PianoRollSequence, dim: usize) -> Option<(NoteMatrix, NoteMatrix)> {
    if seq.len() < 2 {
        log::warn!("skipping sequence of length {} (need at least 2 frames)", seq.len());
        return None;
    }
    let dense = to_dense_frames(seq, dim);
    let t = dense.rows();
    Some((dense.slice_rows(0, t - 1), dense.slice_rows(1, t)))
}

/// Shape of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Number of chord states in the generating Markov chain.
    pub chords: usize,
    /// Probability of leaving the chord cycle at each step.
    pub jump_prob: f64,
    /// Probability of flipping each note of a frame.
    pub noise: f64,
}

impl SyntheticSpec {
    /// `dim = 4`, ten short sequences.
    pub fn smoke() -> Self {
        Self {
            dim: 4,
            train: 6,
            valid: 2,
            test: 2,
            min_len: 8,
            max_len: 16,
            chords: 3,
            jump_prob: 0.1,
            noise: 0.02,
        }
    }
}

/// Generates sequences from a noisy cyclic Markov chain over random chords,
/// so next-step prediction is learnable but not trivial.
pub fn synthetic_dataset(name: &str, spec: &SyntheticSpec, seed: u64) -> Result<PianoRollDataset> {
    if spec.dim == 0 || spec.chords == 0 || spec.min_len < 2 || spec.max_len < spec.min_len {
        return Err(EsnError::Config(format!("invalid synthetic dataset shape {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let notes: Vec<u32> = (0..spec.dim as u32).collect();
    let chords: Vec<Vec<u32>> = (0..spec.chords)
        .map(|_| {
            let k = rng.gen_range(1..=spec.dim.min(3));
            let mut c: Vec<u32> = notes.choose_multiple(&mut rng, k).copied().collect();
            c.sort_unstable();
            c
        })
        .collect();

    let gen_split = |count: usize, rng: &mut ChaCha8Rng| -> Vec<PianoRollSequence> {
        (0..count)
            .map(|_| {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let mut state = rng.gen_range(0..spec.chords);
                let frames = (0..len)
                    .map(|_| {
                        let mut on = vec![false; spec.dim];
                        for &n in &chords[state] {
                            on[n as usize] = true;
                        }
                        for v in on.iter_mut() {
                            if rng.gen_bool(spec.noise) {
                                *v = !*v;
                            }
                        }
                        state = if rng.gen_bool(spec.jump_prob) {
                            rng.gen_range(0..spec.chords)
                        } else {
                            (state + 1) % spec.chords
                        };
                        on.iter()
                            .enumerate()
                            .filter_map(|(i, &b)| b.then_some(i as u32))
                            .collect()
                    })
                    .collect();
                PianoRollSequence::new(frames)
            })
            .collect()
    };
    let train = gen_split(spec.train, &mut rng);
    let valid = gen_split(spec.valid, &mut rng);
    let test = gen_split(spec.test, &mut rng);
    let ds = PianoRollDataset {
        name: name.to_string(),
        dim: spec.dim,
        splits: Splits { train, valid, test },
    };
    ds.validate()?;
    Ok(ds)
}
