//! Synthetic transduction datasets.
//!
//! Every character of a transcript becomes one or more frames: a one-hot
//! row at the character's token index, widened to `feature_dim` columns,
//! plus Gaussian noise. Each character is repeated 1 to `max_repeat` times,
//! so frame count and transcript length differ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::rng::{self, streams, Rng};
use crate::vocab::{self, TokenSequence, FIRST_LETTER, VOCAB_SIZE};

pub const FILE_MAGIC: &str = "pcpg-dataset";
pub const FILE_VERSION: u32 = 1;
pub const MAX_CLASSES: usize = VOCAB_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Copy,
    Reverse,
    Words,
    Sentences,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::Words => "words",
            Task::Sentences => "sentences",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "words" => Ok(Task::Words),
            "sentences" => Ok(Task::Sentences),
            _ => Err(Error::Format(format!("unknown task {s:?}"))),
        }
    }
}

/// How characters are rendered into frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSpec {
    pub feature_dim: usize,
    pub noise: f64,
    pub max_repeat: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            feature_dim: 48,
            noise: 0.3,
            max_repeat: 3,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < VOCAB_SIZE {
            return Err(Error::invalid(format!(
                "feature_dim {} must be at least {VOCAB_SIZE}",
                self.feature_dim
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("noise {} must be finite and >= 0", self.noise)));
        }
        if self.max_repeat == 0 {
            return Err(Error::invalid("max_repeat must be at least 1"));
        }
        Ok(())
    }

    /// Renders `chars` as a `T x feature_dim` matrix.
    pub fn render(&self, chars: &[u32], rng: &mut Rng) -> Tensor {
        let noise = Normal::new(0.0, self.noise).expect("validated sigma");
        let mut data = Vec::new();
        let mut rows = 0;
        for &c in chars {
            let reps = rng.random_range(1..=self.max_repeat);
            for _ in 0..reps {
                for col in 0..self.feature_dim {
                    let hot = if col == c as usize { 1.0 } else { 0.0 };
                    let n = if self.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push(hot + n);
                }
                rows += 1;
            }
        }
        Tensor::matrix(rows, self.feature_dim, data).expect("consistent frame shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub transcript: TokenSequence,
    /// Class index for the word task.
    pub label: Option<u32>,
    pub frames: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn alphanumerics() -> Vec<u32> {
    (FIRST_LETTER..VOCAB_SIZE as u32).collect()
}

fn check_len_range(min: usize, max: usize) -> Result<()> {
    if min == 0 || max > 20 || min > max {
        return Err(Error::invalid(format!(
            "length range {min}..={max} must lie within 1..=20"
        )));
    }
    Ok(())
}

/// Random string over `alphabet` with no two equal neighbours.
fn random_chars(rng: &mut Rng, alphabet: &[u32], len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(len);
    while out.len() < len {
        let c = alphabet[rng.random_range(0..alphabet.len())];
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

fn sample_rng(seed: u64, index: u64) -> (u64, Rng) {
    let s = rng::derive_seed(seed, streams::DATA, index);
    (s, rng::stream(s, streams::DATA, 0))
}

/// Transcript equals the input characters.
pub fn gen_copy(n: usize, min_len: usize, max_len: usize, seed: u64, spec: &FrameSpec) -> Result<Dataset> {
    gen_strings(Task::Copy, n, min_len, max_len, seed, spec)
}

/// Transcript is the input characters in reverse order.
pub fn gen_reverse(n: usize, min_len: usize, max_len: usize, seed: u64, spec: &FrameSpec) -> Result<Dataset> {
    gen_strings(Task::Reverse, n, min_len, max_len, seed, spec)
}

fn gen_strings(
    task: Task,
    n: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
    spec: &FrameSpec,
) -> Result<Dataset> {
    check_len_range(min_len, max_len)?;
    spec.validate()?;
    let alphabet = alphanumerics();
    let samples = (0..n as u64)
        .map(|i| {
            let (s, mut rng) = sample_rng(seed, i);
            let len = rng.random_range(min_len..=max_len);
            let chars = random_chars(&mut rng, &alphabet, len);
            let frames = spec.render(&chars, &mut rng);
            let mut transcript = chars;
            if task == Task::Reverse {
                transcript.reverse();
            }
            Sample {
                seed: s,
                transcript: TokenSequence::new(transcript).expect("alphanumeric tokens"),
                label: None,
                frames,
            }
        })
        .collect();
    Ok(Dataset {
        task,
        feature_dim: spec.feature_dim,
        samples,
    })
}

/// The `n_classes` distinct words used by [`gen_words`] under `seed`.
pub fn word_list(n_classes: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = rng::stream(seed, "words", 0);
    let letters: Vec<u32> = (FIRST_LETTER..FIRST_LETTER + 26).collect();
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(n_classes);
    while words.len() < n_classes {
        let len = rng.random_range(3..=6);
        let w = random_chars(&mut rng, &letters, len);
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

/// Labeled isolated-word samples, exactly `per_class` per class, in class
/// order.
pub fn gen_words(n_classes: usize, per_class: usize, seed: u64, spec: &FrameSpec) -> Result<Dataset> {
    if n_classes == 0 || n_classes > MAX_CLASSES {
        return Err(Error::invalid(format!(
            "n_classes {n_classes} must lie within 1..={MAX_CLASSES}"
        )));
    }
    spec.validate()?;
    let words = word_list(n_classes, seed);
    let mut samples = Vec::with_capacity(n_classes * per_class);
    for (class, word) in words.iter().enumerate() {
        for k in 0..per_class {
            let (s, mut rng) = sample_rng(seed, (class * per_class + k) as u64);
            samples.push(Sample {
                seed: s,
                transcript: TokenSequence::new(word.clone()).expect("letter tokens"),
                label: Some(class as u32),
                frames: spec.render(word, &mut rng),
            });
        }
    }
    Ok(Dataset {
        task: Task::Words,
        feature_dim: spec.feature_dim,
        samples,
    })
}

const COMMANDS: [&str; 4] = ["bin", "lay", "place", "set"];
const COLORS: [&str; 4] = ["blue", "green", "red", "white"];
const PREPOSITIONS: [&str; 4] = ["at", "by", "in", "with"];
const DIGITS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
const ADVERBS: [&str; 4] = ["again", "now", "please", "soon"];

/// Six-word sentences `command color preposition letter digit adverb`.
pub fn gen_sentences(n: usize, seed: u64, spec: &FrameSpec) -> Result<Dataset> {
    spec.validate()?;
    let letters: Vec<char> = ('a'..='z').filter(|&c| c != 'w').collect();
    let samples = (0..n as u64)
        .map(|i| {
            let (s, mut rng) = sample_rng(seed, i);
            let mut pick = |xs: &[&'static str]| xs[rng.random_range(0..xs.len())];
            let command = pick(&COMMANDS);
            let color = pick(&COLORS);
            let prep = pick(&PREPOSITIONS);
            let digit = pick(&DIGITS);
            let adverb = pick(&ADVERBS);
            let letter = letters[rng.random_range(0..letters.len())];
            let text = format!("{command} {color} {prep} {letter} {digit} {adverb}");
            let transcript = TokenSequence::from_text(&text).expect("grammar uses vocabulary symbols");
            let frames = spec.render(transcript.tokens(), &mut rng);
            Sample {
                seed: s,
                transcript,
                label: None,
                frames,
            }
        })
        .collect();
    Ok(Dataset {
        task: Task::Sentences,
        feature_dim: spec.feature_dim,
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            feature_dim: self.feature_dim,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Seeded shuffle into disjoint train/val/test parts.
    pub fn split(&self, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<Splits> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(val_fraction) || !ok(test_fraction) || val_fraction + test_fraction >= 1.0 {
            return Err(Error::invalid(format!(
                "split fractions {val_fraction} + {test_fraction} must be in [0, 1) and sum below 1"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, streams::SPLIT, 0));
        let n_val = (n as f64 * val_fraction).round() as usize;
        let n_test = (n as f64 * test_fraction).round() as usize;
        let (val, rest) = idx.split_at(n_val);
        let (test, train) = rest.split_at(n_test.min(rest.len()));
        Ok(Splits {
            train: self.subset(train),
            val: self.subset(val),
            test: self.subset(test),
        })
    }

    /// Line-oriented text form. Frames are written as the 16-digit hex bit
    /// patterns of their doubles, so a round trip is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FILE_MAGIC} {FILE_VERSION} task={} F={} vocab={} n={}\n",
            self.task.name(),
            self.feature_dim,
            vocab::vocab_hash(),
            self.samples.len()
        );
        for s in &self.samples {
            let label = s.label.map_or_else(|| "-".to_string(), |l| l.to_string());
            let (t, _) = s.frames.dims2();
            write!(out, "{}\t{label}\t{}\t{t}\t", s.seed, s.transcript).expect("string write");
            for (i, x) in s.frames.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{:016x}", x.to_bits()).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("dataset line {line}: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(FILE_MAGIC) {
            return Err(bad(1, "not a dataset file"));
        }
        if fields.next() != Some(&FILE_VERSION.to_string()) {
            return Err(bad(1, "unsupported version"));
        }
        let mut task = None;
        let mut feature_dim = None;
        let mut hash = None;
        let mut count = None;
        for f in fields {
            match f.split_once('=') {
                Some(("task", v)) => task = Some(Task::parse(v)?),
                Some(("F", v)) => feature_dim = v.parse::<usize>().ok(),
                Some(("vocab", v)) => hash = Some(v.to_string()),
                Some(("n", v)) => count = v.parse::<usize>().ok(),
                _ => return Err(bad(1, &format!("unexpected header field {f:?}"))),
            }
        }
        let (Some(task), Some(feature_dim), Some(hash), Some(count)) = (task, feature_dim, hash, count)
        else {
            return Err(bad(1, "incomplete header"));
        };
        if hash != vocab::vocab_hash() {
            return Err(bad(1, &format!(
                "vocabulary hash {hash} does not match built-in {}",
                vocab::vocab_hash()
            )));
        }
        let mut samples = Vec::with_capacity(count);
        for (k, line) in lines.enumerate() {
            let ln = k + 2;
            let parts: Vec<&str> = line.split('\t').collect();
            let [seed, label, transcript, t, frames] = parts[..] else {
                return Err(bad(ln, "expected 5 tab-separated fields"));
            };
            let seed = seed.parse::<u64>().map_err(|_| bad(ln, "bad seed"))?;
            let label = match label {
                "-" => None,
                l => Some(l.parse::<u32>().map_err(|_| bad(ln, "bad label"))?),
            };
            let transcript = TokenSequence::from_text(transcript).map_err(|e| bad(ln, &e.to_string()))?;
            let t = t.parse::<usize>().map_err(|_| bad(ln, "bad frame count"))?;
            let data = frames
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(ln, "bad frame value"))?;
            if data.len() != t * feature_dim {
                return Err(bad(ln, &format!("expected {} values, found {}", t * feature_dim, data.len())));
            }
            samples.push(Sample {
                seed,
                transcript,
                label,
                frames: Tensor::matrix(t, feature_dim, data)?,
            });
        }
        if samples.len() != count {
            return Err(bad(1, &format!("header promises {count} samples, found {}", samples.len())));
        }
        Ok(Self {
            task,
            feature_dim,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean() -> FrameSpec {
        FrameSpec {
            noise: 0.0,
            max_repeat: 1,
            ..Default::default()
        }
    }

    /// Reads characters back off noiseless, unrepeated frames.
    fn decode_frames(frames: &Tensor) -> Vec<u32> {
        let (t, f) = frames.dims2();
        (0..t)
            .map(|r| {
                let row = &frames.data()[r * f..(r + 1) * f];
                row.iter().position(|&x| x == 1.0).unwrap() as u32
            })
            .collect()
    }

    #[test]
    fn clean_copy_is_solvable() {
        let d = gen_copy(50, 1, 20, 3, &clean()).unwrap();
        for s in &d.samples {
            assert_eq!(decode_frames(&s.frames), s.transcript.tokens());
        }
    }

    #[test]
    fn reverse_preserves_length_and_inverts() {
        let spec = clean();
        let c = gen_copy(30, 4, 10, 5, &spec).unwrap();
        let r = gen_reverse(30, 4, 10, 5, &spec).unwrap();
        for (a, b) in c.samples.iter().zip(&r.samples) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.transcript.len(), b.transcript.len());
            assert_eq!(b.transcript.reversed(), a.transcript);
            assert_eq!(decode_frames(&b.frames), b.transcript.reversed().tokens());
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = FrameSpec::default();
        let a = gen_copy(20, 4, 10, 9, &spec).unwrap();
        assert_eq!(a, gen_copy(20, 4, 10, 9, &spec).unwrap());
        assert_ne!(a, gen_copy(20, 4, 10, 10, &spec).unwrap());
        for s in &a.samples {
            let (t, f) = s.frames.dims2();
            assert_eq!(f, 48);
            assert!(t >= s.transcript.len() && t <= 3 * s.transcript.len());
            assert!((4..=10).contains(&s.transcript.len()));
            assert!(s.transcript.tokens().windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn bad_ranges_rejected() {
        let spec = FrameSpec::default();
        assert!(gen_copy(1, 0, 4, 1, &spec).is_err());
        assert!(gen_copy(1, 4, 21, 1, &spec).is_err());
        assert!(gen_words(41, 1, 1, &spec).is_err());
        assert!(gen_words(0, 1, 1, &spec).is_err());
        assert!(gen_copy(1, 1, 4, 1, &FrameSpec { feature_dim: 39, ..spec }).is_err());
    }

    #[test]
    fn words_are_balanced() {
        let d = gen_words(40, 7, 2, &FrameSpec::default()).unwrap();
        assert_eq!(d.len(), 280);
        let mut counts = [0usize; 40];
        for s in &d.samples {
            counts[s.label.unwrap() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 7));
        let words = word_list(40, 2);
        for s in &d.samples {
            assert_eq!(s.transcript.tokens(), &words[s.label.unwrap() as usize][..]);
        }
    }

    #[test]
    fn sentences_have_six_words() {
        let d = gen_sentences(20, 4, &FrameSpec::default()).unwrap();
        for s in &d.samples {
            let text = s.transcript.to_string();
            assert_eq!(text.split(' ').count(), 6, "{text}");
        }
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let d = gen_copy(100, 2, 5, 1, &FrameSpec::default()).unwrap();
        let s = d.split(0.1, 0.2, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let mut seeds: Vec<u64> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|p| p.samples.iter().map(|x| x.seed))
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
        assert_eq!(d.split(0.1, 0.2, 7).unwrap().val, s.val);
        assert!(d.split(0.5, 0.5, 7).is_err());
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let d = gen_sentences(5, 8, &FrameSpec::default()).unwrap();
        let back = Dataset::from_text(&d.to_text()).unwrap();
        assert_eq!(back.task, d.task);
        for (a, b) in d.samples.iter().zip(&back.samples) {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.frames), bits(&b.frames));
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.seed, b.seed);
        }
        let w = gen_words(3, 2, 1, &FrameSpec::default()).unwrap();
        assert_eq!(Dataset::from_text(&w.to_text()).unwrap(), w);
    }

    #[test]
    fn corrupted_header_rejected() {
        let d = gen_copy(2, 2, 3, 1, &FrameSpec::default()).unwrap();
        let text = d.to_text();
        let hash = vocab::vocab_hash();
        assert!(Dataset::from_text(&text.replacen(&hash, "0000000000000000", 1)).is_err());
        assert!(Dataset::from_text(&text.replacen("pcpg-dataset", "other", 1)).is_err());
        assert!(Dataset::from_text(&text.replacen("n=2", "n=3", 1)).is_err());
        assert!(Dataset::from_text(&text.replacen("F=48", "F=47", 1)).is_err());
    }

    #[test]
    fn file_hash_stable_across_regeneration() {
        use sha2::{Digest, Sha256};
        let digest = |d: &Dataset| Sha256::digest(d.to_text().as_bytes()).to_vec();
        let spec = FrameSpec::default();
        assert_eq!(
            digest(&gen_copy(10, 4, 10, 42, &spec).unwrap()),
            digest(&gen_copy(10, 4, 10, 42, &spec).unwrap())
        );
    }
}
