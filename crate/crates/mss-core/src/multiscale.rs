//! Scale hierarchy construction: alignment vectors, cumulative boundaries,
//! mean-pooled targets, upsampling, and the word/sentence hierarchies.
//!
//! Pooling treats each unit's frame range as the half-open interval
//! [c_{i-1}, c_i): the i-th target row is the mean of exactly a_i frames, so
//! boundary frames are never double counted and the 1/a_i normalizer is
//! exact. All pooling runs in double precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{read_mel, write_mel, MelSpectrogram};
use crate::error::{MssError, Result};
use crate::linguistic::{sentence_duration, word_durations, DurationVector, Utterance};

/// Which scale set a hierarchy carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyMode {
    /// Arbitrary caller-supplied alignment vectors.
    Generic,
    /// Scales {2: words, 1: phonemes, 0: frames}.
    WordMss,
    /// Scales {3: sentence, 2: words, 1: phonemes, 0: frames}.
    SentenceMss,
}

impl HierarchyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HierarchyMode::Generic => "generic",
            HierarchyMode::WordMss => "word_mss",
            HierarchyMode::SentenceMss => "sentence_mss",
        }
    }
}

/// Per-unit frame counts at one scale; strictly positive, summing to T.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentVector {
    counts: Vec<usize>,
    total: usize,
}

impl AlignmentVector {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(MssError::InvalidInput("empty alignment vector".into()));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(MssError::InvalidInput(
                "alignment counts must be >= 1".into(),
            ));
        }
        let total = counts.iter().sum();
        Ok(AlignmentVector { counts, total })
    }

    /// The frame-level alignment: T units of one frame each.
    pub fn unit_frames(total: usize) -> Result<Self> {
        AlignmentVector::new(vec![1; total])
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Cumulative unit boundaries c_k = a_0 + ... + a_k; strictly increasing,
/// ending at T.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Boundaries {
    cumulative: Vec<usize>,
}

impl Boundaries {
    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }
}

pub fn boundaries(a: &AlignmentVector) -> Boundaries {
    let mut cumulative = Vec::with_capacity(a.len());
    let mut acc = 0;
    for &c in a.counts() {
        acc += c;
        cumulative.push(acc);
    }
    Boundaries { cumulative }
}

/// Mean-pool frame rows into one row per unit of `a`.
pub fn pool_scale(y: &MelSpectrogram, a: &AlignmentVector) -> Result<MelSpectrogram> {
    if a.total() != y.n_frames() {
        return Err(MssError::AlignmentMismatch(format!(
            "alignment totals {} frames but spectrogram has {}",
            a.total(),
            y.n_frames()
        )));
    }
    let m = y.n_mels();
    let mut data = Vec::with_capacity(a.len() * m);
    let mut start = 0;
    for &count in a.counts() {
        let mut acc = vec![0.0f64; m];
        for t in start..start + count {
            for (s, v) in acc.iter_mut().zip(y.frame(t)) {
                *s += v;
            }
        }
        let inv = 1.0 / count as f64;
        data.extend(acc.into_iter().map(|s| s * inv));
        start += count;
    }
    MelSpectrogram::from_vec(data, m, y.frame_shift_ms())
}

/// Repeat row i of `s` `fine_counts[i]` times, preserving order.
pub fn upsample(s: &MelSpectrogram, fine_counts: &AlignmentVector) -> Result<MelSpectrogram> {
    if fine_counts.len() != s.n_frames() {
        return Err(MssError::AlignmentMismatch(format!(
            "{} repeat counts for {} rows",
            fine_counts.len(),
            s.n_frames()
        )));
    }
    let m = s.n_mels();
    let mut data = Vec::with_capacity(fine_counts.total() * m);
    for (row, &count) in s.frames().zip(fine_counts.counts()) {
        for _ in 0..count {
            data.extend_from_slice(row);
        }
    }
    MelSpectrogram::from_vec(data, m, s.frame_shift_ms())
}

/// How many consecutive fine units each coarse unit spans. Errors unless the
/// coarse segmentation is a union of consecutive fine segments.
pub fn unit_counts(coarse: &AlignmentVector, fine: &AlignmentVector) -> Result<AlignmentVector> {
    if coarse.total() != fine.total() {
        return Err(MssError::AlignmentMismatch(format!(
            "coarse totals {} frames, fine totals {}",
            coarse.total(),
            fine.total()
        )));
    }
    let mut out = Vec::with_capacity(coarse.len());
    let mut fine_iter = fine.counts().iter();
    for (i, &span) in coarse.counts().iter().enumerate() {
        let mut covered = 0;
        let mut units = 0;
        while covered < span {
            let &f = fine_iter.next().ok_or_else(|| {
                MssError::AlignmentMismatch("fine alignment exhausted early".into())
            })?;
            covered += f;
            units += 1;
        }
        if covered != span {
            return Err(MssError::AlignmentMismatch(format!(
                "fine boundaries do not nest inside coarse unit {i}"
            )));
        }
        out.push(units);
    }
    AlignmentVector::new(out)
}

/// One scale of a hierarchy: its index, alignment, and pooled target.
#[derive(Clone, Debug)]
pub struct ScaleLevel {
    pub level: usize,
    pub alignment: AlignmentVector,
    pub target: MelSpectrogram,
}

/// Ordered scale targets, coarsest first; the last level is always the
/// frame-level spectrogram itself.
#[derive(Clone, Debug)]
pub struct ScaleHierarchy {
    mode: HierarchyMode,
    levels: Vec<ScaleLevel>,
}

impl ScaleHierarchy {
    fn validate(mode: HierarchyMode, levels: &[ScaleLevel]) -> Result<()> {
        if levels.is_empty() {
            return Err(MssError::InvalidInput("hierarchy has no levels".into()));
        }
        let total = levels[0].alignment.total();
        for lv in levels {
            if lv.alignment.total() != total {
                return Err(MssError::AlignmentMismatch(format!(
                    "level {} totals {} frames, expected {total}",
                    lv.level,
                    lv.alignment.total()
                )));
            }
            if lv.alignment.len() != lv.target.n_frames() {
                return Err(MssError::AlignmentMismatch(format!(
                    "level {} target has {} rows for {} units",
                    lv.level,
                    lv.target.n_frames(),
                    lv.alignment.len()
                )));
            }
        }
        for pair in levels.windows(2) {
            if pair[0].level <= pair[1].level {
                return Err(MssError::InvalidInput(
                    "hierarchy levels must be ordered coarsest first".into(),
                ));
            }
            if pair[0].alignment.len() > pair[1].alignment.len() {
                return Err(MssError::InvalidInput(
                    "coarser level has more units than finer level".into(),
                ));
            }
            if pair[0].alignment.len() == pair[1].alignment.len() {
                // Degenerate utterances (one phoneme per word, etc.) are
                // allowed through; typical data satisfies the strict chain.
                log::warn!(
                    "scale {} and {} have equal unit counts ({})",
                    pair[0].level,
                    pair[1].level,
                    pair[0].alignment.len()
                );
            }
        }
        let _ = mode;
        Ok(())
    }

    pub fn from_levels(mode: HierarchyMode, levels: Vec<ScaleLevel>) -> Result<Self> {
        Self::validate(mode, &levels)?;
        Ok(ScaleHierarchy { mode, levels })
    }

    /// Generic hierarchy from caller-supplied alignments (coarsest first,
    /// frame level excluded; it is appended automatically).
    pub fn generic(y: &MelSpectrogram, alignments: &[AlignmentVector]) -> Result<Self> {
        let t = y.n_frames();
        let mut levels = Vec::with_capacity(alignments.len() + 1);
        for (i, a) in alignments.iter().enumerate() {
            levels.push(ScaleLevel {
                level: alignments.len() - i,
                alignment: a.clone(),
                target: pool_scale(y, a)?,
            });
        }
        levels.push(ScaleLevel {
            level: 0,
            alignment: AlignmentVector::unit_frames(t)?,
            target: y.clone(),
        });
        Self::from_levels(HierarchyMode::Generic, levels)
    }

    pub fn mode(&self) -> HierarchyMode {
        self.mode
    }

    /// Levels, coarsest first.
    pub fn levels(&self) -> &[ScaleLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> Option<&ScaleLevel> {
        self.levels.iter().find(|lv| lv.level == l)
    }

    pub fn total_frames(&self) -> usize {
        self.levels[0].alignment.total()
    }

    /// The frame-level target S^0 = Y.
    pub fn frame_level(&self) -> &MelSpectrogram {
        &self
            .levels
            .last()
            .expect("hierarchy always has a frame level")
            .target
    }

    /// Writes one MELSPEC1 file per level plus alignments.json.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for lv in &self.levels {
            write_mel(&dir.join(format!("scale{}.mel", lv.level)), &lv.target)?;
        }
        let meta = HierarchyMeta {
            mode: self.mode,
            levels: self
                .levels
                .iter()
                .map(|lv| LevelMeta {
                    level: lv.level,
                    counts: lv.alignment.counts().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| MssError::FormatError(e.to_string()))?;
        fs::write(dir.join("alignments.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("alignments.json");
        let meta: HierarchyMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
            .map_err(|e| MssError::FormatError(format!("{}: {e}", meta_path.display())))?;
        let mut levels = Vec::with_capacity(meta.levels.len());
        for lm in meta.levels {
            let target = read_mel(&dir.join(format!("scale{}.mel", lm.level)))?;
            levels.push(ScaleLevel {
                level: lm.level,
                alignment: AlignmentVector::new(lm.counts)?,
                target,
            });
        }
        Self::from_levels(meta.mode, levels)
    }
}

#[derive(Serialize, Deserialize)]
struct HierarchyMeta {
    mode: HierarchyMode,
    levels: Vec<LevelMeta>,
}

#[derive(Serialize, Deserialize)]
struct LevelMeta {
    level: usize,
    counts: Vec<usize>,
}

/// Assemble the word- or sentence-level hierarchy for one utterance. The
/// frame level is the input spectrogram itself, not re-pooled.
pub fn build_hierarchy(
    y: &MelSpectrogram,
    utt: &Utterance,
    d: &DurationVector,
    mode: HierarchyMode,
) -> Result<ScaleHierarchy> {
    if matches!(mode, HierarchyMode::Generic) {
        return Err(MssError::ModeError(
            "build_hierarchy needs word_mss or sentence_mss; use ScaleHierarchy::generic".into(),
        ));
    }
    if d.len() != utt.phoneme_count() {
        return Err(MssError::AlignmentMismatch(format!(
            "{} durations for {} phonemes",
            d.len(),
            utt.phoneme_count()
        )));
    }
    if d.total_frames() != y.n_frames() {
        return Err(MssError::AlignmentMismatch(format!(
            "durations total {} frames but spectrogram has {}",
            d.total_frames(),
            y.n_frames()
        )));
    }

    let a1 = AlignmentVector::new(d.durations().to_vec())?;
    let a2 = AlignmentVector::new(word_durations(utt, d))?;
    let mut levels = Vec::new();
    if matches!(mode, HierarchyMode::SentenceMss) {
        let a3 = AlignmentVector::new(sentence_duration(d))?;
        levels.push(ScaleLevel {
            level: 3,
            target: pool_scale(y, &a3)?,
            alignment: a3,
        });
    }
    levels.push(ScaleLevel {
        level: 2,
        target: pool_scale(y, &a2)?,
        alignment: a2,
    });
    levels.push(ScaleLevel {
        level: 1,
        target: pool_scale(y, &a1)?,
        alignment: a1,
    });
    levels.push(ScaleLevel {
        level: 0,
        alignment: AlignmentVector::unit_frames(y.n_frames())?,
        target: y.clone(),
    });
    ScaleHierarchy::from_levels(mode, levels)
}
