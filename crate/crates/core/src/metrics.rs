//! Reference speakers, attribute-similarity scores and α sweeps.
//!
//! For descriptor `x` and gender `g`, every speaker that appears as the
//! stronger side of a tuple labelled with `x` is a reference, weighted by its
//! share of those occurrences. ATVAS is the weighted cosine between an edited
//! embedding and the reference means; TVAS at degree α is its gain over α = 0,
//! averaged over sources before subtracting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationTuple, DescriptorId, DescriptorVocab, EmbeddingStore, Gender};
use crate::editor::edit_once;
use crate::error::{Error, Result};
use crate::linalg::cosine_unguarded;
use crate::par::Executor;
use crate::trainer::{AblationMode, ModelParams};

/// Maps working-space embeddings into the space similarities are measured in.
pub trait Verifier: Sync {
    fn embed(&self, e: &[f64]) -> Result<Vec<f64>>;
}

/// Measures similarity directly in the working embedding space.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityVerifier;

impl Verifier for IdentityVerifier {
    fn embed(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(e.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub speaker: String,
    pub occurrences: usize,
    /// `occurrences / Σ occurrences` within the (gender, descriptor) set.
    pub weight: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceTable {
    sets: BTreeMap<(Gender, DescriptorId), Vec<Reference>>,
}

impl ReferenceTable {
    pub fn get(&self, gender: Gender, x: DescriptorId) -> Option<&[Reference]> {
        self.sets.get(&(gender, x)).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = (Gender, DescriptorId)> + '_ {
        self.sets.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

pub fn build_reference_table(
    tuples: &[AnnotationTuple],
    store: &EmbeddingStore,
    vocab: &DescriptorVocab,
) -> Result<ReferenceTable> {
    let mut counts: BTreeMap<(Gender, DescriptorId), BTreeMap<&str, usize>> = BTreeMap::new();
    for t in tuples {
        let b = store
            .speaker(&t.speaker_b)
            .ok_or_else(|| Error::Data(format!("unknown speaker `{}`", t.speaker_b)))?;
        for &x in t.label.descriptors() {
            vocab.check(x)?;
            *counts
                .entry((b.gender, x))
                .or_default()
                .entry(b.speaker_id.as_str())
                .or_insert(0) += 1;
        }
    }
    for g in Gender::ALL {
        for x in 0..vocab.len() {
            if !counts.contains_key(&(g, x)) {
                log::warn!(
                    "descriptor `{}` has no references for gender {g}",
                    vocab.name(x).unwrap_or_default()
                );
            }
        }
    }
    let mut sets = BTreeMap::new();
    for (key, per_speaker) in counts {
        let total: usize = per_speaker.values().sum();
        let refs = per_speaker
            .into_iter()
            .map(|(sp, occ)| Reference {
                speaker: sp.to_string(),
                occurrences: occ,
                weight: occ as f64 / total as f64,
                mean: store.speaker(sp).expect("speaker checked above").mean_embedding(),
            })
            .collect();
        sets.insert(key, refs);
    }
    Ok(ReferenceTable { sets })
}

/// Per-reference cosines `o^j` between `e` and each reference mean.
pub fn reference_cosines(e: &[f64], refs: &[Reference], verifier: &dyn Verifier) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("reference set is empty".into()));
    }
    let v = verifier.embed(e)?;
    refs.iter()
        .map(|r| cosine_unguarded(&v, &verifier.embed(&r.mean)?))
        .collect()
}

/// `Σ_j η_j · cos(e, mean_j)`
pub fn atvas(e: &[f64], refs: &[Reference], verifier: &dyn Verifier) -> Result<f64> {
    let cos = reference_cosines(e, refs, verifier)?;
    Ok(refs.iter().zip(&cos).map(|(r, c)| r.weight * c).sum())
}

/// `0.0, 0.1, …, 1.0`
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSource {
    pub speaker: String,
    pub gender: Gender,
    pub vec: Vec<f64>,
}

/// Mean embedding of every speaker in `store`.
pub fn speaker_sources(store: &EmbeddingStore) -> Vec<EditSource> {
    store
        .speakers()
        .map(|s| EditSource {
            speaker: s.speaker_id.clone(),
            gender: s.gender,
            vec: s.mean_embedding(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvasRow {
    pub descriptor: String,
    pub alphas: Vec<f64>,
    /// Source-averaged ATVAS per α.
    pub atvas: Vec<f64>,
    /// `atvas[i] − atvas[α = 0]`
    pub tvas: Vec<f64>,
    /// Mean of `tvas` over the grid.
    pub score: f64,
    /// Speakers that contributed, in order.
    pub sources: Vec<String>,
    /// `cosines[α][source][reference]`
    pub cosines: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvasReport {
    pub mode: AblationMode,
    pub rows: Vec<TvasRow>,
}

impl TvasReport {
    pub fn row(&self, descriptor: &str) -> Option<&TvasRow> {
        self.rows.iter().find(|r| r.descriptor == descriptor)
    }
}

#[derive(Clone, Copy)]
pub struct SweepContext<'a> {
    pub params: &'a ModelParams,
    pub vocab: &'a DescriptorVocab,
    pub refs: &'a ReferenceTable,
    pub verifier: &'a dyn Verifier,
    pub mode: AblationMode,
    pub exec: &'a Executor,
}

pub fn tvas_curve(ctx: &SweepContext<'_>, sources: &[EditSource], x: DescriptorId, grid: &[f64]) -> Result<TvasRow> {
    ctx.vocab.check(x)?;
    let zero = grid
        .iter()
        .position(|&a| a == 0.0)
        .ok_or_else(|| Error::InvalidArgument("alpha grid must contain 0".into()))?;
    let usable: Vec<(&EditSource, &[Reference])> = sources
        .iter()
        .filter_map(|s| ctx.refs.get(s.gender, x).map(|r| (s, r)))
        .collect();
    let name = ctx.vocab.name(x).unwrap_or_default().to_string();
    if usable.is_empty() {
        return Err(Error::Data(format!("no source has references for `{name}`")));
    }
    if usable.len() < sources.len() {
        log::warn!(
            "{} of {} sources lack references for `{name}` and are skipped",
            sources.len() - usable.len(),
            sources.len()
        );
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|a| (0..usable.len()).map(move |s| (a, s)))
        .collect();
    let results = ctx.exec.map(&jobs, |&(a, s)| {
        let (src, refs) = usable[s];
        let e = edit_once(ctx.params, &src.vec, x, grid[a], ctx.mode)?;
        reference_cosines(&e, refs, ctx.verifier)
    });
    let mut cosines = vec![Vec::with_capacity(usable.len()); grid.len()];
    let mut atvas = vec![0.0; grid.len()];
    for (&(a, s), r) in jobs.iter().zip(results) {
        let cos = r?;
        let v: f64 = usable[s].1.iter().zip(&cos).map(|(rf, c)| rf.weight * c).sum();
        atvas[a] += v;
        cosines[a].push(cos);
    }
    let n = usable.len() as f64;
    for v in &mut atvas {
        *v /= n;
    }
    let base = atvas[zero];
    let tvas: Vec<f64> = atvas.iter().map(|v| v - base).collect();
    let score = tvas.iter().sum::<f64>() / tvas.len() as f64;
    Ok(TvasRow {
        descriptor: name,
        alphas: grid.to_vec(),
        atvas,
        tvas,
        score,
        sources: usable.iter().map(|(s, _)| s.speaker.clone()).collect(),
        cosines,
    })
}

/// One row per descriptor that has references.
pub fn tvas_report(ctx: &SweepContext<'_>, sources: &[EditSource], grid: &[f64]) -> Result<TvasReport> {
    let mut rows = Vec::new();
    for x in 0..ctx.vocab.len() {
        if Gender::ALL.iter().all(|&g| ctx.refs.get(g, x).is_none()) {
            continue;
        }
        rows.push(tvas_curve(ctx, sources, x, grid)?);
    }
    Ok(TvasReport { mode: ctx.mode, rows })
}

pub fn report_csv(report: &TvasReport) -> String {
    let mut out = String::from("descriptor,alpha,atvas,tvas\n");
    for row in &report.rows {
        for i in 0..row.alphas.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.descriptor, row.alphas[i], row.atvas[i], row.tvas[i]
            );
        }
    }
    out
}

pub fn export_report(report: &TvasReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub descriptor: String,
    pub alpha: f64,
    pub atvas: f64,
    pub tvas: f64,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "descriptor,alpha,atvas,tvas")) => {}
        _ => return Err(Error::Data("missing report header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = |m: &str| Error::Data(format!("report line {}: {m}", i + 1));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(CsvRow {
                descriptor: f[0].to_string(),
                alpha: num(f[1])?,
                atvas: num(f[2])?,
                tvas: num(f[3])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRow {
    pub speaker: String,
    pub descriptor: String,
    pub alpha: f64,
    pub vec: Vec<f64>,
}

/// Edited embeddings for every (source, descriptor, α), for external
/// projection plots.
pub fn embedding_dump(ctx: &SweepContext<'_>, sources: &[EditSource], grid: &[f64]) -> Result<Vec<DumpRow>> {
    let jobs: Vec<(usize, DescriptorId, usize)> = (0..sources.len())
        .flat_map(|s| (0..ctx.vocab.len()).flat_map(move |x| (0..grid.len()).map(move |a| (s, x, a))))
        .collect();
    ctx.exec
        .map(&jobs, |&(s, x, a)| {
            let vec = edit_once(ctx.params, &sources[s].vec, x, grid[a], ctx.mode)?;
            Ok(DumpRow {
                speaker: sources[s].speaker.clone(),
                descriptor: ctx.vocab.name(x).unwrap_or_default().to_string(),
                alpha: grid[a],
                vec,
            })
        })
        .into_iter()
        .collect()
}

pub fn write_dump(path: impl AsRef<Path>, rows: &[DumpRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(w: f64, mean: Vec<f64>) -> Reference {
        Reference {
            speaker: String::new(),
            occurrences: 1,
            weight: w,
            mean,
        }
    }

    #[test]
    fn atvas_cases() {
        let v = IdentityVerifier;
        assert!((atvas(&[1.0, 2.0], &[r(1.0, vec![1.0, 2.0])], &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(atvas(&[1.0, 0.0], &[r(1.0, vec![0.0, 3.0])], &v).unwrap(), 0.0);
        // cos 0.9 and 0.6 against unit references at the matching angles.
        let e = [1.0, 0.0];
        let at = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let refs = [r(2.0 / 3.0, at(0.9)), r(1.0 / 3.0, at(0.6))];
        assert!((atvas(&e, &refs, &v).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(atvas(&[0.0, 0.0], &refs, &v), Err(Error::ZeroNorm)));
        assert!(atvas(&e, &[], &v).is_err());
    }

    #[test]
    fn grid() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[3].to_string(), "0.3");
    }

    #[test]
    fn csv_parse_rejects_garbage() {
        assert!(parse_report_csv("nope\n").is_err());
        assert!(parse_report_csv("descriptor,alpha,atvas,tvas\nx,1\n").is_err());
        assert_eq!(parse_report_csv("descriptor,alpha,atvas,tvas\n").unwrap(), vec![]);
    }
}
