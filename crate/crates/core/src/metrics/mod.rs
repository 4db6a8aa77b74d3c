//! Overlap and surface-distance metrics, head coupling diagnostics and
//! whole-test-set evaluation.

mod surface;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, VolumeSample};
use crate::error::{Error, Result};
use crate::objectives::{layer_cosines, LossParams};
use crate::real::Real;
use crate::tensor::{Dims3, Mask};
use crate::volnet::{infer_probs, Group, HeadFusion, ParameterStore};

pub use surface::{directed_distances, extract_surface, surface_distances, Percentile, SurfaceDistances};

fn check_shapes(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!("masks differ in shape: {:?} vs {:?}", a.dims, b.dims)));
    }
    Ok(())
}

/// `(|A ∩ B|, |A|, |B|)` counting nonzero voxels.
fn overlap_counts(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    check_shapes(a, b)?;
    let mut inter = 0;
    let (mut na, mut nb) = (0, 0);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    Ok((inter, na, nb))
}

/// `2|A ∩ B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (i, a, b) = overlap_counts(pred, gt)?;
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (a + b) as f64)
}

/// `|A ∩ B| / |A ∪ B|`; 1 when both masks are empty.
pub fn jaccard_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (i, a, b) = overlap_counts(pred, gt)?;
    let union = a + b - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

/// Cosine (CD) and squared cosine (QCD) between paired head tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub cd: f64,
    pub qcd: f64,
    /// `(cd, qcd)` of every paired layer.
    pub layers: Vec<(f64, f64)>,
}

/// Per-layer cosines averaged over layers; `qcd` matches the decoupling loss.
pub fn coupling_metrics<T: Real>(h1: &[&[T]], h2: &[&[T]]) -> Result<Coupling> {
    let a: Vec<Vec<f64>> = h1.iter().map(|t| t.iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let b: Vec<Vec<f64>> = h2.iter().map(|t| t.iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let a: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
    let b: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
    let cos = layer_cosines(&a, &b, LossParams::default().norm_eps)?;
    if cos.is_empty() {
        return Err(Error::Pairing("heads have no parameter tensors".into()));
    }
    let layers: Vec<(f64, f64)> = cos.iter().map(|&c| (c, c * c)).collect();
    let k = layers.len() as f64;
    Ok(Coupling {
        cd: layers.iter().map(|l| l.0).sum::<f64>() / k,
        qcd: layers.iter().map(|l| l.1).sum::<f64>() / k,
        layers,
    })
}

/// [`coupling_metrics`] of the two heads of a parameter store.
pub fn head_coupling<T: Real>(params: &ParameterStore<T>) -> Result<Coupling> {
    params.head_pairs()?;
    coupling_metrics(&params.head_tensors(Group::Head1), &params.head_tensors(Group::Head2))
}

/// Metrics of one test case. Surface metrics are `None` when either mask is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub dice: f64,
    pub jaccard: f64,
    pub asd: Option<f64>,
    pub hd95: Option<f64>,
}

/// Scores one predicted mask against its ground truth.
pub fn case_metrics(id: &str, pred: &Mask, gt: &Mask, spacing: [f64; 3], percentile: Percentile) -> Result<CaseMetrics> {
    let dice = dice_score(pred, gt)?;
    let jaccard = jaccard_score(pred, gt)?;
    let (asd, hd95) = match surface_distances(pred, gt, spacing, percentile) {
        Ok(s) => (Some(s.asd), Some(s.hd95)),
        Err(Error::EmptyMask(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(CaseMetrics { id: id.into(), dice, jaccard, asd, hd95 })
}

/// Aggregate evaluation of one parameter set on a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    /// Mean over cases with surface metrics; `None` if no case had any.
    pub asd: Option<f64>,
    pub hd95: Option<f64>,
    pub cd: f64,
    pub qcd: f64,
    pub n_cases: usize,
    pub spacing: [f64; 3],
    /// Cases whose surface metrics were skipped because a mask was empty.
    pub skipped_surface: Vec<String>,
    pub cases: Vec<CaseMetrics>,
}

impl MetricsReport {
    /// Means per-case metrics in case order and attaches the coupling of `coupling`.
    pub fn aggregate(cases: Vec<CaseMetrics>, coupling: &Coupling, spacing: [f64; 3]) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Data("no test cases to aggregate".into()));
        }
        let n = cases.len() as f64;
        let mean_opt = |f: fn(&CaseMetrics) -> Option<f64>| {
            let v: Vec<f64> = cases.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Ok(Self {
            dice: cases.iter().map(|c| c.dice).sum::<f64>() / n,
            jaccard: cases.iter().map(|c| c.jaccard).sum::<f64>() / n,
            asd: mean_opt(|c| c.asd),
            hd95: mean_opt(|c| c.hd95),
            cd: coupling.cd,
            qcd: coupling.qcd,
            n_cases: cases.len(),
            spacing,
            skipped_surface: cases.iter().filter(|c| c.asd.is_none()).map(|c| c.id.clone()).collect(),
            cases,
        })
    }
}

/// Sliding-window and distance settings for [`evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub window: Dims3,
    pub stride: Dims3,
    /// Voxel size used for surface distances; unit spacing reports voxels.
    pub spacing: [f64; 3],
    pub percentile: Percentile,
    pub fusion: HeadFusion,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { window: [32; 3], stride: [16; 3], spacing: [1.0; 3], percentile: Percentile::Linear, fusion: HeadFusion::Mean }
    }
}

/// Segments every labeled case (after per-volume standardization) and
/// averages the per-case metrics.
pub fn evaluate<T: Real>(params: &ParameterStore<T>, cases: &[VolumeSample], cfg: &EvalConfig) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let coupling = head_coupling(params)?;
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let gt = case.label.as_ref().ok_or_else(|| Error::Data(format!("test case {} has no label", case.id)))?;
        let vol = normalize(case)?.intensity.map(|v| T::from_f64_lossy(v as f64));
        let pred = infer_probs(params, &vol, cfg.window, cfg.stride, cfg.fusion)?.mask();
        out.push(case_metrics(&case.id, &pred, gt, cfg.spacing, cfg.percentile)?);
    }
    MetricsReport::aggregate(out, &coupling, cfg.spacing)
}
