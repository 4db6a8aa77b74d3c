use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, normalize, random_crop, VolumeSample};
use crate::error::{Error, Result};
use crate::tensor::Dims3;

/// Training volumes, standardized once, with labeled/unlabeled index lists.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<VolumeSample>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

impl Dataset {
    /// `labeled` volumes must carry labels; labels of `unlabeled` volumes are
    /// dropped so they cannot leak into training.
    pub fn new(labeled: Vec<VolumeSample>, unlabeled: Vec<VolumeSample>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for s in labeled.iter().chain(&unlabeled) {
            if !ids.insert(s.id.clone()) {
                return Err(Error::Data(format!("volume {} appears more than once", s.id)));
            }
        }
        let mut samples = Vec::with_capacity(labeled.len() + unlabeled.len());
        for s in &labeled {
            if s.label.is_none() {
                return Err(Error::Data(format!("labeled volume {} has no label", s.id)));
            }
            samples.push(normalize(s)?);
        }
        for s in &unlabeled {
            let mut n = normalize(s)?;
            n.label = None;
            samples.push(n);
        }
        let nl = labeled.len();
        Ok(Self { labeled: (0..nl).collect(), unlabeled: (nl..samples.len()).collect(), samples })
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn sample(&self, i: usize) -> &VolumeSample {
        &self.samples[i]
    }
}

/// Epoch-style shuffled cursor over one split.
#[derive(Clone, Debug)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(items: &[usize]) -> Self {
        Self { order: items.to_vec(), pos: items.len() }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Draws labeled and unlabeled crops for each training iteration.
#[derive(Clone, Debug)]
pub struct BatchComposer {
    labeled: Cursor,
    unlabeled: Cursor,
    rng: ChaCha8Rng,
}

impl BatchComposer {
    pub fn new(ds: &Dataset, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x0da7a);
        Self { labeled: Cursor::new(&ds.labeled), unlabeled: Cursor::new(&ds.unlabeled), rng }
    }

    /// Each drawn volume is cropped to `crop` and augmented.
    pub fn compose_batch(
        &mut self,
        ds: &Dataset,
        n_labeled: usize,
        n_unlabeled: usize,
        crop: Dims3,
    ) -> Result<(Vec<VolumeSample>, Vec<VolumeSample>)> {
        if n_labeled > ds.n_labeled() || n_unlabeled > ds.n_unlabeled() {
            return Err(Error::Data(format!(
                "batch needs {n_labeled} labeled + {n_unlabeled} unlabeled volumes, dataset has {} + {}",
                ds.n_labeled(),
                ds.n_unlabeled()
            )));
        }
        let take = |cursor: &mut Cursor, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<VolumeSample>> {
            (0..n)
                .map(|_| {
                    let s = &ds.samples[cursor.next(rng)];
                    let c = random_crop(s, crop, rng)?;
                    Ok(augment(&c, rng))
                })
                .collect()
        };
        let l = take(&mut self.labeled, n_labeled, &mut self.rng)?;
        let u = take(&mut self.unlabeled, n_unlabeled, &mut self.rng)?;
        Ok((l, u))
    }
}

/// Splits training ids into labeled and unlabeled parts. The result depends
/// only on the id set, `fraction` and `seed`.
pub fn split_labeled(train_ids: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction must be in (0, 1], got {fraction}")));
    }
    if train_ids.is_empty() {
        return Err(Error::Data("no training volumes".into()));
    }
    let mut ids: Vec<String> = train_ids.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x0005_9117);
    ids.shuffle(&mut rng);
    let n = (num_traits::Float::round(fraction * ids.len() as f64) as usize).clamp(1, ids.len());
    let unlabeled = ids.split_off(n);
    ids.sort();
    let mut unlabeled = unlabeled;
    unlabeled.sort();
    Ok((ids, unlabeled))
}
