use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ImageRecord;
use crate::error::{PriseError, Result};
use crate::seed;

/// Top-5 pseudo scene classes of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoSceneLabels {
    pub image_id: String,
    top5: [u32; 5],
}

impl PseudoSceneLabels {
    pub fn new(image_id: impl Into<String>, top5: &[u32]) -> Result<Self> {
        let image_id = image_id.into();
        let arr: [u32; 5] = top5.try_into().map_err(|_| {
            PriseError::validation(&image_id, "pseudo_top5", format!("expected 5 entries, got {}", top5.len()))
        })?;
        for (k, a) in arr.iter().enumerate() {
            if arr[..k].contains(a) {
                return Err(PriseError::validation(&image_id, "pseudo_top5", "duplicate scene class"));
            }
        }
        Ok(Self { image_id, top5: arr })
    }

    pub fn from_record(record: &ImageRecord) -> Result<Self> {
        let top5 = record.pseudo_top5.as_ref().ok_or_else(|| {
            PriseError::validation(&record.image_id, "pseudo_top5", "missing pseudo scene labels")
        })?;
        Self::new(record.image_id.clone(), top5)
    }

    pub fn top5(&self) -> &[u32; 5] {
        &self.top5
    }

    pub fn overlap(&self, other: &Self) -> usize {
        self.top5.iter().filter(|c| other.top5.contains(c)).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Shared-class threshold.
    pub k: usize,
    /// `true`: similar iff overlap > k; `false`: overlap >= k.
    pub strict: bool,
    pub cap: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            k: 2,
            strict: true,
            cap: 50,
            seed: 0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k > 5 {
            return Err(PriseError::Config(format!("pool overlap K must be in 0..=5, got {}", self.k)));
        }
        if self.cap == 0 {
            return Err(PriseError::Config("pool cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_similar(&self, a: &PseudoSceneLabels, b: &PseudoSceneLabels) -> bool {
        let o = a.overlap(b);
        if self.strict {
            o > self.k
        } else {
            o >= self.k
        }
    }
}

/// Similar and dissimilar pools per image, as indices into `ids`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastPools {
    pub ids: Vec<String>,
    pub similar: Vec<Vec<usize>>,
    pub dissimilar: Vec<Vec<usize>>,
}

fn cap_pool(mut pool: Vec<usize>, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if pool.len() <= cap {
        return pool;
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), cap).into_iter().map(|k| pool[k]).collect();
    picked.sort_unstable();
    pool.clear();
    picked
}

pub fn labels_from_records(records: &[ImageRecord]) -> Result<Vec<PseudoSceneLabels>> {
    records.iter().map(PseudoSceneLabels::from_record).collect()
}

pub fn build_pools(labels: &[PseudoSceneLabels], cfg: &PoolConfig) -> Result<ContrastPools> {
    cfg.validate()?;
    let candidates: Vec<(Vec<usize>, Vec<usize>)> = (0..labels.len())
        .into_par_iter()
        .map(|a| {
            let mut sim = Vec::new();
            let mut dis = Vec::new();
            for b in 0..labels.len() {
                if a == b {
                    continue;
                }
                if cfg.is_similar(&labels[a], &labels[b]) {
                    sim.push(b);
                } else {
                    dis.push(b);
                }
            }
            (sim, dis)
        })
        .collect();
    let mut rng = seed::rng(cfg.seed, "pools/cap");
    let mut similar = Vec::with_capacity(labels.len());
    let mut dissimilar = Vec::with_capacity(labels.len());
    for (sim, dis) in candidates {
        similar.push(cap_pool(sim, cfg.cap, &mut rng));
        dissimilar.push(cap_pool(dis, cfg.cap, &mut rng));
    }
    Ok(ContrastPools {
        ids: labels.iter().map(|l| l.image_id.clone()).collect(),
        similar,
        dissimilar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipRecord {
    pub image_id: String,
    pub reason: &'static str,
}

impl ContrastPools {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// One uniform draw from each pool of `anchor`.
    pub fn sample_triplet(&self, anchor: usize, rng: &mut impl Rng) -> Result<Triplet, SkipRecord> {
        let skip = |reason| SkipRecord {
            image_id: self.ids[anchor].clone(),
            reason,
        };
        let sim = &self.similar[anchor];
        let dis = &self.dissimilar[anchor];
        if sim.is_empty() {
            return Err(skip("empty similar pool"));
        }
        if dis.is_empty() {
            return Err(skip("empty dissimilar pool"));
        }
        Ok(Triplet {
            anchor,
            positive: sim[rng.random_range(0..sim.len())],
            negative: dis[rng.random_range(0..dis.len())],
        })
    }

    pub fn sample_triplet_seeded(&self, anchor: usize, seed: u64) -> Result<Triplet, SkipRecord> {
        let mut rng = seed::rng(seed, &format!("triplet/{anchor}"));
        self.sample_triplet(anchor, &mut rng)
    }

    /// A triplet for every anchor in order; skipped anchors are logged and returned.
    pub fn sample_all(&self, anchors: &[usize], rng: &mut impl Rng) -> (Vec<Triplet>, Vec<SkipRecord>) {
        let mut triplets = Vec::with_capacity(anchors.len());
        let mut skipped = Vec::new();
        for &a in anchors {
            match self.sample_triplet(a, rng) {
                Ok(t) => triplets.push(t),
                Err(s) => {
                    log::debug!("skipping anchor {}: {}", s.image_id, s.reason);
                    skipped.push(s);
                }
            }
        }
        (triplets, skipped)
    }

    /// `image_id <TAB> sim:id,id,... <TAB> dis:id,id,...`, one line per image.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |pool: &[usize]| {
            pool.iter()
                .map(|&k| self.ids[k].as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        for (k, id) in self.ids.iter().enumerate() {
            let _ = writeln!(
                out,
                "{id}\tsim:{}\tdis:{}",
                join(&self.similar[k]),
                join(&self.dissimilar[k])
            );
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse = |line: usize, message: String| PriseError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut ids = Vec::new();
        let mut raw = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, sim, dis] = cols.as_slice() else {
                return Err(parse(k + 1, format!("expected 3 tab-separated fields, got {}", cols.len())));
            };
            let field = |s: &str, prefix: &str| -> Result<Vec<String>> {
                let body = s
                    .strip_prefix(prefix)
                    .ok_or_else(|| parse(k + 1, format!("field must start with `{prefix}`")))?;
                Ok(body.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
            };
            ids.push(id.to_string());
            raw.push((k + 1, field(sim, "sim:")?, field(dis, "dis:")?));
        }
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
        let mut similar = Vec::new();
        let mut dissimilar = Vec::new();
        for (line, sim, dis) in &raw {
            let resolve = |names: &[String]| -> Result<Vec<usize>> {
                names
                    .iter()
                    .map(|n| {
                        index
                            .get(n.as_str())
                            .copied()
                            .ok_or_else(|| parse(*line, format!("unknown image id `{n}`")))
                    })
                    .collect()
            };
            similar.push(resolve(sim)?);
            dissimilar.push(resolve(dis)?);
        }
        Ok(Self {
            ids,
            similar,
            dissimilar,
        })
    }
}
