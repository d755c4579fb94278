//! Slice / volume / patient hierarchy, the synthetic grouped-data generator
//! and the within-group pixel deviation statistic.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::seed;

/// One 2D slice: the atomic unit that gets annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub slice_id: u32,
    pub patient_id: u32,
    /// Globally unique across patients.
    pub volume_id: u32,
    /// Position along the depth axis of its volume.
    pub slice_index: u32,
    pub pixels: Vec<f32>,
}

/// Identity fields of a slice without its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMeta {
    pub slice_id: u32,
    pub patient_id: u32,
    pub volume_id: u32,
    pub slice_index: u32,
}

impl SliceRecord {
    pub fn meta(&self) -> SliceMeta {
        SliceMeta {
            slice_id: self.slice_id,
            patient_id: self.patient_id,
            volume_id: self.volume_id,
            slice_index: self.slice_index,
        }
    }
}

/// Validated collection of slices plus the patient and volume maps.
///
/// Row positions (indices into `slices`) are the canonical handle used by the
/// sampler, the selectors and the embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    slices: Vec<SliceRecord>,
    /// patient_id -> volume_ids, ascending.
    patients: BTreeMap<u32, Vec<u32>>,
    /// volume_id -> rows ordered by slice_index.
    volumes: BTreeMap<u32, Vec<usize>>,
    h: usize,
    w: usize,
}

impl DatasetIndex {
    /// Build the index and check every structural invariant.
    pub fn new(slices: Vec<SliceRecord>, h: usize, w: usize) -> Result<Self> {
        let dim = h * w;
        let mut ids = std::collections::BTreeSet::new();
        let mut volume_owner: BTreeMap<u32, u32> = BTreeMap::new();
        let mut volumes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (row, s) in slices.iter().enumerate() {
            if s.pixels.len() != dim {
                return Err(Error::Dataset(format!(
                    "slice {} has {} pixels, expected {dim}",
                    s.slice_id,
                    s.pixels.len()
                )));
            }
            if !ids.insert(s.slice_id) {
                return Err(Error::Dataset(format!("duplicate slice_id {}", s.slice_id)));
            }
            match volume_owner.insert(s.volume_id, s.patient_id) {
                Some(p) if p != s.patient_id => {
                    return Err(Error::Dataset(format!(
                        "volume {} belongs to patients {p} and {}",
                        s.volume_id, s.patient_id
                    )))
                }
                _ => {}
            }
            volumes.entry(s.volume_id).or_default().push(row);
        }
        for (vol, rows) in volumes.iter_mut() {
            rows.sort_by_key(|&r| slices[r].slice_index);
            for (expected, &r) in rows.iter().enumerate() {
                if slices[r].slice_index as usize != expected {
                    return Err(Error::Dataset(format!(
                        "volume {vol}: slice indices are not a contiguous 0..d range"
                    )));
                }
            }
        }
        let mut patients: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (&vol, &pat) in &volume_owner {
            patients.entry(pat).or_default().push(vol);
        }
        Ok(Self {
            slices,
            patients,
            volumes,
            h,
            w,
        })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[SliceRecord] {
        &self.slices
    }

    pub fn slice(&self, row: usize) -> &SliceRecord {
        &self.slices[row]
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixel_dim(&self) -> usize {
        self.h * self.w
    }

    /// patient_id -> volume_ids.
    pub fn patients(&self) -> &BTreeMap<u32, Vec<u32>> {
        &self.patients
    }

    /// volume_id -> rows ordered by depth.
    pub fn volumes(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.volumes
    }

    pub fn volume_rows(&self, volume_id: u32) -> &[usize] {
        self.volumes.get(&volume_id).map_or(&[], Vec::as_slice)
    }

    /// All rows belonging to a patient, volume by volume.
    pub fn patient_rows(&self, patient_id: u32) -> Vec<usize> {
        self.patients
            .get(&patient_id)
            .into_iter()
            .flatten()
            .flat_map(|v| self.volume_rows(*v).iter().copied())
            .collect()
    }

    pub fn metas(&self) -> Vec<SliceMeta> {
        self.slices.iter().map(SliceRecord::meta).collect()
    }

    /// Pixels as an n x (h*w) float64 matrix.
    pub fn pixel_matrix(&self) -> Array2<f64> {
        let dim = self.pixel_dim();
        Array2::from_shape_fn((self.len(), dim), |(r, c)| self.slices[r].pixels[c] as f64)
    }
}

/// Parameters of the hierarchical synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub volumes_per_patient: usize,
    pub slices_per_volume: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub patient_scale: f64,
    pub volume_scale: f64,
    pub adjacent_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The reference instance: 20 patients x 2 volumes x 12 slices of 16x16.
    fn default() -> Self {
        Self {
            n_patients: 20,
            volumes_per_patient: 2,
            slices_per_volume: 12,
            h: 16,
            w: 16,
            classes: 8,
            patient_scale: 0.3,
            volume_scale: 1.0,
            adjacent_scale: 0.2,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let total = self.n_patients * self.volumes_per_patient * self.slices_per_volume;
        if total == 0 {
            return Err(Error::InvalidSpec("zero slices requested".into()));
        }
        if self.h == 0 || self.w == 0 {
            return Err(Error::InvalidSpec("image height and width must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        let scales = [
            self.patient_scale,
            self.volume_scale,
            self.adjacent_scale,
            self.noise_scale,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidSpec("scales must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Number of depth bands a volume is split into for labelling.
const LABEL_BANDS: usize = 2;

fn gaussian_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generate a grouped dataset from the additive hierarchical model
///
/// `pixel = patient_offset + volume_offset + depth_component + noise`
///
/// Each volume draws a base class whose prototype is mixed into the volume
/// offset; the slice label is `(base + depth_band) mod k`. The depth component
/// is a smooth trajectory `cos(pi t) A + sin(pi t) B` over two shared patterns.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(DatasetIndex, Vec<u32>)> {
    spec.validate()?;
    let dim = spec.h * spec.w;
    let mut rng = seed::rng(seed::derive(spec.seed, seed::tag::SYNTH));

    let prototypes: Vec<Vec<f64>> = (0..spec.classes).map(|_| gaussian_vec(&mut rng, dim)).collect();
    let depth_a = gaussian_vec(&mut rng, dim);
    let depth_b = gaussian_vec(&mut rng, dim);

    let d = spec.slices_per_volume;
    let mut slices = Vec::with_capacity(spec.n_patients * spec.volumes_per_patient * d);
    let mut labels = Vec::with_capacity(slices.capacity());
    let mut volume_id = 0u32;
    for patient in 0..spec.n_patients {
        let patient_offset = gaussian_vec(&mut rng, dim);
        for _ in 0..spec.volumes_per_patient {
            let base = rng.random_range(0..spec.classes);
            let own = gaussian_vec(&mut rng, dim);
            let volume_offset: Vec<f64> = prototypes[base]
                .iter()
                .zip(&own)
                .map(|(p, o)| (p + o) * std::f64::consts::FRAC_1_SQRT_2)
                .collect();
            for idx in 0..d {
                let t = if d > 1 { idx as f64 / (d - 1) as f64 } else { 0.0 };
                let (c, s) = ((std::f64::consts::PI * t).cos(), (std::f64::consts::PI * t).sin());
                let pixels = (0..dim)
                    .map(|p| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let v = spec.patient_scale * patient_offset[p]
                            + spec.volume_scale * volume_offset[p]
                            + spec.adjacent_scale * (c * depth_a[p] + s * depth_b[p])
                            + spec.noise_scale * noise;
                        v as f32
                    })
                    .collect();
                let band = idx * LABEL_BANDS / d;
                labels.push(((base + band) % spec.classes) as u32);
                slices.push(SliceRecord {
                    slice_id: slices.len() as u32,
                    patient_id: patient as u32,
                    volume_id,
                    slice_index: idx as u32,
                    pixels,
                });
            }
            volume_id += 1;
        }
    }
    Ok((DatasetIndex::new(slices, spec.h, spec.w)?, labels))
}

/// Which slices are compared by [`group_deviation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Dataset,
    Patient,
    Volume,
    Adjacent,
}

impl Grouping {
    pub const ALL: [Grouping; 4] = [
        Grouping::Dataset,
        Grouping::Patient,
        Grouping::Volume,
        Grouping::Adjacent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Grouping::Dataset => "dataset",
            Grouping::Patient => "patient",
            Grouping::Volume => "volume",
            Grouping::Adjacent => "adjacent",
        }
    }
}

impl std::str::FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown grouping `{s}`")))
    }
}

/// Mean pairwise absolute deviation of min-max normalized pixels within groups.
///
/// Each group contributes the mean over its unordered pairs of the mean
/// absolute pixel difference; groups with fewer than two members are skipped
/// and the remaining groups are averaged with equal weight. The adjacent
/// grouping takes, per volume, only pairs whose slice indices differ by one.
pub fn group_deviation(ds: &DatasetIndex, grouping: Grouping) -> Result<f64> {
    let (lo, hi) = ds
        .slices()
        .iter()
        .flat_map(|s| s.pixels.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p as f64), hi.max(p as f64))
        });
    let range = hi - lo;
    let norm: Vec<Vec<f64>> = ds
        .slices()
        .iter()
        .map(|s| {
            s.pixels
                .iter()
                .map(|&p| if range > 0.0 { (p as f64 - lo) / range } else { 0.0 })
                .collect()
        })
        .collect();
    let pair_dev = |a: usize, b: usize| -> f64 {
        let (x, y) = (&norm[a], &norm[b]);
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
    };

    let groups: Vec<Vec<(usize, usize)>> = match grouping {
        Grouping::Dataset => vec![all_pairs(&(0..ds.len()).collect::<Vec<_>>())],
        Grouping::Patient => ds
            .patients()
            .keys()
            .map(|&p| all_pairs(&ds.patient_rows(p)))
            .collect(),
        Grouping::Volume => ds.volumes().values().map(|rows| all_pairs(rows)).collect(),
        Grouping::Adjacent => ds
            .volumes()
            .values()
            .map(|rows| rows.windows(2).map(|w| (w[0], w[1])).collect())
            .collect(),
    };

    let means: Vec<f64> = groups
        .iter()
        .filter(|pairs| !pairs.is_empty())
        .map(|pairs| pairs.iter().map(|&(a, b)| pair_dev(a, b)).sum::<f64>() / pairs.len() as f64)
        .collect();
    if means.is_empty() {
        return Err(Error::UndefinedStatistic(format!(
            "no {} group has two or more members",
            grouping.name()
        )));
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

fn all_pairs(rows: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (i, &a) in rows.iter().enumerate() {
        for &b in &rows[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    h: usize,
    w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<SynthSpec>,
    slices: Vec<SliceMeta>,
}

/// Write `meta.json`, `data.bin` (f32 little-endian, row-major) and `labels.json`.
pub fn write_dataset_dir(
    dir: &Path,
    ds: &DatasetIndex,
    labels: &[u32],
    spec: Option<&SynthSpec>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = DatasetMeta {
        h: ds.height(),
        w: ds.width(),
        spec: spec.cloned(),
        slices: ds.metas(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(io_err(&meta_path))?;

    let data_path = dir.join("data.bin");
    let mut buf = Vec::with_capacity(ds.len() * ds.pixel_dim() * 4);
    for s in ds.slices() {
        for p in &s.pixels {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    let mut f = fs::File::create(&data_path).map_err(io_err(&data_path))?;
    f.write_all(&buf).map_err(io_err(&data_path))?;

    let labels_path = dir.join("labels.json");
    fs::write(&labels_path, serde_json::to_vec(labels)?).map_err(io_err(&labels_path))?;
    Ok(())
}

/// Read a dataset directory written by [`write_dataset_dir`].
pub fn read_dataset_dir(dir: &Path) -> Result<(DatasetIndex, Vec<u32>)> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta =
        serde_json::from_slice(&fs::read(&meta_path).map_err(io_err(&meta_path))?)?;
    let data_path = dir.join("data.bin");
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let dim = meta.h * meta.w;
    let expected = meta.slices.len() * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut slices = Vec::with_capacity(meta.slices.len());
    for (row, m) in meta.slices.iter().enumerate() {
        let pixels: Vec<f32> = bytes[row * dim * 4..(row + 1) * dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(col) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        slices.push(SliceRecord {
            slice_id: m.slice_id,
            patient_id: m.patient_id,
            volume_id: m.volume_id,
            slice_index: m.slice_index,
            pixels,
        });
    }
    let labels_path = dir.join("labels.json");
    let labels: Vec<u32> =
        serde_json::from_slice(&fs::read(&labels_path).map_err(io_err(&labels_path))?)?;
    if labels.len() != slices.len() {
        return Err(Error::CountMismatch {
            header: slices.len(),
            meta: labels.len(),
        });
    }
    Ok((DatasetIndex::new(slices, meta.h, meta.w)?, labels))
}

/// Load a GCLE embedding file as a dataset whose "pixels" are the features.
///
/// The index is built with `h = 1, w = dim`.
pub fn import_embeddings(path: &Path) -> Result<(DatasetIndex, Array2<f64>)> {
    let (matrix, metas) = crate::gcle::read_gcle(path)?;
    let dim = matrix.ncols();
    let slices = metas
        .iter()
        .zip(matrix.rows())
        .map(|(m, row)| SliceRecord {
            slice_id: m.slice_id,
            patient_id: m.patient_id,
            volume_id: m.volume_id,
            slice_index: m.slice_index,
            pixels: row.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    Ok((DatasetIndex::new(slices, 1, dim)?, matrix))
}
