//! Accuracy metrics, the paired t-test, difference maps and label-map
//! rendering.

use std::fmt::Write as _;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{LabelMap, UNLABELED};
use crate::error::{write_file, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Percent.
    pub oa: f64,
    /// Percent; mean recall over classes present in the ground truth.
    pub aa: f64,
    /// Percent per class id `1..=K`; `None` for classes absent from truth.
    pub per_class: Vec<Option<f64>>,
    pub labeled: usize,
    pub correct: usize,
    pub oa_std: f64,
    pub aa_std: f64,
    pub run_count: usize,
}

pub fn compute_metrics(pred: &LabelMap, truth: &LabelMap) -> Result<MetricsReport> {
    pred.expect_extents("compute_metrics", truth.height(), truth.width())?;
    let k = truth.num_classes().max(pred.num_classes());
    let mut total = vec![0usize; k + 1];
    let mut hit = vec![0usize; k + 1];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if t == UNLABELED {
            continue;
        }
        total[t as usize] += 1;
        if p == t {
            hit[t as usize] += 1;
        }
    }
    let labeled: usize = total.iter().sum();
    if labeled == 0 {
        return Err(Error::NoLabeledPixels);
    }
    let correct: usize = hit.iter().sum();
    let per_class: Vec<Option<f64>> = (1..=k)
        .map(|c| (total[c] > 0).then(|| 100.0 * hit[c] as f64 / total[c] as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MetricsReport {
        oa: 100.0 * correct as f64 / labeled as f64,
        aa: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        labeled,
        correct,
        oa_std: 0.0,
        aa_std: 0.0,
        run_count: 1,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean report over repeated runs with sample standard deviations of OA and
/// AA.
pub fn aggregate_reports(runs: &[MetricsReport]) -> Result<MetricsReport> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs to aggregate"))?;
    let oa: Vec<f64> = runs.iter().map(|r| r.oa).collect();
    let aa: Vec<f64> = runs.iter().map(|r| r.aa).collect();
    let (oa, oa_std) = mean_std(&oa);
    let (aa, aa_std) = mean_std(&aa);
    let per_class = (0..first.per_class.len())
        .map(|c| {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.per_class.get(c).copied().flatten())
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Ok(MetricsReport {
        oa,
        aa,
        per_class,
        labeled: first.labeled,
        correct: runs.iter().map(|r| r.correct).sum::<usize>() / runs.len(),
        oa_std,
        aa_std,
        run_count: runs.len(),
    })
}

impl MetricsReport {
    /// Line-oriented `key = value` rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "OA = {:.2}", self.oa).unwrap();
        writeln!(s, "AA = {:.2}", self.aa).unwrap();
        writeln!(s, "OA_std = {:.2}", self.oa_std).unwrap();
        writeln!(s, "AA_std = {:.2}", self.aa_std).unwrap();
        writeln!(s, "runs = {}", self.run_count).unwrap();
        writeln!(s, "labeled = {}", self.labeled).unwrap();
        writeln!(s, "correct = {}", self.correct).unwrap();
        for (c, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => writeln!(s, "class_{} = {a:.2}", c + 1).unwrap(),
                None => writeln!(s, "class_{} = n/a", c + 1).unwrap(),
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on `a[i] - b[i]` at the 95% level.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::shape("paired_t_test", &[a.len()], &[b.len()]));
    }
    if a.len() < 2 {
        return Err(Error::invalid("a paired t-test needs at least 2 runs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&d);
    let n = d.len() as f64;
    let (t, p) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        t,
        p,
        significant: p < 0.05,
    })
}

/// `true` where a labeled pixel is misclassified.
pub fn error_map(pred: &LabelMap, truth: &LabelMap) -> Result<Vec<bool>> {
    pred.expect_extents("error_map", truth.height(), truth.width())?;
    Ok(pred
        .labels()
        .iter()
        .zip(truth.labels())
        .map(|(&p, &t)| t != UNLABELED && p != t)
        .collect())
}

const BASE_PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
];

/// Fixed colour of a class id; 0 is black. Distinct for every id below 4096.
pub fn palette(label: u16) -> [u8; 3] {
    if (label as usize) < BASE_PALETTE.len() {
        return BASE_PALETTE[label as usize];
    }
    let v = label as u32;
    [
        (16 + (v & 0xF) * 15) as u8,
        (8 + ((v >> 4) & 0xF) * 15) as u8,
        (4 + ((v >> 8) & 0xF) * 15) as u8,
    ]
}

pub fn label_from_colour(rgb: [u8; 3]) -> Option<u16> {
    if let Some(i) = BASE_PALETTE.iter().position(|c| *c == rgb) {
        return Some(i as u16);
    }
    let decode = |c: u8, off: u8| {
        let d = c.checked_sub(off)?;
        (d % 15 == 0 && d / 15 < 16).then_some((d / 15) as u32)
    };
    let v = decode(rgb[0], 16)? | (decode(rgb[1], 8)? << 4) | (decode(rgb[2], 4)? << 8);
    (v as usize >= BASE_PALETTE.len()).then_some(v as u16)
}

fn save_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    PnmEncoder::new(&mut bytes)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_file(path, &bytes)
}

pub fn label_image(map: &LabelMap) -> RgbImage {
    RgbImage::from_fn(map.width() as u32, map.height() as u32, |y, x| {
        image::Rgb(palette(map.get(x as usize, y as usize)))
    })
}

/// Writes a binary `P6` pixmap coloured with [`palette`].
pub fn render_label_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    save_ppm(&label_image(map), path.as_ref())
}

/// White where [`error_map`] is set, black elsewhere.
pub fn render_error_map(pred: &LabelMap, truth: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let errs = error_map(pred, truth)?;
    let w = pred.width();
    let img = RgbImage::from_fn(w as u32, pred.height() as u32, |y, x| {
        let v = if errs[x as usize * w + y as usize] { 255 } else { 0 };
        image::Rgb([v, v, v])
    });
    save_ppm(&img, path.as_ref())
}
