//! Training tables built from corpus records.

use super::{Arch, Scaling, TrainData};
use crate::dataset::{NormalizationStats, SampleRecord};
use crate::error::{Error, Result};
use crate::pricing::SURFACE_POINTS;

/// Replaces dropped surface points by the training mean, i.e. zero after normalisation.
pub fn fill_masked(surfaces: &[f64], mean: &[f64]) -> Vec<f64> {
    surfaces.iter().zip(mean).map(|(v, m)| if v.is_finite() { *v } else { *m }).collect()
}

/// Normalised inputs and targets for one of the surface networks.
pub fn surface_training_data(arch: Arch, records: &[SampleRecord], stats: &NormalizationStats) -> Result<TrainData> {
    let scaling = Scaling::from_stats(arch, stats)?;
    let (mut x, mut y, mut mask) = (vec![], vec![], vec![]);
    for r in records {
        match arch {
            Arch::MtpSpx | Arch::MtpVix => {
                let offset = if arch == Arch::MtpSpx { 0 } else { SURFACE_POINTS };
                x.extend(scaling.normalize_input(&r.inputs()));
                let surface = &r.surfaces()[offset..offset + SURFACE_POINTS];
                for (k, v) in surface.iter().enumerate() {
                    let ok = v.is_finite();
                    mask.push(ok);
                    y.push(if ok { (v - scaling.out_center[k]) / scaling.out_scale[k] } else { 0.0 });
                }
            }
            Arch::Ptm => {
                x.extend(scaling.normalize_input(&fill_masked(&r.surfaces(), &scaling.in_center)));
                y.extend(scaling.normalize_output(&r.inputs()));
            }
            _ => return Err(Error::domain(format!("{arch} is not trained on surfaces"))),
        }
    }
    let dims = arch.dims().expect("fixed architecture");
    let mask = if arch == Arch::Ptm { None } else { Some(mask) };
    TrainData::new(dims[0], dims[dims.len() - 1], x, y, mask)
}
