use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::phantom::{draw_anatomy, render_slice, DomainSpec};
use super::severity::{sample_severity, SeverityRanges};
use super::{fft2_centered, Image, KspaceError};
use crate::data::{ArtifactClass, Dataset, Domain, InputMode, Sample, NUM_CLASSES};
use crate::grad::Tensor;
use crate::seed::stream;

/// Environment variable capping synthesis worker threads.
pub const THREADS_ENV: &str = "UDA_FORGE_THREADS";

/// Real and imaginary planes of the centered k-space, `[2, H, W]`.
pub fn kspace_planes(img: &Image) -> Result<Tensor, KspaceError> {
    let k = fft2_centered(img)?;
    let n = img.height() * img.width();
    let mut data = Vec::with_capacity(2 * n);
    data.extend(k.data().iter().map(|c| c.re));
    data.extend(k.data().iter().map(|c| c.im));
    Ok(Tensor::new(vec![2, img.height(), img.width()], data).expect("shape matches"))
}

pub fn image_tensor(img: &Image) -> Tensor {
    Tensor::new(vec![1, img.height(), img.width()], img.data().to_vec()).expect("shape matches")
}

/// Options for [`synth_dataset`] beyond the domain itself.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub domain: Domain,
    pub n_patients: usize,
    pub slices_per_patient: usize,
    pub seed: u64,
    pub mode: InputMode,
    pub ranges: SeverityRanges,
}

fn slice_samples(spec: &DomainSpec, opts: &SynthOptions, patient: usize, anatomy_seed: u64, slice: usize) -> Result<Vec<Sample>, KspaceError> {
    let mut anatomy_rng = stream(anatomy_seed, &[]);
    let anatomy = draw_anatomy(spec, &mut anatomy_rng);
    let mut rng = stream(opts.seed, &[patient as u64, slice as u64]);
    let clean = render_slice(spec, &anatomy, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("non-negative sigma");
    let mut out = Vec::with_capacity(NUM_CLASSES);
    for class in ArtifactClass::ALL {
        let mut rng = stream(opts.seed, &[patient as u64, slice as u64, class as u64 + 1]);
        let severity = sample_severity(&mut rng, class.index(), &opts.ranges, spec.size)?;
        let mut img = severity.apply(&clean)?;
        if spec.noise_sigma > 0.0 {
            for v in img.data_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let img = img.clamp01();
        let input = match opts.mode {
            InputMode::Spatial => image_tensor(&img),
            InputMode::Kspace => kspace_planes(&img)?,
        };
        out.push(Sample { input, label: Some(class), domain: opts.domain, patient: patient as u32 });
    }
    Ok(out)
}

/// Generates a class-balanced dataset: every clean slice of every phantom
/// patient is emitted once per class.
pub fn synth_dataset(spec: &DomainSpec, opts: &SynthOptions) -> Result<Dataset, KspaceError> {
    spec.validate()?;
    opts.ranges.validate()?;
    if opts.n_patients < 2 {
        return Err(KspaceError::InvalidParam("at least two patients are needed for patient-out folds".into()));
    }
    if opts.slices_per_patient == 0 {
        return Err(KspaceError::InvalidParam("slices_per_patient must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..opts.n_patients)
        .flat_map(|p| (0..opts.slices_per_patient).map(move |s| (p, s)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(p, s)| {
                let anatomy_seed = crate::seed::derive_seed(opts.seed, &[p as u64, u64::MAX]);
                slice_samples(spec, opts, p, anatomy_seed, s)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let chunks = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| KspaceError::InvalidParam(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let mut ds = Dataset::new(opts.mode, spec.size, spec.size);
    ds.samples = chunks.into_iter().flatten().collect();
    Ok(ds)
}
