//! Voxel grids, coordinate normalization, sparse-slice sampling and task
//! construction.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Axis-aligned voxel grid. Values are stored x-fastest:
/// `index = i + nx·(j + ny·k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    values: Vec<f64>,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::contract(format!(
                "grid spacing must be positive, got {spacing_mm:?}"
            )));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::contract("grid dims overflow"))?;
        if values.len() != n {
            return Err(Error::contract(format!(
                "grid {dims:?} holds {n} voxels, got {}",
                values.len()
            )));
        }
        Ok(VolumeGrid {
            dims,
            spacing_mm,
            values,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing_mm, alloc::vec![0.0; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn flat_index(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unflat_index(&self, flat: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], v: f64) {
        let f = self.flat_index(idx);
        self.values[f] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.len() as f64
    }

    /// Whether any foreground voxel lies on a face of the grid.
    pub fn touches_boundary(&self) -> bool {
        let [nx, ny, nz] = self.dims;
        self.values.iter().enumerate().any(|(f, &v)| {
            if v == 0.0 {
                return false;
            }
            let [i, j, k] = self.unflat_index(f);
            i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz
        })
    }

    pub fn same_geometry(&self, other: &VolumeGrid) -> bool {
        self.dims == other.dims && self.spacing_mm == other.spacing_mm
    }
}

/// Slicing axis. Sagittal, coronal and axial map to grid x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Sagittal,
    Coronal,
    Axial,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Sagittal, Axis::Coronal, Axis::Axial];

    pub fn index(self) -> usize {
        match self {
            Axis::Sagittal => 0,
            Axis::Coronal => 1,
            Axis::Axial => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
            Axis::Axial => "axial",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "sagittal" | "x" => Some(Axis::Sagittal),
            "coronal" | "y" => Some(Axis::Coronal),
            "axial" | "z" => Some(Axis::Axial),
            _ => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a grid index to `[-1, 1]³` with `x = 2i/(n−1) − 1` per axis; an
/// axis of extent 1 maps to 0.
pub fn normalize_index(idx: [usize; 3], dims: [usize; 3]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for a in 0..3 {
        if idx[a] >= dims[a] {
            return Err(Error::contract(format!(
                "index {idx:?} out of range for dims {dims:?}"
            )));
        }
        out[a] = normalize_axis(idx[a], dims[a]);
    }
    Ok(out)
}

#[inline]
pub(crate) fn normalize_axis(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Where the points of an observation set came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Slices { axis: Axis, w: usize, phase: usize },
    RandomSubset,
}

/// Labeled points in normalized coordinates, kept as `[M, 3]` and `[M, 1]`
/// tensors ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    coords: Tensor,
    labels: Tensor,
    /// Flat grid index each point was read from.
    source: Vec<usize>,
    provenance: Provenance,
}

impl ObservationSet {
    /// Builds an observation set by reading `flat_indices` from `grid`.
    pub fn from_grid(
        grid: &VolumeGrid,
        flat_indices: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if flat_indices.is_empty() {
            return Err(Error::contract("observation set must be nonempty"));
        }
        let dims = grid.dims();
        let mut coords = Vec::with_capacity(3 * flat_indices.len());
        let mut labels = Vec::with_capacity(flat_indices.len());
        for &f in &flat_indices {
            let idx = grid.unflat_index(f);
            for a in 0..3 {
                coords.push(normalize_axis(idx[a], dims[a]));
            }
            labels.push(grid.values()[f]);
        }
        let m = flat_indices.len();
        Ok(ObservationSet {
            coords: Tensor::new(Shape::matrix(m, 3), coords)?,
            labels: Tensor::new(Shape::matrix(m, 1), labels)?,
            source: flat_indices,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let d = self.coords.data();
        [d[3 * i], d[3 * i + 1], d[3 * i + 2]]
    }

    /// A random subset of `n` points (without replacement), order preserved.
    pub fn subsample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ObservationSet> {
        if n == 0 || n > self.len() {
            return Err(Error::contract(format!(
                "cannot draw {n} of {} observations",
                self.len()
            )));
        }
        if n == self.len() {
            return Ok(self.clone());
        }
        let mut picks = index::sample(rng, self.len(), n).into_vec();
        picks.sort_unstable();
        let c = self.coords.data();
        let l = self.labels.data();
        let mut coords = Vec::with_capacity(3 * n);
        let mut labels = Vec::with_capacity(n);
        let mut source = Vec::with_capacity(n);
        for &p in &picks {
            coords.extend_from_slice(&c[3 * p..3 * p + 3]);
            labels.push(l[p]);
            source.push(self.source[p]);
        }
        Ok(ObservationSet {
            coords: Tensor::new(Shape::matrix(n, 3), coords)?,
            labels: Tensor::new(Shape::matrix(n, 1), labels)?,
            source,
            provenance: self.provenance,
        })
    }
}

/// Every voxel (both classes) on slices `phase, phase + w, …` along `axis`.
pub fn sample_slices(
    grid: &VolumeGrid,
    axis: Axis,
    w: usize,
    phase: usize,
) -> Result<ObservationSet> {
    let extent = grid.dims()[axis.index()];
    if w == 0 || (w >= extent && extent > 1) || phase >= w {
        return Err(Error::contract(format!(
            "slice spacing {w} with phase {phase} is invalid for extent {extent}"
        )));
    }
    let a = axis.index();
    let indices: Vec<usize> = (0..grid.len())
        .filter(|&f| grid.unflat_index(f)[a] % w == phase)
        .collect();
    ObservationSet::from_grid(grid, indices, Provenance::Slices { axis, w, phase })
}

/// Slice indices kept along an axis of the given extent.
pub fn slice_indices(extent: usize, w: usize, phase: usize) -> Vec<usize> {
    (phase..extent).step_by(w.max(1)).collect()
}

/// How context observations are drawn for a task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub axis: Axis,
    pub w: usize,
    /// Target points drawn from the full grid per task.
    pub n_target: usize,
    /// Optional random subset size of the context slices.
    pub n_context: Option<usize>,
    /// Draw a fresh slice phase per task; otherwise phase 0.
    pub random_phase: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            axis: Axis::Sagittal,
            w: 8,
            n_target: 4096,
            n_context: None,
            random_phase: true,
        }
    }
}

/// Context/target pair built from one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub context: ObservationSet,
    pub target: ObservationSet,
    pub shape_id: usize,
}

/// Draws `n` distinct voxels uniformly from the whole grid.
pub fn sample_uniform<R: Rng + ?Sized>(
    grid: &VolumeGrid,
    n: usize,
    rng: &mut R,
) -> Result<ObservationSet> {
    if n == 0 || n > grid.len() {
        return Err(Error::contract(format!(
            "cannot draw {n} of {} voxels",
            grid.len()
        )));
    }
    let indices = index::sample(rng, grid.len(), n).into_vec();
    ObservationSet::from_grid(grid, indices, Provenance::RandomSubset)
}

/// Context from sparse slices at a random phase; target from the whole grid.
pub fn make_task<R: Rng + ?Sized>(
    grid: &VolumeGrid,
    sampler: &SamplerConfig,
    shape_id: usize,
    rng: &mut R,
) -> Result<Task> {
    if sampler.n_target == 0 {
        return Err(Error::contract("n_target must be at least 1"));
    }
    let phase = if sampler.random_phase {
        rng.gen_range(0..sampler.w.max(1))
    } else {
        0
    };
    let mut context = sample_slices(grid, sampler.axis, sampler.w, phase)?;
    if let Some(n) = sampler.n_context {
        if n < context.len() {
            context = context.subsample(n, rng)?;
        }
    }
    let target = sample_uniform(grid, sampler.n_target, rng)?;
    Ok(Task {
        context,
        target,
        shape_id,
    })
}
