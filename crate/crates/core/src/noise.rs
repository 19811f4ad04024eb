//! Discretized space-time white noise and the polymer Hamiltonian.
//!
//! A realization assigns each cell `(slab k, spatial cell j)` an independent
//! `N(0, dt dx^d)` increment. Increments are a pure function of `(seed, k,
//! j)` via a counter-based hash, so realizations regenerate bit-identically,
//! cost no memory at any horizon, and can be shared freely across workers.
//! Girsanov tilts are sparse drift overlays added on top; the base array is
//! never touched.
//!
//! The Hamiltonian of a path is `H = sum_k sum_j phi(w_{t_k} - y_j) dB[k][j]`
//! together with its exact discrete variance `var = dt dx^d sum phi^2`, which
//! is the normalizer used everywhere: `E[exp(g H - g^2/2 var)] = 1` holds
//! exactly per path at the discrete level, with no discretization bias.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::mollifier::Mollifier;
use crate::paths::PathSample;
use crate::rng;

const MAX_D: usize = 8;

/// Sparse mean shift: for each slab, cells (sorted) with their drift values.
#[derive(Debug, Clone, Default)]
pub struct DriftOverlay {
    slabs: Vec<Vec<(u64, f64)>>,
}

impl DriftOverlay {
    #[inline(always)]
    fn value(&self, slab: usize, cell: u64) -> f64 {
        match self.slabs.get(slab) {
            None => 0.0,
            Some(entries) => match entries.binary_search_by_key(&cell, |e| e.0) {
                Ok(i) => entries[i].1,
                Err(_) => 0.0,
            },
        }
    }

    fn merge(&self, other: &DriftOverlay) -> DriftOverlay {
        let n = self.slabs.len().max(other.slabs.len());
        let mut slabs = Vec::with_capacity(n);
        for k in 0..n {
            let a = self.slabs.get(k).map(|v| v.as_slice()).unwrap_or(&[]);
            let b = other.slabs.get(k).map(|v| v.as_slice()).unwrap_or(&[]);
            let mut merged: Vec<(u64, f64)> = Vec::with_capacity(a.len() + b.len());
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
                    merged.push(a[i]);
                    i += 1;
                } else if i >= a.len() || b[j].0 < a[i].0 {
                    merged.push(b[j]);
                    j += 1;
                } else {
                    merged.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
            slabs.push(merged);
        }
        DriftOverlay { slabs }
    }

    pub fn entry_count(&self) -> usize {
        self.slabs.iter().map(|s| s.len()).sum()
    }
}

/// A seeded realization of the lattice noise, immutable after construction.
#[derive(Debug, Clone)]
pub struct WhiteNoiseRealization {
    pub spec: LatticeSpec,
    pub seed: u64,
    scale: f64,
    sigma: f64,
    /// Slabs at index >= cutoff draw from an alternate seed; used to verify
    /// adaptedness (values at horizon T must not depend on later slabs).
    tail_reseed: Option<(usize, u64)>,
    drift: Option<Arc<DriftOverlay>>,
}

/// Deterministic realization of the noise for `(spec, seed)`.
pub fn sample_noise(spec: &LatticeSpec, seed: u64) -> Result<WhiteNoiseRealization> {
    spec.validate()?;
    Ok(WhiteNoiseRealization {
        spec: spec.clone(),
        seed,
        scale: 1.0,
        sigma: spec.cell_variance().sqrt(),
        tail_reseed: None,
        drift: None,
    })
}

impl WhiteNoiseRealization {
    /// The increment of one cell, drift overlay included.
    #[inline(always)]
    pub fn increment(&self, slab: usize, cell: u64) -> f64 {
        let mut v = self.scale * self.sigma * rng::standard_normal(self.cell_bits(slab, cell));
        if let Some(d) = &self.drift {
            v += d.value(slab, cell);
        }
        v
    }

    #[inline(always)]
    fn slab_seed(&self, slab: usize) -> u64 {
        match self.tail_reseed {
            Some((cutoff, alt)) if slab >= cutoff => alt,
            _ => self.seed,
        }
    }

    #[inline(always)]
    fn cell_bits(&self, slab: usize, cell: u64) -> u64 {
        rng::cell_hash(self.slab_seed(slab), slab as u64, cell)
    }

    /// Copy with all increments (base and drift) multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let drift = self.drift.as_ref().map(|d| {
            let slabs = d
                .slabs
                .iter()
                .map(|s| s.iter().map(|&(cell, v)| (cell, c * v)).collect())
                .collect();
            Arc::new(DriftOverlay { slabs })
        });
        WhiteNoiseRealization { scale: self.scale * c, drift, ..self.clone() }
    }

    /// The zero field on the same lattice.
    pub fn zeroed(spec: &LatticeSpec) -> Result<Self> {
        Ok(WhiteNoiseRealization { scale: 0.0, ..sample_noise(spec, 0)? })
    }

    /// Copy whose slabs at index >= `cutoff` are redrawn from `alt_seed`.
    pub fn reseeded_after(&self, cutoff: usize, alt_seed: u64) -> Self {
        WhiteNoiseRealization { tail_reseed: Some((cutoff, alt_seed)), ..self.clone() }
    }

    pub fn drift(&self) -> Option<&DriftOverlay> {
        self.drift.as_deref()
    }

    /// Dense slab-major materialization, refused beyond the byte budget.
    pub fn materialize(&self, budget_bytes: u128) -> Result<Vec<f64>> {
        let required = self.spec.dense_bytes();
        if required > budget_bytes {
            return Err(Error::BudgetExceeded { required_bytes: required, budget_bytes });
        }
        let cells = self.spec.cells_per_slab() as usize;
        let mut out = Vec::with_capacity(self.spec.slabs() * cells);
        for k in 0..self.spec.slabs() {
            for j in 0..cells as u64 {
                out.push(self.increment(k, j));
            }
        }
        Ok(out)
    }
}

/// Per-axis index window and squared distances for the mollifier support
/// around a point; reused across slabs of a path.
struct SupportScratch {
    lo: [usize; MAX_D],
    count: [usize; MAX_D],
    stride: [u64; MAX_D],
    offsets: [usize; MAX_D],
    diffs: Vec<f64>,
}

impl SupportScratch {
    fn new(spec: &LatticeSpec) -> Self {
        let n = spec.points_per_axis();
        let mut stride = [0u64; MAX_D];
        let mut s = 1u64;
        for a in 0..spec.d {
            stride[a] = s;
            s *= n as u64;
        }
        SupportScratch {
            lo: [0; MAX_D],
            count: [0; MAX_D],
            stride,
            offsets: [0; MAX_D],
            diffs: Vec::new(),
        }
    }

    /// Fill the window for the ball of radius `rho` around `x`. Errors if the
    /// ball leaves the box.
    #[inline]
    fn fill(&mut self, spec: &LatticeSpec, rho: f64, x: &[f64]) -> std::result::Result<(), f64> {
        let n = spec.points_per_axis();
        let l = spec.half_width;
        self.diffs.clear();
        let mut required: f64 = 0.0;
        for &xa in x.iter() {
            required = required.max(xa.abs() + rho);
        }
        if required > l {
            return Err(required);
        }
        for (a, &xa) in x.iter().enumerate() {
            let lo = ((xa - rho + l) / spec.dx).ceil().max(0.0) as usize;
            let hi = (((xa + rho + l) / spec.dx).floor() as usize).min(n - 1);
            self.lo[a] = lo;
            self.count[a] = hi + 1 - lo;
            self.offsets[a] = self.diffs.len();
            for i in lo..=hi {
                let dya = xa - spec.axis_coord(i);
                self.diffs.push(dya * dya);
            }
        }
        Ok(())
    }

    /// Visit every cell of the window whose center lies within `rho` of the
    /// point, in increasing cell order, passing `(cell, squared distance)`.
    #[inline]
    fn visit(&self, d: usize, rho2: f64, mut body: impl FnMut(u64, f64)) {
        let mut ix = [0usize; MAX_D];
        let inner = &self.diffs[self.offsets[0]..self.offsets[0] + self.count[0]];
        let inner_lo = self.lo[0] as u64;
        loop {
            let mut r2_base = 0.0;
            let mut cell_base = 0u64;
            for a in 1..d {
                r2_base += self.diffs[self.offsets[a] + ix[a]];
                cell_base += (self.lo[a] + ix[a]) as u64 * self.stride[a];
            }
            if r2_base < rho2 {
                for (i, &d2) in inner.iter().enumerate() {
                    let r2 = r2_base + d2;
                    if r2 < rho2 {
                        body(cell_base + inner_lo + i as u64, r2);
                    }
                }
            }
            let mut a = 1;
            loop {
                if a >= d {
                    return;
                }
                ix[a] += 1;
                if ix[a] < self.count[a] {
                    break;
                }
                ix[a] = 0;
                a += 1;
            }
        }
    }
}

fn check_path_grid(spec: &LatticeSpec, path: &PathSample) -> Result<()> {
    if path.d != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: path.d });
    }
    if (path.dt - spec.dt).abs() > 1e-12 * spec.dt {
        return Err(Error::InvalidArgument(format!(
            "path dt {} differs from lattice dt {}",
            path.dt, spec.dt
        )));
    }
    if path.steps() > spec.slabs() {
        return Err(Error::InvalidArgument(format!(
            "path has {} steps but the lattice holds {} slabs",
            path.steps(),
            spec.slabs()
        )));
    }
    Ok(())
}

/// One time-slab contribution of the mollified field at point `x`:
/// `sum_j phi(x - y_j) dB[slab][j]`.
pub fn field_increment(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    slab: usize,
    x: &[f64],
) -> Result<f64> {
    let spec = &noise.spec;
    if x.len() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: x.len() });
    }
    if slab >= spec.slabs() {
        return Err(Error::InvalidArgument(format!("slab {slab} out of range")));
    }
    let mut scratch = SupportScratch::new(spec);
    if let Err(required) = scratch.fill(spec, moll.rho, x) {
        return Err(Error::SupportOverflow {
            slab,
            position: x.to_vec(),
            required_half_width: required,
            half_width: spec.half_width,
        });
    }
    let rho2 = moll.rho * moll.rho;
    let mut acc = 0.0;
    scratch.visit(spec.d, rho2, |cell, r2| {
        acc += moll.eval_sq_radius(r2) * noise.increment(slab, cell);
    });
    Ok(acc)
}

/// Hamiltonian of a path and its exact discrete variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub h: f64,
    /// `var = dt dx^d sum_k sum_j phi(w_{t_k} - y_j)^2`, the variance of `h`
    /// under the noise law for this fixed path.
    pub var: f64,
}

struct SlabAccumulator<'a> {
    noise: &'a WhiteNoiseRealization,
    moll: &'a Mollifier,
    scratch: SupportScratch,
    rho2: f64,
    cell_var: f64,
}

impl<'a> SlabAccumulator<'a> {
    fn new(noise: &'a WhiteNoiseRealization, moll: &'a Mollifier) -> Self {
        SlabAccumulator {
            noise,
            moll,
            scratch: SupportScratch::new(&noise.spec),
            rho2: moll.rho * moll.rho,
            cell_var: noise.spec.cell_variance(),
        }
    }

    /// Returns the slab's `(h contribution, phi^2 sum * dt dx^d)`.
    #[inline]
    fn slab(&mut self, k: usize, x: &[f64]) -> Result<(f64, f64)> {
        let spec = &self.noise.spec;
        if self.scratch.fill(spec, self.moll.rho, x).is_err() {
            return Err(Error::PathExitedBox {
                time: k as f64 * spec.dt,
                position: x.to_vec(),
                half_width: spec.half_width,
            });
        }
        let mut h = 0.0;
        let mut phi2 = 0.0;
        let moll = self.moll;
        let noise = self.noise;
        let slab_seed = noise.slab_seed(k);
        let base = noise.scale * noise.sigma;
        match noise.drift.as_deref().and_then(|d| d.slabs.get(k)).filter(|s| !s.is_empty()) {
            None => {
                self.scratch.visit(spec.d, self.rho2, |cell, r2| {
                    let phi = moll.eval_sq_radius(r2);
                    let z = rng::standard_normal(rng::cell_hash(slab_seed, k as u64, cell));
                    h += phi * base * z;
                    phi2 += phi * phi;
                });
            }
            Some(entries) => {
                self.scratch.visit(spec.d, self.rho2, |cell, r2| {
                    let phi = moll.eval_sq_radius(r2);
                    let z = rng::standard_normal(rng::cell_hash(slab_seed, k as u64, cell));
                    let mut v = phi * base * z;
                    if let Ok(i) = entries.binary_search_by_key(&cell, |e| e.0) {
                        v += phi * entries[i].1;
                    }
                    h += v;
                    phi2 += phi * phi;
                });
            }
        }
        Ok((h, phi2 * self.cell_var))
    }
}

/// `H_T` over the path's whole horizon.
pub fn hamiltonian(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    path: &PathSample,
) -> Result<HamiltonianValue> {
    check_path_grid(&noise.spec, path)?;
    let mut acc = SlabAccumulator::new(noise, moll);
    let mut h = 0.0;
    let mut var = 0.0;
    for k in 0..path.steps() {
        let (dh, dv) = acc.slab(k, path.position(k))?;
        h += dh;
        var += dv;
    }
    Ok(HamiltonianValue { h, var })
}

/// Cumulative `(H, var)` at each requested slab count (ascending), sharing
/// one pass over the noise so nested horizons are coupled.
pub fn hamiltonian_prefixes(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    path: &PathSample,
    slab_checkpoints: &[usize],
) -> Result<Vec<HamiltonianValue>> {
    check_path_grid(&noise.spec, path)?;
    for w in slab_checkpoints.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidArgument("checkpoints must be ascending".into()));
        }
    }
    if let Some(&last) = slab_checkpoints.last() {
        if last > path.steps() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {last} beyond path horizon {}",
                path.steps()
            )));
        }
    }
    let mut acc = SlabAccumulator::new(noise, moll);
    let mut out = Vec::with_capacity(slab_checkpoints.len());
    let mut h = 0.0;
    let mut var = 0.0;
    let mut k = 0usize;
    for &cp in slab_checkpoints {
        while k < cp {
            let (dh, dv) = acc.slab(k, path.position(k))?;
            h += dh;
            var += dv;
            k += 1;
        }
        out.push(HamiltonianValue { h, var });
    }
    Ok(out)
}

/// Cumulative `(H, var)` after every slab, for running-maximum diagnostics.
pub fn hamiltonian_scan(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    path: &PathSample,
) -> Result<Vec<HamiltonianValue>> {
    let checkpoints: Vec<usize> = (1..=path.steps()).collect();
    hamiltonian_prefixes(noise, moll, path, &checkpoints)
}

/// Girsanov tilt toward `path`: a copy of the noise with mean shift
/// `gamma phi(w_{t_k} - y_j) dt dx^d` added per cell; the base realization is
/// untouched and overlays compose additively.
pub fn shifted_noise(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    path: &PathSample,
    gamma: f64,
) -> Result<WhiteNoiseRealization> {
    check_path_grid(&noise.spec, path)?;
    let spec = &noise.spec;
    let mut scratch = SupportScratch::new(spec);
    let rho2 = moll.rho * moll.rho;
    let cell_var = spec.cell_variance();
    let mut slabs = Vec::with_capacity(path.steps());
    for k in 0..path.steps() {
        let x = path.position(k);
        if scratch.fill(spec, moll.rho, x).is_err() {
            return Err(Error::PathExitedBox {
                time: k as f64 * spec.dt,
                position: x.to_vec(),
                half_width: spec.half_width,
            });
        }
        let mut entries: Vec<(u64, f64)> = Vec::new();
        scratch.visit(spec.d, rho2, |cell, r2| {
            let phi = moll.eval_sq_radius(r2);
            if phi != 0.0 {
                entries.push((cell, gamma * phi * cell_var));
            }
        });
        slabs.push(entries);
    }
    let overlay = DriftOverlay { slabs };
    let drift = match &noise.drift {
        None => overlay,
        Some(existing) => existing.merge(&overlay),
    };
    Ok(WhiteNoiseRealization { drift: Some(Arc::new(drift)), ..noise.clone() })
}

/// `dt dx^d sum_k sum_j phi(a_k - y_j) phi(b_k - y_j)`: the discrete overlap
/// that equals `Cov(H(a), H(b))` under the noise law.
pub fn discrete_overlap(
    noise: &WhiteNoiseRealization,
    moll: &Mollifier,
    a: &PathSample,
    b: &PathSample,
) -> Result<f64> {
    check_path_grid(&noise.spec, a)?;
    check_path_grid(&noise.spec, b)?;
    let spec = &noise.spec;
    let steps = a.steps().min(b.steps());
    let mut scratch = SupportScratch::new(spec);
    let rho2 = moll.rho * moll.rho;
    let mut acc = 0.0;
    for k in 0..steps {
        let xa = a.position(k);
        let xb = b.position(k);
        for x in [xa, xb] {
            let mut probe = 0.0f64;
            for &c in x {
                probe = probe.max(c.abs() + moll.rho);
            }
            if probe > spec.half_width {
                return Err(Error::PathExitedBox {
                    time: k as f64 * spec.dt,
                    position: x.to_vec(),
                    half_width: spec.half_width,
                });
            }
        }
        // Far-apart slabs contribute nothing.
        let mut sep2 = 0.0;
        for (ca, cb) in xa.iter().zip(xb) {
            sep2 += (ca - cb) * (ca - cb);
        }
        if sep2 >= 4.0 * rho2 {
            continue;
        }
        if scratch.fill(spec, moll.rho, xa).is_err() {
            unreachable!("box-checked above");
        }
        let mut slab_acc = 0.0;
        scratch.visit(spec.d, rho2, |cell, r2| {
            let phi_a = moll.eval_sq_radius(r2);
            let mut rb2 = 0.0;
            let n = spec.points_per_axis() as u64;
            let mut c = cell;
            for &xba in xb.iter() {
                let i = (c % n) as usize;
                c /= n;
                let dyb = xba - spec.axis_coord(i);
                rb2 += dyb * dyb;
            }
            slab_acc += phi_a * moll.eval_sq_radius(rb2);
        });
        acc += slab_acc;
    }
    Ok(acc * spec.cell_variance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::{build_mollifier, Profile};
    use crate::paths::sample_brownian;
    use crate::rng::{indexed, substream};

    fn small_spec() -> LatticeSpec {
        LatticeSpec::new(1, 0.1, 0.125, 1.0, 4.0).unwrap()
    }

    fn bump(d: usize) -> Mollifier {
        build_mollifier(d, 1.0, Profile::StandardBump, 2048).unwrap()
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = small_spec();
        let a = sample_noise(&spec, 99).unwrap();
        let b = sample_noise(&spec, 99).unwrap();
        for k in 0..spec.slabs() {
            for j in 0..spec.cells_per_slab() as u64 {
                assert_eq!(a.increment(k, j).to_bits(), b.increment(k, j).to_bits());
            }
        }
    }

    #[test]
    fn cell_moments_match_the_lattice_variance() {
        // 65^2 cells * 240 slabs > 1e6 distinct cells.
        let spec = LatticeSpec::new(2, 0.05, 0.25, 12.0, 8.0).unwrap();
        let noise = sample_noise(&spec, 4242).unwrap();
        let cells = spec.cells_per_slab() as u64;
        let mut n = 0u64;
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for k in 0..spec.slabs() {
            for j in 0..cells {
                let v = noise.increment(k, j);
                s1 += v;
                s2 += v * v;
                n += 1;
            }
        }
        assert!(n >= 1_000_000);
        let nf = n as f64;
        let target = spec.cell_variance();
        let mean = s1 / nf;
        let var = s2 / nf - mean * mean;
        let mean_se = (target / nf).sqrt();
        assert!(mean.abs() < 4.0 * mean_se, "mean {mean} vs 4se {}", 4.0 * mean_se);
        assert!((var - target).abs() / target < 0.01, "variance {var} vs {target}");
    }

    #[test]
    fn zero_noise_gives_zero_field_but_positive_variance() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = WhiteNoiseRealization::zeroed(&spec).unwrap();
        let path = sample_brownian(1, 0.1, 10, 5, &[0.0]);
        let hv = hamiltonian(&noise, &moll, &path).unwrap();
        assert_eq!(hv.h, 0.0);
        assert!(hv.var > 0.0);
        assert_eq!(field_increment(&noise, &moll, 0, &[0.2]).unwrap(), 0.0);
    }

    #[test]
    fn field_is_linear_in_the_noise_scale() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = sample_noise(&spec, 31).unwrap();
        let scaled = noise.scaled(2.5);
        let x = [0.3];
        let f1 = field_increment(&noise, &moll, 2, &x).unwrap();
        let f2 = field_increment(&scaled, &moll, 2, &x).unwrap();
        assert!((f2 - 2.5 * f1).abs() < 1e-12 * f1.abs().max(1.0));
        let path = sample_brownian(1, 0.1, 10, 6, &[0.0]);
        let h1 = hamiltonian(&noise, &moll, &path).unwrap();
        let h2 = hamiltonian(&scaled, &moll, &path).unwrap();
        assert!((h2.h - 2.5 * h1.h).abs() < 1e-12 * h1.h.abs().max(1.0));
        assert_eq!(h2.var, h1.var, "variance is a path functional only");
    }

    #[test]
    fn field_variance_matches_resampling_oracle() {
        // x fixed on-grid, d=1: variance over resampled slabs must equal
        // dt dx sum_j phi(x - y_j)^2.
        let spec = small_spec();
        let moll = bump(1);
        let x = [0.25];
        let mut expected = 0.0;
        for i in 0..spec.points_per_axis() {
            let phi = moll.eval_radial((x[0] - spec.axis_coord(i)).abs());
            expected += phi * phi;
        }
        expected *= spec.cell_variance();

        let stream = substream(2024, "field-var");
        let n = 100_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let noise = sample_noise(&spec, indexed(stream, i)).unwrap();
            let v = field_increment(&noise, &moll, 0, &x).unwrap();
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(
            (var - expected).abs() / expected < 0.02,
            "empirical {var} vs exact {expected}"
        );
    }

    #[test]
    fn constant_path_variance_approaches_t_times_selfconv_d3() {
        // dx = rho/8: the discrete phi^2 sum is a smooth-function Riemann sum,
        // within 2% of int phi^2 (it is far closer in practice).
        let spec = LatticeSpec::new(3, 0.125, 0.125, 1.0, 2.0).unwrap();
        let moll = bump(3);
        let noise = WhiteNoiseRealization::zeroed(&spec).unwrap();
        let steps = spec.slabs();
        let path =
            PathSample::from_positions(3, spec.dt, 0, vec![0.0; (steps + 1) * 3]);
        let hv = hamiltonian(&noise, &moll, &path).unwrap();
        let target = spec.t * moll.self_conv0;
        assert!(
            (hv.var - target).abs() / target < 0.02,
            "var {} vs T*selfconv0 {target}",
            hv.var
        );
    }

    #[test]
    fn support_overflow_is_a_hard_error_naming_the_required_width() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = sample_noise(&spec, 1).unwrap();
        let err = field_increment(&noise, &moll, 0, &[3.5]).unwrap_err();
        match err {
            Error::SupportOverflow { required_half_width, half_width, .. } => {
                assert!((required_half_width - 4.5).abs() < 1e-12);
                assert_eq!(half_width, 4.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
        // A path wandering out reports exit time and position.
        let mut positions = vec![0.0; 11];
        positions[7] = 3.9;
        let path = PathSample::from_positions(1, 0.1, 0, positions);
        match hamiltonian(&noise, &moll, &path).unwrap_err() {
            Error::PathExitedBox { time, .. } => assert!((time - 0.7).abs() < 1e-12),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn girsanov_shift_identity_is_exact() {
        // H(shifted) - H(original) = gamma * var, per path, to 1e-10 relative.
        let spec = LatticeSpec::new(2, 0.05, 0.25, 0.5, 6.0).unwrap();
        let moll = bump(2);
        let stream = substream(7, "shift-identity");
        for trial in 0..100u64 {
            let gamma = 0.1 + 0.025 * trial as f64;
            let noise = sample_noise(&spec, indexed(stream, 2 * trial)).unwrap();
            let path = sample_brownian(2, 0.05, 10, indexed(stream, 2 * trial + 1), &[0.0, 0.0]);
            let tilted = shifted_noise(&noise, &moll, &path, gamma).unwrap();
            let h0 = hamiltonian(&noise, &moll, &path).unwrap();
            let h1 = hamiltonian(&tilted, &moll, &path).unwrap();
            let lhs = h1.h - h0.h;
            let rhs = gamma * h0.var;
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.abs(),
                "trial {trial}: {lhs} vs {rhs}"
            );
            assert_eq!(h0.var, h1.var);
        }
    }

    #[test]
    fn gamma_zero_shift_is_identity() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = sample_noise(&spec, 8).unwrap();
        let path = sample_brownian(1, 0.1, 10, 9, &[0.0]);
        let tilted = shifted_noise(&noise, &moll, &path, 0.0).unwrap();
        let h0 = hamiltonian(&noise, &moll, &path).unwrap();
        let h1 = hamiltonian(&tilted, &moll, &path).unwrap();
        assert_eq!(h0.h.to_bits(), h1.h.to_bits());
    }

    #[test]
    fn cross_path_shift_equals_discrete_overlap() {
        // Tilt toward w, evaluate along eta: the H difference must equal
        // gamma * dt dx^d sum phi(w-y) phi(eta-y).
        let spec = LatticeSpec::new(2, 0.05, 0.25, 0.5, 6.0).unwrap();
        let moll = bump(2);
        let noise = sample_noise(&spec, 77).unwrap();
        let omega = sample_brownian(2, 0.05, 10, 100, &[0.0, 0.0]);
        let eta = sample_brownian(2, 0.05, 10, 101, &[0.1, -0.2]);
        let gamma = 0.7;
        let tilted = shifted_noise(&noise, &moll, &omega, gamma).unwrap();
        let h0 = hamiltonian(&noise, &moll, &eta).unwrap();
        let h1 = hamiltonian(&tilted, &moll, &eta).unwrap();
        let overlap = discrete_overlap(&noise, &moll, &omega, &eta).unwrap();
        let lhs = h1.h - h0.h;
        let rhs = gamma * overlap;
        assert!(
            (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-12),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn adaptedness_prefixes_ignore_later_slabs() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = sample_noise(&spec, 13).unwrap();
        let reseeded = noise.reseeded_after(5, 999);
        let path = sample_brownian(1, 0.1, 10, 14, &[0.0]);
        let a = hamiltonian_prefixes(&noise, &moll, &path, &[5]).unwrap();
        let b = hamiltonian_prefixes(&reseeded, &moll, &path, &[5]).unwrap();
        assert_eq!(a[0].h.to_bits(), b[0].h.to_bits());
        let fa = hamiltonian(&noise, &moll, &path).unwrap();
        let fb = hamiltonian(&reseeded, &moll, &path).unwrap();
        assert_ne!(fa.h.to_bits(), fb.h.to_bits(), "full horizon must differ");
    }

    #[test]
    fn prefix_values_match_truncated_paths() {
        let spec = small_spec();
        let moll = bump(1);
        let noise = sample_noise(&spec, 21).unwrap();
        let path = sample_brownian(1, 0.1, 10, 22, &[0.0]);
        let prefixes = hamiltonian_prefixes(&noise, &moll, &path, &[3, 7, 10]).unwrap();
        for (cp, hv) in [3usize, 7, 10].into_iter().zip(&prefixes) {
            let truncated = PathSample::from_positions(
                1,
                0.1,
                0,
                path.positions()[..(cp + 1)].to_vec(),
            );
            let direct = hamiltonian(&noise, &moll, &truncated).unwrap();
            assert_eq!(direct.h.to_bits(), hv.h.to_bits());
            assert_eq!(direct.var.to_bits(), hv.var.to_bits());
        }
    }

    #[test]
    fn materialize_respects_budget() {
        let spec = small_spec();
        let noise = sample_noise(&spec, 3).unwrap();
        let err = noise.materialize(16).unwrap_err();
        match err {
            Error::BudgetExceeded { required_bytes, budget_bytes } => {
                assert_eq!(required_bytes, spec.dense_bytes());
                assert_eq!(budget_bytes, 16);
            }
            other => panic!("unexpected {other:?}"),
        }
        let dense = noise.materialize(u128::MAX).unwrap();
        assert_eq!(dense.len(), spec.slabs() * spec.cells_per_slab() as usize);
        assert_eq!(dense[5], noise.increment(0, 5));
    }

    #[test]
    fn variance_equals_independent_self_overlap_summation() {
        // var from the hamiltonian pass must equal the self-overlap computed
        // by the separate overlap summation, for random paths and dimensions.
        let stream = substream(515, "var-exact");
        for (i, d) in [1usize, 2, 3].into_iter().enumerate() {
            let spec = LatticeSpec::new(d, 0.05, 0.25, 0.5, 6.0).unwrap();
            let moll = bump(d);
            let noise = sample_noise(&spec, indexed(stream, i as u64)).unwrap();
            for trial in 0..8u64 {
                let path = sample_brownian(
                    d,
                    0.05,
                    10,
                    indexed(stream, 100 + 10 * i as u64 + trial),
                    &vec![0.0; d],
                );
                let hv = hamiltonian(&noise, &moll, &path).unwrap();
                let ov = discrete_overlap(&noise, &moll, &path, &path).unwrap();
                assert!(
                    (hv.var - ov).abs() <= 1e-12 * ov,
                    "d={d}: var {} vs self-overlap {}",
                    hv.var,
                    ov
                );
            }
        }
    }

    #[test]
    fn empirical_hamiltonian_covariance_matches_overlap() {
        // Cov(H(a), H(b)) over noise replicas vs the discrete overlap sum.
        let spec = LatticeSpec::new(1, 0.1, 0.25, 1.0, 5.0).unwrap();
        let moll = bump(1);
        let a = sample_brownian(1, 0.1, 10, 50, &[0.0]);
        let b = sample_brownian(1, 0.1, 10, 51, &[0.2]);
        let probe = sample_noise(&spec, 0).unwrap();
        let overlap = discrete_overlap(&probe, &moll, &a, &b).unwrap();
        let stream = substream(6060, "cov");
        let n = 10_000u64;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        let mut prods = Vec::with_capacity(n as usize);
        for i in 0..n {
            let noise = sample_noise(&spec, indexed(stream, i)).unwrap();
            let ha = hamiltonian(&noise, &moll, &a).unwrap().h;
            let hb = hamiltonian(&noise, &moll, &b).unwrap().h;
            sa += ha;
            sb += hb;
            sab += ha * hb;
            prods.push(ha * hb);
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let (_, se) = crate::stats::mean_se(&prods);
        assert!(
            (cov - overlap).abs() < 5.0 * se,
            "cov {cov} vs overlap {overlap} (se {se})"
        );
    }
}
