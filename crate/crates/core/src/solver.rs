//! Block coordinate descent on the penalized patch objective.
//!
//! With `z_i` the per-patch estimates, `q_i` their observed part and
//! `x` the image, one outer iteration re-clusters the current `z`,
//! re-estimates one prior per cluster, then minimizes
//!
//! ```text
//! Σ_i ‖y_i − q_i‖²/(2σ²) − log p(z_i) + λ/2‖R_i x − z_i‖² + ρ/2‖H_i z_i − q_i‖²
//! ```
//!
//! over `z`, `q` and `x` in turn before growing `λ` and `ρ`. Denoising drops
//! `q` and uses `‖y_i − z_i‖²/(2σ²)` as the data term.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::degrade::Mask;
use crate::error::{Error, Result};
use crate::imgcore::{aggregate_patches, psnr, Image, PatchMatrix, PatchSystem};
use crate::matching::{assign_unique, build_clusters, Assignment, Cluster};
use crate::priors::{gaussian_estimate, gsm_map_params, scale_from_moments_bounded, GsmConfig, PatchPrior};

#[cfg(test)]
mod tests;

const SEED_STEP: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Gaussian,
    Gsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Inpaint,
}

/// What happens to patches that no cluster selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnclusteredPatches {
    /// Sit out the iteration: no prior, no `z` update, not averaged into
    /// `x`, and their `z` is reset to `R_i x` afterwards. Reference patches
    /// always belong to a cluster, so `x` stays fully covered.
    #[default]
    Skip,
    /// Join the cluster of the closest reference whose window contains them.
    NearestReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub prior: PriorKind,
    pub task: Task,
    /// Number of outer iterations `L`.
    pub iterations: usize,
    pub lambda0: f64,
    /// Initial `ρ`; unused when denoising.
    pub rho0: f64,
    pub gamma1: f64,
    /// Growth factor of `ρ`; unused when denoising.
    pub gamma2: f64,
    /// Noise standard deviation on the 0..255 scale. Zero means exact data.
    pub sigma: f64,
    pub patch_size: usize,
    /// Cluster size, reference included.
    pub k_total: usize,
    pub window: usize,
    pub reference_stride: usize,
    pub gsm: GsmConfig,
    pub unclustered: UnclusteredPatches,
    pub seed: u64,
}

impl SolverConfig {
    /// Denoising preset: `λ0 = 1e-4`, `γ1 = 1.2`, ten iterations.
    pub fn paper_denoise(sigma: f64, prior: PriorKind) -> Self {
        SolverConfig {
            prior,
            task: Task::Denoise,
            iterations: 10,
            lambda0: 1e-4,
            rho0: 0.02,
            gamma1: 1.2,
            gamma2: 1.5,
            sigma,
            patch_size: 8,
            k_total: 40,
            window: 40,
            reference_stride: 5,
            gsm: GsmConfig::default(),
            unclustered: UnclusteredPatches::default(),
            seed: 0,
        }
    }

    /// Inpainting preset: `λ0 = 1e-6`, `ρ0 = 0.02`, `γ1 = 1.35`, `γ2 = 1.5`.
    pub fn paper_inpaint(sigma: f64, prior: PriorKind) -> Self {
        SolverConfig {
            task: Task::Inpaint,
            lambda0: 1e-6,
            rho0: 0.02,
            gamma1: 1.35,
            gamma2: 1.5,
            ..SolverConfig::paper_denoise(sigma, prior)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.gamma1 > 1.0 && self.gamma1.is_finite()) {
            return bad(format!("gamma1 must exceed 1, got {}", self.gamma1));
        }
        if !(self.gamma2 > 1.0 && self.gamma2.is_finite()) {
            return bad(format!("gamma2 must exceed 1, got {}", self.gamma2));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.patch_size == 0 || self.reference_stride == 0 {
            return bad("patch size and reference stride must be positive".into());
        }
        if self.k_total < 2 {
            return bad(format!("cluster size must be at least 2, got {}", self.k_total));
        }
        if self.window < self.patch_size {
            return bad(format!(
                "search window {} is smaller than the patch size {}",
                self.window, self.patch_size
            ));
        }
        if !(self.gsm.alpha > 0.0 && self.gsm.alpha.is_finite()) {
            return bad(format!("GSM alpha must be positive, got {}", self.gsm.alpha));
        }
        if !(self.gsm.min_scale >= 0.0 && self.gsm.min_scale.is_finite()) {
            return bad(format!("GSM min_scale must be finite and >= 0, got {}", self.gsm.min_scale));
        }
        Ok(())
    }

    /// `λ` used by outer iteration `t` (0-based): `λ0·γ1^t`.
    pub fn lambda_at(&self, t: usize) -> f64 {
        self.lambda0 * self.gamma1.powi(t as i32)
    }

    /// `ρ` used by outer iteration `t` (0-based): `ρ0·γ2^t`.
    pub fn rho_at(&self, t: usize) -> f64 {
        self.rho0 * self.gamma2.powi(t as i32)
    }

    fn assignment_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add((t as u64 + 1).wrapping_mul(SEED_STEP))
    }
}

/// Iterates of the descent. `q` is present only when inpainting.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Image,
    pub z: PatchMatrix,
    pub q: Option<PatchMatrix>,
    pub v: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    /// Completed outer iterations.
    pub iteration: usize,
}

/// Clustering and per-cluster priors frozen for one outer iteration.
#[derive(Debug, Clone)]
pub struct PatchModel {
    pub clusters: Vec<Cluster>,
    pub assignment: Assignment,
    priors: Vec<Option<PatchPrior>>,
}

impl PatchModel {
    /// Whether patch `index` takes part in this iteration.
    pub fn is_active(&self, index: usize) -> bool {
        self.assignment.cluster_of[index].is_some()
    }

    /// Prior governing patch `index`.
    ///
    /// # Panics
    /// If the patch is not active.
    pub fn prior_of(&self, index: usize) -> &PatchPrior {
        let cid = self.assignment.cluster_of[index].expect("patch is not active");
        self.priors[cid].as_ref().expect("assigned clusters have priors")
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    pub lambda: f64,
    pub rho: Option<f64>,
    pub objective: f64,
    pub psnr: Option<f64>,
}

/// Fills unobserved pixels by repeated averaging of already-known
/// 8-neighbours. Each pass only reads values known before it started.
pub fn fill_missing(y: &Image, mask: &Mask) -> Result<Image> {
    mask.check_dims(y)?;
    let (w, h) = y.dims();
    let mut known = mask.as_slice().to_vec();
    if !known.iter().any(|&k| k) {
        return Err(Error::InvalidArgument("mask has no observed pixel".into()));
    }
    let mut x = y.clone();
    let mut pending: Vec<usize> = (0..w * h).filter(|&i| !known[i]).collect();
    while !pending.is_empty() {
        let mut updates = Vec::new();
        for &i in &pending {
            let (r, c) = (i / w, i % w);
            let mut sum = 0.0;
            let mut count = 0usize;
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = nr * w + nc;
                    if j != i && known[j] {
                        sum += x.samples()[j];
                        count += 1;
                    }
                }
            }
            if count > 0 {
                updates.push((i, sum / count as f64));
            }
        }
        for &(i, value) in &updates {
            x.samples_mut()[i] = value;
            known[i] = true;
        }
        pending.retain(|&i| !known[i]);
    }
    Ok(x)
}

#[inline]
fn q_entry(y: f64, z: f64, observed: bool, s2r: f64) -> f64 {
    if !observed {
        0.0
    } else if s2r == 0.0 {
        y
    } else {
        (y + s2r * z) / (1.0 + s2r)
    }
}

/// Observed flags of every patch, laid out like a [`PatchMatrix`].
fn observed_patches(mask: &Mask, sys: &PatchSystem) -> Result<Vec<bool>> {
    let n = sys.dim();
    let p = sys.patch_size();
    let obs = mask.as_slice();
    let w = mask.width();
    let mut out = vec![false; sys.num_patches() * n];
    for (idx, chunk) in out.chunks_mut(n).enumerate() {
        let (r, c) = sys.position(idx);
        for a in 0..p {
            for b in 0..p {
                chunk[a * p + b] = obs[(r + a) * w + c + b];
            }
        }
        if !chunk.iter().any(|&o| o) {
            return Err(Error::EmptyPatch { row: r, col: c });
        }
    }
    Ok(out)
}

/// Initial iterates: `x` is `y` (missing pixels filled when inpainting),
/// `z_i = R_i x`, `q_i = H_i z_i`, `v_i = 1`.
pub fn initialize(y: &Image, mask: Option<&Mask>, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    let sys = PatchSystem::for_image(y, cfg.patch_size, cfg.reference_stride)?;
    let x = match (cfg.task, mask) {
        (Task::Inpaint, Some(m)) => fill_missing(y, m)?,
        _ => y.clone(),
    };
    let z = PatchMatrix::from_image(&x, &sys)?;
    let q = match cfg.task {
        Task::Denoise => None,
        Task::Inpaint => {
            let mut q = z.clone();
            if let Some(m) = mask {
                let obs = observed_patches(m, &sys)?;
                for (v, &o) in q.as_mut_slice().iter_mut().zip(&obs) {
                    if !o {
                        *v = 0.0;
                    }
                }
            }
            Some(q)
        }
    };
    Ok(SolverState {
        x,
        v: vec![1.0; sys.num_patches()],
        z,
        q,
        lambda: cfg.lambda_at(0),
        rho: cfg.rho_at(0),
        iteration: 0,
    })
}

/// Observation, geometry and iterates of one restoration problem.
#[derive(Debug, Clone)]
pub struct Solver {
    cfg: SolverConfig,
    sys: PatchSystem,
    y: PatchMatrix,
    observed: Option<Vec<bool>>,
    /// Pixels known exactly (noiseless inpainting) and their values.
    exact: Option<(Mask, Image)>,
    state: SolverState,
}

impl Solver {
    /// `mask` is required for inpainting (all pixels observed if `None`)
    /// and rejected for denoising.
    pub fn new(image: &Image, mask: Option<&Mask>, cfg: &SolverConfig) -> Result<Self> {
        let y = image;
        if cfg.task == Task::Denoise && mask.is_some() {
            return Err(Error::InvalidArgument("denoising takes no mask".into()));
        }
        if let Some(m) = mask {
            m.check_dims(y)?;
        }
        if !y.samples().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("observation contains non-finite samples".into()));
        }
        let state = initialize(y, mask, cfg)?;
        let sys = PatchSystem::for_image(y, cfg.patch_size, cfg.reference_stride)?;
        let observed = match (cfg.task, mask) {
            (Task::Inpaint, Some(m)) => Some(observed_patches(m, &sys)?),
            (Task::Inpaint, None) => Some(vec![true; sys.num_patches() * sys.dim()]),
            (Task::Denoise, _) => None,
        };
        let mut y = PatchMatrix::from_image(y, &sys)?;
        if let Some(obs) = &observed {
            for (v, &o) in y.as_mut_slice().iter_mut().zip(obs) {
                if !o {
                    *v = 0.0;
                }
            }
        }
        let exact = match (cfg.task, cfg.sigma == 0.0) {
            (Task::Inpaint, true) => Some((
                mask.cloned().unwrap_or_else(|| Mask::full(image.width(), image.height())),
                image.clone(),
            )),
            _ => None,
        };
        Ok(Solver {
            cfg: cfg.clone(),
            sys,
            y,
            observed,
            exact,
            state,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn system(&self) -> &PatchSystem {
        &self.sys
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SolverState {
        &mut self.state
    }

    /// Observed patches `y_i` (zero on missing coordinates).
    pub fn observations(&self) -> &PatchMatrix {
        &self.y
    }

    pub fn observed_flags(&self, index: usize) -> Option<&[bool]> {
        let n = self.sys.dim();
        self.observed.as_ref().map(|o| &o[index * n..(index + 1) * n])
    }

    /// Clusters the current `z`, assigns every patch to one cluster and
    /// estimates the priors of the clusters in use.
    pub fn prepare_model(&self) -> Result<PatchModel> {
        let z = &self.state.z;
        let clusters = build_clusters(z, &self.sys, self.cfg.k_total, self.cfg.window)?;
        let mut assignment = assign_unique(
            &clusters,
            self.sys.num_patches(),
            self.cfg.assignment_seed(self.state.iteration),
        )?;
        if self.cfg.unclustered == UnclusteredPatches::NearestReference {
            assignment.assign_uncovered(&clusters, z, &self.sys, self.cfg.window);
        }
        let mut used = vec![false; clusters.len()];
        for cid in assignment.cluster_of.iter().flatten() {
            used[*cid] = true;
        }
        let noise_var = self.cfg.sigma * self.cfg.sigma;
        let priors = clusters
            .par_iter()
            .zip(used.par_iter())
            .map(|(cluster, &used)| {
                if !used {
                    return Ok(None);
                }
                let samples: Vec<&[f64]> = cluster.member_indices.iter().map(|&m| z.row(m)).collect();
                let g = gaussian_estimate(&samples, noise_var)?;
                let prior = match self.cfg.prior {
                    PriorKind::Gaussian => PatchPrior::from_gaussian(&g)?,
                    PriorKind::Gsm => PatchPrior::from_gsm(&gsm_map_params(&g.cov, &g.mu, self.cfg.gsm.alpha)?)?,
                };
                Ok(Some(prior))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatchModel {
            clusters,
            assignment,
            priors,
        })
    }

    /// MAP scale of every patch given its current `z` (scale mixtures only).
    pub fn update_v(&mut self, model: &PatchModel) {
        if self.cfg.prior != PriorKind::Gsm {
            return;
        }
        let z = &self.state.z;
        let n = self.sys.dim();
        let (mode, floor) = (self.cfg.gsm.scale_from_root, self.cfg.gsm.min_scale);
        self.state.v.par_iter_mut().enumerate().for_each(|(i, v)| {
            if !model.is_active(i) {
                return;
            }
            let prior = model.prior_of(i);
            let (alpha, beta) = prior.gamma_params().expect("scale mixture prior");
            let (d, c) = prior.scale_moments(z.row(i));
            *v = scale_from_moments_bounded(alpha, beta, n, c, d, mode, floor);
        });
    }

    /// Exact minimization over every `z_i` at fixed `x`, `q`, `v` and priors.
    pub fn update_z(&mut self, model: &PatchModel) -> Result<()> {
        let n = self.sys.dim();
        let rx = PatchMatrix::from_image(&self.state.x, &self.sys)?;
        let (lambda, rho) = (self.state.lambda, self.state.rho);
        let sigma2 = self.cfg.sigma * self.cfg.sigma;
        let y = &self.y;
        let v = &self.state.v;
        let q = self.state.q.as_ref();
        let observed = self.observed.as_deref();
        self.state
            .z
            .as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(i, out)| match (q, observed) {
                _ if !model.is_active(i) => Ok(()),
                (Some(q), Some(obs)) => model.prior_of(i).update_z(
                    v[i],
                    rx.row(i),
                    q.row(i),
                    &obs[i * n..(i + 1) * n],
                    lambda,
                    rho,
                    out,
                ),
                _ if sigma2 == 0.0 => {
                    out.copy_from_slice(y.row(i));
                    Ok(())
                }
                _ => {
                    model.prior_of(i).update_z_denoise(v[i], rx.row(i), y.row(i), lambda, sigma2, out);
                    Ok(())
                }
            })?;
        self.check_finite(self.state.z.as_slice())
    }

    /// `q_i = (y_i + σ²ρ H_i z_i)/(1 + σ²ρ)` on observed coordinates, zero
    /// elsewhere; `q_i = y_i` on observed coordinates when `σ = 0`.
    pub fn update_q(&mut self) {
        let Some(q) = self.state.q.as_mut() else {
            return;
        };
        let obs = self.observed.as_ref().expect("inpainting keeps observed flags");
        let s2r = self.cfg.sigma * self.cfg.sigma * self.state.rho;
        let y = self.y.as_slice();
        let z = self.state.z.as_slice();
        for (k, qk) in q.as_mut_slice().iter_mut().enumerate() {
            *qk = q_entry(y[k], z[k], obs[k], s2r);
        }
    }

    /// `x` = pixelwise mean of the overlapping active `z_i`. Inactive
    /// patches then take `z_i = R_i x` and the matching `q_i`.
    pub fn update_x(&mut self, model: &PatchModel) -> Result<()> {
        let z = &self.state.z;
        let active = (0..self.sys.num_patches())
            .filter(|&i| model.is_active(i))
            .map(|i| (i, z.row(i)));
        self.state.x = aggregate_patches(active, &self.sys)?;
        self.check_finite(self.state.x.samples())?;
        let n = self.sys.dim();
        for i in (0..self.sys.num_patches()).filter(|&i| !model.is_active(i)) {
            let mut patch = vec![0.0; n];
            self.sys.extract_into(&self.state.x, i, &mut patch);
            if let (Some(q), Some(obs)) = (self.state.q.as_mut(), self.observed.as_ref()) {
                let s2r = self.cfg.sigma * self.cfg.sigma * self.state.rho;
                let y = self.y.row(i);
                for (k, qk) in q.row_mut(i).iter_mut().enumerate() {
                    *qk = q_entry(y[k], patch[k], obs[i * n + k], s2r);
                }
            }
            self.state.z.row_mut(i).copy_from_slice(&patch);
        }
        Ok(())
    }

    /// Penalized objective at the current iterates with the model's priors,
    /// `v` and the current `λ`, `ρ`. Data terms of exact (`σ = 0`)
    /// observations are constraints and contribute nothing.
    pub fn objective(&self, model: &PatchModel) -> Result<f64> {
        let rx = PatchMatrix::from_image(&self.state.x, &self.sys)?;
        let n = self.sys.dim();
        let sigma2 = self.cfg.sigma * self.cfg.sigma;
        let (lambda, rho) = (self.state.lambda, self.state.rho);
        let st = &self.state;
        let terms: Vec<f64> = (0..self.sys.num_patches())
            .into_par_iter()
            .map(|i| {
                if !model.is_active(i) {
                    return 0.0;
                }
                let z = st.z.row(i);
                let y = self.y.row(i);
                let mut data = 0.0;
                let mut split = 0.0;
                let mut fit = 0.0;
                for k in 0..n {
                    split += (rx.row(i)[k] - z[k]).powi(2);
                }
                match (st.q.as_ref(), self.observed.as_ref()) {
                    (Some(q), Some(obs)) => {
                        let q = q.row(i);
                        let obs = &obs[i * n..(i + 1) * n];
                        for k in 0..n {
                            let hz = if obs[k] { z[k] } else { 0.0 };
                            fit += (hz - q[k]).powi(2);
                            if obs[k] {
                                data += (y[k] - q[k]).powi(2);
                            }
                        }
                    }
                    _ => {
                        for k in 0..n {
                            data += (y[k] - z[k]).powi(2);
                        }
                    }
                }
                let data = if sigma2 == 0.0 { 0.0 } else { data / (2.0 * sigma2) };
                data + model.prior_of(i).energy(z, st.v[i]) + 0.5 * lambda * split + 0.5 * rho * fit
            })
            .collect();
        Ok(terms.iter().sum())
    }

    /// One outer iteration; returns the objective after the `x` update.
    pub fn step(&mut self) -> Result<f64> {
        let model = self.prepare_model()?;
        self.update_v(&model);
        self.update_z(&model)?;
        self.update_q();
        self.update_x(&model)?;
        let obj = self.objective(&model)?;
        if !obj.is_finite() {
            return Err(self.non_finite());
        }
        self.advance();
        Ok(obj)
    }

    /// Closes the current outer iteration and grows the penalties.
    pub fn advance(&mut self) {
        self.state.iteration += 1;
        self.state.lambda = self.cfg.lambda_at(self.state.iteration);
        self.state.rho = self.cfg.rho_at(self.state.iteration);
    }

    /// Current image estimate clamped to `[0, 255]`. With noiseless
    /// inpainting the observed pixels are returned as observed.
    pub fn output(&self) -> Image {
        let mut out = self.state.x.clamped(0.0, 255.0);
        if let Some((mask, y)) = &self.exact {
            for (i, v) in out.samples_mut().iter_mut().enumerate() {
                if mask.as_slice()[i] {
                    *v = y.samples()[i];
                }
            }
        }
        out
    }

    fn non_finite(&self) -> Error {
        Error::NonFinite {
            iteration: self.state.iteration + 1,
        }
    }

    fn check_finite(&self, values: &[f64]) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(self.non_finite())
        }
    }
}

/// Runs all outer iterations and returns the clamped estimate with one
/// diagnostics record per iteration (PSNR only when `reference` is given).
pub fn run(
    y: &Image,
    mask: Option<&Mask>,
    cfg: &SolverConfig,
    reference: Option<&Image>,
) -> Result<(Image, Vec<IterationRecord>)> {
    if let Some(r) = reference {
        r.check_same_dims(y)?;
    }
    let mut solver = Solver::new(y, mask, cfg)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let lambda = solver.state.lambda;
        let rho = (cfg.task == Task::Inpaint).then_some(solver.state.rho);
        let objective = solver.step()?;
        let psnr = match reference {
            Some(r) => Some(psnr(r, &solver.output(), 255.0)?),
            None => None,
        };
        records.push(IterationRecord {
            iteration: solver.state.iteration,
            lambda,
            rho,
            objective,
            psnr,
        });
    }
    Ok((solver.output(), records))
}

pub const DIAGNOSTICS_HEADER: &str = "iteration,lambda,rho,objective,psnr";

/// Writes the diagnostics as CSV; absent values are left empty.
pub fn write_diagnostics<W: Write>(records: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            r.lambda,
            opt(r.rho),
            r.objective,
            opt(r.psnr)
        )?;
    }
    Ok(())
}
