//! Photometric-stereo reconstruction: near-field light directions,
//! relighting, albedo estimation and the per-pixel normal solve.
//!
//! Per pixel, K patterns times 3 channels give 3K linear equations
//!
//! ```text
//! I_(i,c) = rho_c * (sum_j P[i,j,c] * l_j) . N        (rows r = 3i + c)
//! ```
//!
//! stacked as `A N = I` with `A = rho (*) (P l)`, solved in the
//! least-squares sense through the normal equations, then normalized and
//! oriented toward the camera (`n_z < 0`).

use ndarray::{Array2, Array3, Array4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lens::CameraModel;
use crate::math::{Mat3, Real, Vec3};
use crate::scene::{AlbedoMap, BasisStack, DisplayGeometry, NormalMap, PatternSet};

/// Unit directions from each pixel's surface point toward each superpixel:
/// `directions[y][x][j]` is a 3-vector.
#[derive(Debug, Clone)]
pub struct LightField<T> {
    pub directions: Array4<T>,
}

impl<T: Real> LightField<T> {
    pub fn resolution(&self) -> (usize, usize) {
        (self.directions.shape()[0], self.directions.shape()[1])
    }

    pub fn b(&self) -> usize {
        self.directions.shape()[2]
    }

    pub fn direction(&self, y: usize, x: usize, j: usize) -> Vec3<T> {
        Vec3::new(
            self.directions[[y, x, j, 0]],
            self.directions[[y, x, j, 1]],
            self.directions[[y, x, j, 2]],
        )
    }

    /// Checks the unit-length invariant.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution();
        for y in 0..h {
            for x in 0..w {
                for j in 0..self.b() {
                    let n = self.direction(y, x, j).norm();
                    if (n - T::one()).abs() > T::of(1e-6) {
                        return Err(Error::invalid(format!(
                            "light direction ({y},{x},{j}) has norm {n}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Captures of a scene under a pattern set: `images[i][y][x][c]` is the
/// linear radiance recorded while pattern i was displayed.
#[derive(Debug, Clone)]
pub struct CaptureSet<T> {
    pub images: Array4<T>,
    pub patterns: PatternSet<T>,
}

impl<T: Real> CaptureSet<T> {
    pub fn k(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }
}

/// How the solve treats (near-)rank-deficient per-pixel systems.
#[derive(Debug, Clone, Copy)]
pub enum Degeneracy<T> {
    /// Flag pixels whose system has rank < 3 as invalid. The reconstruction
    /// default.
    Flag,
    /// Regularize the normal equations with `rel * tr(G)/3` on the
    /// diagonal. Keeps every pixel solvable (approximating the min-norm
    /// pseudo-inverse solution as rank drops) and keeps the solve smooth,
    /// which pattern learning requires.
    Ridge { rel: T },
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<T> {
    /// Pixels whose max-channel albedo falls below this are invalid.
    pub rho_threshold: T,
    pub degeneracy: Degeneracy<T>,
    /// Drop equations whose observation is at the shadow clamp (relative
    /// to the channel albedo). Experimental; off by default.
    pub shadow_rejection: bool,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            rho_threshold: T::of(1e-4),
            degeneracy: Degeneracy::Flag,
            shadow_rejection: false,
        }
    }
}

impl<T: Real> SolveOptions<T> {
    /// Ridge-stabilized options used by the learning forward pass.
    pub fn ridge() -> Self {
        SolveOptions {
            degeneracy: Degeneracy::Ridge { rel: T::of(1e-8) },
            ..Self::default()
        }
    }
}

/// Everything the backward pass needs about one pixel's solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelSolve<T> {
    /// Unit toward-camera normal.
    pub n: Vec3<T>,
    /// Unnormalized least-squares solution.
    pub m: Vec3<T>,
    /// Inverse of the (possibly ridged) normal-equations matrix.
    pub c: Mat3<T>,
    /// Sign applied when orienting toward the camera.
    pub sign: T,
    /// Ridge factor alpha with lambda = alpha * tr(G); 0 in Flag mode.
    pub alpha: T,
}

/// Solves one pixel's stacked system from `(a_r, obs_r)` rows.
pub(crate) fn solve_pixel<T: Real>(
    rows: &[(Vec3<T>, T)],
    degeneracy: Degeneracy<T>,
) -> Option<PixelSolve<T>> {
    let mut g = Mat3::zero();
    let mut h = Vec3::zero();
    for &(a, obs) in rows {
        g.add_scaled_outer(a, T::one());
        h += a * obs;
    }
    let tr = g.trace();
    if !(tr > T::zero()) || !tr.is_finite() {
        return None;
    }
    let (c, alpha) = match degeneracy {
        Degeneracy::Flag => {
            let scale = tr / T::of(3.0);
            if g.det() <= T::of(1e-12) * scale * scale * scale {
                return None;
            }
            (g.inverse()?, T::zero())
        }
        Degeneracy::Ridge { rel } => {
            let alpha = rel / T::of(3.0);
            let lam = alpha * tr;
            let mut gr = g;
            for i in 0..3 {
                gr.m[i][i] += lam;
            }
            (gr.spd_inverse()?, alpha)
        }
    };
    let m = c.mul_vec(h);
    let norm = m.norm();
    if !(norm > T::zero()) || !norm.is_finite() {
        return None;
    }
    let sign = if m.z > T::zero() { -T::one() } else { T::one() };
    let n = m * (sign / norm);
    Some(PixelSolve {
        n,
        m,
        c,
        sign,
        alpha,
    })
}

/// Light directions for a fronto-parallel plane assumption: each pixel is
/// back-projected through the undistorted pinhole to `z = plane_depth` and
/// connected to every superpixel center.
pub fn light_directions<T: Real>(
    display: &DisplayGeometry<T>,
    camera: &CameraModel<T>,
    plane_depth: T,
) -> Result<LightField<T>> {
    if plane_depth <= T::zero() {
        return Err(Error::invalid("plane depth must be positive"));
    }
    let (h, w) = (camera.height, camera.width);
    let b = display.b();
    let mut directions = Array4::zeros((h, w, b, 3));
    for y in 0..h {
        for x in 0..w {
            let point = camera.pixel_ray(T::of(x as f64), T::of(y as f64)) * plane_depth;
            for (j, &center) in display.centers.iter().enumerate() {
                let l = (center - point).normalized().ok_or_else(|| {
                    Error::degenerate(format!(
                        "superpixel {j} coincides with the surface point of pixel ({y},{x})"
                    ))
                })?;
                directions[[y, x, j, 0]] = l.x;
                directions[[y, x, j, 1]] = l.y;
                directions[[y, x, j, 2]] = l.z;
            }
        }
    }
    Ok(LightField { directions })
}

/// Synthesizes captures: `I_i^c = sum_j B_j^c * P[i,j,c]`, channel-wise.
pub fn relight<T: Real>(patterns: &PatternSet<T>, basis: &BasisStack<T>) -> Result<CaptureSet<T>> {
    if patterns.b() != basis.b() {
        return Err(Error::invalid(format!(
            "pattern set has b = {} but basis stack has b = {}",
            patterns.b(),
            basis.b()
        )));
    }
    let k = patterns.k();
    let b = basis.b();
    let (h, w) = basis.resolution();
    let mut images = Array4::zeros((k, h, w, 3));
    for i in 0..k {
        for j in 0..b {
            for c in 0..3 {
                let p = patterns.values[[i, j, c]];
                if p == T::zero() {
                    continue;
                }
                for y in 0..h {
                    for x in 0..w {
                        images[[i, y, x, c]] += basis.values[[j, y, x, c]] * p;
                    }
                }
            }
        }
    }
    Ok(CaptureSet {
        images,
        patterns: patterns.clone(),
    })
}

/// Per-channel albedo: the maximum intensity observed across captures.
/// All-black pixels get `rho = 0` and a false mask entry.
pub fn estimate_albedo<T: Real>(captures: &CaptureSet<T>) -> AlbedoMap<T> {
    let k = captures.k();
    let (h, w) = captures.resolution();
    let mut values = Array3::zeros((h, w, 3));
    let mut mask = Array2::from_elem((h, w), true);
    for y in 0..h {
        for x in 0..w {
            let mut peak = T::zero();
            for c in 0..3 {
                let mut m = T::zero();
                for i in 0..k {
                    m = m.max(captures.images[[i, y, x, c]]);
                }
                values[[y, x, c]] = m;
                peak = peak.max(m);
            }
            if peak <= T::zero() {
                mask[[y, x]] = false;
            }
        }
    }
    AlbedoMap {
        values,
        valid_mask: mask,
    }
}

/// Expanded per-row pattern intensities: row r = 3i + c holds
/// `P[i, j, c]` over j. Shared with the learning module.
pub(crate) fn pattern_row_matrix<T: Real>(patterns: &PatternSet<T>) -> Vec<Vec<T>> {
    let k = patterns.k();
    let b = patterns.b();
    let mut rows = vec![vec![T::zero(); b]; 3 * k];
    for i in 0..k {
        for c in 0..3 {
            let row = &mut rows[3 * i + c];
            for (j, v) in row.iter_mut().enumerate() {
                *v = patterns.values[[i, j, c]];
            }
        }
    }
    rows
}

/// Recovers per-pixel normals from captures. Pixels with a deficient
/// system, an albedo below threshold, or an unusable solution are flagged
/// invalid rather than failing the call.
pub fn solve_normals<T: Real>(
    captures: &CaptureSet<T>,
    lights: &LightField<T>,
    albedo: &AlbedoMap<T>,
    opts: &SolveOptions<T>,
) -> Result<NormalMap<T>> {
    let k = captures.k();
    let b = captures.patterns.b();
    let (h, w) = captures.resolution();
    if lights.resolution() != (h, w) || lights.b() != b {
        return Err(Error::shape(format!(
            "light field is {:?} with b = {}, captures are {h}x{w} with b = {b}",
            lights.resolution(),
            lights.b()
        )));
    }
    if albedo.values.shape() != [h, w, 3] {
        return Err(Error::shape("albedo resolution mismatch"));
    }

    let prow = pattern_row_matrix(&captures.patterns);
    let shadow_rel = T::of(1e-6);

    let rows_out: Vec<(Vec<[T; 3]>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = vec![[T::zero(); 3]; w];
            let mut valid = vec![false; w];
            let mut rows: Vec<(Vec3<T>, T)> = Vec::with_capacity(3 * k);
            for x in 0..w {
                let rho = [
                    albedo.values[[y, x, 0]],
                    albedo.values[[y, x, 1]],
                    albedo.values[[y, x, 2]],
                ];
                let peak = rho[0].max(rho[1]).max(rho[2]);
                if !albedo.valid_mask[[y, x]] || peak < opts.rho_threshold {
                    continue;
                }
                rows.clear();
                for i in 0..k {
                    for c in 0..3 {
                        let obs = captures.images[[i, y, x, c]];
                        if opts.shadow_rejection && obs <= shadow_rel * rho[c] {
                            continue;
                        }
                        let mut s = Vec3::zero();
                        let pr = &prow[3 * i + c];
                        for (j, &p) in pr.iter().enumerate() {
                            if p != T::zero() {
                                s += lights.direction(y, x, j) * p;
                            }
                        }
                        rows.push((s * rho[c], obs));
                    }
                }
                if rows.len() < 3 {
                    continue;
                }
                if let Some(sol) = solve_pixel(&rows, opts.degeneracy) {
                    vals[x] = sol.n.to_array();
                    valid[x] = true;
                }
            }
            (vals, valid)
        })
        .collect();

    let mut values = Array3::zeros((h, w, 3));
    let mut mask = Array2::from_elem((h, w), false);
    for (y, (vals, valid)) in rows_out.into_iter().enumerate() {
        for x in 0..w {
            for c in 0..3 {
                values[[y, x, c]] = vals[x][c];
            }
            mask[[y, x]] = valid[x];
        }
    }
    Ok(NormalMap {
        values,
        valid_mask: mask,
    })
}

/// Per-pixel angular error map `(1 - n . n_gt)/2` over the joint valid
/// mask, plus its mean.
#[derive(Debug, Clone)]
pub struct AngularError<T> {
    pub map: Array2<T>,
    pub valid: Array2<bool>,
    pub mean: T,
}

pub fn angular_error<T: Real>(estimated: &NormalMap<T>, gt: &NormalMap<T>) -> Result<AngularError<T>> {
    let (h, w) = estimated.resolution();
    if gt.resolution() != (h, w) {
        return Err(Error::shape("normal map resolutions differ"));
    }
    let mut map = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    let mut sum = T::zero();
    let mut count = 0usize;
    let half = T::of(0.5);
    for y in 0..h {
        for x in 0..w {
            if !(estimated.valid_mask[[y, x]] && gt.valid_mask[[y, x]]) {
                continue;
            }
            let e = ((T::one() - estimated.normal(y, x).dot(gt.normal(y, x))) * half)
                .max(T::zero())
                .min(T::one());
            map[[y, x]] = e;
            valid[[y, x]] = true;
            sum += e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::degenerate(
            "no jointly valid pixels; mean angular error undefined",
        ));
    }
    Ok(AngularError {
        map,
        valid,
        mean: sum / T::of(count as f64),
    })
}
