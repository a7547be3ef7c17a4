//! Display geometry, synthetic scenes and basis-image rendering.
//!
//! Conventions, used across the whole crate:
//!
//! - The camera sits at the origin looking along +z.
//! - The display lies in the z = 0 plane (plus an optional offset) and is
//!   divided into `rows x cols` superpixels, indexed row-major.
//! - Scenes are height fields: `height_field[y][x]` is the depth (meters,
//!   > 0) of the surface along the ray of pixel (x, y).
//! - Surface normals point toward the camera, so `n_z < 0`.
//!
//! A *basis image* B_j is the camera response when superpixel j alone is
//! driven at full intensity: Lambertian shading by the unit direction from
//! the surface point to the superpixel center, optionally scaled by
//! inverse-square falloff, plus a flat ambient share.

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};

/// Fraction of the base depth covered by the scene's world-space extent.
/// A square scene at depth d spans `SCENE_EXTENT_FACTOR * d` meters.
pub const SCENE_EXTENT_FACTOR: f64 = 0.5;

/// World-space distance between adjacent scene pixels at the base depth.
pub fn scene_pixel_pitch<T: Real>(resolution: usize, base_depth: T) -> T {
    base_depth * T::of(SCENE_EXTENT_FACTOR) / T::of((resolution - 1) as f64)
}

/// Pixel index of the scene's optical center. The height-field features
/// (cap apex, leaf center) sit exactly on this pixel so their analytic
/// normals land on the grid.
pub fn scene_center_pixel(resolution: usize) -> usize {
    resolution / 2
}

/// A flat-panel display modelled as a grid of superpixel point sources.
#[derive(Debug, Clone)]
pub struct DisplayGeometry<T> {
    pub rows: usize,
    pub cols: usize,
    pub width_m: T,
    pub height_m: T,
    /// Superpixel centers in the camera frame, row-major, length rows*cols.
    pub centers: Vec<Vec3<T>>,
    /// Unit facing direction of the panel.
    pub emitted_axis: Vec3<T>,
}

impl<T: Real> DisplayGeometry<T> {
    /// Number of superpixels.
    pub fn b(&self) -> usize {
        self.rows * self.cols
    }
}

/// Builds the superpixel grid: cell centers of a `rows x cols` subdivision
/// of a `width_m x height_m` panel centered at `offset`, in the z = 0
/// plane. Index = row * cols + col; x grows with col, y with row.
pub fn make_display_geometry<T: Real>(
    rows: usize,
    cols: usize,
    width_m: T,
    height_m: T,
    offset: Vec3<T>,
) -> Result<DisplayGeometry<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("display grid must have rows > 0 and cols > 0"));
    }
    if width_m <= T::zero() || height_m <= T::zero() {
        return Err(Error::invalid("display panel dimensions must be positive"));
    }
    let mut centers = Vec::with_capacity(rows * cols);
    let half = T::of(0.5);
    for r in 0..rows {
        let fy = (T::of(r as f64) + half) / T::of(rows as f64) - half;
        let y = fy * height_m;
        for c in 0..cols {
            let fx = (T::of(c as f64) + half) / T::of(cols as f64) - half;
            let x = fx * width_m;
            centers.push(Vec3::new(x + offset.x, y + offset.y, offset.z));
        }
    }
    Ok(DisplayGeometry {
        rows,
        cols,
        width_m,
        height_m,
        centers,
        emitted_axis: Vec3::new(T::zero(), T::zero(), T::one()),
    })
}

/// A set of K display patterns, `values[k][j][c]` in [0, 1].
#[derive(Debug, Clone)]
pub struct PatternSet<T> {
    pub values: Array3<T>,
}

impl<T: Real> PatternSet<T> {
    /// Validates the [0, 1] range and finiteness.
    pub fn new(values: Array3<T>) -> Result<Self> {
        for &v in values.iter() {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(Error::invalid(format!(
                    "pattern intensities must be finite and in [0, 1], got {v}"
                )));
            }
        }
        Ok(PatternSet { values })
    }

    pub fn k(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn b(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Per-pixel unit surface normals with a validity mask.
#[derive(Debug, Clone)]
pub struct NormalMap<T> {
    /// `[H x W x 3]`.
    pub values: Array3<T>,
    /// `[H x W]`; false marks pixels without a usable normal.
    pub valid_mask: Array2<bool>,
}

impl<T: Real> NormalMap<T> {
    pub fn resolution(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn normal(&self, y: usize, x: usize) -> Vec3<T> {
        Vec3::new(
            self.values[[y, x, 0]],
            self.values[[y, x, 1]],
            self.values[[y, x, 2]],
        )
    }

    /// Checks that every valid pixel holds a unit, toward-camera normal.
    pub fn validate(&self, tol: T) -> Result<()> {
        let (h, w) = self.resolution();
        for y in 0..h {
            for x in 0..w {
                if !self.valid_mask[[y, x]] {
                    continue;
                }
                let n = self.normal(y, x);
                if (n.norm() - T::one()).abs() > tol {
                    return Err(Error::invalid(format!(
                        "normal at ({y},{x}) is not unit length: |n| = {}",
                        n.norm()
                    )));
                }
                if n.z >= T::zero() {
                    return Err(Error::invalid(format!(
                        "normal at ({y},{x}) faces away from the camera (n_z = {})",
                        n.z
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-pixel RGB albedo with a validity mask.
#[derive(Debug, Clone)]
pub struct AlbedoMap<T> {
    /// `[H x W x 3]`, non-negative.
    pub values: Array3<T>,
    /// False where the estimate is unusable (all captures dark).
    pub valid_mask: Array2<bool>,
}

/// Stack of basis images, one per superpixel: `values[j][y][x][c]`.
#[derive(Debug, Clone)]
pub struct BasisStack<T> {
    pub values: Array4<T>,
    /// False where rendering was impossible (surface point coincides with
    /// a superpixel center).
    pub valid_mask: Array2<bool>,
}

impl<T: Real> BasisStack<T> {
    pub fn b(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.values.shape()[1], self.values.shape()[2])
    }
}

/// Synthetic scene kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Plane,
    SphereCap,
    PerlinHeightfield,
    LeafHeightfield,
}

/// A height-field scene with ground-truth shading attributes.
#[derive(Debug, Clone)]
pub struct SceneMesh<T> {
    /// `[H x W]` depth in meters along each pixel ray; strictly positive.
    pub height_field: Array2<T>,
    pub gt_normals: NormalMap<T>,
    /// `[H x W x 3]` in [0, 1].
    pub gt_albedo: Array3<T>,
    /// Flat ambient term added to basis images as `ambient_level / b`.
    pub ambient_level: T,
}

impl<T: Real> SceneMesh<T> {
    pub fn resolution(&self) -> (usize, usize) {
        (self.height_field.shape()[0], self.height_field.shape()[1])
    }
}

/// Generates a synthetic scene on a square `resolution x resolution` grid.
///
/// `base_depth` is the backplane depth; `amplitude` is the peak height of
/// the surface relief toward the camera and must stay below `base_depth`.
/// The same seed always produces bit-identical output.
pub fn generate_scene<T: Real>(
    kind: SceneKind,
    resolution: usize,
    base_depth: T,
    amplitude: T,
    seed: u64,
) -> Result<SceneMesh<T>> {
    if resolution < 2 {
        return Err(Error::invalid("scene resolution must be at least 2"));
    }
    if base_depth <= T::zero() {
        return Err(Error::invalid("base depth must be positive"));
    }
    if amplitude < T::zero() {
        return Err(Error::invalid("relief amplitude must be non-negative"));
    }
    if amplitude >= base_depth {
        return Err(Error::invalid(
            "relief amplitude must be smaller than the base depth",
        ));
    }

    let n = resolution;
    let c0 = scene_center_pixel(n) as f64;
    // Normalized in-plane coordinates, approximately [-1, 1].
    let half_span = (n - 1) as f64 / 2.0;
    let coord = |i: usize| (i as f64 - c0) / half_span;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut height = Array2::from_elem((n, n), base_depth);
    let mut albedo = Array3::from_elem((n, n, 3), T::of(0.75));

    match kind {
        SceneKind::Plane => {}
        SceneKind::SphereCap => {
            // Cap of normalized radius 0.8, apex on the center pixel.
            let r0 = 0.8;
            for y in 0..n {
                for x in 0..n {
                    let (u, v) = (coord(x), coord(y));
                    let r2 = u * u + v * v;
                    if r2 < r0 * r0 {
                        let bump = (1.0 - r2 / (r0 * r0)).sqrt();
                        height[[y, x]] = base_depth - amplitude * T::of(bump);
                    }
                    for c in 0..3 {
                        albedo[[y, x, c]] = T::of([0.8, 0.65, 0.55][c]);
                    }
                }
            }
        }
        SceneKind::PerlinHeightfield => {
            let noise = Perlin::new(&mut rng);
            let albedo_noise = Perlin::new(&mut rng);
            let cells = 3.0;
            for y in 0..n {
                for x in 0..n {
                    let (u, v) = (coord(x), coord(y));
                    let h = noise.fbm(u * cells, v * cells, 4).clamp(-1.0, 1.0);
                    height[[y, x]] = base_depth - amplitude * T::of(0.5 * (h + 1.0));
                    for c in 0..3 {
                        let a = albedo_noise.fbm(
                            u * 2.0 + 10.0 * (c as f64 + 1.0),
                            v * 2.0 - 7.0 * (c as f64 + 1.0),
                            2,
                        );
                        albedo[[y, x, c]] = T::of(0.6 + 0.3 * a.clamp(-1.0, 1.0));
                    }
                }
            }
        }
        SceneKind::LeafHeightfield => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let (sin_a, cos_a) = angle.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let (u, v) = (coord(x), coord(y));
                    let lu = u * cos_a + v * sin_a;
                    let lv = -u * sin_a + v * cos_a;
                    let h = leaf_height(lu, lv, wave_phase);
                    height[[y, x]] = base_depth - amplitude * T::of(h);
                    let g = 0.35 + 0.45 * h;
                    albedo[[y, x, 0]] = T::of(0.25 + 0.15 * h);
                    albedo[[y, x, 1]] = T::of(g);
                    albedo[[y, x, 2]] = T::of(0.2);
                }
            }
        }
    }

    let normals = normals_from_height_field(&height, scene_pixel_pitch(n, base_depth));
    Ok(SceneMesh {
        height_field: height,
        gt_normals: normals,
        gt_albedo: albedo,
        ambient_level: T::zero(),
    })
}

/// Height profile of the leaf relief in rotated normalized coordinates:
/// an arched blade along `lu` in [-0.85, 0.85] with a midrib groove, side
/// veins and an undulating edge. Returns height in [0, 1].
fn leaf_height(lu: f64, lv: f64, wave_phase: f64) -> f64 {
    let a = 0.85;
    let s = (lu + a) / (2.0 * a);
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    let along = (std::f64::consts::PI * s).sin();
    // Blade half-width, widest behind the middle, with a wavy edge.
    let width = 0.5 * along.powf(0.8) * (1.0 + 0.08 * (9.0 * s * std::f64::consts::PI + wave_phase).sin());
    if width <= 0.0 || lv.abs() >= width {
        return 0.0;
    }
    let t = lv / width;
    let arch = (1.0 - t * t) * along.powf(0.3);
    let midrib = 0.2 * (-(lv / 0.05).powi(2)).exp();
    let veins = 0.1
        * (6.0 * std::f64::consts::PI * s).sin().powi(2)
        * (-(t / 0.5).powi(2)).exp();
    (arch * (1.0 - midrib - veins)).clamp(0.0, 1.0)
}

/// Toward-camera unit normals of `z = h(x, y)`: central differences in the
/// interior, one-sided at borders, gradients scaled by the world pitch.
pub fn normals_from_height_field<T: Real>(height: &Array2<T>, pitch: T) -> NormalMap<T> {
    let (h, w) = (height.shape()[0], height.shape()[1]);
    let mut values = Array3::zeros((h, w, 3));
    let valid = Array2::from_elem((h, w), true);
    for y in 0..h {
        for x in 0..w {
            let dzdx = if x == 0 {
                (height[[y, 1]] - height[[y, 0]]) / pitch
            } else if x == w - 1 {
                (height[[y, w - 1]] - height[[y, w - 2]]) / pitch
            } else {
                (height[[y, x + 1]] - height[[y, x - 1]]) / (T::of(2.0) * pitch)
            };
            let dzdy = if y == 0 {
                (height[[1, x]] - height[[0, x]]) / pitch
            } else if y == h - 1 {
                (height[[h - 1, x]] - height[[h - 2, x]]) / pitch
            } else {
                (height[[y + 1, x]] - height[[y - 1, x]]) / (T::of(2.0) * pitch)
            };
            let n = Vec3::new(dzdx, dzdy, -T::one())
                .normalized()
                .expect("gradient normal has norm >= 1");
            values[[y, x, 0]] = n.x;
            values[[y, x, 1]] = n.y;
            values[[y, x, 2]] = n.z;
        }
    }
    NormalMap {
        values,
        valid_mask: valid,
    }
}

/// Renders one basis image per superpixel.
///
/// For pixel p with surface point X(p) and normal n(p), superpixel j at
/// center c_j contributes
///
/// ```text
/// B_j(p) = albedo(p) * max(0, n(p) . l_j(p)) * (falloff ? 1/|c_j - X|^2 : 1)
///          + ambient_level / b
/// ```
///
/// where l_j(p) is the unit direction from X(p) to c_j. A surface point
/// coinciding with a superpixel center marks the pixel invalid.
pub fn render_basis<T: Real>(
    scene: &SceneMesh<T>,
    display: &DisplayGeometry<T>,
    camera: &crate::lens::CameraModel<T>,
    falloff: bool,
) -> Result<BasisStack<T>> {
    let (h, w) = scene.resolution();
    if camera.width != w || camera.height != h {
        return Err(Error::shape(format!(
            "camera is {}x{} but scene is {w}x{h}",
            camera.width, camera.height
        )));
    }
    let b = display.b();
    let ambient = scene.ambient_level / T::of(b as f64);
    let mut values = Array4::zeros((b, h, w, 3));
    let mut valid = Array2::from_elem((h, w), true);
    // Coincidence threshold: a superpixel closer than 1 mm-equivalent of
    // the scene scale has no meaningful direction.
    let min_d2 = T::of(1e-12);

    for y in 0..h {
        for x in 0..w {
            if !scene.gt_normals.valid_mask[[y, x]] {
                valid[[y, x]] = false;
                continue;
            }
            let depth = scene.height_field[[y, x]];
            let ray = camera.pixel_ray(T::of(x as f64), T::of(y as f64));
            let point = ray * depth;
            let n = scene.gt_normals.normal(y, x);
            for (j, &center) in display.centers.iter().enumerate() {
                let v = center - point;
                let d2 = v.norm_sq();
                if d2 < min_d2 {
                    valid[[y, x]] = false;
                    for jj in 0..b {
                        for c in 0..3 {
                            values[[jj, y, x, c]] = T::zero();
                        }
                    }
                    break;
                }
                let l = v / d2.sqrt();
                let shade = n.dot(l).max(T::zero());
                let gain = if falloff { shade / d2 } else { shade };
                for c in 0..3 {
                    values[[j, y, x, c]] = scene.gt_albedo[[y, x, c]] * gain + ambient;
                }
            }
        }
    }
    Ok(BasisStack {
        values,
        valid_mask: valid,
    })
}

/// Classic gradient noise on an integer lattice with a seeded permutation
/// table; `fbm` stacks octaves with lacunarity 2 and gain 0.5.
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut table: [u8; 256] = [0; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        // Fisher-Yates with the seeded stream.
        for i in (1..256).rev() {
            let j = rng.gen_range(0..=i);
            table.swap(i, j);
        }
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Perlin { perm }
    }

    fn grad(hash: u8, dx: f64, dy: f64) -> f64 {
        // 8 gradient directions.
        match hash & 7 {
            0 => dx + dy,
            1 => dx - dy,
            2 => -dx + dy,
            3 => -dx - dy,
            4 => dx,
            5 => -dx,
            6 => dy,
            _ => -dy,
        }
    }

    fn fade(t: f64) -> f64 {
        t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
    }

    /// Single octave in roughly [-1, 1].
    fn noise(&self, x: f64, y: f64) -> f64 {
        let xi = x.floor();
        let yi = y.floor();
        let dx = x - xi;
        let dy = y - yi;
        let x0 = (xi as i64 & 255) as usize;
        let y0 = (yi as i64 & 255) as usize;
        let h = |i: usize, j: usize| self.perm[(self.perm[(x0 + i) & 255] as usize + y0 + j) & 511];
        let n00 = Self::grad(h(0, 0), dx, dy);
        let n10 = Self::grad(h(1, 0), dx - 1.0, dy);
        let n01 = Self::grad(h(0, 1), dx, dy - 1.0);
        let n11 = Self::grad(h(1, 1), dx - 1.0, dy - 1.0);
        let u = Self::fade(dx);
        let v = Self::fade(dy);
        let nx0 = n00 + u * (n10 - n00);
        let nx1 = n01 + u * (n11 - n01);
        nx0 + v * (nx1 - nx0)
    }

    fn fbm(&self, x: f64, y: f64, octaves: u32) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0;
        let mut norm = 0.0;
        for _ in 0..octaves {
            sum += amp * self.noise(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::CameraModel;

    #[test]
    fn display_single_superpixel_at_center() {
        let d = make_display_geometry(1, 1, 0.1, 0.2, Vec3::zero()).unwrap();
        assert_eq!(d.b(), 1);
        let c = d.centers[0];
        assert_eq!((c.x, c.y, c.z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn display_two_columns() {
        let d = make_display_geometry(1, 2, 0.2, 0.1, Vec3::<f64>::zero()).unwrap();
        assert!((d.centers[0].x + 0.05).abs() < 1e-15);
        assert!((d.centers[1].x - 0.05).abs() < 1e-15);
        assert_eq!(d.centers[0].y, 0.0);
    }

    #[test]
    fn display_offset_applies() {
        let d = make_display_geometry(2, 2, 0.2, 0.2, Vec3::<f64>::new(0.01, 0.0, 0.0)).unwrap();
        // Row-major: index 1 is row 0, col 1 -> (+0.05 + 0.01, -0.05).
        assert!((d.centers[1].x - 0.06).abs() < 1e-15);
        assert!((d.centers[1].y + 0.05).abs() < 1e-15);
        for c in &d.centers {
            assert_eq!(c.z, 0.0);
        }
    }

    #[test]
    fn display_rejects_degenerate_grid() {
        assert!(make_display_geometry::<f64>(0, 2, 0.1, 0.1, Vec3::zero()).is_err());
        assert!(make_display_geometry::<f64>(2, 2, 0.0, 0.1, Vec3::zero()).is_err());
    }

    #[test]
    fn plane_scene_is_flat() {
        let s = generate_scene::<f64>(SceneKind::Plane, 16, 0.1, 0.0, 0).unwrap();
        for &d in s.height_field.iter() {
            assert_eq!(d, 0.1);
        }
        for y in 0..16 {
            for x in 0..16 {
                let n = s.gt_normals.normal(y, x);
                assert_eq!((n.x, n.y, n.z), (0.0, 0.0, -1.0));
            }
        }
    }

    #[test]
    fn sphere_cap_apex_normal_is_axial() {
        let s = generate_scene::<f64>(SceneKind::SphereCap, 64, 0.1, 0.02, 0).unwrap();
        let c = scene_center_pixel(64);
        let n = s.gt_normals.normal(c, c);
        assert!(n.x.abs() < 1e-12, "n = {n:?}");
        assert!(n.y.abs() < 1e-12, "n = {n:?}");
        assert!((n.z + 1.0).abs() < 1e-12, "n = {n:?}");
        // Depths stay inside (base - amplitude, base].
        for &d in s.height_field.iter() {
            assert!(d > 0.1 - 0.02 - 1e-12 && d <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn normals_are_unit_and_toward_camera() {
        for kind in [
            SceneKind::SphereCap,
            SceneKind::PerlinHeightfield,
            SceneKind::LeafHeightfield,
        ] {
            let s = generate_scene::<f64>(kind, 32, 0.1, 0.02, 3).unwrap();
            s.gt_normals.validate(1e-9).unwrap();
            for &d in s.height_field.iter() {
                assert!(d > 0.0);
            }
        }
    }

    #[test]
    fn scene_generation_is_deterministic() {
        for kind in [SceneKind::PerlinHeightfield, SceneKind::LeafHeightfield] {
            let a = generate_scene::<f64>(kind, 24, 0.1, 0.02, 42).unwrap();
            let b = generate_scene::<f64>(kind, 24, 0.1, 0.02, 42).unwrap();
            assert_eq!(a.height_field, b.height_field);
            assert_eq!(a.gt_albedo, b.gt_albedo);
            let c = generate_scene::<f64>(kind, 24, 0.1, 0.02, 43).unwrap();
            assert_ne!(a.height_field, c.height_field);
        }
    }

    #[test]
    fn scene_rejects_bad_arguments() {
        assert!(generate_scene::<f64>(SceneKind::Plane, 1, 0.1, 0.0, 0).is_err());
        assert!(generate_scene::<f64>(SceneKind::Plane, 8, -0.1, 0.0, 0).is_err());
        assert!(generate_scene::<f64>(SceneKind::SphereCap, 8, 0.1, 0.1, 0).is_err());
    }

    #[test]
    fn basis_axis_pixel_value() {
        // Plane at 0.10 m, one superpixel at the origin, on-axis pixel:
        // l = (0,0,-1), n = (0,0,-1), albedo 1 -> shade 1.
        let n = 65;
        let mut s = generate_scene::<f64>(SceneKind::Plane, n, 0.1, 0.0, 0).unwrap();
        s.gt_albedo.fill(1.0);
        let d = make_display_geometry(1, 1, 0.05, 0.05, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let c = scene_center_pixel(n);

        let basis = render_basis(&s, &d, &cam, false).unwrap();
        for ch in 0..3 {
            assert!((basis.values[[0, c, c, ch]] - 1.0).abs() < 1e-12);
        }

        let with_falloff = render_basis(&s, &d, &cam, true).unwrap();
        for ch in 0..3 {
            assert!((with_falloff.values[[0, c, c, ch]] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn basis_black_scene_is_zero() {
        let n = 9;
        let mut s = generate_scene::<f64>(SceneKind::Plane, n, 0.1, 0.0, 0).unwrap();
        s.gt_albedo.fill(0.0);
        let d = make_display_geometry(2, 2, 0.1, 0.05, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let basis = render_basis(&s, &d, &cam, false).unwrap();
        assert!(basis.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn basis_is_linear_in_albedo() {
        let n = 12;
        let s = generate_scene::<f64>(SceneKind::SphereCap, n, 0.1, 0.02, 0).unwrap();
        let mut scaled = s.clone();
        scaled.gt_albedo.mapv_inplace(|a| a * 0.5);
        let d = make_display_geometry(2, 3, 0.1, 0.05, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let b1 = render_basis(&s, &d, &cam, true).unwrap();
        let b2 = render_basis(&scaled, &d, &cam, true).unwrap();
        for (a, b) in b1.values.iter().zip(b2.values.iter()) {
            assert!((a * 0.5 - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn basis_values_non_negative_and_bounded() {
        let n = 16;
        let mut s = generate_scene::<f64>(SceneKind::PerlinHeightfield, n, 0.1, 0.02, 5).unwrap();
        s.ambient_level = 0.3;
        let d = make_display_geometry(2, 2, 0.134, 0.062, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let basis = render_basis(&s, &d, &cam, false).unwrap();
        let bound = 1.0 + 0.3 / 4.0 + 1e-12;
        for &v in basis.values.iter() {
            assert!(v >= 0.0 && v <= bound, "v = {v}");
        }
    }

    #[test]
    fn basis_ambient_floor() {
        let n = 9;
        let mut s = generate_scene::<f64>(SceneKind::Plane, n, 0.1, 0.0, 0).unwrap();
        s.gt_albedo.fill(0.0);
        s.ambient_level = 0.4;
        let d = make_display_geometry(2, 2, 0.1, 0.05, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let basis = render_basis(&s, &d, &cam, false).unwrap();
        for &v in basis.values.iter() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_superpixel_marks_pixel_invalid() {
        let n = 9;
        let c = scene_center_pixel(n);
        let mut s = generate_scene::<f64>(SceneKind::Plane, n, 0.1, 0.0, 0).unwrap();
        // Push the center pixel's surface onto the display plane.
        s.height_field[[c, c]] = 1e-9;
        let d = make_display_geometry(1, 1, 0.05, 0.05, Vec3::zero()).unwrap();
        let cam = CameraModel::fronto_parallel(n, 0.1);
        let basis = render_basis(&s, &d, &cam, false).unwrap();
        assert!(!basis.valid_mask[[c, c]]);
        assert!(basis.valid_mask[[0, 0]]);
    }

    #[test]
    fn pattern_set_validates_range() {
        let ok = Array3::from_elem((2, 4, 3), 0.5);
        assert!(PatternSet::<f64>::new(ok).is_ok());
        let mut bad = Array3::from_elem((2, 4, 3), 0.5);
        bad[[0, 0, 0]] = 1.5;
        assert!(PatternSet::<f64>::new(bad).is_err());
    }
}
