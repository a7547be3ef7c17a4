//! Bundled defaults: a phone-class display layout, an exposure ladder
//! spanning the radiance range near-field captures produce, and a small
//! fixed training set used by pattern learning and the sweep harness.

use crate::error::Result;
use crate::lens::CameraModel;
use crate::math::{Real, Vec3};
use crate::scene::{
    generate_scene, make_display_geometry, render_basis, DisplayGeometry, SceneKind, SceneMesh,
};

/// Display rows in the default superpixel grid.
pub const DISPLAY_ROWS: usize = 4;
/// Display columns in the default superpixel grid.
pub const DISPLAY_COLS: usize = 8;
/// Default display width in meters (landscape phone panel).
pub const DISPLAY_WIDTH_M: f64 = 0.134;
/// Default display height in meters.
pub const DISPLAY_HEIGHT_M: f64 = 0.062;
/// Default scene depth in meters.
pub const BASE_DEPTH_M: f64 = 0.1;

/// The default b = 32 display: a 4 x 8 superpixel grid centered on the
/// camera axis in the z = 0 plane.
pub fn default_display<T: Real>() -> DisplayGeometry<T> {
    make_display_geometry(
        DISPLAY_ROWS,
        DISPLAY_COLS,
        T::of(DISPLAY_WIDTH_M),
        T::of(DISPLAY_HEIGHT_M),
        Vec3::zero(),
    )
    .expect("default display constants are valid")
}

/// A 4-stop exposure ladder covering roughly 3.5 decades of radiance,
/// shortest first.
pub fn default_exposure_ladder<T: Real>() -> Vec<T> {
    [1.0 / 200.0, 1.0 / 50.0, 1.0 / 12.5, 1.0 / 3.125]
        .into_iter()
        .map(T::of)
        .collect()
}

/// One training scene plus its rendered basis inputs.
pub struct TrainingScene<T> {
    pub name: &'static str,
    pub scene: SceneMesh<T>,
}

/// The fixed trio of non-planar scenes used to train and evaluate
/// patterns: a sphere cap, a noise heightfield, and a leaf. Fixed seeds
/// keep every run identical.
pub fn bundled_training_scenes<T: Real>(resolution: usize) -> Result<Vec<TrainingScene<T>>> {
    let depth = T::of(BASE_DEPTH_M);
    let amp = T::of(0.02);
    Ok(vec![
        TrainingScene {
            name: "sphere_cap",
            scene: generate_scene(SceneKind::SphereCap, resolution, depth, amp, 11)?,
        },
        TrainingScene {
            name: "perlin",
            scene: generate_scene(SceneKind::PerlinHeightfield, resolution, depth, amp, 23)?,
        },
        TrainingScene {
            name: "leaf",
            scene: generate_scene(SceneKind::LeafHeightfield, resolution, depth, amp, 37)?,
        },
    ])
}

/// Camera matched to the default scene framing at `resolution`.
pub fn default_camera<T: Real>(resolution: usize) -> CameraModel<T> {
    CameraModel::fronto_parallel(resolution, T::of(BASE_DEPTH_M))
}

/// Renders the default basis stack for a scene under the default display
/// and camera, with inverse-square falloff on.
pub fn render_default_basis<T: Real>(
    scene: &SceneMesh<T>,
    resolution: usize,
) -> Result<crate::scene::BasisStack<T>> {
    render_basis(
        scene,
        &default_display(),
        &default_camera(resolution),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_display_shape() {
        let d: DisplayGeometry<f64> = default_display();
        assert_eq!(d.b(), 32);
        assert_eq!((d.rows, d.cols), (4, 8));
    }

    #[test]
    fn exposure_ladder_is_increasing_and_positive() {
        let l: Vec<f64> = default_exposure_ladder();
        assert_eq!(l.len(), 4);
        assert!(l.windows(2).all(|w| w[0] > 0.0 && w[0] < w[1]));
    }

    #[test]
    fn bundled_scenes_are_deterministic() {
        let a: Vec<TrainingScene<f64>> = bundled_training_scenes(16).unwrap();
        let b: Vec<TrainingScene<f64>> = bundled_training_scenes(16).unwrap();
        assert_eq!(a.len(), 3);
        for (s1, s2) in a.iter().zip(b.iter()) {
            assert_eq!(s1.name, s2.name);
            assert_eq!(s1.scene.height_field, s2.scene.height_field);
        }
    }
}
