//! Near-field photometric stereo with a programmable flat-panel display.
//!
//! The display is modelled as a grid of independently driven superpixels.
//! Each superpixel's linear contribution to the camera image is a *basis
//! image*; any displayed pattern produces a capture that is the
//! pattern-weighted sum of basis images. The library covers:
//!
//! - synthetic scene generation and basis rendering ([`scene`]),
//! - LDR exposure simulation, HDR merging and Gaussian filtering ([`sensor`]),
//! - pinhole projection and polynomial lens distortion ([`lens`]),
//! - per-pixel albedo/normal recovery from pattern captures ([`stereo`]),
//! - gradient-based learning of display patterns ([`learning`]),
//! - a small binary tensor format and PNG/CSV export ([`io`], [`export`]).
//!
//! All numeric code is generic over the scalar type through [`Real`];
//! concrete aliases for the common instantiations live at the crate root.

pub mod error;
pub mod export;
pub mod io;
pub mod learning;
pub mod lens;
pub mod math;
pub mod presets;
pub mod scene;
pub mod sensor;
pub mod stereo;

pub use error::{Error, Result};
pub use math::{Mat3, Real, Vec3};

/// f64 instantiations: the default precision for simulation and learning.
pub type Vec3F64 = math::Vec3<f64>;
pub type Mat3F64 = math::Mat3<f64>;
pub type DisplayGeometryF64 = scene::DisplayGeometry<f64>;
pub type SceneMeshF64 = scene::SceneMesh<f64>;
pub type BasisStackF64 = scene::BasisStack<f64>;
pub type PatternSetF64 = scene::PatternSet<f64>;
pub type NormalMapF64 = scene::NormalMap<f64>;
pub type AlbedoMapF64 = scene::AlbedoMap<f64>;
pub type CameraModelF64 = lens::CameraModel<f64>;
pub type RadianceImageF64 = sensor::RadianceImage<f64>;
pub type ExposureStackF64 = sensor::ExposureStack<f64>;
pub type LightFieldF64 = stereo::LightField<f64>;
pub type CaptureSetF64 = stereo::CaptureSet<f64>;
pub type PatternParamsF64 = learning::PatternParams<f64>;

/// f32 instantiations: match the on-disk tensor payload precision.
pub type Vec3F32 = math::Vec3<f32>;
pub type Mat3F32 = math::Mat3<f32>;
pub type DisplayGeometryF32 = scene::DisplayGeometry<f32>;
pub type SceneMeshF32 = scene::SceneMesh<f32>;
pub type BasisStackF32 = scene::BasisStack<f32>;
pub type PatternSetF32 = scene::PatternSet<f32>;
pub type NormalMapF32 = scene::NormalMap<f32>;
pub type AlbedoMapF32 = scene::AlbedoMap<f32>;
pub type CameraModelF32 = lens::CameraModel<f32>;
