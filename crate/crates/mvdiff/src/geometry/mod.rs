//! Camera geometry: pinhole model, orbit poses, Plücker ray maps, plane
//! induced homographies and image warping.

mod camera;
mod homography;
mod orbit_text;
mod plucker;
mod warp;

pub use camera::{orbit_camera, pose_of_camera, Camera, Intrinsics, OrbitPose};
pub use homography::{apply_homography, rectifying_homography};
pub use orbit_text::{format_orbit_line, parse_orbit_line, read_orbit_file, write_orbit_file, OrbitView};
pub use plucker::{fourier_embed, plucker_encode, ray_map, FourierConfig, PluckerRay, RayMap};
pub use warp::warp_image;
