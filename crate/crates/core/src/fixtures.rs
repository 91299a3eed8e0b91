//! Bundled reference scenes: a single patch, two facing patches and an open box.

use nalgebra::DVector;

use crate::geometry::{LuminaireModel, Patch, Scene, Vec3};

/// One unit-area patch with a single unit luminaire on it.
pub fn single_patch() -> Scene {
    let patches = vec![Patch::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 0.5)];
    lit(patches, vec![vec![1.0]])
}

/// Two parallel 0.1 × 0.1 patches facing each other at distance 1, albedo 0.5,
/// with one indicator luminaire per patch.
pub fn two_facing_patches() -> Scene {
    let patches = vec![
        Patch::new(Vec3::zeros(), Vec3::x() * 0.1, Vec3::y() * 0.1, 0.5),
        Patch::new(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::y() * 0.1,
            Vec3::x() * 0.1,
            0.5,
        ),
    ];
    lit(patches, vec![vec![1.0, 0.0], vec![0.0, 1.0]])
}

/// Unit cube with the top face removed. Each of the five faces is split into
/// 3 × 2 cells holding one inward-facing patch that covers 80% of the cell
/// along each edge, 30 patches in all.
pub fn open_box() -> Scene {
    // (corner, a, b) with a × b the inward normal
    let faces = [
        (Vec3::zeros(), Vec3::x(), Vec3::y()),
        (Vec3::zeros(), Vec3::y(), Vec3::z()),
        (Vec3::x(), Vec3::z(), Vec3::y()),
        (Vec3::zeros(), Vec3::z(), Vec3::x()),
        (Vec3::y(), Vec3::x(), Vec3::z()),
    ];
    let albedos = [0.6, 0.5, 0.5, 0.4, 0.4];
    let fill = 0.8;
    let mut patches = Vec::with_capacity(30);
    for ((corner, a, b), albedo) in faces.iter().zip(albedos) {
        for ia in 0..3 {
            for ib in 0..2 {
                let center = corner + a * ((ia as f64 + 0.5) / 3.0) + b * ((ib as f64 + 0.5) / 2.0);
                patches.push(Patch::new(
                    center,
                    a * (fill / 3.0),
                    b * (fill / 2.0),
                    albedo,
                ));
            }
        }
    }
    let n = patches.len();
    let mut ceiling_like = vec![0.0; n];
    ceiling_like[7] = 1.0; // wall x = 0, upper row
    let mut floor_spot = vec![0.0; n];
    floor_spot[2] = 1.0;
    let mut wall_wash = vec![0.0; n];
    for e in &mut wall_wash[18..24] {
        *e = 0.5;
    }
    lit(patches, vec![ceiling_like, floor_spot, wall_wash])
}

fn lit(patches: Vec<Patch>, raw: Vec<Vec<f64>>) -> Scene {
    let areas: Vec<f64> = patches.iter().map(Patch::area).collect();
    let raw = raw.into_iter().map(DVector::from_vec).collect();
    let (model, _) =
        LuminaireModel::normalized(raw, 1.0, &areas).expect("fixture luminaires are valid");
    Scene::new(patches, model).expect("fixture scene is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiosity::assemble_kernel;

    #[test]
    fn fixtures_pass_kernel_checks() {
        for scene in [single_patch(), two_facing_patches(), open_box()] {
            assemble_kernel(&scene).unwrap();
        }
        assert_eq!(open_box().len(), 30);
    }

    #[test]
    fn open_box_normals_point_inward() {
        let center = Vec3::new(0.5, 0.5, 0.5);
        for p in open_box().patches() {
            assert!(p.normal().dot(&(center - p.center)) > 0.0);
        }
    }
}
