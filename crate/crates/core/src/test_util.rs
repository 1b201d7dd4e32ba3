//! Seeded random generators shared by the unit tests.

use nalgebra::{Vector3, Vector6};
use rand::rngs::StdRng;
use rand::Rng;

use crate::cloud::{Point, PointCloud};
use crate::se3::{se3_exp, PoseSE3};

pub fn random_unit_vector(rng: &mut StdRng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

pub fn random_tangent(rng: &mut StdRng, max_angle: f64, max_trans: f64) -> Vector6<f64> {
    let axis = random_unit_vector(rng);
    let angle = rng.random::<f64>() * max_angle;
    let rho = Vector3::new(
        (rng.random::<f64>() - 0.5) * 2.0 * max_trans,
        (rng.random::<f64>() - 0.5) * 2.0 * max_trans,
        (rng.random::<f64>() - 0.5) * 2.0 * max_trans,
    );
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&(axis * angle));
    xi
}

pub fn random_pose(rng: &mut StdRng) -> PoseSE3 {
    se3_exp(&random_tangent(rng, std::f64::consts::PI - 1e-3, 10.0))
}

pub fn random_cloud(rng: &mut StdRng, n: usize) -> PointCloud {
    let points = (0..n)
        .map(|_| {
            Point::new(
                (rng.random::<f32>() - 0.5) * 100.0,
                (rng.random::<f32>() - 0.5) * 100.0,
                (rng.random::<f32>() - 0.5) * 20.0,
                rng.random::<f32>() * 100.0,
            )
        })
        .collect();
    PointCloud::new(points, 0.0, "random")
}
