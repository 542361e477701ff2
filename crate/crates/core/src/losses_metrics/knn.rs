//! Neighborhood smoothness: standard deviation of Gaussian properties within
//! each Gaussian's k-nearest-neighbor set.

use crate::error::{Error, Result};
use crate::geometry::{gaussian_to_world, Gaussian, GaussianGrad, PolygonFrame, Vec3};

/// Fixed neighborhoods (self first, then `k` nearest by rest-pose center)
/// plus the rest-pose frame scale of every Gaussian's parent.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    neighborhoods: Vec<Vec<u32>>,
    frame_scale: Vec<f64>,
}

impl KnnGraph {
    /// Brute-force neighbor search; ties break on index.
    pub fn from_centers(centers: &[Vec3], frame_scale: Vec<f64>, k: usize) -> Result<Self> {
        let n = centers.len();
        if n < k + 1 {
            return Err(Error::TooFewGaussians { needed: k + 1, got: n });
        }
        assert_eq!(frame_scale.len(), n, "one frame scale per Gaussian");
        let mut neighborhoods = Vec::with_capacity(n);
        let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n);
        for (i, c) in centers.iter().enumerate() {
            cand.clear();
            cand.extend(centers.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, p)| ((p - c).norm_squared(), j as u32)));
            let nth = k.saturating_sub(1);
            if k > 0 {
                cand.select_nth_unstable_by(nth, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let mut near: Vec<(f64, u32)> = cand[..k].to_vec();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut hood = vec![i as u32];
            hood.extend(near.iter().map(|p| p.1));
            neighborhoods.push(hood);
        }
        Ok(Self { k, neighborhoods, frame_scale })
    }

    /// Builds the graph from the rest-pose frames of each Gaussian's parent.
    pub fn build(gaussians: &[Gaussian], rest_frames: &[PolygonFrame], k: usize) -> Result<Self> {
        let centers: Vec<Vec3> = gaussians.iter().map(|g| gaussian_to_world(g, &rest_frames[g.parent as usize]).mean).collect();
        let scales = gaussians.iter().map(|g| rest_frames[g.parent as usize].scale).collect();
        Self::from_centers(&centers, scales, k)
    }

    pub fn neighborhood(&self, i: usize) -> &[u32] {
        &self.neighborhoods[i]
    }

    pub fn len(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhoods.is_empty()
    }
}

/// Scalar properties of one Gaussian, grouped: offset magnitude (1),
/// scale (3), color (3), opacity (1).
fn properties(g: &Gaussian, frame_scale: f64) -> [f64; 8] {
    let s = g.log_scale.map(f64::exp);
    let m = frame_scale * g.offset.iter().map(|v| v * v).sum::<f64>().sqrt();
    [m, s[0], s[1], s[2], g.color[0], g.color[1], g.color[2], g.opacity]
}

/// Weight of each scalar in its group: vector properties average their
/// per-component deviations.
const WEIGHTS: [f64; 8] = [1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0];

pub fn knn_regularizer(gaussians: &[Gaussian], graph: &KnnGraph) -> Result<f64> {
    knn_impl(gaussians, graph, false).map(|(v, _)| v)
}

pub fn knn_regularizer_grad(gaussians: &[Gaussian], graph: &KnnGraph) -> Result<(f64, Vec<GaussianGrad>)> {
    knn_impl(gaussians, graph, true)
}

fn knn_impl(gaussians: &[Gaussian], graph: &KnnGraph, want_grad: bool) -> Result<(f64, Vec<GaussianGrad>)> {
    let n = gaussians.len();
    if graph.len() != n {
        return Err(Error::DimensionMismatch(format!("knn graph over {} Gaussians, got {n}", graph.len())));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let props: Vec<[f64; 8]> = gaussians.iter().zip(&graph.frame_scale).map(|(g, &s)| properties(g, s)).collect();
    let mut g_props = if want_grad { vec![[0.0; 8]; n] } else { Vec::new() };
    let mut total = 0.0;
    for hood in &graph.neighborhoods {
        let m = hood.len() as f64;
        for p in 0..8 {
            // Shifted by the first sample so identical values give exactly zero.
            let x0 = props[hood[0] as usize][p];
            let mean = hood.iter().map(|&j| props[j as usize][p] - x0).sum::<f64>() / m;
            let var = hood.iter().map(|&j| (props[j as usize][p] - x0 - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            total += WEIGHTS[p] * std;
            if want_grad && std > 0.0 {
                for &j in hood {
                    g_props[j as usize][p] += WEIGHTS[p] * (props[j as usize][p] - x0 - mean) / (m * std);
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let grads = g_props
        .iter()
        .zip(gaussians)
        .zip(&graph.frame_scale)
        .map(|((gp, g), &fs)| {
            let norm = g.offset.iter().map(|v| v * v).sum::<f64>().sqrt();
            let offset = if norm > 0.0 { g.offset.map(|v| inv_n * gp[0] * fs * v / norm) } else { [0.0; 3] };
            GaussianGrad {
                offset,
                rotation: [0.0; 4],
                log_scale: std::array::from_fn(|k| inv_n * gp[1 + k] * g.log_scale[k].exp()),
                color: std::array::from_fn(|k| inv_n * gp[4 + k]),
                opacity: inv_n * gp[7],
            }
        })
        .collect();
    Ok((total * inv_n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::QUAT_IDENTITY;
    use approx::assert_relative_eq;

    fn gauss(offset: [f64; 3], color: f64, opacity: f64) -> Gaussian {
        Gaussian { parent: 0, offset, rotation: QUAT_IDENTITY, log_scale: [-1.0, -0.5, -2.0], color: [color; 3], opacity }
    }

    fn line(n: usize) -> Vec<Vec3> {
        (0..n).map(|i| Vec3::new(i as f64 * 0.1, (i * i) as f64 * 0.01, 0.0)).collect()
    }

    #[test]
    fn identical_gaussians_have_zero_spread() {
        let gs = vec![gauss([0.1, 0.0, 0.0], 0.4, 0.7); 6];
        let graph = KnnGraph::from_centers(&line(6), vec![1.0; 6], 5).unwrap();
        assert_eq!(knn_regularizer(&gs, &graph).unwrap(), 0.0);
        let (_, g) = knn_regularizer_grad(&gs, &graph).unwrap();
        assert!(g.iter().all(|g| g.color == [0.0; 3] && g.opacity == 0.0));
    }

    #[test]
    fn two_point_color_spread() {
        let gs = vec![gauss([0.0; 3], 0.0, 1.0), gauss([0.0; 3], 1.0, 1.0)];
        let graph = KnnGraph::from_centers(&line(2), vec![1.0; 2], 1).unwrap();
        assert_relative_eq!(knn_regularizer(&gs, &graph).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn opacity_spread_is_homogeneous() {
        let mk = |s: f64| -> Vec<Gaussian> { (0..5).map(|i| gauss([0.0; 3], 0.5, s * (0.1 + 0.15 * i as f64))).collect() };
        let graph = KnnGraph::from_centers(&line(5), vec![1.0; 5], 2).unwrap();
        let a = knn_regularizer(&mk(1.0), &graph).unwrap();
        let b = knn_regularizer(&mk(2.5), &graph).unwrap();
        assert_relative_eq!(b, 2.5 * a, epsilon = 1e-12);
    }

    #[test]
    fn too_few() {
        assert!(matches!(KnnGraph::from_centers(&line(3), vec![1.0; 3], 5), Err(Error::TooFewGaussians { needed: 6, got: 3 })));
    }

    #[test]
    fn neighborhoods_start_with_self() {
        let graph = KnnGraph::from_centers(&line(6), vec![1.0; 6], 2).unwrap();
        assert_eq!(graph.neighborhood(0), &[0, 1, 2]);
        assert_eq!(graph.neighborhood(3), &[3, 2, 4]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gs: Vec<Gaussian> = (0..7)
            .map(|i| {
                let f = i as f64;
                Gaussian {
                    parent: 0,
                    offset: [0.1 * f - 0.2, 0.05 * f, 0.3 - 0.02 * f * f],
                    rotation: QUAT_IDENTITY,
                    log_scale: [-1.0 + 0.1 * f, -0.5 - 0.07 * f, -2.0 + 0.03 * f * f],
                    color: [0.1 * f, 0.9 - 0.1 * f, (0.3 * f).sin().abs()],
                    opacity: 0.2 + 0.1 * f,
                }
            })
            .collect();
        let graph = KnnGraph::from_centers(&line(7), (0..7).map(|i| 0.5 + 0.1 * i as f64).collect(), 3).unwrap();
        let (_, g) = knn_regularizer_grad(&gs, &graph).unwrap();
        let h = 1e-6;
        let fd = |f: &dyn Fn(&mut Gaussian, f64)| -> f64 {
            let mut up = gs.clone();
            f(&mut up[2], h);
            let mut dn = gs.clone();
            f(&mut dn[2], -h);
            (knn_regularizer(&up, &graph).unwrap() - knn_regularizer(&dn, &graph).unwrap()) / (2.0 * h)
        };
        for k in 0..3 {
            assert_relative_eq!(g[2].offset[k], fd(&|g, e| g.offset[k] += e), max_relative = 1e-5, epsilon = 1e-9);
            assert_relative_eq!(g[2].log_scale[k], fd(&|g, e| g.log_scale[k] += e), max_relative = 1e-5, epsilon = 1e-9);
            assert_relative_eq!(g[2].color[k], fd(&|g, e| g.color[k] += e), max_relative = 1e-5, epsilon = 1e-9);
        }
        assert_relative_eq!(g[2].opacity, fd(&|g, e| g.opacity += e), max_relative = 1e-5, epsilon = 1e-9);
    }
}
