//! Co-visibility labeling between point clouds.
//!
//! Two scans are considered co-visible when the convex hulls of their ground
//! footprints overlap substantially after both are placed into the world
//! frame by ground-truth poses. Overlap is measured as intersection over
//! union of the 2D hulls; a pair labels positive above 0.25, negative below
//! 0.2, and is ignored in the ambiguous band between. A simpler supervision
//! mode labels by inter-pose distance instead (positive within a radius),
//! kept for A/B comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::cloud::{CloudError, DatasetManifest, PointCloud};
use crate::se3::PoseSE3;

/// Pairs with hull IoU strictly above this are positives.
pub const IOU_POSITIVE: f64 = 0.25;
/// Pairs with hull IoU strictly below this are negatives.
pub const IOU_NEGATIVE: f64 = 0.2;
/// Default radius for distance supervision, in meters.
pub const DISTANCE_POSITIVE_WITHIN: f64 = 5.0;

/// Vertices closer than this are merged when building hulls.
const VERTEX_DEDUP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CovisError {
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// Convex hull of a cloud's world-frame (x, y) footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull2D {
    /// Counter-clockwise, strictly convex, no duplicate vertices.
    pub vertices: Vec<Vector2<f64>>,
    /// Enclosed area in square meters.
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => write!(f, "positive"),
            Label::Negative => write!(f, "negative"),
            Label::Ignore => write!(f, "ignore"),
        }
    }
}

/// A labeled pair. `score` is the hull IoU under IoU supervision and the
/// inter-pose distance in meters under distance supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovisLabel {
    pub score: f64,
    pub label: Label,
}

impl CovisLabel {
    pub fn from_iou(iou: f64) -> Self {
        let label = if iou > IOU_POSITIVE {
            Label::Positive
        } else if iou < IOU_NEGATIVE {
            Label::Negative
        } else {
            Label::Ignore
        };
        Self { score: iou, label }
    }

    pub fn from_distance(distance: f64, positive_within: f64) -> Self {
        let label =
            if distance <= positive_within { Label::Positive } else { Label::Negative };
        Self { score: distance, label }
    }
}

/// How pairs are labeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Supervision {
    /// Hull-overlap IoU with the 0.25 / 0.2 thresholds.
    HullIou,
    /// Positive when poses are within `positive_within` meters.
    Distance { positive_within: f64 },
}

/// Output of [`label_pairs`]: labels for all usable unordered pairs, plus the
/// entries that had to be excluded (index and reason).
#[derive(Debug, Clone)]
pub struct PairLabels {
    pub labels: BTreeMap<(usize, usize), CovisLabel>,
    pub excluded: Vec<(usize, String)>,
}

impl Hull2D {
    /// Convex hull of a planar point set via the monotone chain.
    pub fn from_points(points: &[Vector2<f64>]) -> Result<Self, CovisError> {
        if points.len() < 3 {
            return Err(CovisError::DegenerateHull(format!("only {} points", points.len())));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
        pts.dedup_by(|a, b| (*a - *b).norm() <= VERTEX_DEDUP);

        // Strict right-turn test drops collinear points, which keeps the
        // result strictly convex.
        let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
            (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
        };
        let mut lower: Vec<Vector2<f64>> = Vec::new();
        for p in &pts {
            while lower.len() >= 2
                && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
            {
                lower.pop();
            }
            lower.push(*p);
        }
        let mut upper: Vec<Vector2<f64>> = Vec::new();
        for p in pts.iter().rev() {
            while upper.len() >= 2
                && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
            {
                upper.pop();
            }
            upper.push(*p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        if lower.len() < 3 {
            return Err(CovisError::DegenerateHull("points are collinear".into()));
        }
        let area = shoelace(&lower);
        if area <= 0.0 {
            return Err(CovisError::DegenerateHull(format!("non-positive area {area}")));
        }
        Ok(Hull2D { vertices: lower, area })
    }
}

/// Convex hull of the cloud's (x, y) footprint after applying `world_pose`.
pub fn hull(cloud: &PointCloud, world_pose: &PoseSE3) -> Result<Hull2D, CovisError> {
    let pts: Vec<Vector2<f64>> = cloud
        .points
        .iter()
        .map(|p| {
            let w = world_pose.transform_point(&p.xyz());
            Vector2::new(w.x, w.y)
        })
        .collect();
    Hull2D::from_points(&pts)
}

/// Signed shoelace area; positive for counter-clockwise rings.
fn shoelace(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Clips `subject` against one half-plane of the convex clip polygon, the
/// side on or to the left of the directed edge `p -> q`.
fn clip_edge(subject: &[Vector2<f64>], p: &Vector2<f64>, q: &Vector2<f64>) -> Vec<Vector2<f64>> {
    let side = |r: &Vector2<f64>| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let mut out = Vec::with_capacity(subject.len() + 1);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        let sc = side(&cur);
        let sp = side(&prev);
        if sc >= 0.0 {
            if sp < 0.0 {
                out.push(line_intersection(&prev, &cur, p, q));
            }
            out.push(cur);
        } else if sp >= 0.0 {
            out.push(line_intersection(&prev, &cur, p, q));
        }
    }
    out
}

/// Intersection of segment `a -> b` with the infinite line through `p -> q`.
fn line_intersection(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    p: &Vector2<f64>,
    q: &Vector2<f64>,
) -> Vector2<f64> {
    let d1 = *b - *a;
    let d2 = *q - *p;
    let denom = d1.x * d2.y - d1.y * d2.x;
    let t = ((p.x - a.x) * d2.y - (p.y - a.y) * d2.x) / denom;
    *a + d1 * t
}

/// Intersection-over-union of two hull footprints.
pub fn iou(a: &Hull2D, b: &Hull2D) -> f64 {
    let mut poly = a.vertices.clone();
    let n = b.vertices.len();
    for i in 0..n {
        if poly.len() < 3 {
            break;
        }
        poly = clip_edge(&poly, &b.vertices[i], &b.vertices[(i + 1) % n]);
    }
    let inter = if poly.len() < 3 { 0.0 } else { shoelace(&poly).max(0.0) };
    let union = a.area + b.area - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Labels every unordered pair of manifest entries.
///
/// Under IoU supervision each entry's cloud is loaded and its world hull
/// computed; entries with degenerate hulls are excluded and reported.
/// `max_pair_distance` short-circuits pairs whose poses are farther apart
/// than the limit to negatives (score 0) without hull clipping; pick it
/// larger than twice the sensing range to make the shortcut lossless.
pub fn label_pairs(
    manifest: &DatasetManifest,
    supervision: Supervision,
    max_pair_distance: Option<f64>,
) -> Result<PairLabels, CovisError> {
    let n = manifest.len();
    let mut excluded = Vec::new();
    let hulls: Vec<Option<Hull2D>> = match supervision {
        Supervision::Distance { .. } => vec![None; n],
        Supervision::HullIou => {
            let mut hulls = Vec::with_capacity(n);
            for i in 0..n {
                let cloud = manifest.load_entry_cloud(i)?;
                match hull(&cloud, &manifest.entries[i].pose) {
                    Ok(h) => hulls.push(Some(h)),
                    Err(e) => {
                        excluded.push((i, e.to_string()));
                        hulls.push(None);
                    }
                }
            }
            hulls
        }
    };
    let mut labels = BTreeMap::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (manifest.entries[i].pose.translation()
                - manifest.entries[j].pose.translation())
            .norm();
            let label = match supervision {
                Supervision::Distance { positive_within } => {
                    CovisLabel::from_distance(d, positive_within)
                }
                Supervision::HullIou => {
                    if max_pair_distance.is_some_and(|limit| d > limit) {
                        CovisLabel::from_iou(0.0)
                    } else {
                        match (&hulls[i], &hulls[j]) {
                            (Some(a), Some(b)) => CovisLabel::from_iou(iou(a, b)),
                            _ => continue,
                        }
                    }
                }
            };
            labels.insert((i, j), label);
        }
    }
    Ok(PairLabels { labels, excluded })
}

/// Labels every (query, database) combination across two manifests, with the
/// same semantics as [`label_pairs`]. Keys are `(query index, db index)`.
pub fn label_pairs_cross(
    queries: &DatasetManifest,
    database: &DatasetManifest,
    supervision: Supervision,
    max_pair_distance: Option<f64>,
) -> Result<PairLabels, CovisError> {
    let mut excluded = Vec::new();
    let hull_set = |m: &DatasetManifest, side: &str, excluded: &mut Vec<(usize, String)>| {
        let mut hulls = Vec::with_capacity(m.len());
        for i in 0..m.len() {
            let cloud = m.load_entry_cloud(i)?;
            match hull(&cloud, &m.entries[i].pose) {
                Ok(h) => hulls.push(Some(h)),
                Err(e) => {
                    excluded.push((i, format!("{side}: {e}")));
                    hulls.push(None);
                }
            }
        }
        Ok::<_, CovisError>(hulls)
    };
    let (q_hulls, db_hulls) = match supervision {
        Supervision::Distance { .. } => (vec![None; queries.len()], vec![None; database.len()]),
        Supervision::HullIou => (
            hull_set(queries, "query", &mut excluded)?,
            hull_set(database, "database", &mut excluded)?,
        ),
    };
    let mut labels = BTreeMap::new();
    for qi in 0..queries.len() {
        for di in 0..database.len() {
            let d = (queries.entries[qi].pose.translation()
                - database.entries[di].pose.translation())
            .norm();
            let label = match supervision {
                Supervision::Distance { positive_within } => {
                    CovisLabel::from_distance(d, positive_within)
                }
                Supervision::HullIou => {
                    if max_pair_distance.is_some_and(|limit| d > limit) {
                        CovisLabel::from_iou(0.0)
                    } else {
                        match (&q_hulls[qi], &db_hulls[di]) {
                            (Some(a), Some(b)) => CovisLabel::from_iou(iou(a, b)),
                            _ => continue,
                        }
                    }
                }
            };
            labels.insert((qi, di), label);
        }
    }
    Ok(PairLabels { labels, excluded })
}

/// Writes labels as `i,j,score,label` CSV with a header line.
pub fn write_labels_csv(path: impl AsRef<Path>, labels: &PairLabels) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "i,j,score,label")?;
    for (&(i, j), l) in &labels.labels {
        writeln!(w, "{},{},{},{}", i, j, l.score, l.label)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{save_cloud, save_manifest, ManifestEntry, Point, SensorKind};
    use crate::se3::se3_exp;
    use nalgebra::{Vector3, Vector6};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::path::Path;

    fn square_cloud(center: (f32, f32), half: f32) -> PointCloud {
        let (cx, cy) = center;
        PointCloud::new(
            vec![
                Point::new(cx - half, cy - half, 0.0, 1.0),
                Point::new(cx + half, cy - half, 0.0, 1.0),
                Point::new(cx + half, cy + half, 0.0, 1.0),
                Point::new(cx - half, cy + half, 0.0, 1.0),
            ],
            0.0,
            "square",
        )
    }

    fn square_hull(center: (f64, f64), half: f64) -> Hull2D {
        let (cx, cy) = center;
        Hull2D::from_points(&[
            Vector2::new(cx - half, cy - half),
            Vector2::new(cx + half, cy - half),
            Vector2::new(cx + half, cy + half),
            Vector2::new(cx - half, cy + half),
        ])
        .unwrap()
    }

    #[test]
    fn unit_square_hull() {
        let h = square_hull((0.5, 0.5), 0.5);
        assert_eq!(h.vertices.len(), 4);
        assert!((h.area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translated_pose_shifts_hull_but_not_area() {
        let cloud = square_cloud((0.5, 0.5), 0.5);
        let pose =
            PoseSE3::new(nalgebra::Matrix3::identity(), Vector3::new(5.0, 0.0, 0.0)).unwrap();
        let h = hull(&cloud, &pose).unwrap();
        assert!((h.area - 1.0).abs() < 1e-12);
        let min_x = h.vertices.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
        assert!((min_x - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hull_contains_all_inputs_and_bounds_disc_area() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..20 {
            let points: Vec<Point> = (0..100)
                .map(|_| {
                    // Rejection-sample the unit disc.
                    loop {
                        let x = rng.random::<f32>() * 2.0 - 1.0;
                        let y = rng.random::<f32>() * 2.0 - 1.0;
                        if x * x + y * y <= 1.0 {
                            return Point::new(x, y, 0.0, 1.0);
                        }
                    }
                })
                .collect();
            let cloud = PointCloud::new(points, 0.0, "disc");
            let h = hull(&cloud, &PoseSE3::identity()).unwrap();
            assert!(h.area <= std::f64::consts::PI);
            // Every input sits on or inside the hull: left of every CCW edge.
            let n = h.vertices.len();
            for p in &cloud.points {
                let w = Vector2::new(p.x as f64, p.y as f64);
                for i in 0..n {
                    let a = h.vertices[i];
                    let b = h.vertices[(i + 1) % n];
                    let side = (b.x - a.x) * (w.y - a.y) - (b.y - a.y) * (w.x - a.x);
                    assert!(side >= -1e-9);
                }
            }
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let cloud = PointCloud::new(
            (0..5).map(|i| Point::new(i as f32, 2.0 * i as f32, 0.0, 1.0)).collect(),
            0.0,
            "line",
        );
        assert!(matches!(
            hull(&cloud, &PoseSE3::identity()),
            Err(CovisError::DegenerateHull(_))
        ));
    }

    #[test]
    fn iou_identity_disjoint_and_half_overlap() {
        let a = square_hull((0.5, 0.5), 0.5);
        assert!((iou(&a, &a) - 1.0).abs() <= 1e-12);

        let far = square_hull((10.0, 0.0), 0.5);
        assert_eq!(iou(&a, &far), 0.0);

        // Unit squares offset by 0.5 in x: intersection 0.5, union 1.5.
        let b = square_hull((1.0, 0.5), 0.5);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_bounded() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..50 {
            fn mk(rng: &mut StdRng, cx: f64, cy: f64) -> Hull2D {
                let points: Vec<Point> = (0..30)
                    .map(|_| {
                        Point::new(
                            (cx + (rng.random::<f64>() - 0.5) * 4.0) as f32,
                            (cy + (rng.random::<f64>() - 0.5) * 4.0) as f32,
                            0.0,
                            1.0,
                        )
                    })
                    .collect();
                hull(&PointCloud::new(points, 0.0, "x"), &PoseSE3::identity()).unwrap()
            }
            let a = mk(&mut rng, 0.0, 0.0);
            let (cx, cy) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let b = mk(&mut rng, cx, cy);
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            assert!((ab - ba).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&ab));
            assert!((iou(&a, &a) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn square_families_match_closed_forms() {
        // Concentric squares: side fraction s gives IoU s^2, increasing in s.
        let outer = square_hull((0.0, 0.0), 1.0);
        let mut prev = -1.0;
        for k in 1..=10 {
            let s = k as f64 / 10.0;
            let inner = square_hull((0.0, 0.0), s);
            let got = iou(&outer, &inner);
            assert!((got - s * s).abs() <= 1e-12, "s={s}");
            assert!(got >= prev);
            prev = got;
        }
        // Sliding unit squares offset by t: IoU (1-t)/(1+t), decreasing in t.
        let base = square_hull((0.0, 0.0), 0.5);
        let mut prev = 2.0;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let slid = square_hull((t, 0.0), 0.5);
            let expect = (1.0 - t) / (1.0 + t);
            let got = iou(&base, &slid);
            assert!((got - expect).abs() <= 1e-12, "t={t}");
            assert!(got <= prev);
            prev = got;
        }
    }

    #[test]
    fn iou_is_rigid_invariant() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..20 {
            let a_cloud = square_cloud((0.0, 0.0), 1.0);
            let b_cloud = square_cloud((1.0, 0.5), 0.8);
            let base = iou(
                &hull(&a_cloud, &PoseSE3::identity()).unwrap(),
                &hull(&b_cloud, &PoseSE3::identity()).unwrap(),
            );
            // A shared yaw + translation moves both hulls together.
            let yaw = rng.random::<f64>() * std::f64::consts::TAU;
            let xi = Vector6::new(
                rng.random::<f64>() * 20.0 - 10.0,
                rng.random::<f64>() * 20.0 - 10.0,
                rng.random::<f64>() * 2.0,
                0.0,
                0.0,
                yaw,
            );
            let t = se3_exp(&xi);
            let moved = iou(
                &hull(&a_cloud, &t).unwrap(),
                &hull(&b_cloud, &t).unwrap(),
            );
            assert!((base - moved).abs() <= 1e-9, "base {base} moved {moved}");
        }
    }

    #[test]
    fn label_thresholds_are_strict() {
        assert_eq!(CovisLabel::from_iou(0.3).label, Label::Positive);
        assert_eq!(CovisLabel::from_iou(0.1).label, Label::Negative);
        assert_eq!(CovisLabel::from_iou(0.22).label, Label::Ignore);
        assert_eq!(CovisLabel::from_iou(0.25).label, Label::Ignore);
        assert_eq!(CovisLabel::from_iou(0.2).label, Label::Ignore);
        assert_eq!(CovisLabel::from_distance(4.9, 5.0).label, Label::Positive);
        assert_eq!(CovisLabel::from_distance(5.1, 5.0).label, Label::Negative);
    }

    fn write_square_dataset(dir: &Path) -> DatasetManifest {
        // Three squares: 0 and 1 overlap heavily, 2 is far away; plus a
        // degenerate collinear cloud as entry 3.
        let specs: [(f32, f32); 3] = [(0.0, 0.0), (0.5, 0.0), (50.0, 0.0)];
        let mut entries = Vec::new();
        for (i, (cx, cy)) in specs.iter().enumerate() {
            let rel = std::path::PathBuf::from(format!("{i}.csv"));
            save_cloud(dir.join(&rel), &square_cloud((*cx, *cy), 1.0)).unwrap();
            entries.push(ManifestEntry {
                cloud_path: rel,
                pose: PoseSE3::identity(),
                timestamp: i as f64,
            });
        }
        let rel = std::path::PathBuf::from("3.csv");
        let line = PointCloud::new(
            (0..4).map(|i| Point::new(i as f32, 0.0, 0.0, 1.0)).collect(),
            0.0,
            "line",
        );
        save_cloud(dir.join(&rel), &line).unwrap();
        entries.push(ManifestEntry { cloud_path: rel, pose: PoseSE3::identity(), timestamp: 3.0 });
        let manifest = DatasetManifest::new(dir, SensorKind::Panoramic, entries);
        save_manifest(dir.join("manifest.txt"), &manifest).unwrap();
        manifest
    }

    #[test]
    fn label_pairs_covers_all_pairs_and_excludes_degenerates() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_square_dataset(dir.path());
        let out = label_pairs(&manifest, Supervision::HullIou, None).unwrap();
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].0, 3);
        // Pairs involving entry 3 are dropped; the other three remain.
        assert_eq!(out.labels.len(), 3);
        assert_eq!(out.labels[&(0, 1)].label, Label::Positive);
        assert_eq!(out.labels[&(0, 2)].label, Label::Negative);
        assert_eq!(out.labels[&(1, 2)].label, Label::Negative);
        // Squares of side 2 offset by 0.5: IoU = 1.5*2 / (2*4 - 3) = 0.6.
        assert!((out.labels[&(0, 1)].score - 0.6).abs() < 1e-12);
    }

    #[test]
    fn label_pairs_distance_mode_ignores_clouds() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for (i, x) in [0.0f64, 3.0, 20.0].iter().enumerate() {
            let rel = std::path::PathBuf::from(format!("{i}.csv"));
            save_cloud(dir.path().join(&rel), &square_cloud((0.0, 0.0), 1.0)).unwrap();
            entries.push(ManifestEntry {
                cloud_path: rel,
                pose: PoseSE3::new(nalgebra::Matrix3::identity(), Vector3::new(*x, 0.0, 0.0))
                    .unwrap(),
                timestamp: i as f64,
            });
        }
        let manifest = DatasetManifest::new(dir.path(), SensorKind::Panoramic, entries);
        let out = label_pairs(
            &manifest,
            Supervision::Distance { positive_within: DISTANCE_POSITIVE_WITHIN },
            None,
        )
        .unwrap();
        assert_eq!(out.labels[&(0, 1)].label, Label::Positive);
        assert_eq!(out.labels[&(0, 2)].label, Label::Negative);
        assert_eq!(out.labels[&(1, 2)].label, Label::Negative);
        assert_eq!(out.labels[&(0, 2)].score, 20.0);
    }

    #[test]
    fn prefilter_short_circuits_distant_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_square_dataset(dir.path());
        let out = label_pairs(&manifest, Supervision::HullIou, Some(10.0)).unwrap();
        assert_eq!(out.labels[&(0, 2)].label, Label::Negative);
        assert_eq!(out.labels[&(0, 2)].score, 0.0);
        assert_eq!(out.labels[&(0, 1)].label, Label::Positive);
    }

    #[test]
    fn cross_labeling_keys_by_query_then_db() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_square_dataset(dir.path());
        let out =
            label_pairs_cross(&manifest, &manifest, Supervision::HullIou, None).unwrap();
        // 4x4 combinations minus the 7 involving the degenerate entry.
        assert_eq!(out.labels.len(), 9);
        assert!((out.labels[&(0, 0)].score - 1.0).abs() <= 1e-12);
        assert_eq!(out.labels[&(2, 0)].label, Label::Negative);
    }

    #[test]
    fn csv_output_lists_labels_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_square_dataset(dir.path());
        let out = label_pairs(&manifest, Supervision::HullIou, None).unwrap();
        let path = dir.path().join("labels.csv");
        write_labels_csv(&path, &out).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,score,label");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1,0.6"));
    }
}
