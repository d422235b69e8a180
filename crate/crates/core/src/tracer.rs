//! Low-noise tracing of a curve through its point cloud.
//!
//! Starting from a known endpoint, each step looks at the points within
//! one segment length of the current vertex, projects them onto the
//! dominant plane of their second moment, and reads the outgoing
//! directions off an angle histogram. Segment lengths are assumed known
//! and equal.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::sorted_eigen;
use crate::pwl::PwlCurve;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracerConfig {
    /// Known common segment length.
    pub segment_length: f64,
    pub bins: usize,
    /// Minimum angular separation of the two peaks, in radians.
    pub min_peak_separation: f64,
    /// Local cloud radius as a multiple of the segment length.
    pub radius_multiplier: f64,
    /// Points closer than this fraction of the segment length carry no
    /// usable direction and are left out of the histogram.
    pub inner_fraction: f64,
    /// A peak counts only if its smoothed height is at least this multiple
    /// of the mean bin height.
    pub min_prominence: f64,
    /// Rotation of the bin boundaries, in radians.
    pub bin_phase: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            segment_length: 1.0,
            bins: 36,
            min_peak_separation: PI / 6.0,
            radius_multiplier: 1.0,
            inner_fraction: 0.1,
            min_prominence: 2.0,
            bin_phase: 0.0,
        }
    }
}

impl TracerConfig {
    pub fn with_length(segment_length: f64) -> Self {
        Self {
            segment_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("segment_length", self.segment_length),
            ("min_peak_separation", self.min_peak_separation),
            ("radius_multiplier", self.radius_multiplier),
            ("min_prominence", self.min_prominence),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bins < 8 {
            return Err(Error::Config(format!("need at least 8 bins, got {}", self.bins)));
        }
        if !(0.0..1.0).contains(&self.inner_fraction) {
            return Err(Error::Config(format!("inner_fraction must lie in [0, 1), got {}", self.inner_fraction)));
        }
        if !self.bin_phase.is_finite() {
            return Err(Error::Config("bin_phase must be finite".into()));
        }
        Ok(())
    }

    fn bin_width(&self) -> f64 {
        TAU / self.bins as f64
    }

    fn radius(&self) -> f64 {
        self.segment_length * self.radius_multiplier
    }
}

/// Rows of `points` within `radius` of `center`.
pub fn local_cloud(points: &DMatrix<f64>, center: &DVector<f64>, radius: f64) -> Result<DMatrix<f64>> {
    if !(radius > 0.0) {
        return Err(Error::Domain {
            name: "radius",
            value: radius,
            domain: "(0, inf]",
        });
    }
    if points.ncols() != center.len() {
        return Err(Error::Shape(format!("points of dimension {} and center of dimension {}", points.ncols(), center.len())));
    }
    let r2 = radius * radius;
    let keep: Vec<usize> = (0..points.nrows())
        .filter(|&i| (points.row(i).transpose() - center).norm_squared() <= r2)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyLocalCloud {
            center: center.iter().copied().collect(),
            radius,
        });
    }
    Ok(points.select_rows(&keep))
}

/// Offsets from `center` expressed in the dominant plane of their second moment.
struct PlaneView {
    basis: DMatrix<f64>,
    angles: Vec<f64>,
}

fn plane_view(local: &DMatrix<f64>, center: &DVector<f64>, cfg: &TracerConfig) -> Result<PlaneView> {
    let d = center.len();
    if d < 2 {
        return Err(Error::Config("tracing needs d >= 2".into()));
    }
    let inner = cfg.inner_fraction * cfg.segment_length;
    let offsets: Vec<DVector<f64>> = (0..local.nrows())
        .map(|i| local.row(i).transpose() - center)
        .filter(|v| v.norm() > inner)
        .collect();
    if offsets.is_empty() {
        return Err(Error::AmbiguousElbow("no points outside the inner radius".into()));
    }
    let mut m2 = DMatrix::zeros(d, d);
    for v in &offsets {
        m2.ger(1.0, v, v, 1.0);
    }
    let (_, vecs) = sorted_eigen(&m2);
    let mut basis = vecs.columns(0, 2).into_owned();
    // Orient each axis by the sign of the projected third moment so the
    // frame rotates with the data.
    for k in 0..2 {
        let skew: f64 = offsets.iter().map(|v| v.dot(&basis.column(k)).powi(3)).sum();
        if skew < 0.0 {
            basis.column_mut(k).neg_mut();
        }
    }
    let angles = offsets
        .iter()
        .map(|v| {
            let x = v.dot(&basis.column(0));
            let y = v.dot(&basis.column(1));
            y.atan2(x)
        })
        .collect();
    Ok(PlaneView { basis, angles })
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Box-smoothed circular histogram of angles.
fn smoothed_histogram(angles: &[f64], cfg: &TracerConfig) -> Vec<f64> {
    let n = cfg.bins;
    let w = cfg.bin_width();
    let mut h = vec![0.0; n];
    for &a in angles {
        let b = ((a - cfg.bin_phase).rem_euclid(TAU) / w) as usize;
        h[b.min(n - 1)] += 1.0;
    }
    (0..n)
        .map(|b| (h[(b + n - 1) % n] + h[b] + h[(b + 1) % n]) / 3.0)
        .collect()
}

/// Local maxima ordered by height, highest first, ties to the lower bin.
fn local_maxima(h: &[f64]) -> Vec<usize> {
    let n = h.len();
    let mut out: Vec<usize> = (0..n)
        .filter(|&b| h[b] > h[(b + n - 1) % n] && h[b] >= h[(b + 1) % n])
        .collect();
    out.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    out
}

fn circular_bin_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Mean direction of the angles near `start`, re-centred a few times.
fn refine_angle(angles: &[f64], start: f64, half_window: f64) -> f64 {
    let mut phi = start;
    for _ in 0..5 {
        let (mut s, mut c) = (0.0, 0.0);
        for &a in angles {
            if wrap(a - phi).abs() <= half_window {
                s += a.sin();
                c += a.cos();
            }
        }
        if s == 0.0 && c == 0.0 {
            break;
        }
        phi = s.atan2(c);
    }
    phi
}

fn deproject(view: &PlaneView, phi: f64) -> DVector<f64> {
    let v = view.basis.column(0) * phi.cos() + view.basis.column(1) * phi.sin();
    let n = v.norm();
    v / n
}

fn bin_center(b: usize, cfg: &TracerConfig) -> f64 {
    cfg.bin_phase + (b as f64 + 0.5) * cfg.bin_width()
}

fn peaks(view: &PlaneView, cfg: &TracerConfig, want: usize) -> Result<Vec<DVector<f64>>> {
    let h = smoothed_histogram(&view.angles, cfg);
    let floor = cfg.min_prominence * h.iter().sum::<f64>() / h.len() as f64;
    let maxima: Vec<usize> = local_maxima(&h).into_iter().filter(|&b| h[b] >= floor).collect();
    let Some(&first) = maxima.first() else {
        return Err(Error::AmbiguousElbow("no prominent direction".into()));
    };
    let sep = (cfg.min_peak_separation / cfg.bin_width()).ceil() as usize;
    let mut chosen = vec![first];
    if want == 2 {
        let Some(&second) = maxima
            .iter()
            .find(|&&b| circular_bin_distance(b, first, cfg.bins) >= sep)
        else {
            return Err(Error::AmbiguousElbow(format!(
                "one prominent direction among {} maxima",
                maxima.len()
            )));
        };
        chosen.push(second);
    }
    let half = 1.5 * cfg.bin_width();
    Ok(chosen
        .into_iter()
        .map(|b| deproject(view, refine_angle(&view.angles, bin_center(b, cfg), half)))
        .collect())
}

/// The two outgoing unit directions at an elbow centred on `c1`.
pub fn resolve_elbow(local: &DMatrix<f64>, c1: &DVector<f64>, cfg: &TracerConfig) -> Result<(DVector<f64>, DVector<f64>)> {
    cfg.validate()?;
    let view = plane_view(local, c1, cfg)?;
    let mut p = peaks(&view, cfg, 2)?;
    let b = p.pop().expect("two peaks");
    let a = p.pop().expect("two peaks");
    Ok((a, b))
}

/// The single dominant direction out of an endpoint.
pub fn endpoint_direction(local: &DMatrix<f64>, c0: &DVector<f64>, cfg: &TracerConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let view = plane_view(local, c0, cfg)?;
    Ok(peaks(&view, cfg, 1)?.remove(0))
}

/// Vertices traced from `c0` until `m` segments are placed or a step fails.
pub fn trace_partial(points: &DMatrix<f64>, c0: &DVector<f64>, m: usize, cfg: &TracerConfig) -> (Vec<DVector<f64>>, Result<()>) {
    let mut verts = vec![c0.clone()];
    let step = |verts: &mut Vec<DVector<f64>>| -> Result<()> {
        cfg.validate()?;
        if m == 0 {
            return Err(Error::Config("need at least one segment".into()));
        }
        let l = cfg.segment_length;
        let local = local_cloud(points, c0, cfg.radius())?;
        let dir = endpoint_direction(&local, c0, cfg)?;
        verts.push(c0 + dir * l);
        while verts.len() < m + 1 {
            let k = verts.len();
            let (cur, prev) = (&verts[k - 1], &verts[k - 2]);
            let back = (prev - cur).normalize();
            let local = local_cloud(points, cur, cfg.radius())?;
            let (a, b) = resolve_elbow(&local, cur, cfg)?;
            // Keep the direction farther from the way we came in.
            let next = if a.dot(&back) >= b.dot(&back) { b } else { a };
            let v = cur + next * l;
            verts.push(v);
        }
        Ok(())
    };
    let res = step(&mut verts);
    (verts, res)
}

fn to_curve(verts: &[DVector<f64>]) -> Result<PwlCurve> {
    let d = verts[0].len();
    PwlCurve::new(DMatrix::from_fn(verts.len(), d, |i, j| verts[i][j]))
}

fn traced(points: &DMatrix<f64>, start: &DVector<f64>, m: usize, cfg: &TracerConfig, direction: &'static str) -> Result<PwlCurve> {
    let (verts, res) = trace_partial(points, start, m, cfg);
    res.map_err(|e| Error::Trace {
        direction,
        completed: verts.len(),
        source: Box::new(e),
    })?;
    to_curve(&verts)
}

/// Traces `m` segments starting at `c0`.
pub fn trace(points: &DMatrix<f64>, c0: &DVector<f64>, m: usize, cfg: &TracerConfig) -> Result<PwlCurve> {
    traced(points, c0, m, cfg, "forward")
}

/// Vertex-wise average of the trace from `c0` and the reversed trace from `c_m`.
pub fn trace_bidirectional(
    points: &DMatrix<f64>,
    c0: &DVector<f64>,
    cm: &DVector<f64>,
    m: usize,
    cfg: &TracerConfig,
) -> Result<PwlCurve> {
    let (fwd, bwd) = rayon::join(
        || traced(points, c0, m, cfg, "forward"),
        || traced(points, cm, m, cfg, "backward"),
    );
    let fwd = fwd?;
    let bwd = bwd?.reversed();
    PwlCurve::new((fwd.vertices() + bwd.vertices()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_segment(a: &[f64], b: &[f64], n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
            })
            .collect()
    }

    fn rows(v: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(v.len(), v[0].len(), |i, j| v[i][j])
    }

    fn angle_deg(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn local_cloud_bounds() {
        let pts = rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
        let c = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(local_cloud(&pts, &c, 1e300).unwrap().nrows(), 3);
        assert_eq!(local_cloud(&pts, &c, 1.0).unwrap().nrows(), 2);
        let far = DVector::from_vec(vec![100.0, 100.0]);
        assert!(matches!(local_cloud(&pts, &far, 0.1), Err(Error::EmptyLocalCloud { .. })));
        assert!(local_cloud(&pts, &c, 0.0).is_err());
    }

    #[test]
    fn right_angle_elbow() {
        let mut pts = dense_segment(&[1.0, 0.0], &[0.0, 0.0], 400);
        pts.extend(dense_segment(&[0.0, 0.0], &[0.0, 1.0], 400));
        let c1 = DVector::from_vec(vec![0.0, 0.0]);
        let (a, b) = resolve_elbow(&rows(&pts), &c1, &TracerConfig::default()).unwrap();
        let ex = DVector::from_vec(vec![1.0, 0.0]);
        let ey = DVector::from_vec(vec![0.0, 1.0]);
        let (ax, bx) = (angle_deg(&a, &ex), angle_deg(&b, &ex));
        let (x, y) = if ax < bx { (&a, &b) } else { (&b, &a) };
        assert!(angle_deg(x, &ex) < 2.0 && angle_deg(y, &ey) < 2.0);
    }

    #[test]
    fn straight_line_elbow() {
        let mut pts = dense_segment(&[-1.0, 0.0], &[0.0, 0.0], 400);
        pts.extend(dense_segment(&[0.0, 0.0], &[1.0, 0.0], 400));
        let (a, b) = resolve_elbow(&rows(&pts), &DVector::zeros(2), &TracerConfig::default()).unwrap();
        assert!(angle_deg(&a, &-&b) < 1e-6);
        assert!(a[1].abs() < 1e-9);
    }

    #[test]
    fn one_sided_is_ambiguous() {
        let pts = dense_segment(&[0.0, 0.0], &[1.0, 0.0], 400);
        let r = resolve_elbow(&rows(&pts), &DVector::zeros(2), &TracerConfig::default());
        assert!(matches!(r, Err(Error::AmbiguousElbow(_))));
    }

    #[test]
    fn single_segment_trace() {
        let pts = rows(&dense_segment(&[0.0, 0.0], &[0.6, 0.8], 200));
        let c = trace(&pts, &DVector::zeros(2), 1, &TracerConfig::default()).unwrap();
        assert_eq!(c.segments(), 1);
        assert!((c.vertex(1) - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-9);
    }

    #[test]
    fn failure_names_direction() {
        let pts = rows(&dense_segment(&[0.0, 0.0], &[1.0, 0.0], 200));
        let far = DVector::from_vec(vec![50.0, 50.0]);
        match trace_bidirectional(&pts, &DVector::zeros(2), &far, 1, &TracerConfig::default()) {
            Err(Error::Trace { direction, completed, .. }) => {
                assert_eq!(direction, "backward");
                assert_eq!(completed, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let cfg = TracerConfig {
            bins: 4,
            ..TracerConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TracerConfig::with_length(-1.0).validate().is_err());
        assert!(TracerConfig::default().validate().is_ok());
    }
}
