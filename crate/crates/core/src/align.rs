//! Affine keypoint alignment, `q = A p + b`, fitted by least squares.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::format_real;

/// Relative determinant threshold below which a point cloud counts as
/// collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-12;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// Row-major linear part.
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl AffineMap {
    pub const IDENTITY: Self = Self {
        a: [[1.0, 0.0], [0.0, 1.0]],
        b: [0.0, 0.0],
    };

    pub fn apply(&self, p: Point) -> Point {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.b[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.b[1],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// `self` after `first`: p -> self(first(p)).
    pub fn compose(&self, first: &AffineMap) -> AffineMap {
        let (m, n) = (&self.a, &first.a);
        let a = [
            [
                m[0][0] * n[0][0] + m[0][1] * n[1][0],
                m[0][0] * n[0][1] + m[0][1] * n[1][1],
            ],
            [
                m[1][0] * n[0][0] + m[1][1] * n[1][0],
                m[1][0] * n[0][1] + m[1][1] * n[1][1],
            ],
        ];
        let shifted = self.apply(first.b);
        AffineMap { a, b: shifted }
    }

    pub fn invert(&self) -> Result<AffineMap> {
        let det = self.determinant();
        let scale = self.a.iter().flatten().map(|x| x * x).sum::<f64>();
        if det.abs() <= COLLINEAR_TOLERANCE * scale || !det.is_finite() {
            return Err(Error::DegenerateGeometry);
        }
        let a = [
            [self.a[1][1] / det, -self.a[0][1] / det],
            [-self.a[1][0] / det, self.a[0][0] / det],
        ];
        let b = [
            -(a[0][0] * self.b[0] + a[0][1] * self.b[1]),
            -(a[1][0] * self.b[0] + a[1][1] * self.b[1]),
        ];
        Ok(AffineMap { a, b })
    }
}

pub fn apply_affine(map: &AffineMap, points: &[Point]) -> Vec<Point> {
    points.iter().map(|&p| map.apply(p)).collect()
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Least-squares affine map taking each `p[k]` to `q[k]`.
///
/// Solved on centered coordinates: `A = C P^-1` with `P` the scatter of `p`
/// and `C` the cross-scatter of `q` against `p`, then `b = mean(q) - A mean(p)`.
pub fn fit_affine(p: &[Point], q: &[Point]) -> Result<AffineMap> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if p.iter().chain(q).flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "keypoint coordinates".into(),
        });
    }
    if p.len() < 3 {
        return Err(Error::DegenerateGeometry);
    }
    let (pc, qc) = (centroid(p), centroid(q));
    let mut s = [[0.0; 2]; 2];
    let mut c = [[0.0; 2]; 2];
    for (pk, qk) in p.iter().zip(q) {
        let dp = [pk[0] - pc[0], pk[1] - pc[1]];
        let dq = [qk[0] - qc[0], qk[1] - qc[1]];
        for r in 0..2 {
            for k in 0..2 {
                s[r][k] += dp[r] * dp[k];
                c[r][k] += dq[r] * dp[k];
            }
        }
    }
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let trace = s[0][0] + s[1][1];
    if !(det > COLLINEAR_TOLERANCE * trace * trace) {
        return Err(Error::DegenerateGeometry);
    }
    let inv = [
        [s[1][1] / det, -s[0][1] / det],
        [-s[1][0] / det, s[0][0] / det],
    ];
    let mut a = [[0.0; 2]; 2];
    for r in 0..2 {
        for k in 0..2 {
            a[r][k] = c[r][0] * inv[0][k] + c[r][1] * inv[1][k];
        }
    }
    let b = [
        qc[0] - (a[0][0] * pc[0] + a[0][1] * pc[1]),
        qc[1] - (a[1][0] * pc[0] + a[1][1] * pc[1]),
    ];
    Ok(AffineMap { a, b })
}

/// Largest Euclidean distance between `map(p[k])` and `q[k]`.
pub fn max_residual(map: &AffineMap, p: &[Point], q: &[Point]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pk, qk)| {
            let m = map.apply(pk);
            (m[0] - qk[0]).hypot(m[1] - qk[1])
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub id: String,
    pub point: Point,
}

/// Reads a `point_id,x,y` file. Lines starting with `#` are skipped.
pub fn read_keypoints<R: Read>(r: R) -> Result<Vec<Keypoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let header = reader
        .headers()
        .map_err(|e| Error::format("keypoint csv", e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["point_id", "x", "y"] {
        return Err(Error::format(
            "keypoint csv",
            "header must be `point_id,x,y`",
        ));
    }
    let mut out: Vec<Keypoint> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("keypoint csv", e.to_string()))?;
        let coord = |k: usize| {
            rec[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::format(
                        "keypoint csv",
                        format!("row {line}: bad coordinate `{}`", &rec[k]),
                    )
                })
        };
        let id = rec[0].to_string();
        if out.iter().any(|k| k.id == id) {
            return Err(Error::format(
                "keypoint csv",
                format!("duplicate point id `{id}`"),
            ));
        }
        out.push(Keypoint {
            id,
            point: [coord(1)?, coord(2)?],
        });
    }
    Ok(out)
}

/// Writes `comments` as `# ` lines, then the header and points.
pub fn write_keypoints<W: Write>(mut w: W, points: &[Keypoint], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::format("keypoint csv", e.to_string());
    out.write_record(["point_id", "x", "y"]).map_err(io)?;
    for k in points {
        out.write_record([
            k.id.clone(),
            format_real(k.point[0]),
            format_real(k.point[1]),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Pairs source and target keypoints by id, in source order. Ids present in
/// only one file are ignored.
pub fn match_keypoints(source: &[Keypoint], target: &[Keypoint]) -> (Vec<Point>, Vec<Point>) {
    source
        .iter()
        .filter_map(|s| {
            target
                .iter()
                .find(|t| t.id == s.id)
                .map(|t| (s.point, t.point))
        })
        .unzip()
}
