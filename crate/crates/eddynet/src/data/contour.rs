//! Eddy contour annotations and their rasterization onto the grid lattice.
//!
//! Contour files are UTF-8 text, one polygon per line:
//!
//! ```text
//! class_id;lon1,lat1;lon2,lat2;lon3,lat3;...
//! ```
//!
//! Rasterization maps each vertex to its nearest lattice index
//! (`round((coord - origin) / resolution)`), then labels every pixel whose
//! center falls strictly inside the polygon under the even-odd rule, plus
//! every pixel whose center lies exactly on an edge. All in-fill decisions
//! use exact integer arithmetic, so they are reproducible and independently
//! checkable against a per-pixel ray caster.

use std::path::Path;

use super::{SegmentationMask, SshGrid};
use crate::error::{Error, Result};

/// One annotated eddy: its rotation class and speed-contour polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct EddyContour {
    /// 1 = anticyclonic, 2 = cyclonic.
    pub class: u8,
    /// `(lon, lat)` vertices in degrees, at least three.
    pub polygon: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EddyContourSet {
    pub contours: Vec<EddyContour>,
}

/// The lattice a contour set is rasterized onto.
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub lat0: f64,
    pub lon0: f64,
    pub resolution: f64,
}

impl From<&SshGrid> for GridGeometry {
    fn from(grid: &SshGrid) -> Self {
        GridGeometry {
            rows: grid.rows,
            cols: grid.cols,
            lat0: grid.lat0,
            lon0: grid.lon0,
            resolution: grid.resolution,
        }
    }
}

/// Rasterization diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterWarning {
    /// Polygon index whose footprint extends beyond the grid (clipped).
    Clipped { contour: usize },
    /// Polygon index that overwrote pixels of an earlier polygon.
    Overlap { contour: usize },
}

pub fn parse_contours(text: &str) -> Result<EddyContourSet> {
    let mut contours = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.split(';');
        let class: u8 = parts
            .next()
            .expect("split yields at least one part")
            .trim()
            .parse()
            .map_err(|_| Error::Parse {
                line: lineno,
                message: "class id is not an integer".into(),
            })?;
        if class != 1 && class != 2 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("class {class} outside {{1, 2}}"),
            });
        }
        let mut polygon = Vec::new();
        for pair in parts {
            let mut nums = pair.split(',');
            let lon: f64 = nums
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("bad vertex {pair:?}"),
                })?;
            let lat: f64 = nums
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("bad vertex {pair:?}"),
                })?;
            if nums.next().is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("vertex {pair:?} has more than two coordinates"),
                });
            }
            polygon.push((lon, lat));
        }
        if polygon.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("polygon has {} vertices, need at least 3", polygon.len()),
            });
        }
        contours.push(EddyContour { class, polygon });
    }
    Ok(EddyContourSet { contours })
}

pub fn format_contours(set: &EddyContourSet) -> String {
    let mut out = String::new();
    for contour in &set.contours {
        out.push_str(&contour.class.to_string());
        for (lon, lat) in &contour.polygon {
            out.push_str(&format!(";{lon},{lat}"));
        }
        out.push('\n');
    }
    out
}

pub fn load_contours(path: &Path) -> Result<EddyContourSet> {
    parse_contours(&std::fs::read_to_string(path)?)
}

pub fn save_contours(set: &EddyContourSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_contours(set))?;
    Ok(())
}

/// Integer polygon in lattice coordinates: `(col, row)` per vertex.
fn to_lattice(polygon: &[(f64, f64)], geometry: &GridGeometry) -> Vec<(i64, i64)> {
    polygon
        .iter()
        .map(|&(lon, lat)| {
            let col = ((lon - geometry.lon0) / geometry.resolution).round() as i64;
            let row = ((lat - geometry.lat0) / geometry.resolution).round() as i64;
            (col, row)
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Paint one integer polygon: scanline even-odd interior plus exact edge
/// pixels. Returns (any pixel clipped, any differently-labeled pixel
/// overwritten).
fn paint_polygon(
    vertices: &[(i64, i64)],
    class: u8,
    mask: &mut SegmentationMask,
    geometry: &GridGeometry,
) -> (bool, bool) {
    let rows = geometry.rows as i64;
    let cols = geometry.cols as i64;
    let mut clipped = false;
    let mut overlapped = false;

    let mut paint = |row: i64, col: i64, clipped: &mut bool, overlapped: &mut bool| {
        if row < 0 || row >= rows || col < 0 || col >= cols {
            *clipped = true;
            return;
        }
        let prev = mask.get(row as usize, col as usize);
        if prev != 0 && prev != class {
            *overlapped = true;
        }
        mask.set(row as usize, col as usize, class);
    };

    // edge pass: integer lattice points on each segment
    let n = vertices.len();
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        let (dx, dy) = (x2 - x1, y2 - y1);
        if dx == 0 && dy == 0 {
            paint(y1, x1, &mut clipped, &mut overlapped);
            continue;
        }
        let g = gcd(dx, dy);
        let (sx, sy) = (dx / g, dy / g);
        for t in 0..=g {
            paint(y1 + sy * t, x1 + sx * t, &mut clipped, &mut overlapped);
        }
    }

    // interior pass: per-row even-odd crossings, exact rational positions
    let min_y = vertices.iter().map(|v| v.1).min().expect("non-empty polygon");
    let max_y = vertices.iter().map(|v| v.1).max().expect("non-empty polygon");
    if min_y < 0 || max_y >= rows {
        clipped = true;
    }
    let mut crossings: Vec<(i64, i64)> = Vec::new(); // (numerator, denominator), den > 0
    for y in min_y.max(0)..=max_y.min(rows - 1) {
        crossings.clear();
        for i in 0..n {
            let (x1, y1) = vertices[i];
            let (x2, y2) = vertices[(i + 1) % n];
            if y1 == y2 {
                continue;
            }
            // half-open span [min(y), max(y)) counts each vertex crossing once
            let (xlo, ylo, xhi, yhi) = if y1 < y2 { (x1, y1, x2, y2) } else { (x2, y2, x1, y1) };
            if ylo <= y && y < yhi {
                let den = yhi - ylo;
                let num = xlo * den + (y - ylo) * (xhi - xlo);
                crossings.push((num, den));
            }
        }
        crossings.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)));
        for pair in crossings.chunks_exact(2) {
            let (lo_num, lo_den) = pair[0];
            let (hi_num, hi_den) = pair[1];
            // strictly inside: floor(lo)+1 ..= ceil(hi)-1
            let start = lo_num.div_euclid(lo_den) + 1;
            let end = -((-hi_num).div_euclid(hi_den)) - 1;
            for x in start.max(0)..=end.min(cols - 1) {
                paint(y, x, &mut clipped, &mut overlapped);
            }
            if start < 0 || end >= cols {
                clipped = true;
            }
        }
    }

    (clipped, overlapped)
}

/// Rasterize every contour onto the lattice. Later polygons overwrite
/// earlier ones (a warning records each such overlap), and polygons
/// reaching outside the grid are clipped with a warning.
pub fn rasterize_contours(
    set: &EddyContourSet,
    geometry: &GridGeometry,
) -> Result<(SegmentationMask, Vec<RasterWarning>)> {
    let mut mask = SegmentationMask::zeros(geometry.rows, geometry.cols);
    let mut warnings = Vec::new();
    for (idx, contour) in set.contours.iter().enumerate() {
        if contour.polygon.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "contour {idx} has {} vertices, need at least 3",
                contour.polygon.len()
            )));
        }
        if contour.class != 1 && contour.class != 2 {
            return Err(Error::InvalidConfig(format!(
                "contour {idx} class {} outside {{1, 2}}",
                contour.class
            )));
        }
        let vertices = to_lattice(&contour.polygon, geometry);
        let (clipped, overlapped) = paint_polygon(&vertices, contour.class, &mut mask, geometry);
        if clipped {
            warnings.push(RasterWarning::Clipped { contour: idx });
        }
        if overlapped {
            warnings.push(RasterWarning::Overlap { contour: idx });
        }
    }
    Ok((mask, warnings))
}

/// Brute-force per-pixel oracle: exact on-segment test plus an even-odd ray
/// cast in integer arithmetic. Used by the verification suites; kept separate
/// from the scanline implementation on purpose.
pub fn rasterize_reference(set: &EddyContourSet, geometry: &GridGeometry) -> SegmentationMask {
    let mut mask = SegmentationMask::zeros(geometry.rows, geometry.cols);
    for contour in &set.contours {
        let vertices = to_lattice(&contour.polygon, geometry);
        let n = vertices.len();
        for row in 0..geometry.rows as i64 {
            for col in 0..geometry.cols as i64 {
                let (px, py) = (col, row);
                let mut on_edge = false;
                let mut parity = false;
                for i in 0..n {
                    let (x1, y1) = vertices[i];
                    let (x2, y2) = vertices[(i + 1) % n];
                    // on-segment: zero cross product and inside the bounding box
                    let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
                    if cross == 0
                        && px >= x1.min(x2)
                        && px <= x1.max(x2)
                        && py >= y1.min(y2)
                        && py <= y1.max(y2)
                    {
                        on_edge = true;
                        break;
                    }
                    if y1 == y2 {
                        continue;
                    }
                    let (xlo, ylo, xhi, yhi) = if y1 < y2 { (x1, y1, x2, y2) } else { (x2, y2, x1, y1) };
                    if ylo <= py && py < yhi {
                        // ray to +x crosses if px < x-at-py (exact rational compare)
                        let den = yhi - ylo;
                        let num = xlo * den + (py - ylo) * (xhi - xlo);
                        if px * den < num {
                            parity = !parity;
                        }
                    }
                }
                if on_edge || parity {
                    mask.set(row as usize, col as usize, contour.class);
                }
            }
        }
    }
    mask
}
