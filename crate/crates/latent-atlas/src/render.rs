//! Deterministic visual exports: P5 PGM rasters for 2-D grids and an SVG
//! scatter of the embedding with optional cluster outlines.

use std::collections::HashSet;

use crate::dls::{pixel_coords, DiscreteLatentSpace};
use crate::embedder::Embedding;
use crate::error::{Error, Result};
use crate::statmap::{Cluster, ClusterSet, CorrelationMap, Sign};

/// Categorical palette (matplotlib tab10), cycled when levels exceed it.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
/// Continuous ramp endpoints (low → high).
const RAMP_LO: (u8, u8, u8) = (44, 123, 182);
const RAMP_HI: (u8, u8, u8) = (215, 25, 28);

const SVG_SIZE: f64 = 640.0;
const SVG_MARGIN: f64 = 48.0;
const POINT_RADIUS: f64 = 3.0;

/// Binary P5 PGM: header plus one byte per pixel, row-major from the top.
pub fn pgm_p5(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != (width as usize) * (height as usize) {
        return Err(Error::Invalid(format!(
            "{} pixel bytes for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

fn require_2d(d: usize, what: &str) -> Result<()> {
    if d != 2 {
        return Err(Error::Invalid(format!(
            "{what} raster requires a 2-D grid, got {d} dimensions"
        )));
    }
    Ok(())
}

/// Occupancy raster: occupied cells white (255), empty black (0).
/// Pixel (x, y) = grid dims (0, 1); the image's top row is the highest y,
/// so the origin sits at the bottom-left as in a plot.
pub fn occupancy_pgm(dls: &DiscreteLatentSpace) -> Result<Vec<u8>> {
    require_2d(dls.d, "occupancy")?;
    let r = dls.r as usize;
    let mut pixels = vec![0u8; r * r];
    for &lin in &dls.occupied {
        let p = pixel_coords(lin, dls.r, 2);
        let (x, y) = (p[0] as usize, p[1] as usize);
        pixels[(r - 1 - y) * r + x] = 255;
    }
    pgm_p5(dls.r, dls.r, &pixels)
}

/// Correlation-map raster: r is mapped linearly from [-1, 1] to [0, 255];
/// undefined cells render as 0. Orientation matches [`occupancy_pgm`].
pub fn correlation_pgm(map: &CorrelationMap) -> Result<Vec<u8>> {
    require_2d(map.d, "correlation map")?;
    let r = map.r as usize;
    let mut pixels = vec![0u8; r * r];
    for lin in 0..(r * r) as u64 {
        let p = pixel_coords(lin, map.r, 2);
        let (x, y) = (p[0] as usize, p[1] as usize);
        let byte = match map.value(lin) {
            Some(v) => (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8,
            None => 0,
        };
        pixels[(r - 1 - y) * r + x] = byte;
    }
    pgm_p5(map.r, map.r, &pixels)
}

/// Signed per-feature effect map over a 2-D tensor shape, affinely mapped
/// from [-1, 1] to [0, 255] (values outside are clamped). Row-major:
/// `shape = [rows, cols]`, row 0 at the top.
pub fn signed_map_pgm(values: &[f64], shape: &[usize]) -> Result<Vec<u8>> {
    require_2d(shape.len(), "effect map")?;
    let (rows, cols) = (shape[0], shape[1]);
    if values.len() != rows * cols {
        return Err(Error::Invalid(format!(
            "{} values for a {rows}x{cols} tensor",
            values.len()
        )));
    }
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8)
        .collect();
    pgm_p5(cols as u32, rows as u32, &pixels)
}

/// How scatter points are colored.
pub enum PointColor<'a> {
    /// One label per observation; distinct labels get palette colors in
    /// sorted-label order and a legend entry each.
    Categorical(&'a [String]),
    /// One finite value per observation, mapped onto a two-color ramp.
    Continuous(&'a [f64]),
    /// Uniform gray.
    None,
}

fn lerp_channel(lo: u8, hi: u8, t: f64) -> u8 {
    (lo as f64 + (hi as f64 - lo as f64) * t).round() as u8
}

fn ramp_color(t: f64) -> String {
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp_channel(RAMP_LO.0, RAMP_HI.0, t),
        lerp_channel(RAMP_LO.1, RAMP_HI.1, t),
        lerp_channel(RAMP_LO.2, RAMP_HI.2, t)
    )
}

struct ScreenMap {
    min: [f64; 2],
    scale: [f64; 2],
}

impl ScreenMap {
    /// Linear map from data space onto the drawable area; y is flipped so
    /// larger values render higher. Aspect-preserving (shared scale).
    fn fit(lo: [f64; 2], hi: [f64; 2]) -> ScreenMap {
        let span = [(hi[0] - lo[0]).max(1e-9), (hi[1] - lo[1]).max(1e-9)];
        let s = (SVG_SIZE - 2.0 * SVG_MARGIN) / span[0].max(span[1]);
        ScreenMap { min: lo, scale: [s, s] }
    }

    fn x(&self, v: f64) -> f64 {
        SVG_MARGIN + (v - self.min[0]) * self.scale[0]
    }

    fn y(&self, v: f64) -> f64 {
        SVG_SIZE - SVG_MARGIN - (v - self.min[1]) * self.scale[1]
    }
}

/// SVG scatter of a 2-D embedding, colored by target, with optional
/// cluster outlines drawn over the discrete grid. Output bytes are a pure
/// function of the inputs.
pub fn embedding_svg(
    embedding: &Embedding,
    color: &PointColor,
    overlay: Option<(&DiscreteLatentSpace, &ClusterSet)>,
) -> Result<String> {
    if embedding.n_components != 2 {
        return Err(Error::Invalid(format!(
            "SVG scatter requires a 2-D embedding, got {} components",
            embedding.n_components
        )));
    }
    let n = embedding.n_obs();
    match color {
        PointColor::Categorical(labels) if labels.len() != n => {
            return Err(Error::Invalid(format!("{} labels for {n} points", labels.len())));
        }
        PointColor::Continuous(values) if values.len() != n => {
            return Err(Error::Invalid(format!("{} values for {n} points", values.len())));
        }
        _ => {}
    }

    // Data bounding box; the overlay's grid extent joins it so outlines
    // can never fall outside the viewport.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..n {
        for c in 0..2 {
            lo[c] = lo[c].min(embedding.row(i)[c]);
            hi[c] = hi[c].max(embedding.row(i)[c]);
        }
    }
    if let Some((dls, _)) = overlay {
        for c in 0..2 {
            lo[c] = lo[c].min(dls.norm.mins[c]);
            hi[c] = hi[c].max(dls.norm.maxs[c]);
        }
    }
    if n == 0 && overlay.is_none() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let map = ScreenMap::fit(lo, hi);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" \
         viewBox=\"0 0 {0} {0}\">\n<rect width=\"{0}\" height=\"{0}\" fill=\"#ffffff\"/>\n",
        SVG_SIZE
    );

    // Point colors + legend entries, resolved per color mode.
    let (fills, legend): (Vec<String>, Vec<(String, String)>) = match color {
        PointColor::Categorical(labels) => {
            let mut levels: Vec<&String> = {
                let set: HashSet<&String> = labels.iter().collect();
                let mut v: Vec<&String> = set.into_iter().collect();
                v.sort();
                v
            };
            if levels.is_empty() {
                levels = Vec::new();
            }
            let color_of = |label: &String| -> String {
                let idx = levels.binary_search(&label).expect("label in level set");
                PALETTE[idx % PALETTE.len()].to_owned()
            };
            (
                labels.iter().map(color_of).collect(),
                levels.iter().map(|l| ((*l).clone(), color_of(l))).collect(),
            )
        }
        PointColor::Continuous(values) => {
            let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
            let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let t_of = |v: f64| -> f64 {
                if vmax > vmin {
                    (v - vmin) / (vmax - vmin)
                } else {
                    0.5
                }
            };
            let legend = if values.is_empty() {
                Vec::new()
            } else {
                vec![
                    (format!("{vmin}"), ramp_color(t_of(vmin))),
                    (format!("{vmax}"), ramp_color(t_of(vmax))),
                ]
            };
            (values.iter().map(|&v| ramp_color(t_of(v))).collect(), legend)
        }
        PointColor::None => ((0..n).map(|_| "#7f7f7f".to_owned()).collect(), Vec::new()),
    };

    svg.push_str("<g stroke=\"none\">\n");
    for (i, fill) in fills.iter().enumerate() {
        let p = embedding.row(i);
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{POINT_RADIUS}\" fill=\"{fill}\" fill-opacity=\"0.8\"/>\n",
            map.x(p[0]),
            map.y(p[1]),
        ));
    }
    svg.push_str("</g>\n");

    if let Some((dls, clusters)) = overlay {
        require_2d(dls.d, "cluster overlay")?;
        svg.push_str("<g fill=\"none\" stroke-width=\"1.5\">\n");
        for cluster in &clusters.clusters {
            svg.push_str(&cluster_outline_path(cluster, dls, &map));
        }
        svg.push_str("</g>\n");
    }

    // Legend block in the top-right corner.
    if !legend.is_empty() {
        let lx = SVG_SIZE - SVG_MARGIN - 110.0;
        svg.push_str("<g font-family=\"sans-serif\" font-size=\"12\">\n");
        for (row, (label, fill)) in legend.iter().enumerate() {
            let ly = SVG_MARGIN + 16.0 * row as f64;
            svg.push_str(&format!(
                "<circle cx=\"{lx:.2}\" cy=\"{ly:.2}\" r=\"5\" fill=\"{fill}\"/>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
                lx + 10.0,
                ly + 4.0,
                xml_escape(label)
            ));
        }
        svg.push_str("</g>\n");
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Boundary of a cluster as axis-aligned segments: every cell edge whose
/// orthogonal neighbor lies outside the cluster, drawn in the original
/// coordinate space via the inverse normalization.
fn cluster_outline_path(cluster: &Cluster, dls: &DiscreteLatentSpace, map: &ScreenMap) -> String {
    let member: HashSet<u64> = cluster.pixels.iter().copied().collect();
    let r = dls.r;
    // Cell (x, y) spans [x/R, (x+1)/R) x [y/R, (y+1)/R) in normalized
    // space; invert the min-max normalization to place it.
    let denorm = |u: f64, c: usize| -> f64 {
        dls.norm.mins[c] + u * (dls.norm.maxs[c] - dls.norm.mins[c])
    };
    let mut d_attr = String::new();
    for &lin in &cluster.pixels {
        let p = pixel_coords(lin, r, 2);
        let (x, y) = (p[0], p[1]);
        let x0 = map.x(denorm(x as f64 / r as f64, 0));
        let x1 = map.x(denorm((x + 1) as f64 / r as f64, 0));
        let y0 = map.y(denorm(y as f64 / r as f64, 1));
        let y1 = map.y(denorm((y + 1) as f64 / r as f64, 1));
        let mut edge = |missing: bool, sx: f64, sy: f64, ex: f64, ey: f64| {
            if missing {
                d_attr.push_str(&format!("M{sx:.2} {sy:.2}L{ex:.2} {ey:.2}"));
            }
        };
        edge(x == 0 || !member.contains(&(lin - 1)), x0, y0, x0, y1);
        edge(x + 1 == r || !member.contains(&(lin + 1)), x1, y0, x1, y1);
        edge(y == 0 || !member.contains(&(lin - r as u64)), x0, y0, x1, y0);
        edge(y + 1 == r || !member.contains(&(lin + r as u64)), x0, y1, x1, y1);
    }
    let stroke = match cluster.sign {
        Sign::Positive => "#d62728",
        Sign::Negative => "#1f77b4",
    };
    format!("<path d=\"{d_attr}\" stroke=\"{stroke}\"/>\n")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
