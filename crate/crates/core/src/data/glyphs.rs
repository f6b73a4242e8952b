//! Signed-distance glyph templates and stroke/fill styles.
//!
//! Distances are in pixels at scale 1, negative inside. Coordinates follow
//! image convention (y grows downward).

pub const N_SHAPES: usize = 16;
pub const N_STYLES: usize = 8;
/// Radius of the disc template in pixels at scale 1.
pub const BASE_RADIUS: f64 = 10.0;

type P = (f64, f64);

fn len(p: P) -> f64 {
    (p.0 * p.0 + p.1 * p.1).sqrt()
}

fn sd_disc(p: P, c: P, r: f64) -> f64 {
    len((p.0 - c.0, p.1 - c.1)) - r
}

fn sd_box(p: P, c: P, half: P) -> f64 {
    let dx = (p.0 - c.0).abs() - half.0;
    let dy = (p.1 - c.1).abs() - half.1;
    len((dx.max(0.0), dy.max(0.0))) + dx.max(dy).min(0.0)
}

fn sd_polygon(p: P, v: &[P]) -> f64 {
    let dot = |a: P, b: P| a.0 * b.0 + a.1 * b.1;
    let sub = |a: P, b: P| (a.0 - b.0, a.1 - b.1);
    let n = v.len();
    let mut d = dot(sub(p, v[0]), sub(p, v[0]));
    let mut s = 1.0;
    let mut j = n - 1;
    for i in 0..n {
        let e = sub(v[j], v[i]);
        let w = sub(p, v[i]);
        let t = (dot(w, e) / dot(e, e)).clamp(0.0, 1.0);
        let b = (w.0 - e.0 * t, w.1 - e.1 * t);
        d = d.min(dot(b, b));
        let c1 = p.1 >= v[i].1;
        let c2 = p.1 < v[j].1;
        let c3 = e.0 * w.1 > e.1 * w.0;
        if (c1 && c2 && c3) || (!c1 && !c2 && !c3) {
            s = -s;
        }
        j = i;
    }
    s * d.sqrt()
}

fn star(points: usize, outer: f64, inner: f64) -> Vec<P> {
    let phase = -std::f64::consts::FRAC_PI_2;
    (0..2 * points)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = phase + std::f64::consts::PI * k as f64 / points as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Glyph names, indexed by shape id. Ids below 8 form the positive class.
pub const SHAPE_NAMES: [&str; N_SHAPES] = [
    "disc", "square", "triangle", "plus", "trapezoid", "aitch", "bar", "star",
    "ellipse", "ell", "tee", "equals", "crescent", "arrow", "hourglass", "half-disc",
];

/// Style names, indexed by style id. Ids below 4 are plain, the rest patterned.
pub const STYLE_NAMES: [&str; N_STYLES] = [
    "solid", "bold", "outline", "thick-outline", "hstripes", "vstripes", "chevron", "dots",
];

/// Signed distance from `p` (glyph frame, pixels) to the template `shape`.
pub fn glyph_sdf(shape: usize, p: P) -> f64 {
    let o = (0.0, 0.0);
    match shape {
        0 => sd_disc(p, o, BASE_RADIUS),
        1 => sd_box(p, o, (8.0, 8.0)),
        2 => sd_polygon(p, &[(0.0, -10.0), (9.0, 6.0), (-9.0, 6.0)]),
        3 => sd_box(p, o, (10.0, 3.5)).min(sd_box(p, o, (3.5, 10.0))),
        4 => sd_polygon(p, &[(-5.0, -7.0), (5.0, -7.0), (10.5, 7.0), (-10.5, 7.0)]),
        5 => sd_box(p, (-6.5, 0.0), (2.5, 10.0))
            .min(sd_box(p, (6.5, 0.0), (2.5, 10.0)))
            .min(sd_box(p, o, (6.0, 2.0))),
        6 => sd_box(p, o, (10.0, 4.0)),
        7 => sd_polygon(p, &star(5, 11.0, 4.5)),
        8 => {
            // ellipse with semi-axes 10 x 6 (distance approximated by scaling)
            let q = (p.0 / 10.0, p.1 / 6.0);
            (len(q) - 1.0) * 6.0
        }
        9 => sd_box(p, (-5.0, 0.0), (3.0, 10.0)).min(sd_box(p, (0.0, 7.0), (8.0, 3.0))),
        10 => sd_box(p, (0.0, -7.0), (10.0, 3.0)).min(sd_box(p, (0.0, 1.0), (3.0, 9.0))),
        11 => sd_box(p, (0.0, -5.5), (10.0, 2.5)).min(sd_box(p, (0.0, 5.5), (10.0, 2.5))),
        12 => sd_disc(p, o, BASE_RADIUS).max(-sd_disc(p, (5.0, 0.0), 8.0)),
        13 => sd_polygon(
            p,
            &[
                (-10.0, -3.0),
                (1.0, -3.0),
                (1.0, -9.0),
                (10.5, 0.0),
                (1.0, 9.0),
                (1.0, 3.0),
                (-10.0, 3.0),
            ],
        ),
        14 => sd_polygon(
            p,
            &[(-9.0, -10.0), (9.0, -10.0), (2.5, 0.0), (9.0, 10.0), (-9.0, 10.0), (-2.5, 0.0)],
        ),
        15 => sd_disc(p, (0.0, 4.0), 11.0).max(p.1 - 4.0),
        _ => f64::INFINITY,
    }
}

/// Largest amount any style grows a glyph beyond its template boundary.
pub const MAX_STYLE_DILATION: f64 = 1.0;

/// Whether a point with pixel-space signed distance `d` and glyph-frame
/// position `q` is inked under `style`.
pub fn style_covers(style: usize, d: f64, q: P) -> bool {
    let inside = d < 0.0;
    // patterns are mirror symmetric in x
    let ax = q.0.abs();
    match style {
        0 => inside,
        1 => d < MAX_STYLE_DILATION,
        2 => inside && d > -1.6,
        3 => inside && d > -3.2,
        4 => inside && (q.1 + 1.0).rem_euclid(4.0) < 2.0,
        5 => inside && (ax + 1.0).rem_euclid(4.0) < 2.0,
        6 => inside && (ax + q.1).rem_euclid(5.0) < 2.5,
        7 => inside && ((ax + 0.75).rem_euclid(3.0) < 1.5) == ((q.1 + 0.75).rem_euclid(3.0) < 1.5),
        _ => false,
    }
}

/// Plain styles form group A, patterned styles group B.
pub fn style_group(style: usize) -> usize {
    usize::from(style >= N_STYLES / 2)
}
