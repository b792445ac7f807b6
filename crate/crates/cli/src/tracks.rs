//! Centroid tracks of bright regions across rollout frames.

use eqflow::systems::alife::region_centroids;
use ndarray::Array2;

/// A pixel counts as occupied when its brightest channel exceeds this.
pub const INTENSITY_THRESHOLD: f64 = 0.25;
/// Smaller regions are treated as noise.
pub const MIN_CELLS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackPoint {
    pub frame: usize,
    pub track: usize,
    pub y: f64,
    pub x: f64,
    pub cells: usize,
}

fn wrap(d: f64, len: f64) -> f64 {
    let d = d.rem_euclid(len);
    d.min(len - d)
}

/// Links region centroids frame to frame by greedy nearest match on the torus.
/// Regions with no track within `max_jump` start a new one.
pub fn track_regions(frames: &Array2<f64>, h: usize, w: usize, max_jump: f64) -> Vec<TrackPoint> {
    let hw = h * w;
    let c = frames.ncols() / hw;
    let mut out = Vec::new();
    // (track id, y, x) of the last frame
    let mut live: Vec<(usize, f64, f64)> = Vec::new();
    let mut next_id = 0;
    for (f, row) in frames.outer_iter().enumerate() {
        let intensity: Vec<f64> =
            (0..hw).map(|i| (0..c).map(|k| row[k * hw + i]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let regions: Vec<_> =
            region_centroids(&intensity, h, w, INTENSITY_THRESHOLD).into_iter().filter(|r| r.2 >= MIN_CELLS).collect();
        let mut pairs = Vec::new();
        for (ri, r) in regions.iter().enumerate() {
            for (ti, t) in live.iter().enumerate() {
                let d = wrap(r.0 - t.1, h as f64).hypot(wrap(r.1 - t.2, w as f64));
                if d <= max_jump {
                    pairs.push((d, ri, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut region_track = vec![None; regions.len()];
        let mut taken = vec![false; live.len()];
        for (_, ri, ti) in pairs {
            if region_track[ri].is_none() && !taken[ti] {
                region_track[ri] = Some(live[ti].0);
                taken[ti] = true;
            }
        }
        live.clear();
        for (r, t) in regions.iter().zip(region_track) {
            let id = t.unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            });
            live.push((id, r.0, r.1));
            out.push(TrackPoint { frame: f, track: id, y: r.0, x: r.1, cells: r.2 });
        }
    }
    out
}
