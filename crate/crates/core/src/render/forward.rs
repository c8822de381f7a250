//! Forward pass: projection, tile binning, front-to-back α-blending.


use super::{Contribution, RenderContext, RenderOutput, RenderSettings, ALPHA_CLAMP, ALPHA_SKIP};
use crate::geometry::{Intrinsics, Pose};
use crate::img::{ImageRgb, Map2d};
use crate::scene::{project_gaussian, GaussianSet, Projected2D};

/// Slack on the per-splat log-opacity threshold used to skip the `exp` for
/// clearly sub-threshold samples; borderline samples still take the exact
/// `α′ < 1/255` test so results are independent of this shortcut.
const POWER_PRECHECK_SLACK: f64 = 0.01;

struct TileSplat {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    alpha: f64,
    power_thr: f64,
    color: [f64; 3],
    depth: f64,
    slot: u32,
}

pub(super) fn forward(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
    record: bool,
) -> (RenderOutput, Option<RenderContext>) {
    let (w, h) = (k.width, k.height);
    let tile = settings.tile_size.max(1);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);

    // project and cull
    let mut splats: Vec<Projected2D> = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        if let Some(p) = project_gaussian(
            &g.positions[i],
            &g.rotations[i],
            &g.log_scales[i],
            g.opacity_logits[i],
            i,
            pose,
            k,
            settings.dilation,
        ) {
            splats.push(p);
        }
    }

    // bin into tiles by contribution disc
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, s) in splats.iter().enumerate() {
        let t = tile as f64;
        let x0 = (((s.mean2d.x - s.radius) / t).floor() as isize).clamp(0, tiles_x as isize - 1);
        let x1 = (((s.mean2d.x + s.radius) / t).floor() as isize).clamp(0, tiles_x as isize - 1);
        let y0 = (((s.mean2d.y - s.radius) / t).floor() as isize).clamp(0, tiles_y as isize - 1);
        let y1 = (((s.mean2d.y + s.radius) / t).floor() as isize).clamp(0, tiles_y as isize - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_lists[ty as usize * tiles_x + tx as usize].push(slot as u32);
            }
        }
    }
    // front-to-back order, ties broken by index for determinism
    for list in &mut tile_lists {
        list.sort_unstable_by(|&a, &b| {
            splats[a as usize]
                .depth
                .partial_cmp(&splats[b as usize].depth)
                .unwrap()
                .then(a.cmp(&b))
        });
    }

    let mut color = ImageRgb::new(w, h);
    let mut depth = Map2d::new(w, h);
    let mut alpha = Map2d::new(w, h);
    let mut counts = vec![0u32; g.len()];
    let mut final_t = vec![1.0f64; w * h];
    let mut contribs: Vec<Contribution> = Vec::new();
    let mut pixel_ranges = vec![(0u32, 0u32); if record { w * h } else { 0 }];

    let stop = settings.transmittance_stop;
    let cutoff = settings.contrib_cutoff;
    let bg = settings.background;

    let mut local: Vec<TileSplat> = Vec::new();
    for ty in 0..tiles_y {
        let y_end = ((ty + 1) * tile).min(h);
        for tx in 0..tiles_x {
            let list = &tile_lists[ty * tiles_x + tx];
            if list.is_empty() {
                continue;
            }
            local.clear();
            local.extend(list.iter().map(|&slot| {
                let s = &splats[slot as usize];
                TileSplat {
                    mx: s.mean2d.x,
                    my: s.mean2d.y,
                    ca: s.conic[0],
                    cb: s.conic[1],
                    cc: s.conic[2],
                    alpha: s.alpha,
                    // α e^power < 1/255 ⟺ power < −ln(255 α); subtract slack so
                    // the shortcut can never disagree with the exact test
                    power_thr: -(255.0 * s.alpha).ln() - POWER_PRECHECK_SLACK,
                    color: [
                        g.colors[s.gaussian_index].x,
                        g.colors[s.gaussian_index].y,
                        g.colors[s.gaussian_index].z,
                    ],
                    depth: s.depth,
                    slot,
                }
            }));

            let x_end = ((tx + 1) * tile).min(w);
            for py in ty * tile..y_end {
                let cy = py as f64 + 0.5;
                for px in tx * tile..x_end {
                    let cx = px as f64 + 0.5;
                    let pix = py * w + px;
                    let mut t_cur = 1.0f64;
                    let mut acc = [0.0f64; 3];
                    let mut acc_d = 0.0f64;
                    let mut acc_a = 0.0f64;
                    let start = contribs.len();
                    for ts in &local {
                        let dx = cx - ts.mx;
                        let dy = cy - ts.my;
                        let power =
                            -0.5 * (ts.ca * dx * dx + ts.cc * dy * dy) - ts.cb * dx * dy;
                        if power < ts.power_thr {
                            continue;
                        }
                        let a_prime = (ts.alpha * power.exp()).min(ALPHA_CLAMP);
                        if a_prime < ALPHA_SKIP {
                            continue;
                        }
                        let t_next = t_cur * (1.0 - a_prime);
                        if t_next < stop {
                            break;
                        }
                        let wgt = a_prime * t_cur;
                        acc[0] += wgt * ts.color[0];
                        acc[1] += wgt * ts.color[1];
                        acc[2] += wgt * ts.color[2];
                        acc_d += wgt * ts.depth;
                        acc_a += wgt;
                        if wgt > cutoff {
                            counts[splats[ts.slot as usize].gaussian_index] += 1;
                        }
                        if record {
                            contribs.push(Contribution { splat: ts.slot, alpha_prime: a_prime });
                        }
                        t_cur = t_next;
                    }
                    let base = pix * 3;
                    color.data[base] = acc[0] + t_cur * bg[0];
                    color.data[base + 1] = acc[1] + t_cur * bg[1];
                    color.data[base + 2] = acc[2] + t_cur * bg[2];
                    depth.data[pix] = acc_d;
                    alpha.data[pix] = acc_a;
                    final_t[pix] = t_cur;
                    if record {
                        pixel_ranges[pix] = (start as u32, (contribs.len() - start) as u32);
                    }
                }
            }
        }
    }

    // pixels in splat-free tiles still get the background
    if bg != [0.0; 3] {
        for (pix, t) in final_t.iter().enumerate() {
            if *t == 1.0 {
                let base = pix * 3;
                if color.data[base] == 0.0 && color.data[base + 1] == 0.0 && color.data[base + 2] == 0.0 {
                    color.data[base] = bg[0];
                    color.data[base + 1] = bg[1];
                    color.data[base + 2] = bg[2];
                }
            }
        }
    }

    let out = RenderOutput { color, depth, alpha, contributing_counts: counts };
    let ctx = record.then(|| RenderContext {
        splats,
        contribs,
        pixel_ranges,
        final_t,
        n_gaussians: g.len(),
        pose: pose.clone(),
        intrinsics: k.clone(),
        settings: settings.clone(),
    });
    (out, ctx)
}
