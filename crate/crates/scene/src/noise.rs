use prior3d_geometry::{Box2D, ObjectClass};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::{PriorNoiseConfig, Range};
use crate::render::{LabeledBox, RenderedView, SEMANTIC_CHANNELS};
use crate::scene::stream_rng;
use crate::SceneError;

fn sample_range(r: &Range, rng: &mut ChaCha8Rng) -> f64 {
    if r.max > r.min {
        rng.gen_range(r.min..=r.max)
    } else {
        r.min
    }
}

fn gaussian(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Separable box blur of an interleaved H×W×C map with clamped borders.
fn box_blur(map: &mut [f32], w: usize, h: usize, c: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f32;
    let mut tmp = vec![0f32; map.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    acc += map[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc * norm;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    acc += tmp[(yy * w + x) * c + ch];
                }
                map[(y * w + x) * c + ch] = acc * norm;
            }
        }
    }
}

fn perturb(map: &mut [f32], amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude <= 0.0 {
        return;
    }
    for x in map.iter_mut() {
        *x = (*x as f64 + rng.gen_range(-amplitude..=amplitude)).clamp(0.0, 1.0) as f32;
    }
}

fn jitter_box(b: &Box2D, noise: &PriorNoiseConfig, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Option<Box2D> {
    if noise.center_sigma_px == 0.0 && noise.size_sigma_rel == 0.0 {
        return b.with_score(sample_range(&noise.true_score, rng)).ok();
    }
    let [u, v] = b.center();
    let (u, v) = (u + gaussian(noise.center_sigma_px, rng), v + gaussian(noise.center_sigma_px, rng));
    let sw = (1.0 + gaussian(noise.size_sigma_rel, rng)).max(0.1);
    let sh = (1.0 + gaussian(noise.size_sigma_rel, rng)).max(0.1);
    let (bw, bh) = (b.width() * sw, b.height() * sh);
    let x0 = (u - 0.5 * bw).clamp(0.0, w);
    let x1 = (u + 0.5 * bw).clamp(0.0, w);
    let y0 = (v - 0.5 * bh).clamp(0.0, h);
    let y1 = (v + 0.5 * bh).clamp(0.0, h);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return None;
    }
    let score = sample_range(&noise.true_score, rng);
    Box2D::from_corners(x0, y0, x1, y1, b.class(), score).ok()
}

fn false_positive(noise: &PriorNoiseConfig, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Option<Box2D> {
    let bw = rng.gen_range(4.0..=(w / 4.0).max(4.0)).min(w);
    let bh = rng.gen_range(6.0..=(h / 3.0).max(6.0)).min(h);
    let x0 = rng.gen_range(0.0..=(w - bw));
    let y0 = rng.gen_range(0.0..=(h - bh));
    let class = ObjectClass::ALL[rng.gen_range(0..ObjectClass::ALL.len())];
    let score = sample_range(&noise.false_positive_score, rng);
    Box2D::from_corners(x0, y0, x0 + bw, y0 + bh, class, score).ok()
}

/// Degrades the ground-truth priors of a view: box dropout, centre and size
/// jitter, resampled scores, Poisson-distributed background false positives,
/// and blurred, noised semantic and depth maps. The image is left untouched.
pub fn corrupt_priors(view: &RenderedView, noise: &PriorNoiseConfig, seed: u64) -> Result<RenderedView, SceneError> {
    noise.validate()?;
    let mut rng = stream_rng(seed, 1);
    let (w, h) = (view.width as f64, view.height as f64);

    let mut boxes = Vec::with_capacity(view.boxes.len());
    for lb in &view.boxes {
        if noise.false_negative_prob > 0.0 && rng.gen_bool(noise.false_negative_prob) {
            continue;
        }
        if let Some(bbox) = jitter_box(&lb.bbox, noise, w, h, &mut rng) {
            boxes.push(LabeledBox { bbox, source: lb.source });
        }
    }
    if noise.false_positive_rate > 0.0 {
        let n = Poisson::new(noise.false_positive_rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..n {
            if let Some(bbox) = false_positive(noise, w, h, &mut rng) {
                boxes.push(LabeledBox { bbox, source: None });
            }
        }
    }

    let mut semantic = view.semantic.clone();
    box_blur(&mut semantic, view.width, view.height, SEMANTIC_CHANNELS, noise.semantic_blur_radius);
    perturb(&mut semantic, noise.semantic_noise, &mut rng);
    let mut depth = view.depth.clone();
    box_blur(&mut depth, view.width, view.height, 1, noise.depth_blur_radius);
    perturb(&mut depth, noise.depth_noise, &mut rng);

    Ok(RenderedView {
        width: view.width,
        height: view.height,
        image: view.image.clone(),
        semantic,
        depth,
        boxes,
    })
}
