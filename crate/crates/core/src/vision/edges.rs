//! Canny-style edge detection: 3x3 Sobel, L1 magnitude, non-maximum
//! suppression along the gradient direction quantized to four sectors, and
//! hysteresis thresholding with 8-connectivity.

use std::collections::VecDeque;

use super::{GrayImage, VisionError};

/// Largest meaningful threshold: the L1 magnitude of a full-scale step.
pub const MAX_THRESHOLD: u32 = 1020;

/// Sobel L1 gradient magnitude and quantized direction for interior pixels.
/// Border pixels get magnitude 0.
pub(crate) fn sobel(gray: &GrayImage) -> (Vec<u32>, Vec<u8>) {
    let (w, h) = (gray.width as usize, gray.height as usize);
    let mut mag = vec![0u32; w * h];
    let mut dir = vec![0u8; w * h];
    let px = |x: usize, y: usize| gray.data[y * w + x] as i32;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
            let i = y * w + x;
            mag[i] = gx.unsigned_abs() + gy.unsigned_abs();
            dir[i] = sector(gx, gy);
        }
    }
    (mag, dir)
}

/// 0: horizontal gradient, 1: down-right diagonal, 2: vertical, 3: down-left diagonal.
fn sector(gx: i32, gy: i32) -> u8 {
    let mut deg = (gy as f64).atan2(gx as f64).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        0
    } else if deg < 67.5 {
        1
    } else if deg < 112.5 {
        2
    } else {
        3
    }
}

/// Unit step along the gradient for each sector.
const STEP: [(isize, isize); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];

/// Binary (0/255) edge map.
///
/// A pixel survives suppression when its magnitude is strictly greater than
/// the neighbor behind it along the gradient and at least the neighbor ahead,
/// so a two-pixel plateau keeps exactly one pixel.
pub fn edge_map(gray: &GrayImage, low: u32, high: u32) -> Result<GrayImage, VisionError> {
    if gray.width < 3 || gray.height < 3 {
        return Err(VisionError::InvalidInput(format!(
            "edge detection needs at least 3x3 pixels, got {}x{}",
            gray.width, gray.height
        )));
    }
    if low > high || high > MAX_THRESHOLD {
        return Err(VisionError::InvalidInput(format!(
            "thresholds must satisfy 0 <= low <= high <= {MAX_THRESHOLD}, got {low}/{high}"
        )));
    }
    let (w, h) = (gray.width as usize, gray.height as usize);
    let (mag, dir) = sobel(gray);

    let mut thin = vec![0u32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m == 0 {
                continue;
            }
            let (dx, dy) = STEP[dir[i] as usize];
            let ahead = mag[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let behind = mag[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            if m > behind && m >= ahead {
                thin[i] = m;
            }
        }
    }

    let mut out = GrayImage::new(gray.width, gray.height);
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > 0 && m >= high {
            out.data[i] = 255;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out.data[j] == 0 && thin[j] > 0 && thin[j] >= low {
                    out.data[j] = 255;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}
