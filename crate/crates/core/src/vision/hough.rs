//! Standard (rho, theta) Hough transform.
//!
//! Every non-zero pixel (x, y) votes once per theta bin for
//! `rho = x cos(theta) + y sin(theta)`, rounded to the nearest rho bin.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GrayImage, VisionError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughLine {
    /// Signed distance from the top-left pixel, in pixels.
    pub rho: f64,
    /// Radians in [0, pi).
    pub theta: f64,
    pub votes: u32,
}

impl HoughLine {
    /// Column where the line crosses image row `y`. `None` for horizontal lines.
    pub fn x_at_row(&self, y: f64) -> Option<f64> {
        let c = self.theta.cos();
        if c.abs() < 1e-12 {
            return None;
        }
        Some((self.rho - y * self.theta.sin()) / c)
    }
}

/// Vote counts indexed by (rho bin, theta bin).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accumulator {
    pub rho_bins: usize,
    pub theta_bins: usize,
    /// Rho bin index of rho = 0.
    pub rho_zero: usize,
    votes: Vec<u32>,
}

impl Accumulator {
    pub fn votes(&self, rho_idx: usize, theta_idx: usize) -> u32 {
        self.votes[rho_idx * self.theta_bins + theta_idx]
    }
}

pub fn theta_bin_count(theta_step: f64) -> usize {
    (PI / theta_step - 1e-9).ceil() as usize
}

/// Theta of bin `k`. Shared with anyone who needs bit-identical angles.
#[inline]
pub fn theta_of_bin(k: usize, theta_step: f64) -> f64 {
    k as f64 * theta_step
}

#[inline]
pub fn rho_bin(rho: f64, rho_step: f64) -> i64 {
    (rho / rho_step).round() as i64
}

fn check_steps(rho_step: f64, theta_step: f64) -> Result<(), VisionError> {
    if !(rho_step > 0.0) || !(theta_step > 0.0 && theta_step <= PI / 2.0) {
        return Err(VisionError::InvalidInput(format!(
            "need rho_step > 0 and 0 < theta_step <= pi/2, got {rho_step}/{theta_step}"
        )));
    }
    Ok(())
}

pub fn hough_accumulator(edges: &GrayImage, rho_step: f64, theta_step: f64) -> Result<Accumulator, VisionError> {
    check_steps(rho_step, theta_step)?;
    let theta_bins = theta_bin_count(theta_step);
    let diag = (((edges.width as f64 - 1.0).max(0.0)).powi(2) + ((edges.height as f64 - 1.0).max(0.0)).powi(2)).sqrt();
    let rho_zero = (diag / rho_step).ceil() as usize + 1;
    let rho_bins = 2 * rho_zero + 1;
    let trig: Vec<(f64, f64)> = (0..theta_bins)
        .map(|k| {
            let t = theta_of_bin(k, theta_step);
            (t.cos(), t.sin())
        })
        .collect();
    let mut votes = vec![0u32; rho_bins * theta_bins];
    let w = edges.width as usize;
    for (i, &p) in edges.data.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        for (k, &(c, s)) in trig.iter().enumerate() {
            let r = rho_bin(x * c + y * s, rho_step) + rho_zero as i64;
            votes[r as usize * theta_bins + k] += 1;
        }
    }
    Ok(Accumulator {
        rho_bins,
        theta_bins,
        rho_zero,
        votes,
    })
}

/// Local maxima of the accumulator with at least `min_votes`, strongest first.
///
/// A bin is a peak when it beats every existing 8-neighbor; equal neighbors
/// are beaten only by the bin with the smaller rho (then smaller theta).
/// Neighbors outside the accumulator do not exist; theta does not wrap.
pub fn accumulator_peaks(acc: &Accumulator, rho_step: f64, theta_step: f64, min_votes: u32) -> Vec<HoughLine> {
    let mut out = Vec::new();
    let (nr, nt) = (acc.rho_bins as isize, acc.theta_bins as isize);
    for r in 0..nr {
        for t in 0..nt {
            let v = acc.votes(r as usize, t as usize);
            if v == 0 || v < min_votes {
                continue;
            }
            let mut peak = true;
            'n: for dr in -1..=1isize {
                for dt in -1..=1isize {
                    if dr == 0 && dt == 0 {
                        continue;
                    }
                    let (rr, tt) = (r + dr, t + dt);
                    if rr < 0 || tt < 0 || rr >= nr || tt >= nt {
                        continue;
                    }
                    let nv = acc.votes(rr as usize, tt as usize);
                    if nv > v || (nv == v && (rr, tt) < (r, t)) {
                        peak = false;
                        break 'n;
                    }
                }
            }
            if peak {
                out.push((r, t, v));
            }
        }
    }
    out.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    out.into_iter()
        .map(|(r, t, v)| HoughLine {
            rho: (r - acc.rho_zero as isize) as f64 * rho_step,
            theta: theta_of_bin(t as usize, theta_step),
            votes: v,
        })
        .collect()
}

pub fn hough_lines(
    edges: &GrayImage,
    rho_step: f64,
    theta_step: f64,
    min_votes: u32,
) -> Result<Vec<HoughLine>, VisionError> {
    let acc = hough_accumulator(edges, rho_step, theta_step)?;
    Ok(accumulator_peaks(&acc, rho_step, theta_step, min_votes))
}
