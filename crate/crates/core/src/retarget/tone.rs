//! Histogram-based color tone transfer.
//!
//! Standard histogram specification per channel: the target's mid-bin CDF
//! is composed with the inverse source CDF, yielding a monotone 256-entry
//! lookup that reshapes the target's intensity distribution to match the
//! source's.

use crate::error::{ensure, Result};

/// Per-channel monotone intensity lookup tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneMap {
    pub tables: Vec<[u8; 256]>,
}

impl ToneMap {
    /// One CSV line per channel, 256 comma-separated intensities.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for table in &self.tables {
            let line: Vec<String> = table.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Remaps `target_pixels` so each channel's distribution matches the
/// corresponding source histogram. Returns the remapped channels and the
/// lookup tables used. A constant target channel maps onto the source
/// distribution's median intensity.
pub fn tone_transfer(
    source_hist: &[[u64; 256]],
    target_pixels: &[Vec<u8>],
) -> Result<(Vec<Vec<u8>>, ToneMap)> {
    ensure!(
        source_hist.len() == target_pixels.len() && !source_hist.is_empty(),
        "channel counts differ: {} source vs {} target",
        source_hist.len(),
        target_pixels.len()
    );
    let mut tables = Vec::with_capacity(source_hist.len());
    let mut remapped = Vec::with_capacity(target_pixels.len());
    for (hist, pixels) in source_hist.iter().zip(target_pixels) {
        ensure!(!pixels.is_empty(), "empty target channel");
        let source_total: u64 = hist.iter().sum();
        ensure!(source_total > 0, "source histogram is empty");

        let mut target_hist = [0u64; 256];
        for &p in pixels {
            target_hist[p as usize] += 1;
        }
        let target_total = pixels.len() as f64;

        // Source cumulative counts.
        let mut source_cum = [0u64; 256];
        let mut acc = 0u64;
        for (c, &h) in source_cum.iter_mut().zip(hist) {
            acc += h;
            *c = acc;
        }

        // Mid-bin target CDF composed with the inverse source CDF.
        let mut table = [0u8; 256];
        let mut below = 0u64;
        let mut cursor = 0usize;
        for v in 0..256 {
            let quantile = (below as f64 + 0.5 * target_hist[v] as f64) / target_total;
            let needed = quantile * source_total as f64;
            while cursor < 255 && (source_cum[cursor] as f64) < needed {
                cursor += 1;
            }
            table[v] = cursor as u8;
            below += target_hist[v];
        }
        debug_assert!(table.windows(2).all(|w| w[0] <= w[1]));

        remapped.push(pixels.iter().map(|&p| table[p as usize]).collect());
        tables.push(table);
    }
    Ok((remapped, ToneMap { tables }))
}

/// Histogram of an 8-bit channel; convenience for building source
/// histograms from reference pixels.
pub fn channel_histogram(pixels: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &p in pixels {
        hist[p as usize] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pixels(n: usize, lo: u8, hi: u8, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(lo..=hi)).collect()
    }

    #[test]
    fn matching_histograms_give_identity_map() {
        let pixels = random_pixels(5000, 10, 240, 3);
        let hist = channel_histogram(&pixels);
        let (out, map) = tone_transfer(&[hist], &[pixels.clone()]).unwrap();
        assert_eq!(out[0], pixels);
        for v in 0..256 {
            if hist[v] > 0 {
                assert_eq!(map.tables[0][v] as usize, v, "bin {v}");
            }
        }
    }

    #[test]
    fn constant_target_maps_to_source_median() {
        // Hand-checked on a tiny source: intensities 10 x1, 20 x2, 30 x1.
        // Counts below the 0.5 quantile (2 of 4) first reach it at 20.
        let mut hist = [0u64; 256];
        hist[10] = 1;
        hist[20] = 2;
        hist[30] = 1;
        let target = vec![77u8; 100];
        let (out, _) = tone_transfer(&[hist], &[target]).unwrap();
        assert!(out[0].iter().all(|&p| p == 20));
    }

    #[test]
    fn maps_are_monotone_and_order_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let mut hist = [0u64; 256];
            for _ in 0..300 {
                hist[rng.random_range(0..256usize)] += rng.random_range(0..5u64);
            }
            if hist.iter().sum::<u64>() == 0 {
                hist[128] = 1;
            }
            let target = random_pixels(400, 0, 255, 100 + trial);
            let (out, map) = tone_transfer(&[hist], &[target.clone()]).unwrap();
            for w in map.tables[0].windows(2) {
                assert!(w[0] <= w[1]);
            }
            for (i, a) in target.iter().enumerate() {
                for (j, b) in target.iter().enumerate() {
                    if a < b {
                        assert!(out[0][i] <= out[0][j]);
                    }
                    let _ = j;
                }
            }
        }
    }

    #[test]
    fn output_distribution_tracks_source() {
        // Remapped pixels' CDF matches the source CDF within one
        // quantization step at every intensity.
        let source = random_pixels(20000, 40, 200, 11);
        let hist = channel_histogram(&source);
        let target = random_pixels(20000, 0, 120, 13);
        let (out, _) = tone_transfer(&[hist], &[target]).unwrap();

        let out_hist = channel_histogram(&out[0]);
        let n = 20000f64;
        // The pointwise CDF gap is bounded by the largest source bin mass.
        let max_bin = hist.iter().cloned().max().unwrap() as f64 / n;
        let max_gap = (0..256)
            .scan((0.0, 0.0), |(s, o), v| {
                *s += hist[v] as f64 / n;
                *o += out_hist[v] as f64 / n;
                Some((*o - *s).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(
            max_gap <= max_bin + 1e-9,
            "cdf gap {max_gap} exceeds one quantization step {max_bin}"
        );
    }

    #[test]
    fn transfer_is_idempotent_within_one_level() {
        let source = random_pixels(8000, 30, 220, 17);
        let hist = channel_histogram(&source);
        let target = random_pixels(8000, 60, 255, 19);
        let (once, _) = tone_transfer(&[hist], &[target]).unwrap();
        let (twice, _) = tone_transfer(&[hist], &[once[0].clone()]).unwrap();
        for (a, b) in once[0].iter().zip(&twice[0]) {
            assert!((*a as i16 - *b as i16).abs() <= 1, "{a} vs {b}");
        }
    }

    #[test]
    fn three_channel_csv_shape() {
        let hist = channel_histogram(&random_pixels(100, 0, 255, 23));
        let channels = vec![
            random_pixels(50, 0, 255, 29),
            random_pixels(50, 0, 255, 31),
            random_pixels(50, 0, 255, 37),
        ];
        let (_, map) = tone_transfer(&[hist, hist, hist], &channels).unwrap();
        let csv = map.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 256);
    }

    #[test]
    fn rejects_empty_source_histogram() {
        let hist = [0u64; 256];
        let err = tone_transfer(&[hist], &[vec![1, 2, 3]]).unwrap_err();
        assert_eq!(err.code(), "contract");
    }
}
