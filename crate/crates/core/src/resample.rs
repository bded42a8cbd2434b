//! Bilinear resampling of channel-last 2-D data.
//!
//! Sample positions use half-pixel centers with edge clamping, i.e. the
//! `align_corners = false` convention: destination index `d` reads source
//! coordinate `(d + 0.5) * in / out - 0.5`.

/// Source index pair and interpolation weight for one destination index.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

/// Resize `data` laid out as `(height, width, channels)` row-major to
/// `(out_h, out_w, channels)`.
///
/// Identical input and output shapes return a copy of the input.
pub fn bilinear(data: &[f32], height: usize, width: usize, channels: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(data.len(), height * width * channels, "bilinear: data length");
    assert!(height > 0 && width > 0, "bilinear: empty input");
    if height == out_h && width == out_w {
        return data.to_vec();
    }
    let ys = taps(height, out_h);
    let xs = taps(width, out_w);
    let mut out = vec![0.0f32; out_h * out_w * channels];
    for (oy, ty) in ys.iter().enumerate() {
        for (ox, tx) in xs.iter().enumerate() {
            let o = (oy * out_w + ox) * channels;
            let a = (ty.lo * width + tx.lo) * channels;
            let b = (ty.lo * width + tx.hi) * channels;
            let c = (ty.hi * width + tx.lo) * channels;
            let d = (ty.hi * width + tx.hi) * channels;
            let (wy, wx) = (ty.frac, tx.frac);
            for ch in 0..channels {
                let top = data[a + ch] + (data[b + ch] - data[a + ch]) * wx;
                let bot = data[c + ch] + (data[d + ch] - data[c + ch]) * wx;
                out[o + ch] = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Resize a `(channels, height, width)` planar buffer, plane by plane.
pub fn bilinear_planar(
    data: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    assert_eq!(data.len(), height * width * channels, "bilinear: data length");
    if height == out_h && width == out_w {
        return data.to_vec();
    }
    let plane = height * width;
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for ch in 0..channels {
        out.extend(bilinear(
            &data[ch * plane..(ch + 1) * plane],
            height,
            width,
            1,
            out_h,
            out_w,
        ));
    }
    out
}

/// Nearest-neighbour resize of a label plane (same sampling convention).
pub fn nearest<T: Copy>(data: &[T], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<T> {
    assert_eq!(data.len(), height * width);
    let pick = |d: usize, input: usize, output: usize| {
        (((d as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = pick(oy, height, out_h);
        for ox in 0..out_w {
            out.push(data[sy * width + pick(ox, width, out_w)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let data = vec![0.75f32; 42 * 42 * 3];
        let out = bilinear(&data, 42, 42, 3, 21, 21);
        assert_eq!(out.len(), 21 * 21 * 3);
        assert!(out.iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        // 1-D ramp 0..8 halved: dst d reads src 2d + 0.5, the midpoint of a pair.
        let data: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let out = bilinear(&data, 1, 8, 1, 1, 4);
        assert_eq!(out, vec![0.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn upsample_clamps_edges() {
        let data = vec![0.0f32, 1.0];
        let out = bilinear(&data, 1, 2, 1, 1, 4);
        // src coords: -0.25 -> 0, 0.25, 0.75, 1.25 -> clamp hi
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn nearest_identity_and_double() {
        let data = vec![1u8, 2, 3, 4];
        assert_eq!(nearest(&data, 2, 2, 2, 2), data);
        assert_eq!(
            nearest(&data, 2, 2, 4, 4),
            vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
    }
}
