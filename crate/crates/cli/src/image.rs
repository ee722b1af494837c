//! Binary PPM slice images with a blue-white-red scale centered on zero.

use pifnet::Tensor;

/// Color of `v` on a symmetric scale where `±scale` saturate.
pub fn diverging(v: f64, scale: f64) -> [u8; 3] {
    if scale <= 0.0 {
        return [255, 255, 255];
    }
    let t = (v / scale).clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

/// One P6 image per depth index of a `(D, H, W)` volume, all sharing the
/// scale `max |v|`.
pub fn axial_slices(volume: &Tensor) -> Vec<Vec<u8>> {
    let s = volume.shape();
    let (d, h, w) = (s[0], s[1], s[2]);
    let scale = volume.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0..d)
        .map(|z| {
            let mut img = format!("P6\n{w} {h}\n255\n").into_bytes();
            for &v in &volume.data()[z * h * w..(z + 1) * h * w] {
                img.extend(diverging(v, scale));
            }
            img
        })
        .collect()
}
