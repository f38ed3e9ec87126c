use super::{ChwTensor, Image, CHANNELS};
use crate::error::{Error, Result};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const U_SCALE: f64 = 0.492;
const V_SCALE: f64 = 0.877;

/// Analog BT.601 RGB → YUV matrix, rows ordered (Y, U, V).
///
/// `U = 0.492 (B − Y)` and `V = 0.877 (R − Y)` expanded into RGB weights.
pub const RGB_TO_YUV: [[f32; 3]; 3] = [
    [KR as f32, KG as f32, KB as f32],
    [
        (-U_SCALE * KR) as f32,
        (-U_SCALE * KG) as f32,
        (U_SCALE * (1.0 - KB)) as f32,
    ],
    [
        (V_SCALE * (1.0 - KR)) as f32,
        (-V_SCALE * KG) as f32,
        (-V_SCALE * KB) as f32,
    ],
];

pub(crate) fn yuv_pixel(r: f32, g: f32, b: f32) -> [f32; 3] {
    let m = &RGB_TO_YUV;
    [
        m[0][0] * r + m[0][1] * g + m[0][2] * b,
        m[1][0] * r + m[1][1] * g + m[1][2] * b,
        m[2][0] * r + m[2][1] * g + m[2][2] * b,
    ]
}

/// Converts an image to (Y, U, V) planes. U and V may be negative.
pub fn rgb_to_yuv(img: &Image) -> ChwTensor {
    let n = img.pixels();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = vec![0.0f32; CHANNELS * n];
    for i in 0..n {
        let [y, u, v] = yuv_pixel(r[i], g[i], b[i]);
        out[i] = y;
        out[n + i] = u;
        out[2 * n + i] = v;
    }
    ChwTensor::new(CHANNELS, img.height(), img.width(), out).expect("length matches")
}

/// Inverse of [`rgb_to_yuv`]. The result is not clamped.
pub fn yuv_to_rgb(t: &ChwTensor) -> Result<ChwTensor> {
    if t.channels() != CHANNELS {
        return Err(Error::Shape(format!(
            "expected 3 YUV planes, found {}",
            t.channels()
        )));
    }
    let n = t.height() * t.width();
    let (yp, up, vp) = (t.plane(0), t.plane(1), t.plane(2));
    let mut out = vec![0.0f32; CHANNELS * n];
    for i in 0..n {
        let (y, u, v) = (yp[i] as f64, up[i] as f64, vp[i] as f64);
        let r = y + v / V_SCALE;
        let b = y + u / U_SCALE;
        let g = (y - KR * r - KB * b) / KG;
        out[i] = r as f32;
        out[n + i] = g as f32;
        out[2 * n + i] = b as f32;
    }
    ChwTensor::new(CHANNELS, t.height(), t.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pixel(rgb: [f32; 3]) -> Image {
        Image::from_channel_values(1, 1, rgb).unwrap()
    }

    #[test]
    fn gray_has_no_chroma() {
        for v in [0.0, 0.25, 0.5, 1.0] {
            let yuv = rgb_to_yuv(&pixel([v, v, v]));
            assert!((yuv.data()[0] - v).abs() < 1e-6);
            assert!(yuv.data()[1].abs() < 1e-6);
            assert!(yuv.data()[2].abs() < 1e-6);
        }
    }

    #[test]
    fn pure_red() {
        let yuv = rgb_to_yuv(&pixel([1.0, 0.0, 0.0]));
        let expected = [0.299, -0.14711, 0.61478];
        for (got, want) in yuv.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn inverse_of_red() {
        let t = ChwTensor::new(3, 1, 1, vec![0.299, -0.14711, 0.61478]).unwrap();
        let rgb = yuv_to_rgb(&t).unwrap();
        for (got, want) in rgb.data().iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn luma_only_inverts_to_gray() {
        let t = ChwTensor::new(3, 1, 1, vec![0.4, 0.0, 0.0]).unwrap();
        let rgb = yuv_to_rgb(&t).unwrap();
        for v in rgb.data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let t = ChwTensor::zeros(2, 1, 1);
        assert!(yuv_to_rgb(&t).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(0.0f32..=1.0, 3 * 10 * 10)) {
            let img = Image::new(10, 10, data).unwrap();
            let back = yuv_to_rgb(&rgb_to_yuv(&img)).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }
    }
}
