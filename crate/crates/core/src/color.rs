//! sRGB and CIE L*a*b* conversions (D65 white point, 2° observer).

use serde::{Deserialize, Serialize};

/// 8-bit sRGB triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

/// CIE L*a*b* color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const WHITE_X: f64 = 0.950_47;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.088_83;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

impl Rgb {
    pub fn hex(&self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0[0], self.0[1], self.0[2])
    }

    pub fn from_hex(s: &str) -> Option<Rgb> {
        let s = s.strip_prefix('#')?;
        if s.len() != 6 || !s.is_ascii() {
            return None;
        }
        let p = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok();
        Some(Rgb([p(0)?, p(2)?, p(4)?]))
    }

    /// Relative luminance of the gamma-encoded channels, in [0,1].
    pub fn luma(&self) -> f64 {
        let [r, g, b] = self.0.map(|c| c as f64 / 255.0);
        0.2126 * r + 0.7152 * g + 0.0722 * b
    }

    pub fn to_lab(&self) -> Lab {
        let [r, g, b] = self.0.map(|c| srgb_to_linear(c as f64 / 255.0));
        let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
        let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
        let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
        let fx = lab_f(x / WHITE_X);
        let fy = lab_f(y / WHITE_Y);
        let fz = lab_f(z / WHITE_Z);
        Lab {
            l: 116.0 * fy - 16.0,
            a: 500.0 * (fx - fy),
            b: 200.0 * (fy - fz),
        }
    }
}

impl Lab {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Lab { l, a, b }
    }

    pub fn distance_sq(&self, other: &Lab) -> f64 {
        let dl = self.l - other.l;
        let da = self.a - other.a;
        let db = self.b - other.b;
        dl * dl + da * da + db * db
    }

    /// Converts back to 8-bit sRGB, clamping out-of-gamut channels.
    pub fn to_rgb(&self) -> Rgb {
        let fy = (self.l + 16.0) / 116.0;
        let fx = fy + self.a / 500.0;
        let fz = fy - self.b / 200.0;
        let x = WHITE_X * lab_f_inv(fx);
        let y = WHITE_Y * lab_f_inv(fy);
        let z = WHITE_Z * lab_f_inv(fz);
        let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
        let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
        let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
        let enc = |c: f64| (linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8;
        Rgb([enc(r), enc(g), enc(b)])
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = Rgb([255, 255, 255]).to_lab();
        assert!((w.l - 100.0).abs() < 1e-3);
        assert!(w.a.abs() < 1e-2 && w.b.abs() < 1e-2);
        let k = Rgb([0, 0, 0]).to_lab();
        assert!(k.l.abs() < 1e-9);
    }

    #[test]
    fn roundtrip_all_grays_and_primaries() {
        for v in 0..=255u8 {
            let c = Rgb([v, v, v]);
            assert_eq!(c.to_lab().to_rgb(), c);
        }
        for c in [[255, 0, 0], [0, 255, 0], [0, 0, 255], [12, 200, 77]] {
            assert_eq!(Rgb(c).to_lab().to_rgb(), Rgb(c));
        }
    }

    #[test]
    fn hex_parse() {
        assert_eq!(Rgb::from_hex("#0a10ff"), Some(Rgb([10, 16, 255])));
        assert_eq!(Rgb([10, 16, 255]).hex(), "#0a10ff");
        assert_eq!(Rgb::from_hex("0a10ff"), None);
    }
}
