//! Binary PGM (P5) and PPM (P6) encoding with per-image min-max scaling.

use frecas_core::LatentGrid;

/// Affine map of the image's range onto `0..=255`; constant images map to 0.
fn quantize(image: &LatentGrid) -> Vec<u8> {
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// P5 for one channel, P6 for three; `None` otherwise.
pub fn encode_pnm(image: &LatentGrid) -> Option<Vec<u8>> {
    let (c, h, w) = image.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return None,
    };
    let q = quantize(image);
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    if c == 1 {
        out.extend_from_slice(&q);
    } else {
        let plane = h * w;
        for i in 0..plane {
            out.extend_from_slice(&[q[i], q[plane + i], q[2 * plane + i]]);
        }
    }
    Some(out)
}

/// Extension matching [`encode_pnm`]'s output.
pub fn pnm_extension(channels: usize) -> Option<&'static str> {
    match channels {
        1 => Some("pgm"),
        3 => Some("ppm"),
        _ => None,
    }
}

/// One P5 image per channel, each scaled independently.
pub fn encode_channel_pgms(image: &LatentGrid) -> Vec<Vec<u8>> {
    let (c, h, w) = image.shape();
    (0..c)
        .map(|k| {
            let plane = LatentGrid::new(1, h, w, image.channel(k).to_vec()).expect("plane shape");
            encode_pnm(&plane).expect("one channel")
        })
        .collect()
}
