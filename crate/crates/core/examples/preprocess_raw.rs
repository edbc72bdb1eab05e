//! From raw 8-bit scanline frames to normalized fixed-length windows.

use uti_convlstm::data::{
    downsample, make_windows, minmax_normalize, RawUtterance, IMAGE_HEIGHT, SAMPLES_PER_LINE,
    SCANLINES, WINDOW,
};
use uti_convlstm::{Rng, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(3);
    let frames = 30;
    let pixels = (0..frames * SCANLINES * SAMPLES_PER_LINE)
        .map(|_| rng.below(256) as u8)
        .collect();
    let raw = RawUtterance::new(
        "demo",
        81.67,
        Tensor::new(&[frames, SCANLINES, SAMPLES_PER_LINE], pixels)?,
    )?;
    println!("raw {:?} at {} fps", raw.frames.shape(), raw.frame_rate);

    let image = downsample(&raw.frames, IMAGE_HEIGHT)?;
    let normalized = minmax_normalize(&image, 0.0, 255.0)?;
    let (lo, hi) = normalized
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "downsampled {:?}, range [{lo:.3}, {hi:.3}]",
        normalized.shape()
    );

    let targets = Tensor::new(
        &[frames, 80],
        (0..frames * 80).map(|i| (i / 80) as f64).collect(),
    )?;
    let windows = make_windows(&normalized, &targets, WINDOW)?;
    for (i, (clip, target)) in windows.iter().enumerate().take(3) {
        println!(
            "window {i}: {:?}, target taken from frame {}",
            clip.shape(),
            target[0]
        );
    }
    println!("{} windows from {frames} frames", windows.len());
    Ok(())
}
