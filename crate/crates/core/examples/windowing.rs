// Slices a clip into overlapping windows and shows which video frames and
// audio samples each window covers.

use avalign::windowing::{compute_windows, resample_linear, WindowSpec};

pub fn run_example() -> avalign::Result<()> {
    let spec = WindowSpec::default();
    let manifest = compute_windows("clip-001", 2.0, &spec)?;
    println!("{} windows of {} s, hop {} s", manifest.windows.len(), spec.window_len_s, spec.hop());
    for w in &manifest.windows {
        println!(
            "  #{} [{:.3}, {:.3}) s  frames {:?}  samples {:?}",
            w.index, w.start_s, w.end_s, w.frame_indices, w.audio_sample_range
        );
    }

    // skip the first half second, e.g. an intro
    let trimmed = WindowSpec { leading_trim_s: 0.5, ..spec };
    let later = compute_windows("clip-001", 2.0, &trimmed)?;
    println!("with a 0.5 s trim: {} windows, first starts at {} s", later.windows.len(), later.windows[0].start_s);

    let pcm: Vec<f32> = (0..48).map(|i| (i as f32 / 8.0).sin()).collect();
    let down = resample_linear(&pcm, 48_000, 16_000)?;
    println!("48 samples at 48 kHz -> {} samples at 16 kHz", down.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
