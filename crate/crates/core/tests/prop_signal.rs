use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scgflow::conditioning::dwt::{levels_for, waverec, wavedec, Wavelet};
use scgflow::conditioning::{apply_filter, design_highpass, hard_threshold, HighpassSpec};
use scgflow::gating::{magnitude_scg, segment_beats, BeatWindow};
use scgflow::signal_model::{read_scalogram_image, parse_recording, write_scalogram_image, AccelRecording, ScalogramImage};
use scgflow::Error;

fn recording_text(rows: &[[f64; 4]], rate: f64) -> String {
    let mut t = format!("sample_rate_hz={rate}\n");
    for (i, r) in rows.iter().enumerate() {
        t.push_str(&format!("{},{},{},{},{}\n", i as f64 / rate, r[0], r[1], r[2], r[3]));
    }
    t
}

fn rows(seed: u64, n: usize) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)]).collect()
}

proptest! {
    #[test]
    fn valid_recordings_load_with_equal_channels(seed in any::<u64>(), n in 2usize..200, rate in 50.0f64..2000.0) {
        let data = rows(seed, n);
        let single = parse_recording(recording_text(&data[..1], rate).as_bytes()).unwrap_err();
        prop_assert!(matches!(single, Error::ShortSignal { .. }), "{single:?}");
        let rec = parse_recording(recording_text(&data, rate).as_bytes()).unwrap();
        prop_assert_eq!(rec.len(), n);
        prop_assert!(rec.acc_y.len() == n && rec.acc_z.len() == n && rec.ecg.len() == n);
        prop_assert_eq!(rec.sample_rate_hz, rate);
        prop_assert_eq!(rec.acc_z[n - 1], data[n - 1][2]);
    }

    #[test]
    fn malformed_recordings_are_rejected(seed in any::<u64>(), n in 2usize..100, which in 0usize..4, at in 0usize..100) {
        let data = rows(seed, n);
        let mut lines: Vec<String> = recording_text(&data, 500.0).lines().map(String::from).collect();
        let row = 1 + at % n;
        let err = match which {
            0 => {
                lines[row] = lines[row].rsplit_once(',').unwrap().0.to_string();
                parse_recording(lines.join("\n").as_bytes()).unwrap_err()
            }
            1 => {
                lines[row] = lines[row].replacen(',', ",x", 1);
                parse_recording(lines.join("\n").as_bytes()).unwrap_err()
            }
            2 => {
                lines[row] = format!("{},inf", lines[row].rsplit_once(',').unwrap().0);
                parse_recording(lines.join("\n").as_bytes()).unwrap_err()
            }
            _ => {
                lines[0] = "rate=500".into();
                parse_recording(lines.join("\n").as_bytes()).unwrap_err()
            }
        };
        let expected = match which {
            0 => matches!(err, Error::RaggedRow { .. }),
            1 => matches!(err, Error::BadNumber { .. }),
            2 => matches!(err, Error::NonFiniteSample { .. }),
            _ => matches!(err, Error::MalformedHeader { .. }),
        };
        prop_assert!(expected, "{err:?}");
        prop_assert!(err.is_usage());
    }

    #[test]
    fn unequal_channels_are_rejected(n in 1usize..50, cut in 1usize..3) {
        let v = vec![0.0; n];
        let short = vec![0.0; n.saturating_sub(cut)];
        prop_assert!(AccelRecording::new(500.0, v.clone(), short, v.clone(), v).is_err());
    }

    #[test]
    fn image_round_trip_is_exact_at_f32(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ScalogramImage {
            height: h,
            width: w,
            pixels: (0..h * w).map(|_| rng.gen_range(0.0..1e3)).collect(),
            subject_id: String::new(),
            beat_index: 0,
        };
        let mut buf = Vec::new();
        write_scalogram_image(&img, &mut buf).unwrap();
        let back = read_scalogram_image(&buf[..]).unwrap();
        prop_assert_eq!((back.height, back.width), (h, w));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            prop_assert_eq!(*a as f32 as f64, *b);
        }
        let again = {
            let mut b2 = Vec::new();
            write_scalogram_image(&back, &mut b2).unwrap();
            b2
        };
        prop_assert_eq!(again, buf);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn feasible_highpass_designs_are_stable_and_meet_their_spec(
        fs in 200.0f64..4000.0,
        stop_frac in 0.005f64..0.3,
        widen in 1.05f64..1.8,
        ripple in 0.01f64..1.0,
        atten in 30.0f64..80.0,
    ) {
        let nyq = fs / 2.0;
        let spec = HighpassSpec {
            stopband_hz: stop_frac * nyq,
            passband_hz: (stop_frac * widen).min(0.9) * nyq,
            stopband_atten_db: atten,
            passband_ripple_db: ripple,
            sample_rate_hz: fs,
        };
        let f = design_highpass(&spec).unwrap();
        prop_assert!(f.is_stable());
        // stopband edge and passband edge, plus a few points beyond each
        for k in 0..8 {
            let fstop = spec.stopband_hz * k as f64 / 7.0;
            prop_assert!(f.magnitude_db(fstop) <= -atten + 1e-6, "stop {fstop}: {}", f.magnitude_db(fstop));
            let fpass = spec.passband_hz + (nyq - spec.passband_hz) * k as f64 / 7.0;
            let db = f.magnitude_db(fpass);
            prop_assert!(db >= -ripple - 1e-6 && db <= 1e-6, "pass {fpass}: {db}");
        }
    }

    #[test]
    fn filtering_is_linear(seed in any::<u64>(), n in 64usize..600, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = design_highpass(&HighpassSpec::new(500.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = apply_filter(&f, &mix).unwrap();
        let (fx, fy) = (apply_filter(&f, &x).unwrap(), apply_filter(&f, &y).unwrap());
        let scale = lhs.iter().map(|v| v.abs()).fold(1e-300, f64::max);
        for i in 0..n {
            let rhs = a * fx[i] + b * fy[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * scale, "{i}: {} vs {rhs}", lhs[i]);
        }
    }

    #[test]
    fn dwt_reconstructs_perfectly(seed in any::<u64>(), n in 8usize..1024) {
        let w = Wavelet::sym4();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let back = waverec(&wavedec(&x, &w, levels_for(n, w.len()).max(1)), &w);
        prop_assert_eq!(back.len(), n);
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9, "max error {err}");
    }

    #[test]
    fn hard_thresholding_is_idempotent(seed in any::<u64>(), n in 1usize..300, t in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let once = hard_threshold(&c, t);
        prop_assert_eq!(hard_threshold(&once, t), once.clone());
        for (a, b) in c.iter().zip(&once) {
            prop_assert!(*b == 0.0 || b == a);
        }
    }

    #[test]
    fn magnitude_is_bounded_and_rotation_invariant(seed in any::<u64>(), n in 1usize..200, q in prop::array::uniform4(-1.0f64..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ax = || (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect::<Vec<f64>>();
        let beat = BeatWindow { beat_index: 0, start: 0, acc_x: ax(), acc_y: ax(), acc_z: ax() };
        let m = magnitude_scg(&beat, 500.0, "S").unwrap().samples;
        for i in 0..n {
            let (x, y, z) = (beat.acc_x[i].abs(), beat.acc_y[i].abs(), beat.acc_z[i].abs());
            prop_assert!(m[i] >= x.max(y).max(z) && m[i] <= x + y + z + 1e-12);
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let [w, a, b, c] = q.map(|v| v / norm);
        let r = [
            [1.0 - 2.0 * (b * b + c * c), 2.0 * (a * b - c * w), 2.0 * (a * c + b * w)],
            [2.0 * (a * b + c * w), 1.0 - 2.0 * (a * a + c * c), 2.0 * (b * c - a * w)],
            [2.0 * (a * c - b * w), 2.0 * (b * c + a * w), 1.0 - 2.0 * (a * a + b * b)],
        ];
        let rot = |k: usize| (0..n).map(|i| r[k][0] * beat.acc_x[i] + r[k][1] * beat.acc_y[i] + r[k][2] * beat.acc_z[i]).collect();
        let turned = BeatWindow { beat_index: 0, start: 0, acc_x: rot(0), acc_y: rot(1), acc_z: rot(2) };
        let mr = magnitude_scg(&turned, 500.0, "S").unwrap().samples;
        for i in 0..n {
            prop_assert!((m[i] - mr[i]).abs() <= 1e-12 * m[i].max(1e-300), "{} vs {}", m[i], mr[i]);
        }
    }

    #[test]
    fn beat_windows_partition_the_peak_span(seed in any::<u64>(), len in 10usize..500, k in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut peaks: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=len)).collect();
        peaks.sort_unstable();
        peaks.dedup();
        prop_assume!(peaks.len() >= 2);
        let sig: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let rec = AccelRecording::new(500.0, sig.clone(), sig.iter().map(|v| -v).collect(), sig.clone(), vec![0.0; len]).unwrap();
        let beats = segment_beats(&rec, &peaks).unwrap();
        prop_assert_eq!(beats.len(), peaks.len() - 1);
        let joined: Vec<f64> = beats.iter().flat_map(|b| b.acc_x.clone()).collect();
        prop_assert_eq!(&joined[..], &sig[peaks[0]..peaks[peaks.len() - 1]]);
        for (b, w) in beats.iter().zip(peaks.windows(2)) {
            prop_assert_eq!(b.start, w[0]);
            prop_assert_eq!(b.len(), w[1] - w[0]);
        }
    }
}
