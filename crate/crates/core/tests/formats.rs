//! Round trips and malformed-input handling of the file formats.

mod common;

use adaptive_lut::io::cube::{decode_cube, encode_cube};
use adaptive_lut::io::lattice_file::{decode, encode};
use adaptive_lut::io::ppm::{decode_ppm, encode_ppm, BitDepth};
use adaptive_lut::io::{load_lattice, save_lattice, LatticeFile};
use adaptive_lut::lattice::{uniform_coordinates, CHANNELS};
use adaptive_lut::predictor::{init_params, FEATURE_DIM};
use adaptive_lut::transform::transform_pixel;
use adaptive_lut::{ImageBuffer, Lattice, LutTable, SamplingCoordinates};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn quantized_image(depth: BitDepth) -> impl Strategy<Value = ImageBuffer> {
    let max = depth.maxval();
    (1usize..12, 1usize..12).prop_flat_map(move |(w, h)| {
        prop::collection::vec(0..=max, 3 * w * h).prop_map(move |v| {
            ImageBuffer::new(w, h, v.iter().map(|&q| q as f64 / max as f64).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn ppm_round_trip_8_bit(img in quantized_image(BitDepth::Eight)) {
        let back = decode_ppm(&encode_ppm(&img, BitDepth::Eight)).unwrap();
        prop_assert_eq!(back.depth, BitDepth::Eight);
        prop_assert_eq!(back.image, img);
    }

    #[test]
    fn ppm_round_trip_16_bit(img in quantized_image(BitDepth::Sixteen)) {
        let back = decode_ppm(&encode_ppm(&img, BitDepth::Sixteen)).unwrap();
        prop_assert_eq!(back.image, img);
    }

    #[test]
    fn ppm_quantization_error_is_half_a_level(seed in any::<u64>()) {
        let img = random_image(5, 4, &mut rng(seed));
        let back = decode_ppm(&encode_ppm(&img, BitDepth::Eight)).unwrap().image;
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn lattice_file_round_trip_on_random_lattices() {
    let mut r = rng(100);
    for case in 0..100 {
        let n_s = r.random_range(2..12);
        let spread = r.random_range(0.0..8.0);
        let coords = random_coords(n_s, spread, &mut r);
        let values = LutTable::new(
            n_s,
            (0..3 * n_s * n_s * n_s).map(|_| r.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let file = LatticeFile {
            lattice: Lattice::new(coords, values).unwrap(),
            predictor: (case % 10 == 0).then(|| init_params(n_s, 2, FEATURE_DIM, case % 20 == 0, case).unwrap()),
        };
        assert_eq!(decode(&encode(&file)).unwrap(), file, "case {case}");
    }
}

#[test]
fn lattice_file_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grade.lut");
    let lattice = random_lattice(7, &mut rng(3));
    save_lattice(&lattice, &path).unwrap();
    assert_eq!(load_lattice(&path).unwrap(), lattice);
    assert!(load_lattice(&dir.path().join("missing.lut")).is_err());
}

#[test]
fn lattice_file_rejects_corruption() {
    let text = encode(&LatticeFile {
        lattice: Lattice::identity(3).unwrap(),
        predictor: None,
    });
    assert!(decode(&text.replace("NULUT 1", "NULUT 7")).is_err());
    assert!(decode(&text.replace("VALUES", "VALUS")).is_err());
    assert!(decode(&text.replace("END\n", "")).is_err());
    assert!(decode(&format!("{text}junk\n")).is_err());
    let first_value_line = text.lines().position(|l| l == "VALUES").unwrap() + 1;
    let mut lines: Vec<&str> = text.lines().collect();
    lines[first_value_line] = "0 nan 1";
    assert!(decode(&lines.join("\n")).is_err());
}

#[test]
fn cube_of_identity_lists_corners_red_fastest() {
    let text = encode_cube(&Lattice::identity(4).unwrap(), 2).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "LUT_3D_SIZE 2");
    assert_eq!(
        &lines[1..],
        &["0 0 0", "1 0 0", "0 1 0", "1 1 0", "0 0 1", "1 0 1", "0 1 1", "1 1 1"]
    );
}

#[test]
fn cube_at_matching_size_reproduces_table() {
    let mut r = rng(12);
    for n in [2, 5, 9] {
        let lattice = Lattice::new(uniform_coordinates(n).unwrap(), random_table(n, &mut r)).unwrap();
        let (size, entries) = decode_cube(&encode_cube(&lattice, n).unwrap()).unwrap();
        assert_eq!(size, n);
        for b in 0..n {
            for g in 0..n {
                for rr in 0..n {
                    let e = entries[rr + n * g + n * n * b];
                    for c in 0..CHANNELS {
                        assert_eq!(e[c], lattice.values().get(c, rr, g, b));
                    }
                }
            }
        }
    }
}

/// Trilinear interpolation on a `.cube` grid, written independently of the
/// library.
fn cube_eval(n: usize, entries: &[[f64; 3]], x: [f64; 3]) -> [f64; 3] {
    let s = (n - 1) as f64;
    let mut lo = [0usize; 3];
    let mut d = [0.0; 3];
    for c in 0..3 {
        let p = x[c] * s;
        lo[c] = (p.floor() as usize).min(n - 2);
        d[c] = p - lo[c] as f64;
    }
    let mut y = [0.0; 3];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                let w = [1.0 - d[0], d[0]][i] * [1.0 - d[1], d[1]][j] * [1.0 - d[2], d[2]][k];
                let e = entries[(lo[0] + i) + n * (lo[1] + j) + n * n * (lo[2] + k)];
                for c in 0..3 {
                    y[c] += w * e[c];
                }
            }
        }
    }
    y
}

#[test]
fn cube_export_preserves_affine_lattices_exactly() {
    let mut r = rng(13);
    let coords: SamplingCoordinates = random_coords(6, 2.0, &mut r);
    // in-gamut affine map so clamping never engages
    let a = [[0.5, 0.2, 0.1], [0.1, 0.6, 0.2], [0.0, 0.3, 0.4]];
    let b = [0.1, 0.05, 0.2];
    let n = 6;
    let mut data = vec![0.0; 3 * n * n * n];
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = [coords.row(0)[i], coords.row(1)[j], coords.row(2)[k]];
                    data[((c * n + i) * n + j) * n + k] = b[c] + (0..3).map(|m| a[c][m] * v[m]).sum::<f64>();
                }
            }
        }
    }
    let lattice = Lattice::new(coords, LutTable::new(n, data).unwrap()).unwrap();
    let (size, entries) = decode_cube(&encode_cube(&lattice, 17).unwrap()).unwrap();
    for _ in 0..500 {
        let x: [f64; 3] = std::array::from_fn(|_| r.random::<f64>());
        let via_cube = cube_eval(size, &entries, x);
        let direct = transform_pixel(x, &lattice).unwrap();
        for c in 0..3 {
            assert!((via_cube[c] - direct[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn cube_export_of_curved_lattice_stays_close() {
    let mut r = rng(14);
    let coords = random_coords(9, 1.0, &mut r);
    let n = 9;
    let mut data = vec![0.0; 3 * n * n * n];
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = [coords.row(0)[i], coords.row(1)[j], coords.row(2)[k]];
                    data[((c * n + i) * n + j) * n + k] = v[c].sqrt();
                }
            }
        }
    }
    let lattice = Lattice::new(coords, LutTable::new(n, data).unwrap()).unwrap();
    let (size, entries) = decode_cube(&encode_cube(&lattice, 33).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let x: [f64; 3] = std::array::from_fn(|_| r.random::<f64>());
        let via_cube = cube_eval(size, &entries, x);
        let direct = transform_pixel(x, &lattice).unwrap();
        for c in 0..3 {
            worst = worst.max((via_cube[c] - direct[c]).abs());
        }
    }
    // resampling a piecewise-linear curve on a 33-point grid: the error is
    // bounded by the kink size over one grid cell
    assert!(worst < 1e-2, "max deviation {worst}");
}
