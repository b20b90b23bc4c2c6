#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatreg::molecule::{Atom, Molecule};

/// Planar molecule grown as a random tree of 3..=7 atoms with bond lengths
/// 2.0..2.8 Bohr and no two atoms closer than 1.8 Bohr.
pub fn synthetic_molecule(seed: u64) -> Molecule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=7);
    let elements = [1u32, 6, 7, 8];
    let mut atoms = vec![Atom::new(6, 0.0, 0.0)];
    while atoms.len() < n {
        let parent = atoms[rng.random_range(0..atoms.len())].position;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(2.0..2.8);
        let p = [parent[0] + r * angle.cos(), parent[1] + r * angle.sin()];
        if atoms.iter().all(|a| (a.position[0] - p[0]).hypot(a.position[1] - p[1]) >= 1.8) {
            let z = elements[rng.random_range(0..elements.len())];
            atoms.push(Atom::new(z, p[0], p[1]));
        }
    }
    Molecule::new(format!("syn{seed}"), atoms, Some(-100.0 * n as f64 + rng.random_range(-20.0..20.0))).unwrap()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

/// Row-major 2D DFT with frequencies indexed `[ky * n + kx]`.
pub fn dft2(image: &[f64], n: usize) -> Vec<rustfft::num_complex::Complex64> {
    use rustfft::num_complex::Complex64;
    let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
    let mut data: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::default(); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
    data
}
