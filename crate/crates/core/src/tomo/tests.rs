use super::*;
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub(crate) fn gaussian_blob(grid: ImageGrid, cx: f64, cy: f64, sigma: f64) -> Image {
    let mut img = Image::zeros(grid);
    for i in 0..grid.side {
        for j in 0..grid.side {
            let x = grid.col_center(j);
            let y = grid.row_center(i);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            img.set(i, j, (-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    img
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0)))
}

fn op_for(side: usize, p: usize) -> RadonOperator {
    let grid = ImageGrid::new(side).unwrap();
    let d = default_detector_count(&grid);
    RadonOperator::from_geometry(make_geometry(grid, p, d).unwrap())
}

#[test]
fn geometry_examples() {
    let grid = ImageGrid::new(32).unwrap();
    let g1 = make_geometry(grid, 1, 47).unwrap();
    assert_eq!(g1.angles, vec![0.0]);
    assert_eq!(g1.m_p(), 47);

    let g4 = make_geometry(grid, 4, 47).unwrap();
    let expect: Vec<f64> = (0..4).map(|j| j as f64 * std::f64::consts::PI / 4.0).collect();
    for (a, e) in g4.angles.iter().zip(&expect) {
        assert!((a - e).abs() < 1e-15);
    }

    assert_eq!(make_geometry(grid, 180, 47).unwrap().m_p(), 8460);
    assert!(make_geometry(grid, 0, 47).is_err());
    assert!(make_geometry(grid, 4, 0).is_err());
}

#[test]
fn forward_of_zero_is_zero() {
    let op = op_for(16, 6);
    let y = op.forward(&Array1::zeros(256)).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

#[test]
fn forward_rejects_wrong_dimension() {
    let op = op_for(16, 6);
    assert!(op.forward(&Array1::zeros(100)).is_err());
    assert!(op.adjoint(&Array1::zeros(3)).is_err());
}

#[test]
fn forward_is_linear() {
    let op = op_for(12, 5);
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x1 = random_vec(&mut rng, 144);
    let x2 = random_vec(&mut rng, 144);
    let (a, b) = (0.7, -2.3);
    let lhs = op.forward(&(&x1 * a + &x2 * b)).unwrap();
    let rhs = op.forward(&x1).unwrap() * a + op.forward(&x2).unwrap() * b;
    let err = (&lhs - &rhs).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    assert!(err <= 1e-12, "linearity violated: {err}");
}

#[test]
fn center_pixel_axis_profiles_match() {
    // A unit pixel at the exact center of an odd grid: the 0 and pi/2
    // views are identical by symmetry of the discretization.
    let grid = ImageGrid::new(33).unwrap();
    let d = default_detector_count(&grid);
    let op = RadonOperator::from_geometry(make_geometry(grid, 2, d).unwrap());
    let mut img = Image::zeros(grid);
    img.set(16, 16, 1.0);
    let y = op.forward(&img.data).unwrap();
    for k in 0..d {
        assert!((y[k] - y[d + k]).abs() < 1e-12);
    }
}

#[test]
fn projection_mass_is_angle_independent() {
    let grid = ImageGrid::new(33).unwrap();
    let d = default_detector_count(&grid);
    let op = RadonOperator::from_geometry(make_geometry(grid, 12, d).unwrap());
    let blob = gaussian_blob(grid, 1.5, -2.0, 3.0);
    let y = op.forward(&blob.data).unwrap();
    let spacing = op.geometry().det_spacing;
    let masses: Vec<f64> = (0..12)
        .map(|a| (0..d).map(|k| y[a * d + k]).sum::<f64>() * spacing)
        .collect();
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    for m in &masses {
        assert!((m - mean).abs() / mean < 0.01, "mass {m} vs mean {mean}");
    }
}

#[test]
fn dense_matrix_matches_forward_and_adjoint() {
    // Dense-operator equivalence on an 8x8 grid, three projections.
    let op = op_for(8, 3);
    let h = op.dense().unwrap().clone();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let x = random_vec(&mut rng, 64);
    let u = random_vec(&mut rng, op.dim_meas());

    let err_f = (&op.forward(&x).unwrap() - &h.dot(&x))
        .mapv(f64::abs)
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    assert!(err_f <= 1e-12);

    let err_a = (&op.adjoint(&u).unwrap() - &h.t().dot(&u))
        .mapv(f64::abs)
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    assert!(err_a <= 1e-12);
}

#[test]
fn single_bin_adjoint_is_matrix_row() {
    let op = op_for(8, 3);
    let h = op.dense().unwrap().clone();
    let mut s = Array1::zeros(op.dim_meas());
    let bin = 17;
    s[bin] = 1.0;
    let img = op.adjoint(&s).unwrap();
    let err = (&img - &h.row(bin).to_owned())
        .mapv(f64::abs)
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    assert!(err <= 1e-14);
}

#[test]
fn adjoint_identity_over_random_pairs() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for (side, p) in [(8, 3), (8, 6), (16, 1), (16, 9)] {
        let op = op_for(side, p);
        for _ in 0..100 {
            let x = random_vec(&mut rng, side * side);
            let u = random_vec(&mut rng, op.dim_meas());
            let hx = op.forward(&x).unwrap();
            let htu = op.adjoint(&u).unwrap();
            let lhs = hx.dot(&u);
            let rhs = x.dot(&htu);
            let bound = 1e-10 * x.dot(&x).sqrt() * u.dot(&u).sqrt();
            assert!((lhs - rhs).abs() <= bound, "adjoint identity violated");
        }
    }
}

#[test]
fn fbp_zero_is_zero() {
    let op = op_for(16, 6);
    let img = op.fbp(&Array1::zeros(op.dim_meas())).unwrap();
    assert!(img.iter().all(|v| *v == 0.0));
}

#[test]
fn fbp_single_projection_is_finite() {
    let op = op_for(16, 1);
    let mut s = Array1::zeros(op.dim_meas());
    s.fill(1.0);
    let img = op.fbp(&s).unwrap();
    assert!(img.iter().all(|v| v.is_finite()));
}

fn fbp_round_trip_error(side: usize, p: usize) -> f64 {
    let grid = ImageGrid::new(side).unwrap();
    let d = default_detector_count(&grid);
    let op = RadonOperator::from_geometry(make_geometry(grid, p, d).unwrap());
    let x = gaussian_blob(grid, 0.5, -1.0, side as f64 / 6.0);
    let y = op.forward(&x.data).unwrap();
    let rec = op.fbp(&y).unwrap();
    let num = (&rec - &x.data).mapv(|v| v * v).sum().sqrt();
    let den = x.data.mapv(|v| v * v).sum().sqrt();
    num / den
}

#[test]
fn fbp_round_trip_on_smooth_phantom() {
    let err = fbp_round_trip_error(32, 180);
    assert!(err <= 0.05, "fbp round-trip error {err}");
}

#[test]
fn fbp_error_decreases_with_projections() {
    let e6 = fbp_round_trip_error(32, 6);
    let e30 = fbp_round_trip_error(32, 30);
    let e180 = fbp_round_trip_error(32, 180);
    assert!(e6 > e30 && e30 > e180, "errors {e6} {e30} {e180}");
}

#[test]
fn simulate_is_deterministic_and_exact_at_zero_noise() {
    let grid = ImageGrid::new(16).unwrap();
    let op = op_for(16, 4);
    let x = gaussian_blob(grid, 0.0, 0.0, 3.0);

    let clean = simulate_measurement(&x, &op, &NoiseModel::noiseless(), 1).unwrap();
    let y = op.forward(&x.data).unwrap();
    assert_eq!(clean.values, y);

    let noise = NoiseModel::new(0.5).unwrap();
    let a = simulate_measurement(&x, &op, &noise, 42).unwrap();
    let b = simulate_measurement(&x, &op, &noise, 42).unwrap();
    assert_eq!(a.values, b.values);
    let c = simulate_measurement(&x, &op, &noise, 43).unwrap();
    assert_ne!(a.values, c.values);
}

#[test]
fn simulated_noise_has_unit_normalized_power() {
    // x = 0: ||y||^2 / (m_p sigma^2) averages to 1 within chi-square bands.
    let grid = ImageGrid::new(8).unwrap();
    let op = op_for(8, 2);
    let m_p = op.dim_meas() as f64;
    let x = Image::zeros(grid);
    let noise = NoiseModel::new(0.7).unwrap();
    let n = 10_000;
    let mut acc = 0.0;
    for seed in 0..n {
        let y = simulate_measurement(&x, &op, &noise, seed).unwrap();
        acc += y.values.dot(&y.values) / (m_p * noise.sigma_y * noise.sigma_y);
    }
    let mean = acc / n as f64;
    let band = 3.0 * (2.0 / (n as f64 * m_p)).sqrt();
    assert!((mean - 1.0).abs() <= band, "mean {mean}, band {band}");
}

#[test]
fn calibration_examples() {
    // Dynamics are linear in the image, so scaling one reference image
    // gives sinogram dynamics in the same ratio.
    let grid = ImageGrid::new(16).unwrap();
    let d = default_detector_count(&grid);
    let base = gaussian_blob(grid, 0.0, 0.0, 3.0);

    let op180 = RadonOperator::from_geometry(make_geometry(grid, 180, d).unwrap());
    let y = op180.forward(&base.data).unwrap();
    let dynamic = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - y.iter().cloned().fold(f64::INFINITY, f64::min);

    let one = calibrate_sigma_y(&[base.clone()], grid, d).unwrap();
    assert!((one.sigma_y - dynamic / 100.0).abs() < 1e-12);

    // Two images with dynamics r and 3r average to 2r/100.
    let scaled = Image::new(grid, &base.data * 3.0).unwrap();
    let two = calibrate_sigma_y(&[base, scaled], grid, d).unwrap();
    assert!((two.sigma_y - 2.0 * dynamic / 100.0).abs() < 1e-10);
}

#[test]
fn calibration_error_paths() {
    let grid = ImageGrid::new(8).unwrap();
    assert!(matches!(
        calibrate_sigma_y(&[], grid, 12),
        Err(crate::error::Error::InvalidArgument(_))
    ));
    assert!(matches!(
        calibrate_sigma_y(&[Image::zeros(grid)], grid, 12),
        Err(crate::error::Error::DegenerateCalibration)
    ));
}

#[test]
fn moore_penrose_agrees_with_dense_identity() {
    let op = DenseOperator::identity(5);
    let y = Array1::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
    let x = op.moore_penrose(&y).unwrap();
    let err = (&x - &y).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
    assert!(err < 1e-12);
}
