//! Zero-padded 2D real-to-complex FFT used for linear cross-correlation.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use rustfft::FftPlanner;

/// Linear autocorrelation `c(a) = sum_p f(p + a) f(p)` of a `width x height`
/// row-major plane.
///
/// The plane is zero-padded to `2*width x 2*height`, so lag `(dx, dy)` with
/// `|dx| < width`, `|dy| < height` is found at column `dx mod 2*width`, row
/// `dy mod 2*height` of the returned `2*width x 2*height` grid, free of
/// wrap-around.
pub fn autocorrelate(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(plane.len(), width * height);
    let cols = 2 * width;
    let rows = 2 * height;
    let spectrum_cols = cols / 2 + 1;

    let mut real_planner = RealFftPlanner::<f64>::new();
    let r2c = real_planner.plan_fft_forward(cols);
    let c2r = real_planner.plan_fft_inverse(cols);
    let mut planner = FftPlanner::<f64>::new();
    let col_fwd = planner.plan_fft_forward(rows);
    let col_inv = planner.plan_fft_inverse(rows);

    // Row transforms, written transposed so each frequency column is
    // contiguous. Padding rows transform to zero and are skipped.
    let mut transposed = vec![Complex64::new(0.0, 0.0); spectrum_cols * rows];
    let mut row_in = r2c.make_input_vec();
    let mut row_out = r2c.make_output_vec();
    let mut scratch = r2c.make_scratch_vec();
    for y in 0..height {
        row_in[..width].copy_from_slice(&plane[y * width..(y + 1) * width]);
        row_in[width..].fill(0.0);
        r2c.process_with_scratch(&mut row_in, &mut row_out, &mut scratch)
            .expect("forward row fft");
        for (k, v) in row_out.iter().enumerate() {
            transposed[k * rows + y] = *v;
        }
    }

    col_fwd.process(&mut transposed);
    for v in &mut transposed {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    col_inv.process(&mut transposed);

    let scale = 1.0 / (cols * rows) as f64;
    let mut out = vec![0.0; cols * rows];
    let mut spec_row = c2r.make_input_vec();
    let mut real_row = c2r.make_output_vec();
    let mut scratch = c2r.make_scratch_vec();
    for y in 0..rows {
        for (k, v) in spec_row.iter_mut().enumerate() {
            *v = transposed[k * rows + y];
        }
        // The spectrum is Hermitian; the DC and Nyquist bins are real up to
        // rounding.
        spec_row[0].im = 0.0;
        spec_row[spectrum_cols - 1].im = 0.0;
        c2r.process_with_scratch(&mut spec_row, &mut real_row, &mut scratch)
            .expect("inverse row fft");
        for (dst, src) in out[y * cols..(y + 1) * cols].iter_mut().zip(&real_row) {
            *dst = src * scale;
        }
    }
    out
}
