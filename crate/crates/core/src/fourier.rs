//! Unitary DFTs along one axis of an x-fastest 3-D grid.

use rustfft::FftPlanner;

use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Strides of an x-fastest grid.
pub fn strides(dims: [usize; 3]) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

/// Visit every 1-D line of the grid along `axis`, in ascending order of the
/// line's first voxel. The closure receives the linear index of the line
/// start and the stride between consecutive samples.
pub fn for_each_line(dims: [usize; 3], axis: usize, mut f: impl FnMut(usize, usize)) {
    let st = strides(dims);
    let (a, b) = other_axes(axis);
    for ib in 0..dims[b] {
        for ia in 0..dims[a] {
            f(ia * st[a] + ib * st[b], st[axis]);
        }
    }
}

/// The two axes other than `axis`, in ascending order.
pub fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// In-place unitary DFT of every line of `data` along `axis`.
pub fn dft_along_axis(data: &mut [C64], dims: [usize; 3], axis: usize, dir: Direction) {
    let len = dims[axis];
    if len <= 1 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = match dir {
        Direction::Forward => planner.plan_fft_forward(len),
        Direction::Inverse => planner.plan_fft_inverse(len),
    };
    let scale = 1.0 / (len as f64).sqrt();
    let mut buf = vec![C64::new(0.0, 0.0); len];
    for_each_line(dims, axis, |start, stride| {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = data[start + k * stride];
        }
        fft.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            data[start + k * stride] = *b * scale;
        }
    });
}

/// Signed harmonic for FFT bin `k` of an `n`-point transform, in [-n/2, n/2).
pub fn signed_harmonic(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k < (n + 1) / 2 {
        k
    } else {
        k - n
    }
}
