//! Raw numeric kernels shared by the graph operations. All buffers are
//! row-major slices; every kernel accumulates into its output so backward
//! passes can reuse them directly.

/// C += A · B where A is [m,k] and B is [k,n].
pub fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// C += A · Bᵀ where A is [m,k] and B is [n,k].
pub fn mm_abt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// C += Aᵀ · B where A is [k,m] and B is [k,n].
pub fn mm_atb_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_pi * b_pj;
            }
        }
    }
}

/// Geometry of one 2-D convolution, shared by forward and backward.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Gathers sliding-window patches of one image into a column matrix of
/// shape [patch_len, out_h·out_w]. Out-of-bounds (padding) reads are zero.
pub fn im2col(image: &[f64], geom: &ConvGeom, cols: &mut [f64]) {
    let positions = geom.out_positions();
    debug_assert_eq!(image.len(), geom.in_channels * geom.in_h * geom.in_w);
    debug_assert_eq!(cols.len(), geom.patch_len() * positions);
    cols.fill(0.0);
    let mut row = 0;
    for c in 0..geom.in_channels {
        let channel = &image[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let dest = &mut cols[row * positions..(row + 1) * positions];
                let mut pos = 0;
                for oy in 0..geom.out_h {
                    let y = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if y < 0 || y >= geom.in_h as isize {
                        pos += geom.out_w;
                        continue;
                    }
                    let src_row = &channel[y as usize * geom.in_w..(y as usize + 1) * geom.in_w];
                    for ox in 0..geom.out_w {
                        let x = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if x >= 0 && x < geom.in_w as isize {
                            dest[pos] = src_row[x as usize];
                        }
                        pos += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the image grid; adjoint of
/// [`im2col`].
pub fn col2im_acc(cols: &[f64], geom: &ConvGeom, image: &mut [f64]) {
    let positions = geom.out_positions();
    debug_assert_eq!(image.len(), geom.in_channels * geom.in_h * geom.in_w);
    debug_assert_eq!(cols.len(), geom.patch_len() * positions);
    let mut row = 0;
    for c in 0..geom.in_channels {
        let channel = &mut image[c * geom.in_h * geom.in_w..(c + 1) * geom.in_h * geom.in_w];
        for ky in 0..geom.kernel_h {
            for kx in 0..geom.kernel_w {
                let src = &cols[row * positions..(row + 1) * positions];
                let mut pos = 0;
                for oy in 0..geom.out_h {
                    let y = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if y < 0 || y >= geom.in_h as isize {
                        pos += geom.out_w;
                        continue;
                    }
                    let dst_row =
                        &mut channel[y as usize * geom.in_w..(y as usize + 1) * geom.in_w];
                    for ox in 0..geom.out_w {
                        let x = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if x >= 0 && x < geom.in_w as isize {
                            dst_row[x as usize] += src[pos];
                        }
                        pos += 1;
                    }
                }
                row += 1;
            }
        }
    }
}
