use facelock::ImageTensor;

/// Direct windowed SSIM: explicit 2-D Gaussian weights at every valid position.
pub fn naive_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w) = (a.height(), a.width());
    let r = 5i64;
    let mut g = vec![vec![0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut n = 0;
        for cy in r..(h as i64 - r) {
            for cx in r..(w as i64 - r) {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let wgt = g[(dy + r) as usize][(dx + r) as usize] / total;
                        let (y, x) = ((cy + dy) as usize, (cx + dx) as usize);
                        let (p, q) = (a.get(y, x, c), b.get(y, x, c));
                        ma += wgt * p;
                        mb += wgt * q;
                        saa += wgt * p * p;
                        sbb += wgt * q * q;
                        sab += wgt * p * q;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        acc += sum / n as f64;
    }
    acc / 3.0
}
