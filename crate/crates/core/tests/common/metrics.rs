//! Direct MS-SSIM oracle.

use tta_core::Tensor;

/// Direct MS-SSIM: full 2-D window sums, no separable filtering, no reuse.
pub fn oracle_ms_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let [n, c, h, _] = a.dims4("oracle").unwrap();
    let weights = [0.0448f64, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut scales = 0;
    let mut side = h;
    while scales < 5 && side >= 11 {
        scales += 1;
        side /= 2;
    }
    let used = &weights[..scales];
    let total: f64 = used.iter().sum();
    let window: Vec<Vec<f64>> = {
        let raw: Vec<Vec<f64>> = (0..11)
            .map(|y| (0..11).map(|x| (-(((y as f64 - 5.0).powi(2) + (x as f64 - 5.0).powi(2)) / 4.5)).exp()).collect())
            .collect();
        let s: f64 = raw.iter().flatten().sum();
        raw.into_iter().map(|r| r.into_iter().map(|v| v / s).collect()).collect()
    };
    let (c1, c2) = (0.0001, 0.0009);
    let mut acc = 0.0;
    for k in 0..n * c {
        let plane = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..h).map(|y| (0..h).map(|x| (t.data()[k * h * h + y * h + x] as f64 + 1.0) / 2.0).collect()).collect()
        };
        let (mut pa, mut pb) = (plane(a), plane(b));
        let mut value = 1.0;
        for s in 0..scales {
            let size = pa.len();
            let out = size - 10;
            let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
            for y in 0..out {
                for x in 0..out {
                    let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..11 {
                        for dx in 0..11 {
                            let g = window[dy][dx];
                            let (u, v) = (pa[y + dy][x + dx], pb[y + dy][x + dx]);
                            ma += g * u;
                            mb += g * v;
                            aa += g * u * u;
                            bb += g * v * v;
                            ab += g * u * v;
                        }
                    }
                    let cs = (2.0 * (ab - ma * mb) + c2) / ((aa - ma * ma) + (bb - mb * mb) + c2);
                    cs_sum += cs;
                    ssim_sum += cs * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                }
            }
            let count = (out * out) as f64;
            let term = if s + 1 == scales { ssim_sum / count } else { cs_sum / count };
            value *= term.max(0.0).powf(used[s] / total);
            let down = |p: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                (0..size / 2)
                    .map(|y| {
                        (0..size / 2)
                            .map(|x| (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] + p[2 * y + 1][2 * x + 1]) / 4.0)
                            .collect()
                    })
                    .collect()
            };
            pa = down(&pa);
            pb = down(&pb);
        }
        acc += value;
    }
    acc / (n * c) as f64
}

