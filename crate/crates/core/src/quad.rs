//! Quadrature rules: Gauss-Hermite and Gauss-Legendre via Golub-Welsch, and
//! adaptive Gauss-Kronrod (7/15) on finite intervals.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights of a symmetric Jacobi matrix with zero diagonal.
fn golub_welsch(offdiag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = offdiag.len() + 1;
    let mut t = DMatrix::<f64>::zeros(n, n);
    for (i, &b) in offdiag.iter().enumerate() {
        t[(i, i + 1)] = b;
        t[(i + 1, i)] = b;
    }
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize to remove eigensolver noise
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Probabilists' Gauss-Hermite rule: `sum w_i f(x_i) ~ E[f(Z)]`, Z standard normal.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..order).map(|i| (i as f64).sqrt()).collect();
    golub_welsch(&off, 1.0)
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..order)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One G7/K15 panel: (Kronrod estimate, |Kronrod - Gauss|).
fn kronrod_panel<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x)? + f(c + x)?;
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    Ok((k * h, ((k - g) * h).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Globally adaptive Gauss-Kronrod integration of `f` over `[a, b]`,
/// starting from `initial` equal panels and bisecting the worst panel until
/// the summed error estimate falls below `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    initial: usize,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<Integral> {
    let initial = initial.max(1);
    let mut panels: Vec<(f64, f64, f64, f64)> = Vec::new();
    let step = (b - a) / initial as f64;
    for i in 0..initial {
        let lo = a + step * i as f64;
        let hi = if i + 1 == initial { b } else { lo + step };
        let (v, e) = kronrod_panel(&mut f, lo, hi)?;
        panels.push((lo, hi, v, e));
    }
    loop {
        let value: f64 = panels.iter().map(|p| p.2).sum();
        let error: f64 = panels.iter().map(|p| p.3).sum();
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target {
            return Ok(Integral { value, error, evaluations: 15 * panels.len() });
        }
        if panels.len() >= max_panels {
            return Err(Error::QuadratureNonConvergence { estimate: error, tolerance: target });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod_panel(&mut f, lo, mid)?;
        let (v2, e2) = kronrod_panel(&mut f, mid, hi)?;
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}
