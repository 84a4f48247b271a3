//! Adaptive Gauss–Kronrod (7/15) quadrature used as an independent oracle.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, floor: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol.max(floor) || depth == 0 || (b - a).abs() < 1e-14 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, floor, depth - 1) + adapt(f, m, b, 0.5 * tol, floor, depth - 1)
}

/// Integral of `f` over `[a, b]`. Extra break points (kinks of `f`) can be
/// supplied so that every panel is smooth.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(inner);
    pts.push(b);
    // Absolute tolerance no tighter than round-off in the total.
    let rough: f64 = pts.windows(2).map(|w| gk15(&|x| f(x).abs(), w[0], w[1]).0).sum();
    let tol = tol.max(1e-14 * rough);
    let share = tol / (b - a);
    let floor = 1e-17 * rough;
    pts.windows(2)
        .map(|w| adapt(&f, w[0], w[1], share * (w[1] - w[0]), floor, 40))
        .sum()
}

/// `E[g(X)]` for `X ~ N(mu, sd^2)` over `mu ± 10 sd`.
pub fn normal_expectation<F: Fn(f64) -> f64>(g: F, mu: f64, sd: f64, breaks: &[f64]) -> f64 {
    let dens = |x: f64| {
        let z = (x - mu) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut br = breaks.to_vec();
    br.push(mu);
    integrate(|x| g(x) * dens(x), mu - 10.0 * sd, mu + 10.0 * sd, &br, 1e-14)
}
