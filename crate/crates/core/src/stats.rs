//! Scalar statistical helpers: normal quantile and compensated summation.

/// Standard normal quantile, Wichura's algorithm AS 241 (double precision).
///
/// Relative accuracy is about 1e-15 over (0, 1), so z_{0.975} comes out as
/// 1.959963984540054.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "normal_quantile requires p in (0,1), got {p}"
    );
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly_a(r) / poly_b(r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly_c(r) / poly_d(r)
    } else {
        let r = r - 5.0;
        poly_e(r) / poly_f(r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn horner(r: f64, c: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &coef in c.iter().rev() {
        acc = acc * r + coef;
    }
    acc
}

fn poly_a(r: f64) -> f64 {
    horner(
        r,
        &[
            3.387_132_872_796_366_5e0,
            1.331_416_678_917_843_8e2,
            1.971_590_950_306_551_3e3,
            1.373_716_881_714_081_6e4,
            4.592_195_393_154_987e4,
            6.726_577_092_700_87e4,
            3.343_057_558_358_813e4,
            2.509_080_928_730_122_7e3,
        ],
    )
}

fn poly_b(r: f64) -> f64 {
    horner(
        r,
        &[
            1.0,
            4.231_333_070_160_091e1,
            6.871_870_074_920_579e2,
            5.394_196_021_424_751e3,
            2.121_379_430_158_659_7e4,
            3.930_789_580_009_271e4,
            2.872_908_573_572_194_3e4,
            5.226_495_278_852_545_6e3,
        ],
    )
}

fn poly_c(r: f64) -> f64 {
    horner(
        r,
        &[
            1.423_437_110_749_683_5e0,
            4.630_337_846_156_546e0,
            5.769_497_221_460_691e0,
            3.647_848_324_763_204_5e0,
            1.270_458_252_452_368_4e0,
            2.417_807_251_774_506e-1,
            2.272_384_498_926_918_4e-2,
            7.745_450_142_783_414e-4,
        ],
    )
}

fn poly_d(r: f64) -> f64 {
    horner(
        r,
        &[
            1.0,
            2.053_191_626_637_759e0,
            1.676_384_830_183_803_8e0,
            6.897_673_349_851e-1,
            1.481_039_764_274_800_8e-1,
            1.519_866_656_361_645_7e-2,
            5.475_938_084_995_345e-4,
            1.050_750_071_644_416_9e-9,
        ],
    )
}

fn poly_e(r: f64) -> f64 {
    horner(
        r,
        &[
            6.657_904_643_501_103e0,
            5.463_784_911_164_114e0,
            1.784_826_539_917_291_3e0,
            2.965_605_718_285_048_7e-1,
            2.653_218_952_657_612_4e-2,
            1.242_660_947_388_078_4e-3,
            2.711_555_568_743_487_6e-5,
            2.010_334_399_292_288_1e-7,
        ],
    )
}

fn poly_f(r: f64) -> f64 {
    horner(
        r,
        &[
            1.0,
            5.998_322_065_558_88e-1,
            1.369_298_809_227_358e-1,
            1.487_536_129_085_061_5e-2,
            7.868_691_311_456_133e-4,
            1.846_318_317_510_054_8e-5,
            1.421_511_758_316_446e-7,
            2.044_263_103_389_939_7e-15,
        ],
    )
}

/// Kahan–Babuska compensated accumulator for deterministic fixed-order sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    kahan_sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss = kahan_sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (n - 1) as f64).sqrt()
}
