//! Integer-order Bessel functions J_0..J_3 and K_0..K_3 for real positive
//! arguments, as needed by the step-index mode fields.

/// `[J0(x), J1(x), J2(x), J3(x)]` for `x >= 0`.
///
/// Miller's backward recurrence normalized by `J0 + 2 sum J_2k = 1`.
pub fn bessel_j0123(x: f64) -> [f64; 4] {
    debug_assert!(x >= 0.0);
    if x < 1e-8 {
        return [1.0 - x * x / 4.0, x / 2.0, x * x / 8.0, x * x * x / 48.0];
    }
    let start = {
        let m = x.ceil() as usize + 10 * (x.cbrt().ceil() as usize) + 30;
        m + (m % 2)
    };
    let mut out = [0.0; 4];
    let mut next = 0.0;
    let mut cur = 1e-30;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        // cur = J_k (unnormalized), compute J_{k-1}
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        let idx = k - 1;
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * cur;
        }
        if idx < 4 {
            out[idx] = cur;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// `[K0(x), K1(x), K2(x), K3(x)]` for `x > 0`.
///
/// K0 and K1 come from trapezoid quadrature of
/// `K_n(x) = int_0^inf exp(-x cosh t) cosh(n t) dt`, which converges
/// geometrically in the step for this entire integrand; K2 and K3 follow by
/// the (stable) upward recurrence.
pub fn bessel_k0123(x: f64) -> [f64; 4] {
    debug_assert!(x > 0.0);
    let scaled = bessel_k01_scaled(x);
    let decay = (-x).exp();
    let k0 = scaled[0] * decay;
    let k1 = scaled[1] * decay;
    let k2 = k0 + 2.0 / x * k1;
    let k3 = k1 + 4.0 / x * k2;
    [k0, k1, k2, k3]
}

/// `exp(x) * [K0(x), K1(x)]`.
fn bessel_k01_scaled(x: f64) -> [f64; 2] {
    let step = 0.125f64.min(0.35 / x.sqrt());
    let mut s0 = 0.5;
    let mut s1 = 0.5;
    let mut j = 1usize;
    loop {
        let t = j as f64 * step;
        let c = t.cosh();
        let e = (-x * (c - 1.0)).exp();
        s0 += e;
        s1 += e * c;
        if x * (c - 1.0) - t > 45.0 {
            break;
        }
        j += 1;
    }
    [s0 * step, s1 * step]
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from scipy.special.jv / kv.
    #[rustfmt::skip]
    const REFERENCE: &[(f64, [f64; 4], [f64; 4])] = &[
        (0.001, [9.9999975000001562e-01, 4.9999993750000275e-04, 1.2499998958333368e-07, 2.0833332031250090e-11], [7.0236888005623817e+00, 9.9999623815608550e+02, 1.9999995000009716e+06, 7.9999990000001240e+09]),
        (0.1, [9.9750156206604013e-01, 4.9937526036242005e-02, 1.2489586587999192e-03, 2.0820315754756272e-05], [2.4270690247020168e+00, 9.8538447808706060e+00, 1.9950396464211411e+02, 7.9900124304654355e+03]),
        (0.7, [8.8120088860740531e-01, 3.2899574154005889e-01, 5.8786944364191698e-02, 6.9296548267508340e-03], [6.6051985991510143e-01, 1.0502835353129181e+00, 3.6613299608091534e+00, 2.1972169025650938e+01]),
        (1.0, [7.6519768655796661e-01, 4.4005058574493355e-01, 1.1490348493190050e-01, 1.9563353982668414e-02], [4.2102443824070834e-01, 6.0190723019723458e-01, 1.6248388986351774e+00, 7.1012628247379439e+00]),
        (2.5, [-4.8383776468197921e-02, 4.9709410246427410e-01, 4.4605905843961724e-01, 2.1660039103911358e-01], [6.2347553200366196e-02, 7.3890816347747079e-02, 1.2146020627856385e-01, 2.6822714639344925e-01]),
        (3.8317, [-4.0275939569537511e-01, 2.4045590431039610e-06, 4.0276065078269568e-01, 4.2044872760965052e-01], [1.3476993334478569e-02, 1.5142681459445449e-02, 2.1380890539085116e-02, 3.7462686197901086e-02]),
        (5.0, [-1.7759677131433835e-01, -3.2757913759146517e-01, 4.6565116277752290e-02, 3.6483123061366701e-01], [3.6910983340425942e-03, 4.0446134454521637e-03, 5.3089437122234599e-03, 8.2917684152309309e-03]),
        (9.0, [-9.0333611182876361e-02, 2.4531178657332522e-01, 1.4484734153250420e-01, -1.8093519033665670e-01], [5.0881312956459253e-05, 5.3637016379451948e-05, 6.2800649929670800e-05, 8.1548416348194527e-05]),
        (10.0, [-2.4593576445134832e-01, 4.3472746168861598e-02, 2.5463031368512062e-01, 5.8379379305186670e-02], [1.7780062316167650e-05, 1.8648773453825585e-05, 2.1509817006932767e-05, 2.7252700256598695e-05]),
        (25.0, [9.6266783275958112e-02, -1.2535024958028990e-01, -1.0629480324238133e-01, 1.0834308106150892e-01], [3.4641615622131143e-12, 3.5327780731999333e-12, 3.7467838080691086e-12, 4.1322634824909904e-12]),
        (60.0, [-9.1471804089061887e-02, 4.6598383758166322e-02, 9.3025083547667420e-02, -4.0396711521655165e-02], [1.4138978405591078e-27, 1.4256320265171045e-27, 1.4614189081096780e-27, 1.5230599537244164e-27]),
    ];

    #[test]
    fn j_matches_reference() {
        for &(x, j, _) in REFERENCE {
            let got = bessel_j0123(x);
            for n in 0..4 {
                let tol = 1e-13 + 1e-12 * j[n].abs();
                assert!((got[n] - j[n]).abs() < tol, "J{n}({x}) = {} vs {}", got[n], j[n]);
            }
        }
    }

    #[test]
    fn k_matches_reference() {
        for &(x, _, k) in REFERENCE {
            let got = bessel_k0123(x);
            for n in 0..4 {
                let rel = (got[n] - k[n]).abs() / k[n];
                assert!(rel < 1e-12, "K{n}({x}) = {} vs {} (rel {rel:e})", got[n], k[n]);
            }
        }
    }

    #[test]
    fn wronskian_like_identity() {
        // I and K are not both available; check J recurrence instead.
        for x in [0.3, 1.7, 4.2, 8.8] {
            let j = bessel_j0123(x);
            assert!((j[0] + j[2] - 2.0 * j[1] / x).abs() < 1e-14);
            assert!((j[1] + j[3] - 4.0 * j[2] / x).abs() < 1e-14);
        }
    }
}
