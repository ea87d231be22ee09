//! Hartigan's dip via the greatest-convex-minorant / least-concave-majorant
//! iteration (the Hartigan & Hartigan 1985 algorithm with Maechler's
//! corrections).

/// Dip of a sorted sample. Returns a value in `[1/(2n), 0.25]` for n >= 2; a
/// sample with fewer than two distinct values gets `1/(2n)` (so 0.5 for a
/// single observation).
///
/// # Panics
/// If `x` is empty or not sorted ascending.
pub fn dip_statistic(x: &[f64]) -> f64 {
    let n = x.len();
    assert!(n > 0, "dip of an empty sample");
    assert!(x.windows(2).all(|w| w[0] <= w[1]), "dip input must be sorted");
    let two_n = 2.0 * n as f64;
    if n < 2 || x[n - 1] == x[0] {
        return 1.0 / two_n;
    }
    // 1-based views keep the index arithmetic identical to the published form.
    let xs = |i: usize| x[i - 1];
    let mut mn = vec![0usize; n + 1];
    let mut mj = vec![0usize; n + 1];
    let mut gcm = vec![0usize; n + 2];
    let mut lcm = vec![0usize; n + 2];

    mn[1] = 1;
    for j in 2..=n {
        mn[j] = j - 1;
        loop {
            let mnj = mn[j];
            let mnmnj = mn[mnj];
            if mnj == 1
                || (xs(j) - xs(mnj)) * ((mnj - mnmnj) as f64) < (xs(mnj) - xs(mnmnj)) * (j - mnj) as f64
            {
                break;
            }
            mn[j] = mnmnj;
        }
    }
    mj[n] = n;
    for k in (1..n).rev() {
        mj[k] = k + 1;
        loop {
            let mjk = mj[k];
            let mjmjk = mj[mjk];
            if mjk == n
                || (xs(k) - xs(mjk)) * (mjk as f64 - mjmjk as f64)
                    < (xs(mjk) - xs(mjmjk)) * (k as f64 - mjk as f64)
            {
                break;
            }
            mj[k] = mjmjk;
        }
    }

    let mut dip = 1.0f64;
    let (mut low, mut high) = (1usize, n);
    loop {
        gcm[1] = high;
        let mut i = 1;
        while gcm[i] > low {
            gcm[i + 1] = mn[gcm[i]];
            i += 1;
        }
        let l_gcm = i;
        let mut ig = l_gcm;
        let mut ix = ig - 1;

        lcm[1] = low;
        let mut i = 1;
        while lcm[i] < high {
            lcm[i + 1] = mj[lcm[i]];
            i += 1;
        }
        let l_lcm = i;
        let mut ih = l_lcm;
        let mut iv = 2;

        let mut d = 0.0f64;
        if l_gcm != 2 || l_lcm != 2 {
            loop {
                let gcmix = gcm[ix];
                let lcmiv = lcm[iv];
                if gcmix > lcmiv {
                    let gcmi1 = gcm[ix + 1];
                    let dx = (lcmiv as f64 - gcmi1 as f64 + 1.0)
                        - (xs(lcmiv) - xs(gcmi1)) * (gcmix - gcmi1) as f64 / (xs(gcmix) - xs(gcmi1));
                    iv += 1;
                    if dx >= d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    let lcmiv1 = lcm[iv - 1];
                    let dx = (xs(gcmix) - xs(lcmiv1)) * (lcmiv - lcmiv1) as f64 / (xs(lcmiv) - xs(lcmiv1))
                        - (gcmix as f64 - lcmiv1 as f64 - 1.0);
                    ix = ix.saturating_sub(1);
                    if dx >= d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                ix = ix.max(1);
                iv = iv.min(l_lcm);
                if gcm[ix] == lcm[iv] {
                    break;
                }
            }
        } else {
            d = 1.0;
        }
        if d < dip {
            break;
        }

        let mut dip_l = 0.0f64;
        for j in ig..l_gcm {
            let mut max_t = 1.0f64;
            let (jb, je) = (gcm[j + 1], gcm[j]);
            if je - jb > 1 && xs(je) != xs(jb) {
                let c = (je - jb) as f64 / (xs(je) - xs(jb));
                for jr in jb..=je {
                    let t = (jr - jb + 1) as f64 - (xs(jr) - xs(jb)) * c;
                    max_t = max_t.max(t);
                }
            }
            dip_l = dip_l.max(max_t);
        }
        let mut dip_u = 0.0f64;
        for j in ih..l_lcm {
            let mut max_t = 1.0f64;
            let (jb, je) = (lcm[j], lcm[j + 1]);
            if je - jb > 1 && xs(je) != xs(jb) {
                let c = (je - jb) as f64 / (xs(je) - xs(jb));
                for jk in jb..=je {
                    let t = (xs(jk) - xs(jb)) * c - (jk as f64 - jb as f64 - 1.0);
                    max_t = max_t.max(t);
                }
            }
            dip_u = dip_u.max(max_t);
        }
        dip = dip.max(dip_u.max(dip_l));

        if low == gcm[ig] && high == lcm[ih] {
            break;
        }
        low = gcm[ig];
        high = lcm[ih];
    }
    dip / two_n
}
