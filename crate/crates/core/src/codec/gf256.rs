//! GF(2^8) arithmetic via log/exp tables (primitive polynomial 0x11d,
//! generator 2).

const POLY: u16 = 0x11d;

const fn build_tables() -> ([u8; 256], [u8; 512]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 512];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        exp[i + 255] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    exp[510] = exp[255];
    exp[511] = exp[256];
    (log, exp)
}

const TABLES: ([u8; 256], [u8; 512]) = build_tables();

#[inline]
pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        0
    } else {
        TABLES.1[TABLES.0[a as usize] as usize + TABLES.0[b as usize] as usize]
    }
}

#[inline]
pub fn inv(a: u8) -> u8 {
    assert_ne!(a, 0, "division by zero in GF(256)");
    TABLES.1[255 - TABLES.0[a as usize] as usize]
}

#[inline]
pub fn div(a: u8, b: u8) -> u8 {
    mul(a, inv(b))
}

/// dst ^= c * src, elementwise.
pub fn mul_add_slice(dst: &mut [u8], src: &[u8], c: u8) {
    if c == 0 {
        return;
    }
    for (d, &s) in dst.iter_mut().zip(src) {
        *d ^= mul(c, s);
    }
}

/// slice *= c, elementwise.
pub fn scale_slice(s: &mut [u8], c: u8) {
    for v in s.iter_mut() {
        *v = mul(*v, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_axioms_spot_checks() {
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a)), 1);
            assert_eq!(mul(a, 1), a);
            assert_eq!(mul(a, 0), 0);
        }
        // commutativity + distributivity on a grid
        for a in (0..=255u8).step_by(17) {
            for b in (0..=255u8).step_by(13) {
                assert_eq!(mul(a, b), mul(b, a));
                for c in (0..=255u8).step_by(29) {
                    assert_eq!(mul(a, add(b, c)), add(mul(a, b), mul(a, c)));
                }
            }
        }
    }

    #[test]
    fn generator_order_is_255() {
        let mut x = 1u8;
        for _ in 0..255 {
            x = mul(x, 2);
        }
        assert_eq!(x, 1);
        let mut seen = std::collections::HashSet::new();
        let mut x = 1u8;
        for _ in 0..255 {
            assert!(seen.insert(x));
            x = mul(x, 2);
        }
    }
}
