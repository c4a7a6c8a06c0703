//! Decibel/linear conversions shared by the radio stack.
//!
//! Every dBm-to-milliwatt conversion in the crate goes through these helpers
//! so the sign and base conventions live in exactly one place.

/// Converts a power level in dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Converts a linear milliwatt power to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Converts a dB ratio to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Mixes a master seed with a stream tag so independent concerns
/// (topology, profiles, data, training) draw from separate RNG streams.
pub fn sub_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 finalizer; decorrelates even adjacent (master, tag) pairs.
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_dbm_anchors() {
        assert!((dbm_to_mw(0.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_mw(30.0) - 1000.0).abs() < 1e-9);
        assert!((dbm_to_mw(-30.0) - 0.001).abs() < 1e-15);
        assert!((mw_to_dbm(1.0)).abs() < 1e-12);
        assert!((mw_to_dbm(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn test_round_trip_dbm() {
        let mut dbm = -180.0;
        while dbm <= 40.0 {
            let back = mw_to_dbm(dbm_to_mw(dbm));
            assert!((back - dbm).abs() < 1e-9, "round trip failed at {dbm} dBm");
            dbm += 3.7;
        }
    }

    #[test]
    fn test_round_trip_db_ratio() {
        for i in 0..100 {
            let lin = 1e-9 * 10f64.powf(i as f64 * 0.2);
            let back = db_to_linear(linear_to_db(lin));
            assert!((back - lin).abs() / lin < 1e-12);
        }
    }

    #[test]
    fn test_sub_seed_separates_streams() {
        let a = sub_seed(42, 0);
        let b = sub_seed(42, 1);
        let c = sub_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, sub_seed(42, 0));
    }
}
