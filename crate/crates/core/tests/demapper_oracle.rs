//! Soft demapper against direct enumeration of labels, with points built
//! from the definition `x = (M·u mod q) - (q-1)/2` independently of the
//! library's constellation code.

mod oracles;

#[test]
fn demapper_matches_enumeration() {
    let dev = oracles::demapper_vs_enumeration(3);
    assert_eq!(dev.cases, 180);
    assert!(dev.max_abs <= 1e-9, "{}", dev.worst);
}
