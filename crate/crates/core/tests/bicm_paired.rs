//! Paired BICM receivers: with identical frames and noise, knowing one
//! message can only help.

use icm::modulation::{IndexModulation, SideInfoSet};
use icm::sim::{run_bicm_ber, BicmConfig, Scheme, SimPlan, StoppingRule, BICM_INFO_BITS};

#[test]
fn side_information_lowers_ber_over_100_frames() {
    let c = IndexModulation::new(8, &[vec![1, 2], vec![2, 1]])
        .unwrap()
        .constellation();
    let s1 = SideInfoSet::of(&[1]).unwrap();
    let frames = 100u64;
    let plan = SimPlan {
        snr_db: vec![16.3],
        receivers: vec![SideInfoSet::EMPTY, s1],
        // a fixed number of frames, no early stop on errors
        stopping: StoppingRule {
            min_errors: u64::MAX,
            max_bits: frames * 2 * BICM_INFO_BITS as u64,
        },
        seed: 8,
        scheme: Scheme::Bicm,
    };
    let points = run_bicm_ber(&c, &BicmConfig::default(), &plan).unwrap();
    let (none, one) = (&points[0], &points[1]);
    assert_eq!(none.bits_simulated, frames * 2 * BICM_INFO_BITS as u64);
    assert!(one.bits_simulated >= frames * BICM_INFO_BITS as u64);
    assert!(
        none.bit_errors > 0,
        "operating point should be inside the S=0 waterfall"
    );
    assert!(one.ber() <= none.ber(), "{} > {}", one.ber(), none.ber());
}
