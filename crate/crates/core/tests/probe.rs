use csslab_core::grid::build_grid;
use csslab_core::linop::{coercivity_ratio, coercivity_ratio_unconstrained, Linearization};

#[test]
#[ignore]
fn probe_coercivity_references() {
    for m in [0u32, 1] {
        for n in [512usize, 1024] {
            let g = build_grid(60.0, n).unwrap();
            let lin = Linearization::at_soliton(m, &g).unwrap();
            let t0 = std::time::Instant::now();
            let ratio = coercivity_ratio(&lin).unwrap();
            let free = coercivity_ratio_unconstrained(&lin).unwrap();
            println!(
                "m={m} n={n}: constrained {ratio:.6} unconstrained {free:.3e} ({:.2?})",
                t0.elapsed()
            );
        }
    }
}
