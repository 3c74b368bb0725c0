//! Pointwise scaling probe for the coupled-level variance (scratch).

use stochwave::grid::{Box3, CellPartition};
use stochwave::source::SourceProfile;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

fn main() {
    let support = Box3::cube([0.0; 3], 0.6);
    let src = SourceProfile::new(support, 0.1, 1.3, 1.0).unwrap();
    let ref_level: u32 = 6;
    let fine = CellPartition::new(support, 0.6, ref_level).unwrap();
    let n_fine = fine.cell_count();
    let h_fine = fine.h();
    let vol = fine.cell_volume();
    let excise = f64::sqrt(3.0) * h_fine;

    for &(x, t) in &[
        ([0.05, 0.0, 0.0], 0.9),  // inside D, source active
        ([0.05, 0.0, 0.0], 1.6),  // inside D, source off (retarded shell)
        ([0.7, 0.0, 0.0], 1.2),   // outside D
    ] {
        // fine-cell kernel integrals (midpoint)
        let mut i_fine = vec![0.0f64; n_fine];
        for c in 0..n_fine {
            let yc = fine.cell_center(c);
            let d = [x[0] - yc[0], x[1] - yc[1], x[2] - yc[2]];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if r < excise {
                continue;
            }
            let g = src.eval_g(yc);
            if g == 0.0 {
                continue;
            }
            let p = src.eval_p(t - r);
            i_fine[c] = vol * g * p / (FOUR_PI * r);
        }
        let sum_sq_fine: f64 = i_fine.iter().map(|v| v * v).sum();
        let c_ref = h_fine.powf(-1.5);
        println!("x={x:?} t={t}");
        let mut prev = 0.0;
        for level in 0..=3u32 {
            let shift = ref_level - level;
            let dims = fine.dims();
            let d = [dims[0] >> shift, dims[1] >> shift, dims[2] >> shift];
            let mut agg = vec![0.0f64; d[0] * d[1] * d[2]];
            for c in 0..n_fine {
                let ijk = fine.cell_ijk(c);
                let idx = ((ijk[2] >> shift) * d[1] + (ijk[1] >> shift)) * d[0] + (ijk[0] >> shift);
                agg[idx] += i_fine[c];
            }
            let h_l = 0.6 / (1u64 << level) as f64;
            let c_l = h_l.powf(-1.5) * (8.0f64).powf(-0.5 * shift as f64);
            let s_l: f64 = agg.iter().map(|v| v * v).sum();
            let e = h_l.powi(-3) * s_l - 2.0 * c_l * c_ref * s_l + c_ref * c_ref * sum_sq_fine;
            let ratio = if prev > 0.0 { prev / e } else { 0.0 };
            println!("  level {level} (h={h_l:.4}): E = {e:.6e}  ratio from prev = {ratio:.3}");
            prev = e;
        }
    }
}
