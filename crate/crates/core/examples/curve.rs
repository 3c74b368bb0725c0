use stochwave::grid::*;
use stochwave::noise::*;
use stochwave::solver::*;
use stochwave::source::*;
use std::sync::Arc;

fn main() {
    let spec = GridSpec { rho: 1.6, r_phys: 1.0, obstacle_radius: 0.0, dx: 0.05, center: [0.0;3] };
    let grid = Arc::new(Grid::build(spec).unwrap());
    for sigma0 in [0.0, 3.0, 6.0, 12.0] {
        let pml = PmlParams { r_phys: 1.0, rho: 1.6, sigma0, m_pml: 2, s1: 0.5 };
        let part = CellPartition::new(Box3::cube([0.0;3], 0.3), 0.3, 0).unwrap();
        let mut noise = sample_noise(&part, 0);
        noise.xi[0] = 1.0;
        let src = SourceProfile::new(Box3::cube([0.0;3], 0.3), 0.05, 0.5, 1.0).unwrap();
        let pattern = noise_source_pattern(&grid, &noise, &src);
        let solver = WaveSolver::new(grid.clone(), pml, pattern, TimeProfile::Bump{t_on:0.05,t_off:0.5}, 0.9).unwrap();
        let result = solver.run(6.0, &[[0.5,0.0,0.0]], 0, None, None).unwrap();
        let peak = result.physical_l2.iter().cloned().fold(0.0, f64::max);
        print!("sigma0={sigma0}: peak={peak:.4e} ");
        let n = result.physical_l2.len();
        for frac in [0.25, 0.4, 0.55, 0.7, 0.85, 1.0] {
            let i = ((n-1) as f64 * frac) as usize;
            print!("t={:.1}:{:.2e} ", i as f64*result.dt, result.physical_l2[i]/peak);
        }
        println!();
    }
}
