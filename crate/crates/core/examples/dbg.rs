use gcdelay::*;
use gcdelay::measure::Atom;
use gcdelay::dynamics::dynamics_var_names;
fn main() {
    let grid = Grid::new(1, 2, 1, 1.0).unwrap();
    let names = dynamics_var_names(1, 1);
    let vars: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let d = DelayDynamics::new(
        grid, 1,
        vec![parse_expression("0", &vars).unwrap()],
        vec![vec![parse_expression("x1", &vars).unwrap()]],
        gcdelay::hermite::CubicHermite::constant(-1.0, 0.0, vec![1.0]),
        vec![1.0], 100.0,
    ).unwrap();
    let mu = VectorMeasure::new(2.0, 1, vec![Atom { t: 0.5, mass: vec![2.0] }], vec![], vec![]).unwrap();
    let (ec, _) = rectilinear_gc(&mu, &grid, &ControlCone::nonneg(1)).unwrap();
    println!("mesh {:?}", ec.mesh());
    println!("w0 {:?}", ec.w0());
    println!("w {:?}", ec.w());
    let ep = integrate_acs(&ec, &d, 8).unwrap();
    for k in 0..=12 {
        let s = 3.0 * k as f64 / 12.0;
        println!("s={:.3} phi0={:.3} y1={:.6} y2={:.6}", s, ec.phi0_at(s), ep.y_at(1,s)[0], ep.y_at(2,s)[0]);
    }
}
