use phasorctl::controller::{synthesize, TuningOverrides};
use phasorctl::converter::ConverterParams;
use phasorctl::setpoint::HarmonicModel;
use phasorctl::solvers::closed_loop_spectrum;
use phasorctl::toeplitz::ToeplitzOperator;

fn main() {
    let p = ConverterParams::bench();
    let art = synthesize(&p, &[3], &TuningOverrides::default()).unwrap();
    println!("open margin {:.2} closed margin {:.2}", art.report.open_loop_margin, art.report.closed_loop_margin);
    let h = 10;
    let model = HarmonicModel::build(&p, &art.setpoint.x_phasors.resized(h), &art.setpoint.d_phasors.resized(h), h);
    let g = HarmonicModel::g_operator(&p, &art.setpoint.x_phasors.resized(h), h);
    let p_op = ToeplitzOperator::lift_periodic(&art.p_full, h);
    let fb = g.truncated_product(&g.adjoint().truncated_product(&p_op).unwrap()).unwrap().scale(art.h1);
    let open = closed_loop_spectrum(&model.error_dynamics_operator(), p.omega).unwrap();
    let closed = closed_loop_spectrum(&model.error_dynamics_operator().sub(&fb), p.omega).unwrap();
    for e in &open.eigenvalues { println!("open   {:10.2} {:+10.2}j flag {}", e.value.re, e.value.im, e.boundary_flag); }
    for e in &closed.eigenvalues { println!("closed {:10.2} {:+10.2}j flag {}", e.value.re, e.value.im, e.boundary_flag); }
    // independent cross-check of the closed-loop spectrum
    let flo = phasorctl::solvers::floquet_exponents(
        &|th| {
            let m = phasorctl::controller::closed_loop_a_time(th, &art);
            nalgebra::DMatrix::from_fn(4, 4, |i, j| m[(i, j)])
        },
        p.omega, 32, 400,
    ).unwrap();
    let mut seen: Vec<(f64, f64)> = Vec::new();
    for f in &flo {
        if seen.iter().all(|s| ((s.0 - f.re).powi(2) + (s.1 - f.im).powi(2)).sqrt() > 1.0) {
            seen.push((f.re, f.im));
            println!("floquet closed {:10.2} {:+10.2}j", f.re, f.im);
        }
    }
}
