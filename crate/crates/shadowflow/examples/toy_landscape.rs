//! The closed-form toy landscape: a descent path escaping to infinity while
//! the transverse coordinates settle, and the cell dimension it attaches.

use shadowflow::diagnostics::{toy_closed_form, toy_energy, toy_flow};

fn main() -> shadowflow::Result<()> {
    for signs in [vec![1i8], vec![-1i8], vec![1i8, -1, 1]] {
        let mut x0 = vec![1.0; signs.len()];
        x0.push(1.0);
        let path = toy_flow(&x0, &signs, 3.0)?;
        println!(
            "signs {:?}: index at infinity {} (energy {:.4} -> {:.4})",
            signs,
            path.index_at_infinity,
            path.energies.first().unwrap(),
            path.energies.last().unwrap()
        );
    }

    println!("\ndescent path for signs (+1):");
    println!("{:>6} {:>12} {:>12} {:>12}", "t", "x_1", "x_2", "J");
    for k in 0..=6 {
        let t = 0.5 * k as f64;
        let x = toy_closed_form(&[1.0, 1.0], &[1], t);
        println!("{t:>6.1} {:>12.6} {:>12.6} {:>12.6}", x[0], x[1], toy_energy(&x, &[1]));
    }
    Ok(())
}
