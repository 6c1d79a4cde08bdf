//! Weighted dilations on R^d and the origin-centred grids built from them.
//!
//! ```bash
//! cargo run --example graded_dilations
//! ```

use kglab::structure::{make_grid, DilationStructure};
use num_rational::Rational64;

fn main() -> kglab::Result<()> {
    // Weights (1, 1/2, 2): Q = 7/2.
    let st = DilationStructure::new(vec![
        Rational64::from_integer(1),
        Rational64::new(1, 2),
        Rational64::from_integer(2),
    ])?;
    println!("weights {:?}, homogeneous dimension Q = {}", st.weights_f64(), st.homogeneous_dimension());

    let x = [1.0, 1.0, 1.0];
    let r2 = st.dilate(&st.dilate(&x, 2.0)?, 3.0)?;
    let r6 = st.dilate(&x, 6.0)?;
    println!("D_3 D_2 x = {r2:?}\nD_6 x     = {r6:?}");

    let grid = make_grid(&st, &[4.0, 4.0, 8.0], &[8, 8, 16])?;
    println!("{}", grid.describe());
    println!("origin node {:?} at flat index {}", grid.node(grid.origin_index()), grid.origin_index());
    println!("axis-0 frequencies {:?}", grid.axis_frequencies(0));

    // Refinement keeps the box and the origin node.
    let fine = grid.refined(&[2, 1, 4])?;
    println!("refined: {}", fine.describe());
    Ok(())
}
