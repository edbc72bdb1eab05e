//! The im2col convolution against the direct nested-loop definition.

use std::time::Instant;

use uti_convlstm::tensor::{conv3d_forward, conv3d_oracle, ConvGeometry, Padding};
use uti_convlstm::{Rng, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(1);
    let x: Tensor = Tensor::uniform(&[25, 32, 16, 4], -1.0, 1.0, &mut rng)?;
    for padding in [Padding::Same, Padding::Valid] {
        let g = ConvGeometry::new(8, [5, 5, 5], [5, 2, 2], padding);
        let w = Tensor::uniform(&[5, 5, 5, 4, 8], -1.0, 1.0, &mut rng)?;
        let b = Tensor::uniform(&[8], -1.0, 1.0, &mut rng)?;
        let t0 = Instant::now();
        let fast = conv3d_forward(&x, &w, &b, &g)?;
        let t1 = Instant::now();
        let slow = conv3d_oracle(&x, &w, &b, &g)?;
        let t2 = Instant::now();
        println!(
            "{padding:?}: output {:?}, max |diff| {:.1e}, im2col {:?}, direct {:?}",
            fast.shape(),
            fast.max_abs_diff(&slow),
            t1 - t0,
            t2 - t1
        );
    }
    Ok(())
}
