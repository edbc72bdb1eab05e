//! A ConvLSTM over a short clip, and its reduction to a plain LSTM when the
//! frames are 1x1 and the kernels are 1x1.

use uti_convlstm::layers::{ConvLstmParams, LstmParams};
use uti_convlstm::tensor::Padding;
use uti_convlstm::{Rng, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(5);

    let cell = ConvLstmParams::<f64>::init(2, 4, [3, 3], [2, 2], Padding::Same, true, &mut rng)?;
    let clip = Tensor::uniform(&[6, 9, 8, 2], -1.0, 1.0, &mut rng)?;
    let (sequence, _) = cell.forward(&clip, true)?;
    let (last, _) = cell.forward(&clip, false)?;
    println!(
        "clip {:?} -> sequence {:?}, final state {:?}",
        clip.shape(),
        sequence.shape(),
        last.shape()
    );
    println!("{} parameters with peepholes", cell.param_count());

    let (d, u, t) = (3, 5, 7);
    let lstm = LstmParams::<f64>::init(d, u, false, &mut rng)?;
    let mut conv = ConvLstmParams::zeros(d, u, [1, 1], [1, 1], Padding::Same, false)?;
    conv.w_x = lstm.w_x.reshape(&[1, 1, d, 4 * u])?;
    conv.w_h = lstm.w_h.reshape(&[1, 1, u, 4 * u])?;
    conv.bias = lstm.bias.clone();
    let x = Tensor::uniform(&[t, d], -1.0, 1.0, &mut rng)?;
    let a = lstm.forward(&x, true)?.0;
    let b = conv.forward(&x.reshape(&[t, 1, 1, d])?, true)?.0;
    println!(
        "1x1 ConvLSTM vs LSTM: max |diff| {:.1e}",
        a.max_abs_diff(&b.reshape(a.shape())?)
    );
    Ok(())
}
