use cmrlab_autodiff::{Tape, Tensor};
use cmrlab_core::Image;

use crate::checkpoint::Checkpoint;
use crate::model::Generator;
use crate::CmcnError;

fn next_multiple_of_4(n: usize) -> usize {
    n.div_ceil(4).max(1) * 4
}

/// One generator forward pass; the result lies in `[0, 1]`.
pub fn correct_with(image: &Image, generator: &Generator) -> Result<Image, CmcnError> {
    let (h, w) = (image.height(), image.width());
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(CmcnError::Shape(format!(
            "image is {h}x{w}; the generator needs sides that are multiples of 4 (pad to {}x{})",
            next_multiple_of_4(h),
            next_multiple_of_4(w)
        )));
    }
    let mut tape = Tape::new();
    let vars = generator.bind(&mut tape);
    let x = tape.leaf(Tensor::new([1, 1, h, w], image.data().to_vec())?);
    let y = generator.forward(&mut tape, &vars, x)?;
    let out = Image::new(h, w, tape.value(y).data().to_vec()).map_err(|e| CmcnError::Data(e.to_string()))?;
    Ok(out)
}

pub fn correct(image: &Image, checkpoint: &Checkpoint) -> Result<Image, CmcnError> {
    correct_with(image, &checkpoint.generator)
}
