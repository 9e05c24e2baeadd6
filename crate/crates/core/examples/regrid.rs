//! Resample a coarse field onto a finer grid, bilinear for continuous values
//! and nearest neighbor for class masks.

use cropsuit::grid::{regrid, ClassMask, GridSpec, Raster, Resample};

fn main() -> cropsuit::Result<()> {
    let coarse = GridSpec::new(4, 4, 60.0, 58.0, 0.25)?;
    let fine = GridSpec::new(16, 16, 60.0, 58.0, 0.0625)?;
    let field = Raster::from_fn(coarse, |i, j| (i * 4 + j) as f64);
    let smooth = regrid(&field, &fine, Resample::Bilinear)?;
    println!("bilinear row 5: {:?}", &smooth.values[5 * 16..6 * 16]);

    let mask = ClassMask::from_raster(Raster::from_fn(coarse, |i, j| ((i + j) % 4) as f64))?;
    let fine_mask = mask.regrid(&fine)?;
    println!("class counts coarse {:?} fine {:?}", mask.counts(), fine_mask.counts());
    Ok(())
}
