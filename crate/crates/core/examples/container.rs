//! Writes a labelled array container, reads it back and shows that a flipped
//! byte is detected.
//!
//! cargo run --example container

use ndarray::{Array, IxDyn};
use pcct::io::{decode, encode, read_array, write_array};

fn main() -> pcct::Result<()> {
    let data = Array::from_shape_fn(IxDyn(&[4, 3, 2]), |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64 * 0.5);
    let path = std::env::temp_dir().join("pcct_example.pcmd");
    write_array(&path, data.view(), &["view", "channel", "material"])?;
    let back = read_array(&path)?;
    println!(
        "shape {:?}, labels {:?}, identical: {}",
        back.data.shape(),
        back.labels,
        back.data == data
    );

    let mut bytes = encode(data.view(), &["view", "channel", "material"])?;
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    match decode(&bytes, &path) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    Ok(())
}
