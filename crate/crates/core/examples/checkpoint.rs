//! Save and reload weights; the reloaded model gives bitwise-identical outputs.

use todlab::data::{load_checkpoint, save_checkpoint};
use todlab::model::{forward, MlpSpec};

fn main() -> todlab::Result<()> {
    let spec = MlpSpec::new(vec![4, 16, 3])?;
    let params = spec.init_params(42);
    let path = std::env::temp_dir().join("todlab-example.ckpt");
    save_checkpoint(&path, &spec, &params)?;
    let (spec2, params2) = load_checkpoint(&path)?;
    let x = [0.1, -0.2, 0.3, 2.0];
    let a = forward(&spec, &params, &x)?;
    let b = forward(&spec2, &params2, &x)?;
    println!("{} parameters, outputs {a:.6?}", params.len());
    println!("bitwise equal after reload: {}", a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    Ok(())
}
