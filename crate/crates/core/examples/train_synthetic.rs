//! Private training of a circulant MLP on separable blobs.

use gredp::harness::data::{gen_synthetic, SyntheticSpec};
use gredp::mechanisms::{MechanismKind, NoiseSpec};
use gredp::model::{ModelSpec, ModelState};
use gredp::training::{train, TrainingConfig};

fn main() -> gredp::Result<()> {
    let spec = SyntheticSpec { dim: 16, classes: 4, count: 800, seed: 0 };
    let data = gen_synthetic(spec)?;
    let test = gen_synthetic(SyntheticSpec { count: 200, seed: 1, ..spec })?;
    for mech in [MechanismKind::Gredp, MechanismKind::Dpsgd] {
        let mut cfg = TrainingConfig::new(NoiseSpec::new(1.0, 1.0)?, mech);
        cfg.batch_size = 50;
        cfg.epochs = 5;
        cfg.learning_rate = 0.5;
        let model = ModelState::init(ModelSpec::mlp(16, &[32], 4)?, &mut cfg.init_rng())?;
        let (_, log) = train(model, &data, &test, &cfg)?;
        for m in &log {
            println!("{mech} epoch {} loss {:.4} acc {:.3} eps {:.2}", m.epoch, m.train_loss, m.val_acc, m.epsilon_spent);
        }
    }
    Ok(())
}
