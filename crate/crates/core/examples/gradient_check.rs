//! Central finite-difference checks of every loss composed through a small MLP.

use adasim::losses::{dino_loss, infonce_loss, simsiam_loss, DinoHead};
use adasim::numcore::Mlp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn numeric(mlp: &Mlp, f: &dyn Fn(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut m = mlp.clone();
    (0..mlp.param_count())
        .map(|k| {
            let p = m.params()[k];
            m.params_mut()[k] = p + h;
            let up = f(&m);
            m.params_mut()[k] = p - h;
            let down = f(&m);
            m.params_mut()[k] = p;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

fn main() -> adasim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mlp = Mlp::new(&[6, 10, 5], &mut rng)?;
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let other: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (out, tape) = mlp.forward(&x)?;

    let target = mlp.infer(&other)?;
    let g = simsiam_loss(&out, &target)?.grad_student;
    let analytic = mlp.backward(&tape, &g)?.0;
    let fd = numeric(&mlp, &|m| simsiam_loss(&m.infer(&x).unwrap(), &target).unwrap().loss);
    println!("simsiam      max rel err {:.2e}", max_rel(&analytic, &fd));

    let mut head = DinoHead::new(5);
    head.center = vec![0.1, -0.2, 0.0, 0.3, 0.05];
    let teacher = mlp.infer(&other)?;
    let g = dino_loss(&out, &teacher, &head, 0.04)?.grad_student;
    let analytic = mlp.backward(&tape, &g)?.0;
    let fd = numeric(&mlp, &|m| dino_loss(&m.infer(&x).unwrap(), &teacher, &head, 0.04).unwrap().loss);
    println!("dino         max rel err {:.2e}", max_rel(&analytic, &fd));

    // InfoNCE with the positive and one negative also produced by the network.
    let neg_x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (pos, tp) = mlp.forward(&other)?;
    let (neg, tn) = mlp.forward(&neg_x)?;
    let v = infonce_loss(&out, &pos, &[neg], 0.2)?;
    let mut analytic = mlp.zero_grads();
    mlp.backward_into(&tape, &v.grad_anchor, &mut analytic)?;
    mlp.backward_into(&tp, &v.grad_positive, &mut analytic)?;
    mlp.backward_into(&tn, &v.grad_negatives[0], &mut analytic)?;
    let fd = numeric(&mlp, &|m| {
        let n = m.infer(&neg_x).unwrap();
        infonce_loss(&m.infer(&x).unwrap(), &m.infer(&other).unwrap(), &[n], 0.2).unwrap().loss
    });
    println!("infonce      max rel err {:.2e}", max_rel(&analytic, &fd));
    Ok(())
}
