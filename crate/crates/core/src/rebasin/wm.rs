//! Weight matching: coordinate descent over hidden layers, one linear
//! assignment per layer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::plan::TransportPlan;
use crate::error::Result;
use crate::nn::matrix::gemm;
use crate::nn::{Matrix, Mlp};
use crate::sinkhorn::{assignment_value, hungarian, Objective};

/// Smallest objective gain that counts as an accepted update.
const MIN_GAIN: f64 = 1e-12;

/// Hard plan re-basing `b` onto `a`. Each update maximizes
/// `⟨M_i, P_i⟩` with
/// `M_i = W^a_i P_{i−1} (W^b_i)ᵀ + (W^a_{i+1})ᵀ P_{i+1} W^b_{i+1} + b^a_i (b^b_i)ᵀ`,
/// which is exactly the part of `⟨θ_a, π(θ_b)⟩` that depends on `P_i`, so
/// `c_l2` never increases.
pub fn weight_matching(a: &Mlp, b: &Mlp, max_sweeps: usize, seed: u64) -> Result<TransportPlan> {
    a.same_architecture(b)?;
    let widths = b.hidden_widths();
    let h = widths.len();
    let mut perms: Vec<Vec<usize>> = widths.iter().map(|&w| (0..w).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..h).collect();

    for _ in 0..max_sweeps {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &i in &order {
            let m = similarity(a, b, &perms, i)?;
            let candidate = hungarian(&m, Objective::Maximize)?;
            let gain = assignment_value(&m, &candidate) - assignment_value(&m, &perms[i]);
            if gain > MIN_GAIN && candidate != perms[i] {
                perms[i] = candidate;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    TransportPlan::from_permutations(&perms)
}

/// `M_i[r][c]`: how well unit `c` of `b` fills slot `r` of `a` in hidden layer `i`.
fn similarity(a: &Mlp, b: &Mlp, perms: &[Vec<usize>], i: usize) -> Result<Matrix> {
    let (la, lb) = (&a.layers()[i], &b.layers()[i]);
    // W^b_i P_{i−1}ᵀ: permute input columns.
    let wb_in = match i {
        0 => lb.weight.clone(),
        _ => {
            let p = &perms[i - 1];
            let w = &lb.weight;
            Matrix::from_fn(w.rows(), w.cols(), |r, c| w.get(r, p[c]))
        }
    };
    let mut m = gemm(&la.weight, false, &wb_in, true)?;
    // P_{i+1} W^b_{i+1}: permute output rows (identity for the output layer).
    let (na, nb) = (&a.layers()[i + 1], &b.layers()[i + 1]);
    let wb_out = match perms.get(i + 1) {
        Some(p) => {
            let w = &nb.weight;
            Matrix::from_fn(w.rows(), w.cols(), |r, c| w.get(p[r], c))
        }
        None => nb.weight.clone(),
    };
    m = m.add(&gemm(&na.weight, true, &wb_out, false)?)?;
    m.add(&gemm(&la.bias, false, &lb.bias, true)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init};
    use crate::rebasin::{apply_plan, c_l2};

    #[test]
    fn identical_models_give_identity() {
        let a = Mlp::init(&[3, 6, 5, 2], Activation::Tanh, Init::StandardNormal, 0).unwrap();
        assert_eq!(weight_matching(&a, &a, 10, 1).unwrap(), TransportPlan::identity(&[6, 5]));
    }

    #[test]
    fn single_hidden_layer_is_solved_exactly() {
        // With one hidden layer the objective is a single LAP.
        let b = Mlp::init(&[3, 6, 2], Activation::Tanh, Init::StandardNormal, 2).unwrap();
        let p = TransportPlan::from_permutations(&[vec![4, 2, 0, 5, 1, 3]]).unwrap();
        let a = apply_plan(&b, &p).unwrap();
        assert_eq!(weight_matching(&a, &b, 5, 0).unwrap(), p);
    }

    #[test]
    fn similarity_matches_objective_difference() {
        // ⟨M_i, P_i⟩ − ⟨M_i, P'_i⟩ equals the change in −c_l2/2.
        let a = Mlp::init(&[2, 4, 4, 1], Activation::Tanh, Init::StandardNormal, 5).unwrap();
        let b = Mlp::init(&[2, 4, 4, 1], Activation::Tanh, Init::StandardNormal, 6).unwrap();
        let base = vec![vec![0, 1, 2, 3], vec![2, 0, 3, 1]];
        let mut alt = base.clone();
        alt[0] = vec![3, 1, 0, 2];
        let m = similarity(&a, &b, &base, 0).unwrap();
        let lhs = assignment_value(&m, &alt[0]) - assignment_value(&m, &base[0]);
        let cost = |p: &[Vec<usize>]| c_l2(&TransportPlan::from_permutations(p).unwrap(), &a, &b).unwrap();
        let rhs = (cost(&base) - cost(&alt)) / 2.0;
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
