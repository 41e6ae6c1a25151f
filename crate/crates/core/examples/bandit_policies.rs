//! Pulls each policy against a fixed Bernoulli environment and prints the
//! posterior it ends with.
//!
//! cargo run --example bandit_policies

use cocreate::bandit::{BanditState, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let payout = [0.8, 0.4, 0.2];
    let policies = [
        Policy::Thompson,
        Policy::Ucb1,
        Policy::epsilon_greedy(0.2).expect("valid epsilon"),
        Policy::UniformRandom,
    ];
    for policy in policies {
        let mut bandit = BanditState::new(payout.len(), policy, 11).expect("valid bandit");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let arm = bandit.select_arm(&mut rng).expect("arm");
            let reward = if rng.random_bool(payout[arm]) { 1.0 } else { 0.0 };
            bandit.update(arm, reward).expect("reward in range");
        }
        println!("{policy}");
        for (i, a) in bandit.arms().iter().enumerate() {
            println!(
                "  arm {i}: pulls {:3}  mean {:.3}  Beta({:.0}, {:.0})",
                a.pulls,
                a.mean(),
                a.alpha,
                a.beta
            );
        }
    }
}
