//! Command-line front end: `train`, `evaluate`, `stability-demo`, `verify-bounds` and `transfer`.
//!
//! Every command writes into `--out-dir` (or `MADGNN_OUT_DIR`) and records a
//! `manifest.json` listing the files it produced. CSV schemas:
//!
//! | file | columns |
//! |---|---|
//! | `norms_*.csv` | `n_agents, run, t, state_norm` |
//! | `curves_*.csv` | `iteration, seed, mean_reward, std_reward, policy_loss, value_loss, entropy, wall_s` |
//! | `transfer*.csv` | `n_agents, episode, reward` |
//! | `bounds_*.csv` | `trial, bound, measured, margin` |

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use error::{CliError, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

use args::Command;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        // A pool that already exists (tests calling `run` twice) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a, out),
        Command::Evaluate(a) => commands::cmd_evaluate(a, out),
        Command::StabilityDemo(a) => commands::cmd_stability(a, out),
        Command::VerifyBounds(a) => commands::cmd_verify(a, out),
        Command::Transfer(a) => commands::cmd_transfer(a, out),
    }
}
