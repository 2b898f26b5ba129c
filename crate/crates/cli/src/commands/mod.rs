pub mod backends;
pub mod curate;
pub mod dataset;
pub mod eval;
pub mod refine;
pub mod robustness;

use crate::context::Ctx;
use crate::{Cli, Command};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let Cli { global, command } = cli;
    match command {
        Command::Dataset(cmd) => {
            let ctx = Ctx::new(global, &format!("dataset {}", cmd.name()))?;
            dataset::run(&ctx, cmd)
        }
        Command::Eval(cmd) => {
            let ctx = Ctx::new(global, &format!("eval {}", cmd.name()))?;
            eval::run(&ctx, cmd)
        }
        Command::Refine(cmd) => {
            let ctx = Ctx::new(global, &format!("refine {}", cmd.name()))?;
            refine::run(&ctx, cmd)
        }
        Command::Robustness(args) => robustness::run(&Ctx::new(global, "robustness")?, args),
        Command::Curate(cmd) => {
            let ctx = Ctx::new(global, &format!("curate {}", cmd.name()))?;
            curate::run(&ctx, cmd)
        }
        Command::Backends(cmd) => {
            let ctx = Ctx::new(global, &format!("backends {}", cmd.name()))?;
            backends::run(&ctx, cmd)
        }
    }
}
