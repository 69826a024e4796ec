//! gradcheck: finite-difference audit, exit 0 iff every op passes.

use warpflow_core::gradcheck::{run_gradcheck, Op};
use warpflow_core::Error;

use crate::{CmdError, CmdResult};

fn parse_op(name: &str) -> Result<Op, Error> {
    Op::from_name(name).ok_or_else(|| {
        let names: Vec<_> = Op::ALL.iter().map(|o| o.name()).collect();
        Error::InvalidConfig(format!("unknown op {name:?}; known: {}", names.join(", ")))
    })
}

pub fn run(trials: usize, seed: u64, op: Option<&str>, corrupt: Option<&str>) -> CmdResult {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()).into());
    }
    let selected = op.map(parse_op).transpose()?.map(|o| vec![o]);
    let corrupt_op = corrupt.map(parse_op).transpose()?;
    let report = run_gradcheck(seed, trials, selected.as_deref(), corrupt_op);
    print!("{}", report.to_text());
    if report.pass {
        Ok(())
    } else {
        Err(CmdError::VerificationFailed(
            "gradient audit exceeded the 1e-4 relative-error budget".into(),
        ))
    }
}
