mod bench;
mod learn;
mod pipeline;
mod segment;

use crate::args::Command;
use crate::error::CliResult;

pub fn run(command: Command, jobs: usize) -> CliResult<()> {
    match command {
        Command::Convert(a) => pipeline::convert(&a, jobs),
        Command::Candidates(a) => pipeline::candidates(&a, jobs),
        Command::Describe(a) => pipeline::describe(&a, jobs),
        Command::Detect(a) => pipeline::detect(&a, jobs),
        Command::Train(a) => learn::train(&a, jobs),
        Command::Probe(a) => learn::probe(&a, jobs),
        Command::Eval(a) => bench::eval(&a, jobs),
        Command::EvalSem(a) => bench::eval_sem(&a, jobs),
        Command::EvalIou(a) => bench::eval_iou(&a, jobs),
        Command::EvalProposals(a) => bench::eval_proposals(&a, jobs),
        Command::Spectral(a) => segment::spectral(&a, jobs),
        Command::Label(a) => segment::label(&a, jobs),
    }
}
