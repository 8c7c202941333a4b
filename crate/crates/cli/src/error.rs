//! Exit-code classification of library errors.
//!
//! 2: bad input, 3: observations contradict the model, 4: an exact oracle
//! would be too large, 1: anything else (I/O failures on output).

use actinf_core::efe::EfeError;
use actinf_core::envsim::EnvError;
use actinf_core::io::IoError;
use actinf_core::planning::PlanningError;
use actinf_core::{EngineError, HmmError, LearningError};

pub const INPUT: u8 = 2;
pub const CONTRADICTION: u8 = 3;
pub const SCALE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(INPUT, message)
    }
}

fn hmm_code(e: &HmmError) -> u8 {
    match e {
        HmmError::TooLarge { .. } => SCALE,
        HmmError::ZeroEvidence => CONTRADICTION,
        _ => INPUT,
    }
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::ModelContradiction { .. } => CONTRADICTION,
        EngineError::Hmm(h) => hmm_code(h),
        _ => INPUT,
    }
}

fn planning_code(e: &PlanningError) -> u8 {
    match e {
        PlanningError::Engine(x) => engine_code(x),
        PlanningError::Hmm(x) => hmm_code(x),
        PlanningError::AllPoliciesInfeasible => CONTRADICTION,
        _ => INPUT,
    }
}

fn learning_code(e: &LearningError) -> u8 {
    match e {
        LearningError::Engine(x) => engine_code(x),
        LearningError::Hmm(x) => hmm_code(x),
        _ => INPUT,
    }
}

fn io_code(e: &IoError) -> u8 {
    match e {
        IoError::Hmm(x) => hmm_code(x),
        IoError::Planning(x) => planning_code(x),
        IoError::Learning(x) => learning_code(x),
        _ => INPUT,
    }
}

macro_rules! classify {
    ($ty:ty, $f:expr) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::new($f(&e), e.to_string())
            }
        }
    };
}

classify!(HmmError, hmm_code);
classify!(EngineError, engine_code);
classify!(PlanningError, planning_code);
classify!(LearningError, learning_code);
classify!(IoError, io_code);
classify!(EfeError, |e: &EfeError| match e {
    EfeError::TooLarge { .. } => SCALE,
    _ => INPUT,
});
classify!(EnvError, |e: &EnvError| match e {
    EnvError::Planning(x) => planning_code(x),
    EnvError::Engine(x) => engine_code(x),
    EnvError::Hmm(x) => hmm_code(x),
    EnvError::Io(x) => io_code(x),
    _ => INPUT,
});
