pub mod flowplan;
pub mod linalg;
pub mod topology;
pub mod probesim;
pub mod ldvsolve;
pub mod rulegen;
pub mod pipeline;
pub mod plot;
