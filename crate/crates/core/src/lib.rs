pub mod backbone;
pub mod csem;
pub mod data;
pub mod decompose;
pub mod diffcore;
pub mod eval;
pub mod par;
pub mod trainer;
