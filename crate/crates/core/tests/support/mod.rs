pub mod gradcheck;
pub mod policy_sweep;
pub mod repr_sweep;
