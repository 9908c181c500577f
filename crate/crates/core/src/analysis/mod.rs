//! Control-property analyses for composed systems: equilibrium solving,
//! local stability, quadratic Lyapunov certificates, controllability rank,
//! sensitivity sweeps and trajectory simulation.

mod controllability;
mod equilibrium;
mod jacobian;
mod lyapunov;
mod simulate;
mod stability;
mod sweep;

pub use controllability::{controllability_rank, ControllabilityReport};
pub use equilibrium::{find_equilibrium, EquilibriumOptions, EquilibriumResult};
pub use jacobian::{jacobian_fd, jacobian_states, FdOptions, LinearizedSystem};
pub use lyapunov::{
    lyapunov_quadratic, sampled_decrease, LyapunovSolve, SampledDecrease, SamplingOptions,
};
pub use simulate::{simulate, DivergenceInfo, InputSeq, Trajectory};
pub use stability::{
    eigen_report, max_paired_distance, stability_local, Complex64, StabilityClass,
    StabilityOptions, StabilityReport,
};
pub use sweep::{gamma_sweep, linspace, SweepOptions, SweepRow, SweepTable};
