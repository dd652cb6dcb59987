//! Scalar wave optics: fields, angular-spectrum propagation and hologram transforms.

mod fft;
mod field;
mod propagate;
pub mod raw;
mod transfer;

pub use fft::Fft2;
pub use field::{ComplexField, PhaseHologramSet};
pub use propagate::{
    apply_linear_grating, phase_to_field, propagate, propagate_with, reconstruct_intensity,
    phasor,
    sum_sorted,
};
pub use transfer::{fftfreq, make_transfer_function, TransferFunction};
