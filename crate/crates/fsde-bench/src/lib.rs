pub use fsde_core as core;
