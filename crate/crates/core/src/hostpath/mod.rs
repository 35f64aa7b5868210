//! Slow-path delivery to the host: the tagged ring and interrupt coalescing.

mod irq;
mod ring;

pub use irq::{irq_decision, IrqConfig, IrqController, IrqDecision, IrqStep};
pub use ring::{
    decode_entries, decode_tag, encode_entry, encode_tag, entry_size, DmaMode, Placement, Ring, RingError,
    FLAG_VALID, TAG_BYTES,
};
