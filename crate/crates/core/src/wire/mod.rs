//! Text and stream encodings of protocol messages.

pub mod frame;
pub mod qr;

pub use frame::{read_frame, write_frame};
pub use qr::{decode_qr, decode_qr_unverified, encode_qr, try_encode_qr, QrError, QrPayload};
