//! Real bitstreams: quantised tables, the range coder and the image container.

pub mod bitstream;
pub mod cdf;
pub mod image;
pub mod range;

pub use bitstream::{arch_hash, Bitstream, HEADER_LEN};
pub use cdf::CdfTable;
pub use image::{decode_image, decode_latents, encode_image, quantized_model_bits};
pub use range::{decode_checked, decode_symbols, encode_checked, encode_symbols};
