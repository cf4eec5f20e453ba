//! Tiny PNG stand-ins for rendered pages.

/// An 8x8 grayscale PNG whose pixels derive from `text`, with the text
/// itself in an iTXt chunk. Distinct texts give distinct bytes.
pub fn text_page_png(text: &str) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let mut pixels = Vec::with_capacity(64);
    pixels.extend_from_slice(&Sha256::digest(text.as_bytes()));
    pixels.extend_from_slice(&Sha256::digest(pixels.as_slice()));
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, 8, 8);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        encoder
            .add_itxt_chunk("pairminer:page".to_string(), text.to_string())
            .expect("valid iTXt keyword");
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(&pixels).expect("in-memory PNG data");
    }
    out
}

/// Text stored by [`text_page_png`], if present.
pub fn page_text(bytes: &[u8]) -> Option<String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    reader
        .info()
        .utf8_text
        .iter()
        .find(|t| t.keyword == "pairminer:page")
        .and_then(|t| t.get_text().ok())
}
