//! Coordinate conventions used throughout the pipeline.
//!
//! Three 2D frames appear in the code:
//!
//! * **NDC** — normalized device coordinates in `[-1, 1]`, `+x` right,
//!   `+y` up. Projected vertices and screen-space rasterizer math live here.
//! * **unit** — normalized image coordinates in `[0, 1]`, `(0, 0)` at the
//!   top-left. Landmark files store unit coordinates.
//! * **pixel** — continuous pixel coordinates where integer values are
//!   pixel *centers*; `(0, 0)` is the center of the top-left pixel.
//!
//! Depth is carried separately: larger `z` is nearer to the camera.

/// NDC x/y -> continuous pixel coordinates for a `width` x `height` image.
///
/// `x = -1` maps to the left edge (`px = -0.5`), `x = +1` to the right edge
/// (`px = width - 0.5`); the y axis flips so `y = +1` is the top edge.
pub fn ndc_to_pixel(x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
    let px = (x + 1.0) * 0.5 * width as f64 - 0.5;
    let py = (1.0 - y) * 0.5 * height as f64 - 0.5;
    (px, py)
}

/// Inverse of [`ndc_to_pixel`]: pixel-center coordinates -> NDC.
pub fn pixel_to_ndc(px: f64, py: f64, width: usize, height: usize) -> (f64, f64) {
    let x = (px + 0.5) / width as f64 * 2.0 - 1.0;
    let y = 1.0 - (py + 0.5) / height as f64 * 2.0;
    (x, y)
}

/// NDC -> unit image coordinates (`[0, 1]`, top-left origin).
pub fn ndc_to_unit(x: f64, y: f64) -> (f64, f64) {
    ((x + 1.0) * 0.5, (1.0 - y) * 0.5)
}

/// Unit image coordinates -> NDC.
pub fn unit_to_ndc(u: f64, v: f64) -> (f64, f64) {
    (u * 2.0 - 1.0, 1.0 - v * 2.0)
}

/// Unit coordinates -> continuous pixel coordinates.
pub fn unit_to_pixel(u: f64, v: f64, width: usize, height: usize) -> (f64, f64) {
    (u * width as f64 - 0.5, v * height as f64 - 0.5)
}
