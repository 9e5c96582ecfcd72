//! Differentiable tensor ops over the core geometry pipeline.
//!
//! The head model and the rasterizer are implemented in f64 `ndarray` code in
//! the core crate, together with their analytic vector-Jacobian products.
//! This module lifts both into tensor-graph custom ops so encoder/synthesizer
//! networks can backpropagate through
//!
//! ```text
//! flat params -(head_positions)-> vertices -(project_screen)-> screen
//!     -(rasterize_packed)-> rendered mesh image
//! ```
//!
//! Gradient semantics follow the core ops: rasterizer gradients flow through
//! barycentric weights of covered pixels only (no silhouette gradients), and
//! the packed mask/depth channels receive no gradient at all. Projection is
//! expressed in ordinary tensor algebra so camera parameters get gradients
//! from the autodiff graph itself.
//!
//! Both custom ops accept f32 or f64 tensors; training runs in f32 while
//! finite-difference tests use f64.

use std::sync::Arc;

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Layout, Shape, Tensor};
use ndarray::{Array1, Array2, Array3};

use hyface_core::head::{self, HeadModelConfig};
use hyface_core::render::raster;

use crate::error::{Error, Result};

/// Channel layout of [`rasterize_packed`] output: RGB, coverage mask, depth.
pub const PACKED_CHANNELS: usize = 5;

fn cerr(msg: impl Into<String>) -> candle_core::Error {
    candle_core::Error::Msg(msg.into()).bt()
}

/// Read a contiguous CPU storage slice as f64 values.
fn storage_f64(s: &CpuStorage, l: &Layout, what: &str) -> candle_core::Result<Vec<f64>> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| cerr(format!("{what}: input must be contiguous")))?;
    match s {
        CpuStorage::F32(v) => Ok(v[start..end].iter().map(|&x| x as f64).collect()),
        CpuStorage::F64(v) => Ok(v[start..end].to_vec()),
        _ => Err(cerr(format!("{what}: expected f32/f64, got {:?}", s.dtype()))),
    }
}

/// Pack f64 values back into a storage of the requested dtype.
fn storage_from_f64(values: Vec<f64>, dtype: DType) -> candle_core::Result<CpuStorage> {
    match dtype {
        DType::F32 => Ok(CpuStorage::F32(values.into_iter().map(|x| x as f32).collect())),
        DType::F64 => Ok(CpuStorage::F64(values)),
        other => Err(cerr(format!("unsupported dtype {other:?}"))),
    }
}

/// Flatten a tensor to f64 values (any layout).
fn tensor_f64_vec(t: &Tensor) -> candle_core::Result<Vec<f64>> {
    t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()
}

// ---------------------------------------------------------------------------
// Head model op
// ---------------------------------------------------------------------------

/// Custom op evaluating the head model for a batch of flat parameter rows.
struct HeadPositionsOp {
    config: Arc<HeadModelConfig>,
}

impl CustomOp1 for HeadPositionsOp {
    fn name(&self) -> &'static str {
        "head-positions"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims();
        let p = self.config.flat_param_len();
        if dims.len() != 2 || dims[1] != p {
            return Err(cerr(format!(
                "head-positions: expected (batch, {p}) parameters, got {dims:?}"
            )));
        }
        let batch = dims[0];
        let nv = self.config.n_vertices();
        let flat = storage_f64(storage, layout, "head-positions")?;
        let mut out = Vec::with_capacity(batch * nv * 3);
        for b in 0..batch {
            let row = &flat[b * p..(b + 1) * p];
            let positions = head::evaluate_flat(&self.config, row)
                .map_err(|e| cerr(format!("head-positions: {e}")))?;
            out.extend(positions.iter());
        }
        let storage = storage_from_f64(out, storage.dtype())?;
        Ok((storage, Shape::from_dims(&[batch, nv, 3])))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let (batch, p) = arg.dims2()?;
        let nv = self.config.n_vertices();
        let flat = tensor_f64_vec(arg)?;
        let grads = tensor_f64_vec(grad_res)?;
        let mut out = Vec::with_capacity(batch * p);
        for b in 0..batch {
            let row = &flat[b * p..(b + 1) * p];
            let grad_positions =
                Array2::from_shape_vec((nv, 3), grads[b * nv * 3..(b + 1) * nv * 3].to_vec())
                    .map_err(|e| cerr(format!("head-positions bwd: {e}")))?;
            let g = head::evaluate_flat_vjp(&self.config, row, &grad_positions)
                .map_err(|e| cerr(format!("head-positions bwd: {e}")))?;
            out.extend(g);
        }
        let grad = Tensor::from_vec(out, (batch, p), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(grad))
    }
}

/// Evaluate the head model for a batch of flat parameter rows
/// `[beta | psi | theta_j | eye_b | theta_h]` of shape `(batch, p)`,
/// returning rotated model-space vertex positions `(batch, n_vertices, 3)`.
/// Differentiable w.r.t. every parameter via the analytic core VJP.
pub fn head_positions(config: &Arc<HeadModelConfig>, flat: &Tensor) -> Result<Tensor> {
    let op = HeadPositionsOp {
        config: Arc::clone(config),
    };
    Ok(flat.contiguous()?.apply_op1(op)?)
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Weak-perspective projection of `(batch, n, 3)` positions with per-sample
/// camera `(batch, 3)` rows `(s, t_x, t_y)`: xy components become
/// `s * xy + t`, the z component is passed through as rasterization depth.
/// Plain tensor algebra — camera gradients come from autodiff.
pub fn project_screen(positions: &Tensor, cam: &Tensor) -> Result<Tensor> {
    let (batch, _n, three) = positions.dims3()?;
    if three != 3 {
        return Err(Error::Validation(format!(
            "positions must be (batch, n, 3), got {:?}",
            positions.dims()
        )));
    }
    check_cam_shape(cam, batch)?;
    let xy = positions.narrow(2, 0, 2)?;
    let z = positions.narrow(2, 2, 1)?;
    let s = cam.narrow(1, 0, 1)?.reshape((batch, 1, 1))?;
    let t = cam.narrow(1, 1, 2)?.reshape((batch, 1, 2))?;
    let projected = xy.broadcast_mul(&s)?.broadcast_add(&t)?;
    Ok(Tensor::cat(&[&projected, &z], 2)?)
}

/// Project `(batch, n, 3)` landmark positions to 2D: `s * xy + t`.
pub fn project_points(points: &Tensor, cam: &Tensor) -> Result<Tensor> {
    let (batch, _n, _three) = points.dims3()?;
    check_cam_shape(cam, batch)?;
    let xy = points.narrow(2, 0, 2)?;
    let s = cam.narrow(1, 0, 1)?.reshape((batch, 1, 1))?;
    let t = cam.narrow(1, 1, 2)?.reshape((batch, 1, 2))?;
    Ok(xy.broadcast_mul(&s)?.broadcast_add(&t)?)
}

fn check_cam_shape(cam: &Tensor, batch: usize) -> Result<()> {
    if cam.dims() != [batch, 3] {
        return Err(Error::Validation(format!(
            "camera must be ({batch}, 3), got {:?}",
            cam.dims()
        )));
    }
    Ok(())
}

/// The rig's landmark selection as a constant `(203, n_vertices)` matrix
/// tensor, so `landmarks = L @ positions` stays inside the autodiff graph.
pub fn landmark_matrix_tensor(config: &HeadModelConfig, dtype: DType) -> Result<Tensor> {
    let m = head::landmark_matrix(config)?;
    let (rows, cols) = m.dim();
    let t = Tensor::from_vec(m.into_raw_vec_and_offset().0, (rows, cols), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

// ---------------------------------------------------------------------------
// Rasterizer op
// ---------------------------------------------------------------------------

/// Custom op rasterizing screen-space geometry with per-vertex colors into a
/// packed `(batch, 5, h, w)` image: RGB, coverage mask, depth.
struct RasterizeOp {
    triangles: Arc<Vec<[usize; 3]>>,
    h: usize,
    w: usize,
}

impl RasterizeOp {
    fn unpack_dims(&self, l1: &Layout, l2: &Layout) -> candle_core::Result<(usize, usize)> {
        let d1 = l1.shape().dims();
        let d2 = l2.shape().dims();
        if d1.len() != 3 || d1[2] != 3 {
            return Err(cerr(format!(
                "rasterize: screen must be (batch, v, 3), got {d1:?}"
            )));
        }
        if d2 != d1 {
            return Err(cerr(format!(
                "rasterize: colors must match screen shape {d1:?}, got {d2:?}"
            )));
        }
        Ok((d1[0], d1[1]))
    }
}

impl CustomOp2 for RasterizeOp {
    fn name(&self) -> &'static str {
        "rasterize-packed"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (batch, nv) = self.unpack_dims(l1, l2)?;
        let screen = storage_f64(s1, l1, "rasterize screen")?;
        let colors = storage_f64(s2, l2, "rasterize colors")?;
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0f64; batch * PACKED_CHANNELS * h * w];
        for b in 0..batch {
            let sc = Array2::from_shape_vec((nv, 3), screen[b * nv * 3..(b + 1) * nv * 3].to_vec())
                .map_err(|e| cerr(format!("rasterize: {e}")))?;
            let co = Array2::from_shape_vec((nv, 3), colors[b * nv * 3..(b + 1) * nv * 3].to_vec())
                .map_err(|e| cerr(format!("rasterize: {e}")))?;
            let r = raster::rasterize_screen(&sc, &co, &self.triangles, h, w)
                .map_err(|e| cerr(format!("rasterize: {e}")))?;
            let base = b * PACKED_CHANNELS * h * w;
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out[base + c * h * w + y * w + x] = r.color[[y, x, c]] as f64;
                    }
                    out[base + 3 * h * w + y * w + x] = r.mask[[y, x]] as f64;
                    out[base + 4 * h * w + y * w + x] = r.depth[[y, x]] as f64;
                }
            }
        }
        let storage = storage_from_f64(out, s1.dtype())?;
        Ok((storage, Shape::from_dims(&[batch, PACKED_CHANNELS, h, w])))
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (batch, nv, _) = arg1.dims3()?;
        let (h, w) = (self.h, self.w);
        let screen = tensor_f64_vec(arg1)?;
        let colors = tensor_f64_vec(arg2)?;
        let grads = tensor_f64_vec(grad_res)?;
        let mut g_screen: Vec<f64> = Vec::with_capacity(batch * nv * 3);
        let mut g_colors: Vec<f64> = Vec::with_capacity(batch * nv * 3);
        for b in 0..batch {
            let sc = Array2::from_shape_vec((nv, 3), screen[b * nv * 3..(b + 1) * nv * 3].to_vec())
                .map_err(|e| cerr(format!("rasterize bwd: {e}")))?;
            let co = Array2::from_shape_vec((nv, 3), colors[b * nv * 3..(b + 1) * nv * 3].to_vec())
                .map_err(|e| cerr(format!("rasterize bwd: {e}")))?;
            // Only the RGB channels carry gradient; coverage and depth are
            // treated as non-differentiable (no silhouette gradients).
            let base = b * PACKED_CHANNELS * h * w;
            let mut grad_color = Array3::zeros((h, w, 3));
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        grad_color[[y, x, c]] = grads[base + c * h * w + y * w + x];
                    }
                }
            }
            let (gs, gc) = raster::rasterize_vjp(&sc, &co, &self.triangles, h, w, &grad_color)
                .map_err(|e| cerr(format!("rasterize bwd: {e}")))?;
            g_screen.extend(gs.iter());
            g_colors.extend(gc.iter());
        }
        let gs = Tensor::from_vec(g_screen, (batch, nv, 3), arg1.device())?.to_dtype(arg1.dtype())?;
        let gc = Tensor::from_vec(g_colors, (batch, nv, 3), arg2.device())?.to_dtype(arg2.dtype())?;
        Ok((Some(gs), Some(gc)))
    }
}

/// Rasterize a batch of screen-space vertex sets (`(batch, v, 3)`: NDC x/y
/// plus depth) with per-vertex colors into packed `(batch, 5, h, w)` frames:
/// channels `0..3` RGB, `3` coverage mask, `4` depth. RGB is differentiable
/// w.r.t. screen positions (covered pixels) and colors; mask and depth are
/// not.
pub fn rasterize_packed(
    screen: &Tensor,
    colors: &Tensor,
    triangles: &Arc<Vec<[usize; 3]>>,
    h: usize,
    w: usize,
) -> Result<Tensor> {
    let op = RasterizeOp {
        triangles: Arc::clone(triangles),
        h,
        w,
    };
    Ok(screen.contiguous()?.apply_op2(&colors.contiguous()?, op)?)
}

// ---------------------------------------------------------------------------
// ndarray <-> tensor conversions
// ---------------------------------------------------------------------------

/// `(h, w, 3)` f32 image → `(3, h, w)` channel-first tensor.
pub fn image_to_chw(img: &Array3<f32>) -> Result<Tensor> {
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Validation(format!(
            "image must be (h, w, 3), got {:?}",
            img.dim()
        )));
    }
    let mut out = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out[ch * h * w + y * w + x] = img[[y, x, ch]];
            }
        }
    }
    Ok(Tensor::from_vec(out, (3, h, w), &candle_core::Device::Cpu)?)
}

/// `(3, h, w)` tensor → `(h, w, 3)` f32 image array.
pub fn chw_to_image(t: &Tensor) -> Result<Array3<f32>> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Validation(format!(
            "tensor must be (3, h, w), got {:?}",
            t.dims()
        )));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut img = Array3::zeros((h, w, 3));
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                img[[y, x, ch]] = flat[ch * h * w + y * w + x];
            }
        }
    }
    Ok(img)
}

/// Stack `(h, w, 3)` images into a `(batch, 3, h, w)` tensor.
pub fn images_to_batch(images: &[&Array3<f32>]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Validation("image batch must be non-empty".into()));
    }
    let tensors = images
        .iter()
        .map(|img| image_to_chw(img))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&tensors, 0)?)
}

/// `(n, m)` f64 array → tensor of the given dtype.
pub fn array2_to_tensor(arr: &Array2<f64>, dtype: DType) -> Result<Tensor> {
    let (n, m) = arr.dim();
    let owned: Vec<f64> = arr.iter().copied().collect();
    let t = Tensor::from_vec(owned, (n, m), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Rank-2 tensor → `(n, m)` f64 array.
pub fn tensor_to_array2(t: &Tensor) -> Result<Array2<f64>> {
    let (n, m) = t.dims2()?;
    let flat = tensor_f64_vec(t).map_err(candle_core::Error::from)?;
    Ok(Array2::from_shape_vec((n, m), flat)
        .expect("flattened length matches the tensor's own shape"))
}

/// Rank-1 tensor → f64 array.
pub fn tensor_to_array1(t: &Tensor) -> Result<Array1<f64>> {
    let n = t.dims1()?;
    let flat = tensor_f64_vec(t).map_err(candle_core::Error::from)?;
    debug_assert_eq!(flat.len(), n);
    Ok(Array1::from_vec(flat))
}
