//! WebAssembly bindings for the browser demo in `www/`.

use std::cell::RefCell;

use featpose::estimator::PoseMatcher;
use featpose::registration::{register, warp};
use featpose::synth::{make_template, TemplateSpec};
use featpose::testutil::structured;
use featpose::{build_pose_bank, render, CameraPose, FeatureField, FeatureMap, Intrinsics, PoseBank, PoseGrid, RegistrationConfig, RenderConfig, Similarity2D};
use wasm_bindgen::prelude::*;

const BANK_SIZE: usize = 64;

thread_local! {
    static TEMPLATE: FeatureField = make_template(&TemplateSpec { dims: [24; 3], ..TemplateSpec::default() }).expect("default template is valid");
    static BANK: RefCell<Option<PoseBank>> = const { RefCell::new(None) };
}

fn err(e: featpose::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn intrinsics(size: usize) -> Result<Intrinsics, JsError> {
    Intrinsics::new(45f64.to_radians(), size, size).map_err(err)
}

fn to_rgba(map: &FeatureMap) -> Vec<u8> {
    let (lo, hi) = map.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6);
    let c = map.channels();
    map.data()
        .chunks_exact(c)
        .flat_map(|px| {
            let q = |v: f32| (((v - lo) / span) * 255.0).round() as u8;
            if c >= 3 {
                [q(px[0]), q(px[1]), q(px[2]), 255]
            } else {
                [q(px[0]), q(px[0]), q(px[0]), 255]
            }
        })
        .collect()
}

fn query_pose(theta_deg: f64, phi_deg: f64, gamma_deg: f64, scale: f64) -> Result<CameraPose, JsError> {
    CameraPose::new(theta_deg.to_radians(), phi_deg.to_radians(), gamma_deg.to_radians(), 3.0 / scale).map_err(err)
}

/// RGBA pixels of the template's feature map seen from the given pose.
#[wasm_bindgen]
pub fn render_view(theta_deg: f64, phi_deg: f64, gamma_deg: f64, scale: f64, size: usize) -> Result<Vec<u8>, JsError> {
    let pose = query_pose(theta_deg, phi_deg, gamma_deg, scale)?;
    let intr = intrinsics(size)?;
    let out = TEMPLATE.with(|f| render(f, &pose, &intr, &RenderConfig::default())).map_err(err)?;
    Ok(to_rgba(&out.feature_map))
}

/// Number of bins in the demo bank (36 azimuth x 3 elevation).
#[wasm_bindgen]
pub fn bank_len() -> usize {
    PoseGrid::narrow(3.0).len()
}

/// Estimates the pose of a rendered query. Returns
/// `[theta_deg, phi_deg, gamma_deg, r, p_0, .., p_{n-1}]` with the pose PDF in bank order.
#[wasm_bindgen]
pub fn estimate_pose(theta_deg: f64, phi_deg: f64, gamma_deg: f64, scale: f64, tau: f64) -> Result<Vec<f64>, JsError> {
    let intr = intrinsics(BANK_SIZE)?;
    let pose = query_pose(theta_deg, phi_deg, gamma_deg, scale)?;
    let query = TEMPLATE.with(|f| render(f, &pose, &intr, &RenderConfig::default())).map_err(err)?.feature_map;
    BANK.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.is_none() {
            let bank = TEMPLATE.with(|f| build_pose_bank(f, &PoseGrid::narrow(3.0), &intr, &RenderConfig::default())).map_err(err)?;
            *slot = Some(bank);
        }
        let bank = slot.as_ref().expect("bank was just built");
        let matcher = PoseMatcher::new(bank, &RegistrationConfig::default()).map_err(err)?;
        let (est, pdf, _) = matcher.estimate_map(&query, tau).map_err(err)?;
        let mut out = vec![est.theta.to_degrees(), est.phi.to_degrees(), est.gamma.to_degrees(), est.r];
        out.extend(pdf.probs);
        Ok(out)
    })
}

/// Warps a synthetic image by `(scale, rotation)` and recovers the similarity.
/// Returns `[scale, rotation_deg, confidence]` followed by the RGBA pixels of
/// the source and the warped image.
#[wasm_bindgen]
pub fn registration_demo(seed: u64, scale: f64, rotation_deg: f64, size: usize) -> Result<Vec<f64>, JsError> {
    if size < 16 {
        return Err(JsError::new("size must be >= 16"));
    }
    let src = structured(size, size, seed);
    let dst = warp(&src, &Similarity2D::new(scale, rotation_deg.to_radians()));
    let sim = register(&src, &dst, &RegistrationConfig::default()).map_err(err)?;
    let mut out = vec![sim.scale, sim.rotation.to_degrees(), sim.confidence];
    out.extend(to_rgba(&src).into_iter().map(f64::from));
    out.extend(to_rgba(&dst).into_iter().map(f64::from));
    Ok(out)
}
