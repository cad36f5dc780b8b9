//! WebAssembly bindings for the browser demo in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

/// Sampled field handed to the page for drawing.
#[wasm_bindgen]
pub struct Plot(demo::Picture);

#[wasm_bindgen]
impl Plot {
    /// `x, y` pairs, three vertices per triangle.
    #[wasm_bindgen(getter)]
    pub fn coords(&self) -> Vec<f64> {
        self.0.coords.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.0.summary.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f64 {
        self.0.range().0
    }

    #[wasm_bindgen(getter)]
    pub fn max(&self) -> f64 {
        self.0.range().1
    }
}

#[wasm_bindgen]
pub fn solve(case: &str, degree: usize, n: usize, method: &str, averaging: &str, samples: usize) -> Result<Plot, JsError> {
    demo::solve_picture(case, degree, n, method, averaging, samples).map(Plot).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn smooth_basis(
    degree: usize,
    n: usize,
    averaging: &str,
    entity: &str,
    index: usize,
    component: usize,
    samples: usize,
) -> Result<Plot, JsError> {
    demo::smoother_picture(degree, n, averaging, entity, index, component, samples)
        .map(Plot)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn convergence(
    case: &str,
    degree: usize,
    method: &str,
    averaging: &str,
    base: usize,
    levels: usize,
) -> Result<String, JsError> {
    demo::convergence_csv(case, degree, method, averaging, base, levels).map_err(|e| JsError::new(&e))
}
