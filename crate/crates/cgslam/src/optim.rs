//! First-order optimizer for map attributes: diagonal-moment adaptive steps
//! with per-group base rates, and moment bookkeeping that follows primitive
//! insertion and pruning so state never misaligns with the map.

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::render::GradientSet;
use crate::scene::GaussianMap;

/// Moment decay factors and the denominator floor of the adaptive rule.
#[derive(Debug, Clone)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0,1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("adam eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Base step size per attribute group. Raw parameters differ by orders of
/// magnitude (meters against logits), so a shared rate cannot fit them all.
#[derive(Debug, Clone)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub mask: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1e-4,
            rotation: 1e-3,
            scale: 2e-3,
            opacity: 2.5e-2,
            color: 2.5e-3,
            mask: 5e-2,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.rotation,
            self.scale,
            self.opacity,
            self.color,
            self.mask,
        ];
        if all.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

fn keep<T: Copy>(data: &mut Vec<T>, survivors: &[usize]) {
    let kept: Vec<T> = survivors.iter().map(|&i| data[i]).collect();
    *data = kept;
}

/// Adaptive gradient descent over every primitive attribute. Moment vectors
/// stay index-aligned with the map through `extend` (new primitives start
/// with zero moments) and `compact` (surviving moments kept in survivor
/// order, matching `GaussianMap::retain_indices`).
#[derive(Debug, Clone)]
pub struct MapOptimizer {
    pub rates: LearningRates,
    pub params: AdamParams,
    steps: u64,
    m_position: Vec<Vector3<f64>>,
    v_position: Vec<Vector3<f64>>,
    m_rotation: Vec<Vector4<f64>>,
    v_rotation: Vec<Vector4<f64>>,
    m_scale: Vec<Vector3<f64>>,
    v_scale: Vec<Vector3<f64>>,
    m_opacity: Vec<f64>,
    v_opacity: Vec<f64>,
    m_color: Vec<Vector3<f64>>,
    v_color: Vec<Vector3<f64>>,
    m_mask: Vec<f64>,
    v_mask: Vec<f64>,
}

impl MapOptimizer {
    pub fn new(n: usize, rates: LearningRates, params: AdamParams) -> Self {
        MapOptimizer {
            rates,
            params,
            steps: 0,
            m_position: vec![Vector3::zeros(); n],
            v_position: vec![Vector3::zeros(); n],
            m_rotation: vec![Vector4::zeros(); n],
            v_rotation: vec![Vector4::zeros(); n],
            m_scale: vec![Vector3::zeros(); n],
            v_scale: vec![Vector3::zeros(); n],
            m_opacity: vec![0.0; n],
            v_opacity: vec![0.0; n],
            m_color: vec![Vector3::zeros(); n],
            v_color: vec![Vector3::zeros(); n],
            m_mask: vec![0.0; n],
            v_mask: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_position.is_empty()
    }

    /// Append zero-moment slots for `added` newly inserted primitives.
    pub fn extend(&mut self, added: usize) {
        self.m_position.extend(vec![Vector3::zeros(); added]);
        self.v_position.extend(vec![Vector3::zeros(); added]);
        self.m_rotation.extend(vec![Vector4::zeros(); added]);
        self.v_rotation.extend(vec![Vector4::zeros(); added]);
        self.m_scale.extend(vec![Vector3::zeros(); added]);
        self.v_scale.extend(vec![Vector3::zeros(); added]);
        self.m_opacity.extend(vec![0.0; added]);
        self.v_opacity.extend(vec![0.0; added]);
        self.m_color.extend(vec![Vector3::zeros(); added]);
        self.v_color.extend(vec![Vector3::zeros(); added]);
        self.m_mask.extend(vec![0.0; added]);
        self.v_mask.extend(vec![0.0; added]);
    }

    /// Keep the moments of the listed primitives, in order. `survivors` must
    /// be strictly increasing and in bounds, as returned by pruning.
    pub fn compact(&mut self, survivors: &[usize]) {
        keep(&mut self.m_position, survivors);
        keep(&mut self.v_position, survivors);
        keep(&mut self.m_rotation, survivors);
        keep(&mut self.v_rotation, survivors);
        keep(&mut self.m_scale, survivors);
        keep(&mut self.v_scale, survivors);
        keep(&mut self.m_opacity, survivors);
        keep(&mut self.v_opacity, survivors);
        keep(&mut self.m_color, survivors);
        keep(&mut self.v_color, survivors);
        keep(&mut self.m_mask, survivors);
        keep(&mut self.v_mask, survivors);
    }

    /// One adaptive step on every attribute of every primitive. The pose
    /// entry of `grads` is ignored; poses are not map attributes.
    pub fn step(&mut self, map: &mut GaussianMap, grads: &GradientSet) -> Result<()> {
        let n = self.len();
        if map.len() != n || grads.d_position.len() != n {
            return Err(Error::InvalidParameter(format!(
                "optimizer holds {n} primitives, map {} and gradients {}",
                map.len(),
                grads.d_position.len()
            )));
        }
        self.steps += 1;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let eps = self.params.eps;
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);

        let scalar = |m: &mut f64, v: &mut f64, g: f64, lr: f64, x: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        };

        for i in 0..n {
            let prim = &mut map.primitives[i];
            vec_step(
                &mut self.m_position[i],
                &mut self.v_position[i],
                &grads.d_position[i],
                self.rates.position,
                &mut prim.position,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            vec_step(
                &mut self.m_rotation[i],
                &mut self.v_rotation[i],
                &grads.d_rotation_raw[i],
                self.rates.rotation,
                &mut prim.rotation_raw,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            vec_step(
                &mut self.m_scale[i],
                &mut self.v_scale[i],
                &grads.d_scale_raw[i],
                self.rates.scale,
                &mut prim.scale_raw,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            scalar(
                &mut self.m_opacity[i],
                &mut self.v_opacity[i],
                grads.d_opacity_raw[i],
                self.rates.opacity,
                &mut prim.opacity_raw,
            );
            vec_step(
                &mut self.m_color[i],
                &mut self.v_color[i],
                &grads.d_color[i],
                self.rates.color,
                &mut prim.color,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            scalar(
                &mut self.m_mask[i],
                &mut self.v_mask[i],
                grads.d_mask_raw[i],
                self.rates.mask,
                &mut prim.mask_raw,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn vec_step<const D: usize>(
    m: &mut nalgebra::SVector<f64, D>,
    v: &mut nalgebra::SVector<f64, D>,
    g: &nalgebra::SVector<f64, D>,
    lr: f64,
    x: &mut nalgebra::SVector<f64, D>,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    *m = *m * b1 + g * (1.0 - b1);
    *v = *v * b2 + g.component_mul(g) * (1.0 - b2);
    let denom = (*v / bc2).map(f64::sqrt).add_scalar(eps);
    *x -= (*m / bc1).component_div(&denom) * lr;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPrimitive;
    use approx::assert_relative_eq;

    fn unit_prim() -> GaussianPrimitive {
        GaussianPrimitive {
            position: Vector3::new(0.1, -0.2, 1.5),
            rotation_raw: Vector4::new(1.0, 0.0, 0.0, 0.0),
            scale_raw: Vector3::new(-2.0, -2.1, -2.2),
            opacity_raw: 0.4,
            color: Vector3::new(0.5, 0.6, 0.7),
            mask_raw: 1.0,
        }
    }

    fn small_map(n: usize) -> GaussianMap {
        let mut map = GaussianMap::new();
        for _ in 0..n {
            map.primitives.push(unit_prim());
        }
        map
    }

    #[test]
    fn first_step_moves_by_the_signed_rate() {
        let mut map = small_map(1);
        let mut opt = MapOptimizer::new(1, LearningRates::default(), AdamParams::default());
        let mut grads = GradientSet::zeros(1);
        grads.d_position[0] = Vector3::new(0.5, -0.25, 0.0);
        grads.d_opacity_raw[0] = -2.0;
        let before = map.primitives[0].clone();
        opt.step(&mut map, &grads).unwrap();
        let after = &map.primitives[0];
        // With zero moments, the bias-corrected first step is lr * sign(g)
        // up to the eps floor.
        assert_relative_eq!(
            after.position.x - before.position.x,
            -opt.rates.position,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            after.position.y - before.position.y,
            opt.rates.position,
            epsilon = 1e-9
        );
        assert_eq!(after.position.z, before.position.z);
        assert_relative_eq!(
            after.opacity_raw - before.opacity_raw,
            opt.rates.opacity,
            epsilon = 1e-9
        );
        assert_eq!(after.color, before.color, "zero gradient moved a group");
    }

    #[test]
    fn zero_gradients_are_a_noop_on_fresh_state() {
        let mut map = small_map(3);
        let before = map.primitives.clone();
        let mut opt = MapOptimizer::new(3, LearningRates::default(), AdamParams::default());
        opt.step(&mut map, &GradientSet::zeros(3)).unwrap();
        for (a, b) in map.primitives.iter().zip(&before) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.rotation_raw, b.rotation_raw);
            assert_eq!(a.scale_raw, b.scale_raw);
            assert_eq!(a.opacity_raw, b.opacity_raw);
            assert_eq!(a.color, b.color);
            assert_eq!(a.mask_raw, b.mask_raw);
        }
    }

    #[test]
    fn quadratic_pull_converges_to_the_target() {
        let mut map = small_map(1);
        let target = Vector3::new(0.3, -0.05, 1.8);
        let rates = LearningRates {
            position: 0.05,
            ..LearningRates::default()
        };
        let mut opt = MapOptimizer::new(1, rates, AdamParams::default());
        for _ in 0..600 {
            let mut grads = GradientSet::zeros(1);
            grads.d_position[0] = 2.0 * (map.primitives[0].position - target);
            opt.step(&mut map, &grads).unwrap();
        }
        assert!(
            (map.primitives[0].position - target).norm() < 1e-3,
            "ended at {:?}",
            map.primitives[0].position
        );
    }

    #[test]
    fn moments_follow_compaction_and_extension() {
        let mut map = small_map(3);
        let mut opt = MapOptimizer::new(3, LearningRates::default(), AdamParams::default());
        // Build momentum only on primitive 2.
        for _ in 0..5 {
            let mut grads = GradientSet::zeros(3);
            grads.d_color[2] = Vector3::new(1.0, 1.0, 1.0);
            opt.step(&mut map, &grads).unwrap();
        }
        // Prune primitive 1; survivor order [0, 2].
        map.retain_indices(&[0, 2]);
        opt.compact(&[0, 2]);
        opt.extend(1);
        map.primitives.push(unit_prim());
        assert_eq!(opt.len(), 3);

        let before = map.primitives.clone();
        opt.step(&mut map, &GradientSet::zeros(3)).unwrap();
        // Momentum decays but still moves the survivor that had gradients.
        assert_ne!(map.primitives[1].color, before[1].color);
        // The untouched survivor and the fresh slot hold still.
        assert_eq!(map.primitives[0].color, before[0].color);
        assert_eq!(map.primitives[2].color, before[2].color);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let mut map = small_map(2);
        let mut opt = MapOptimizer::new(3, LearningRates::default(), AdamParams::default());
        let res = opt.step(&mut map, &GradientSet::zeros(3));
        assert!(matches!(res, Err(Error::InvalidParameter(_))));
        let mut opt2 = MapOptimizer::new(2, LearningRates::default(), AdamParams::default());
        let res2 = opt2.step(&mut map, &GradientSet::zeros(3));
        assert!(matches!(res2, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad_rates = LearningRates {
            color: 0.0,
            ..LearningRates::default()
        };
        assert!(bad_rates.validate().is_err());
        let bad_params = AdamParams {
            beta1: 1.0,
            ..AdamParams::default()
        };
        assert!(bad_params.validate().is_err());
        assert!(LearningRates::default().validate().is_ok());
        assert!(AdamParams::default().validate().is_ok());
    }
}
