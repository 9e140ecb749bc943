use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}
impl Real for f32 {}
impl Real for f64 {}
